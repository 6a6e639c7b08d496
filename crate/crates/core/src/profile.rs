//! Third-party app definitions: components, information flow profiles and
//! registration-time validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SensitivityLevel;
use crate::graph::{AppId, ComponentId, ComponentRef, GraphError, SocialGraph};

/// Reserved app whose components are platform-provided shared services.
pub const OSN_CORE: &str = "osn.core";

/// Actions that read the target value. Everything else is an output action
/// (post, notify, process, ...) checked against declared outputs.
pub const READ_ACTIONS: [&str; 2] = ["read", "access"];

pub fn is_read_like(action: &str) -> bool {
    READ_ACTIONS.contains(&action)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("profile for `{app}` rejected: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ProfileRejected { app: String, violations: Vec<Violation> },
    #[error("app `{0}` already registered")]
    DuplicateApp(String),
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("unknown component `{component}` in app `{app}`")]
    UnknownComponent { app: String, component: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ComponentKind {
    /// Hosted on the platform, may read private data (`type = 0`).
    Internal,
    /// Hosted by the third party, public data only (`type = 1`).
    External,
}

impl From<ComponentKind> for u8 {
    fn from(k: ComponentKind) -> u8 {
        match k {
            ComponentKind::Internal => 0,
            ComponentKind::External => 1,
        }
    }
}

impl TryFrom<u8> for ComponentKind {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(ComponentKind::Internal),
            1 => Ok(ComponentKind::External),
            other => Err(format!("component type must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentProfile {
    pub id: ComponentId,
    #[serde(rename = "type")]
    pub kind: ComponentKind,
    #[serde(default)]
    pub inputs: BTreeSet<String>,
    #[serde(default)]
    pub outputs: BTreeSet<String>,
    #[serde(default)]
    pub adjacent: BTreeSet<ComponentId>,
    #[serde(default)]
    pub external_entities: BTreeSet<String>,
}

impl ComponentProfile {
    pub fn is_external(&self) -> bool {
        self.kind == ComponentKind::External
    }

    /// Whether `name` is something this component may emit or hold.
    pub fn declares(&self, name: &str) -> bool {
        self.inputs.contains(name) || self.outputs.contains(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationFlowProfile {
    pub app: AppId,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default)]
    pub callback_url: String,
    #[serde(default)]
    pub required_data: BTreeSet<String>,
    pub components: Vec<ComponentProfile>,
    /// The app's function set.
    #[serde(default)]
    pub actions: BTreeSet<String>,
}

impl InformationFlowProfile {
    pub fn component(&self, id: &str) -> Option<&ComponentProfile> {
        self.components.iter().find(|c| c.id.as_str() == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoComponents,
    DuplicateComponent {
        component: String,
    },
    DanglingAdjacency {
        component: String,
        target: String,
    },
    ExternalConsumesPrivate {
        component: String,
        attribute: String,
    },
    /// `missing`: consumed but not declared; `unused`: declared, never consumed.
    RequiredDataMismatch {
        missing: BTreeSet<String>,
        unused: BTreeSet<String>,
    },
    CoreComponentExternal {
        component: String,
    },
    /// The internal/external partition disagrees with the component's type.
    PartitionMismatch {
        component: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoComponents => write!(f, "profile declares no components"),
            Violation::DuplicateComponent { component } => {
                write!(f, "component `{component}` declared twice")
            }
            Violation::DanglingAdjacency { component, target } => {
                write!(f, "`{component}` lists unknown adjacent component `{target}`")
            }
            Violation::ExternalConsumesPrivate { component, attribute } => write!(
                f,
                "external component `{component}` consumes private attribute `{attribute}`"
            ),
            Violation::RequiredDataMismatch { missing, unused } => write!(
                f,
                "required data mismatch (undeclared inputs {missing:?}, unused declarations {unused:?})"
            ),
            Violation::CoreComponentExternal { component } => {
                write!(f, "platform component `{component}` must be internal")
            }
            Violation::PartitionMismatch { component } => {
                write!(f, "component `{component}` is misfiled as internal/external")
            }
        }
    }
}

/// Checks a profile for admissibility. `ctx` gives the sensitivity of user
/// attributes; attributes missing from it are not flagged. The result is
/// sorted, so it does not depend on declaration order.
pub fn validate_profile(p: &InformationFlowProfile, ctx: &BTreeMap<String, SensitivityLevel>) -> Vec<Violation> {
    let mut out = BTreeSet::new();
    if p.components.is_empty() {
        out.insert(Violation::NoComponents);
    }
    let mut ids = BTreeSet::new();
    for c in &p.components {
        if !ids.insert(c.id.as_str()) {
            out.insert(Violation::DuplicateComponent {
                component: c.id.to_string(),
            });
        }
    }
    let mut consumed = BTreeSet::new();
    for c in &p.components {
        for adj in &c.adjacent {
            if !ids.contains(adj.as_str()) {
                out.insert(Violation::DanglingAdjacency {
                    component: c.id.to_string(),
                    target: adj.to_string(),
                });
            }
        }
        for input in &c.inputs {
            consumed.insert(input.clone());
            let private = ctx.get(input).is_some_and(|l| l.is_private());
            if c.is_external() && private {
                out.insert(Violation::ExternalConsumesPrivate {
                    component: c.id.to_string(),
                    attribute: input.clone(),
                });
            }
        }
        if p.app.as_str() == OSN_CORE && c.is_external() {
            out.insert(Violation::CoreComponentExternal {
                component: c.id.to_string(),
            });
        }
    }
    let missing: BTreeSet<_> = consumed.difference(&p.required_data).cloned().collect();
    let unused: BTreeSet<_> = p.required_data.difference(&consumed).cloned().collect();
    if !missing.is_empty() || !unused.is_empty() {
        out.insert(Violation::RequiredDataMismatch { missing, unused });
    }
    out.into_iter().collect()
}

/// An app: its components split by hosting, its local objects with their
/// labels, and its profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpaDefinition {
    pub app: AppId,
    pub internal: BTreeSet<ComponentId>,
    pub external: BTreeSet<ComponentId>,
    /// App-local objects (buffers, generated posts, ...) with their labels.
    pub data_items: BTreeMap<String, SensitivityLevel>,
    pub profile: InformationFlowProfile,
}

impl TpaDefinition {
    pub fn new(profile: InformationFlowProfile, data_items: BTreeMap<String, SensitivityLevel>) -> Self {
        let (mut internal, mut external) = (BTreeSet::new(), BTreeSet::new());
        for c in &profile.components {
            match c.kind {
                ComponentKind::Internal => internal.insert(c.id.clone()),
                ComponentKind::External => external.insert(c.id.clone()),
            };
        }
        Self {
            app: profile.app.clone(),
            internal,
            external,
            data_items,
            profile,
        }
    }

    pub fn component(&self, id: &str) -> Option<&ComponentProfile> {
        self.profile.component(id)
    }
}

/// The information-flow database: registered apps and their profiles.
/// Append-only.
#[derive(Debug, Clone, Default)]
pub struct ProfileStore {
    apps: BTreeMap<AppId, TpaDefinition>,
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates and stores `def`, adding the app to `graph`.
    pub fn register_tpa(
        &mut self,
        graph: &mut SocialGraph,
        def: TpaDefinition,
        ctx: &BTreeMap<String, SensitivityLevel>,
    ) -> Result<AppId, ProfileError> {
        let app = def.app.clone();
        let duplicate = self.apps.contains_key(&app)
            || (!def.profile.title.is_empty()
                && self
                    .apps
                    .values()
                    .any(|d| d.profile.title == def.profile.title && d.profile.domain == def.profile.domain));
        if duplicate || graph.has_app(app.as_str()) {
            return Err(ProfileError::DuplicateApp(app.to_string()));
        }
        let mut violations = validate_profile(&def.profile, ctx);
        for c in &def.profile.components {
            let filed = (def.internal.contains(&c.id), def.external.contains(&c.id));
            let expected = (!c.is_external(), c.is_external());
            if filed != expected {
                violations.push(Violation::PartitionMismatch {
                    component: c.id.to_string(),
                });
            }
        }
        let listed = def.internal.len() + def.external.len();
        if listed != def.profile.components.len() && violations.is_empty() {
            violations.push(Violation::PartitionMismatch {
                component: def
                    .internal
                    .iter()
                    .chain(&def.external)
                    .find(|id| def.profile.component(id.as_str()).is_none())
                    .map(|id| id.to_string())
                    .unwrap_or_default(),
            });
        }
        if !violations.is_empty() {
            return Err(ProfileError::ProfileRejected {
                app: app.to_string(),
                violations,
            });
        }
        graph.add_app(app.as_str())?;
        self.apps.insert(app.clone(), def);
        Ok(app)
    }

    pub fn get(&self, app: &str) -> Option<&TpaDefinition> {
        self.apps.get(app)
    }

    pub fn profile(&self, app: &str) -> Result<&TpaDefinition, ProfileError> {
        self.get(app).ok_or_else(|| ProfileError::UnknownApp(app.to_string()))
    }

    pub fn apps(&self) -> impl Iterator<Item = &TpaDefinition> {
        self.apps.values()
    }

    pub fn component(&self, app: &str, c: &str) -> Result<&ComponentProfile, ProfileError> {
        self.profile(app)?
            .component(c)
            .ok_or_else(|| ProfileError::UnknownComponent {
                app: app.to_string(),
                component: c.to_string(),
            })
    }

    pub fn resolve(&self, r: &ComponentRef) -> Option<&ComponentProfile> {
        self.get(r.app.as_str())?.component(r.component.as_str())
    }

    /// Every registered component, in (app, component) order.
    pub fn all_components(&self) -> impl Iterator<Item = (ComponentRef, &ComponentProfile)> {
        self.apps.values().flat_map(|def| {
            def.profile
                .components
                .iter()
                .map(move |c| (ComponentRef::new(def.app.clone(), c.id.clone()), c))
        })
    }

    /// Whether the component's profile covers `action` on `target`: reads
    /// need `target` among inputs, other actions need `action` among outputs.
    pub fn component_permits(&self, app: &str, c: &str, target: &str, action: &str) -> Result<bool, ProfileError> {
        let comp = self.component(app, c)?;
        Ok(if is_read_like(action) {
            comp.inputs.contains(target)
        } else {
            comp.outputs.contains(action)
        })
    }

    pub fn may_call(&self, app: &str, from: &str, to: &str) -> Result<bool, ProfileError> {
        let from = self.component(app, from)?;
        self.component(app, to)?;
        Ok(from.adjacent.contains(to))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use SensitivityLevel::*;

    fn comp(
        id: &str,
        kind: ComponentKind,
        inputs: &[&str],
        outputs: &[&str],
        adjacent: &[&str],
        ext: &[&str],
    ) -> ComponentProfile {
        ComponentProfile {
            id: ComponentId::new(id).unwrap(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            adjacent: adjacent.iter().map(|s| ComponentId::new(*s).unwrap()).collect(),
            external_entities: ext.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The four-component horoscope app used across the crate's tests.
    pub(crate) fn horoscope_profile() -> InformationFlowProfile {
        use ComponentKind::*;
        InformationFlowProfile {
            app: AppId::new("horoscope").unwrap(),
            title: "Horoscope".into(),
            domain: "www.xyz.com".into(),
            callback_url: "www.xyz.com/horoscope/callback.php".into(),
            required_data: ["name", "dob", "friend_list", "mouseclick", "mousemovement"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            components: vec![
                comp("C1", Internal, &["name", "dob"], &["post"], &[], &["www.horoscope.com"]),
                comp("C2", Internal, &["friend_list"], &["post", "banner"], &["C1"], &[]),
                comp("C3", External, &["mouseclick"], &["click"], &["C1"], &[]),
                comp("C4", External, &["mousemovement"], &["process"], &[], &[]),
            ],
            actions: ["post", "click", "process"].iter().map(|s| s.to_string()).collect(),
        }
    }

    pub(crate) fn horoscope_ctx() -> BTreeMap<String, SensitivityLevel> {
        [
            ("name", LS),
            ("dob", MS),
            ("friend_list", MS),
            ("mouseclick", NS),
            ("mousemovement", NS),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn registered() -> (SocialGraph, ProfileStore) {
        let mut g = SocialGraph::new();
        let mut store = ProfileStore::new();
        store
            .register_tpa(
                &mut g,
                TpaDefinition::new(horoscope_profile(), BTreeMap::new()),
                &horoscope_ctx(),
            )
            .unwrap();
        (g, store)
    }

    #[test]
    fn table_profile_is_admissible() {
        assert_eq!(validate_profile(&horoscope_profile(), &horoscope_ctx()), vec![]);
    }

    #[test]
    fn external_consuming_private_is_flagged() {
        let mut p = horoscope_profile();
        p.components[0].kind = ComponentKind::External;
        let v = validate_profile(&p, &horoscope_ctx());
        assert_eq!(
            v,
            vec![
                Violation::ExternalConsumesPrivate {
                    component: "C1".into(),
                    attribute: "dob".into()
                },
                Violation::ExternalConsumesPrivate {
                    component: "C1".into(),
                    attribute: "name".into()
                }
            ]
        );
    }

    #[test]
    fn dangling_adjacency() {
        let mut p = horoscope_profile();
        p.components[3].adjacent.insert(ComponentId::new("C9").unwrap());
        assert_eq!(
            validate_profile(&p, &horoscope_ctx()),
            vec![Violation::DanglingAdjacency {
                component: "C4".into(),
                target: "C9".into()
            }]
        );
    }

    #[test]
    fn required_data_must_match_inputs() {
        let mut p = horoscope_profile();
        p.required_data.remove("dob");
        p.required_data.insert("shoesize".into());
        assert_eq!(
            validate_profile(&p, &horoscope_ctx()),
            vec![Violation::RequiredDataMismatch {
                missing: BTreeSet::from(["dob".to_string()]),
                unused: BTreeSet::from(["shoesize".to_string()]),
            }]
        );
        p.components.clear();
        assert!(validate_profile(&p, &horoscope_ctx()).contains(&Violation::NoComponents));
    }

    #[test]
    fn validation_is_order_independent() {
        let mut p = horoscope_profile();
        p.components[0].kind = ComponentKind::External;
        p.components[3].adjacent.insert(ComponentId::new("C9").unwrap());
        let a = validate_profile(&p, &horoscope_ctx());
        p.components.reverse();
        assert_eq!(validate_profile(&p, &horoscope_ctx()), a);
    }

    #[test]
    fn registration() {
        let (mut g, mut store) = registered();
        assert!(g.has_app("horoscope"));
        assert_eq!(store.profile("horoscope").unwrap().internal.len(), 2);
        assert_eq!(
            store.register_tpa(
                &mut g,
                TpaDefinition::new(horoscope_profile(), BTreeMap::new()),
                &horoscope_ctx()
            ),
            Err(ProfileError::DuplicateApp("horoscope".into()))
        );
        // same title and domain under another id
        let mut clone = horoscope_profile();
        clone.app = AppId::new("horoscope2").unwrap();
        assert!(matches!(
            store.register_tpa(&mut g, TpaDefinition::new(clone, BTreeMap::new()), &horoscope_ctx()),
            Err(ProfileError::DuplicateApp(_))
        ));
        let mut bad = horoscope_profile();
        bad.app = AppId::new("leaky").unwrap();
        bad.title = "Leaky".into();
        bad.components[0].kind = ComponentKind::External;
        assert!(matches!(
            store.register_tpa(&mut g, TpaDefinition::new(bad, BTreeMap::new()), &horoscope_ctx()),
            Err(ProfileError::ProfileRejected { .. })
        ));
        assert!(!g.has_app("leaky"));
    }

    #[test]
    fn core_components_must_be_internal() {
        let mut g = SocialGraph::new();
        let mut store = ProfileStore::new();
        let p = InformationFlowProfile {
            app: AppId::new(OSN_CORE).unwrap(),
            title: String::new(),
            domain: String::new(),
            callback_url: String::new(),
            required_data: BTreeSet::new(),
            components: vec![comp("palette", ComponentKind::External, &[], &["color"], &[], &[])],
            actions: BTreeSet::new(),
        };
        assert!(matches!(
            store.register_tpa(&mut g, TpaDefinition::new(p, BTreeMap::new()), &BTreeMap::new()),
            Err(ProfileError::ProfileRejected { violations, .. })
                if violations == vec![Violation::CoreComponentExternal { component: "palette".into() }]
        ));
    }

    #[test]
    fn component_permits_and_may_call() {
        let (_, store) = registered();
        assert!(store.component_permits("horoscope", "C1", "dob", "read").unwrap());
        assert!(!store.component_permits("horoscope", "C2", "dob", "read").unwrap());
        assert!(store
            .component_permits("horoscope", "C4", "mousemovement", "process")
            .unwrap());
        assert!(matches!(
            store.component_permits("horoscope", "C7", "dob", "read"),
            Err(ProfileError::UnknownComponent { .. })
        ));
        assert!(matches!(
            store.component_permits("nope", "C1", "dob", "read"),
            Err(ProfileError::UnknownApp(_))
        ));
        assert!(store.may_call("horoscope", "C3", "C1").unwrap());
        assert!(!store.may_call("horoscope", "C1", "C2").unwrap());
        assert!(!store.may_call("horoscope", "C4", "C4").unwrap());
        assert!(store.may_call("horoscope", "C4", "C9").is_err());
    }

    #[test]
    fn profile_json_uses_table_columns() {
        let json = serde_json::to_value(&horoscope_profile().components[2]).unwrap();
        assert_eq!(json["type"], 1);
        assert_eq!(json["adjacent"][0], "C1");
        let back: ComponentProfile = serde_json::from_value(json).unwrap();
        assert_eq!(back, horoscope_profile().components[2]);
    }
}
