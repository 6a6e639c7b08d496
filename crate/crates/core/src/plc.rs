//! Leakage control for flows between app components, the platform and
//! outside entities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alert::{Alert, AlertKind};
use crate::data::{derived_sensitivity, DataStore, SensitivityLevel};
use crate::generalizer::Generalizer;
use crate::graph::{AppId, ComponentId, ComponentRef, UserId};
use crate::profile::{ComponentProfile, ProfileStore, OSN_CORE};

/// Flow source standing for the platform's user data store. Requests served
/// to external components are checked as flows from here.
pub const DATA_SOURCE: &str = "osn.data";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlcError {
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("unknown component `{component}` in app `{app}`")]
    UnknownComponent { app: String, component: String },
    #[error("flow payload is empty")]
    EmptyPayload,
    #[error("no sensitivity label for `{0}`")]
    UnknownAttribute(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEvent {
    pub app: AppId,
    /// A component of `app`, `osn.core/<id>`, or [`DATA_SOURCE`].
    pub source: String,
    /// A component of `app`, `osn.core/<id>`, or an outside domain.
    pub sink: String,
    pub payload: BTreeSet<String>,
    /// Whose data the payload carries; labels fall back to the most
    /// conservative level across users when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<UserId>,
    #[serde(default)]
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Permitted,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockReason {
    /// Private payload headed to an external component or outside entity.
    PrivateToExternal,
    /// Platform components never feed external sinks.
    CoreToExternal,
    /// The source may not call the sink.
    Adjacency,
    /// The payload is not something the source declares.
    UndeclaredPayload,
}

impl fmt::Display for BlockReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockReason::PrivateToExternal => "private-to-external",
            BlockReason::CoreToExternal => "core-to-external",
            BlockReason::Adjacency => "adjacency",
            BlockReason::UndeclaredPayload => "undeclared-payload",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IfLogRecord {
    #[serde(flatten)]
    pub event: FlowEvent,
    pub payload_sensitivity: SensitivityLevel,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<BlockReason>,
}

/// Label of a payload: the highest level among its attributes.
pub fn label_flow(
    payload: &BTreeSet<String>,
    ctx: &BTreeMap<String, SensitivityLevel>,
) -> Result<SensitivityLevel, PlcError> {
    if payload.is_empty() {
        return Err(PlcError::EmptyPayload);
    }
    let levels = payload
        .iter()
        .map(|a| ctx.get(a).copied().ok_or_else(|| PlcError::UnknownAttribute(a.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(derived_sensitivity(levels).expect("payload is non-empty"))
}

/// Read-only view used to label and check flows.
pub struct FlowContext<'a> {
    pub profiles: &'a ProfileStore,
    pub data: &'a DataStore,
    pub generalizer: &'a Generalizer,
    levels: BTreeMap<String, SensitivityLevel>,
}

impl<'a> FlowContext<'a> {
    pub fn new(profiles: &'a ProfileStore, data: &'a DataStore, generalizer: &'a Generalizer) -> Self {
        Self {
            profiles,
            data,
            generalizer,
            levels: data.attribute_levels(),
        }
    }

    /// Level of `attr` within a flow of `app`. A value the owner chose to
    /// generalize for this app counts as public. Unlabelled names are
    /// treated as highly sensitive.
    pub fn attribute_level(&self, app: &str, owner: Option<&str>, attr: &str) -> SensitivityLevel {
        if let Some(owner) = owner {
            if self.generalizer.is_generalized(owner, app, attr) {
                return SensitivityLevel::NS;
            }
            if let Some(item) = self.data.get(owner, attr) {
                return item.sensitivity;
            }
        }
        if let Some(level) = self.profiles.get(app).and_then(|d| d.data_items.get(attr)) {
            return *level;
        }
        self.levels.get(attr).copied().unwrap_or(SensitivityLevel::HS)
    }

    fn labels(&self, e: &FlowEvent) -> BTreeMap<String, SensitivityLevel> {
        let owner = e.owner.as_ref().map(|o| o.as_str());
        e.payload
            .iter()
            .map(|a| (a.clone(), self.attribute_level(e.app.as_str(), owner, a)))
            .collect()
    }
}

enum Endpoint<'a> {
    Data,
    Component {
        app: &'a str,
        id: &'a str,
        profile: &'a ComponentProfile,
    },
    Entity(&'a str),
}

impl Endpoint<'_> {
    fn is_external(&self) -> bool {
        match self {
            Endpoint::Entity(_) => true,
            Endpoint::Component { profile, .. } => profile.is_external(),
            Endpoint::Data => false,
        }
    }

    fn is_core(&self) -> bool {
        matches!(self, Endpoint::Component { app, .. } if *app == OSN_CORE)
    }
}

fn resolve_component<'a>(profiles: &'a ProfileStore, app: &'a str, name: &'a str) -> Option<Endpoint<'a>> {
    if let Some(profile) = profiles.get(app).and_then(|d| d.component(name)) {
        return Some(Endpoint::Component { app, id: name, profile });
    }
    let id = name.strip_prefix(OSN_CORE)?.strip_prefix('/')?;
    let profile = profiles.get(OSN_CORE)?.component(id)?;
    Some(Endpoint::Component {
        app: OSN_CORE,
        id,
        profile,
    })
}

fn resolve_source<'a>(profiles: &'a ProfileStore, e: &'a FlowEvent) -> Result<Endpoint<'a>, PlcError> {
    if e.source == DATA_SOURCE {
        return Ok(Endpoint::Data);
    }
    resolve_component(profiles, e.app.as_str(), &e.source).ok_or_else(|| PlcError::UnknownComponent {
        app: e.app.to_string(),
        component: e.source.clone(),
    })
}

fn resolve_sink<'a>(profiles: &'a ProfileStore, e: &'a FlowEvent) -> Endpoint<'a> {
    if e.sink == DATA_SOURCE {
        return Endpoint::Data;
    }
    resolve_component(profiles, e.app.as_str(), &e.sink).unwrap_or(Endpoint::Entity(&e.sink))
}

/// Checks one flow. Rules, first match wins:
///
/// 1. private payload to an external component or outside entity;
/// 2. platform component to an external sink;
/// 3. app component to a component it does not list as adjacent (platform
///    components are callable from any app), or the data store straight to an
///    outside entity;
/// 4. payload the source does not declare among its inputs and outputs, or,
///    for flows out of the data store, the sink does not declare as input.
pub fn check_flow(e: &FlowEvent, ctx: &FlowContext) -> Result<IfLogRecord, PlcError> {
    if ctx.profiles.get(e.app.as_str()).is_none() {
        return Err(PlcError::UnknownApp(e.app.to_string()));
    }
    let source = resolve_source(ctx.profiles, e)?;
    let sink = resolve_sink(ctx.profiles, e);
    let sensitivity = label_flow(&e.payload, &ctx.labels(e))?;

    let adjacency_ok = match (&source, &sink) {
        (Endpoint::Data, Endpoint::Entity(_)) => false,
        (
            Endpoint::Component {
                app: sa, profile: sp, ..
            },
            Endpoint::Component { app: ta, id: tid, .. },
        ) if *sa != OSN_CORE && *ta != OSN_CORE => sa == ta && sp.adjacent.contains(*tid),
        _ => true,
    };
    let payload_ok = match (&source, &sink) {
        (Endpoint::Component { profile, .. }, _) => e.payload.iter().all(|p| profile.declares(p)),
        (Endpoint::Data, Endpoint::Component { profile, .. }) => e.payload.iter().all(|p| profile.inputs.contains(p)),
        (Endpoint::Data, _) => true,
        (Endpoint::Entity(_), _) => unreachable!("sources are never outside entities"),
    };

    let reason = if sink.is_external() && sensitivity.is_private() {
        Some(BlockReason::PrivateToExternal)
    } else if source.is_core() && sink.is_external() {
        Some(BlockReason::CoreToExternal)
    } else if !adjacency_ok {
        Some(BlockReason::Adjacency)
    } else if !payload_ok {
        Some(BlockReason::UndeclaredPayload)
    } else {
        None
    };
    Ok(IfLogRecord {
        event: e.clone(),
        payload_sensitivity: sensitivity,
        verdict: if reason.is_some() {
            Verdict::Blocked
        } else {
            Verdict::Permitted
        },
        reason,
    })
}

/// Component blamed for a flow: the source, or the receiving component for
/// flows out of the data store.
fn subject(e: &FlowEvent) -> ComponentRef {
    let name = if e.source == DATA_SOURCE { &e.sink } else { &e.source };
    ComponentRef::parse(name)
        .filter(|r| r.app.as_str() == OSN_CORE)
        .unwrap_or_else(|| {
            ComponentRef::new(
                e.app.clone(),
                ComponentId::new(name.as_str()).unwrap_or_else(|_| ComponentId::new(DATA_SOURCE).expect("non-empty")),
            )
        })
}

/// One alert per blocked flow, plus one per permitted flow to an outside
/// entity the source component never declared.
pub fn detect_anomaly(trace: &[IfLogRecord], profiles: &ProfileStore) -> Vec<Alert> {
    let mut out = Vec::new();
    for rec in trace {
        let e = &rec.event;
        match rec.verdict {
            Verdict::Blocked => out.push(Alert {
                kind: AlertKind::UnauthorizedFlowAttempt,
                subject: subject(e),
                detail: format!(
                    "{} -> {} blocked ({})",
                    e.source,
                    e.sink,
                    rec.reason.map(|r| r.to_string()).unwrap_or_default()
                ),
            }),
            Verdict::Permitted => {
                let Ok(Endpoint::Component { profile, .. }) = resolve_source(profiles, e) else {
                    continue;
                };
                if let Endpoint::Entity(domain) = resolve_sink(profiles, e) {
                    if !profile.external_entities.contains(domain) {
                        out.push(Alert {
                            kind: AlertKind::UndeclaredExternalEntity,
                            subject: subject(e),
                            detail: format!("{} -> {domain} is not a declared entity", e.source),
                        });
                    }
                }
            }
        }
    }
    out
}

/// The append-only information-flow log.
#[derive(Debug, Clone, Default)]
pub struct Plc {
    log: Vec<IfLogRecord>,
}

impl Plc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, rec: IfLogRecord) {
        self.log.push(rec);
    }

    pub fn log(&self) -> &[IfLogRecord] {
        &self.log
    }
}
