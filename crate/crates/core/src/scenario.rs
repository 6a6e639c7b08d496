//! Scenario files: a JSON document describing a platform and a trace of
//! requests, flows and revocations to replay against it.
//!
//! ```json
//! {
//!   "config": {"strict_trust": true, "seed": 7},
//!   "graph": {
//!     "users": ["ann", "bob"],
//!     "relations": ["friend"],
//!     "edges": [{"from": "ann", "to": "bob", "relation": "friend", "trust": 0.8}],
//!     "installs": [{"user": "bob", "app": "quiz"}]
//!   },
//!   "apps": [{"app": "quiz", "required_data": ["name"], "objects": {"score": "NS"},
//!             "components": [{"id": "C1", "type": 0, "inputs": ["name"], "outputs": ["post"]}]}],
//!   "data_items": [{"owner": "ann", "id": "name", "value": ["Ann"], "sensitivity": "LS"}],
//!   "policies": [{"id": "p1", "owner": "ann", "policy": "[u, {name}, {read}, 1, [installed(u,A)]]"}],
//!   "grants": [{"id": "g1", "user": "ann", "app": "quiz", "scopes": ["name"]}],
//!   "generalizations": [],
//!   "trace": [
//!     {"request": {"app": "quiz", "component": "C1", "owner": "ann", "attribute": "name", "actions": ["read"]}},
//!     {"flow": {"app": "quiz", "source": "C1", "sink": "www.quiz.example", "payload": ["score"]}},
//!     {"revoke": "g1"}
//!   ]
//! }
//! ```
//!
//! Sections load in dependency order: users and relations, data items, apps,
//! edges and installs, policies, grants, generalizations. Sensitivities are a
//! level name or a score in `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alert::Alert;
use crate::dam::Decision;
use crate::data::{classify, DataError, SensitivityLevel};
use crate::generalizer::GeneralizationEntry;
use crate::graph::{AppId, ComponentRef, GraphError, TrustMode, UserId};
use crate::platform::{DecisionRecord, Platform, PlatformError};
use crate::plc::{FlowEvent, IfLogRecord, DATA_SOURCE};
use crate::policy::{AccessRequest, EvalError, PolicyStoreError};
use crate::profile::{InformationFlowProfile, ProfileError, TpaDefinition, Violation, OSN_CORE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{section}: unknown reference `{id}` ({message})")]
    Reference {
        section: String,
        id: String,
        message: String,
    },
    #[error("app `{app}` rejected: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ProfileRejected { app: String, violations: Vec<Violation> },
    #[error("{section}: {message}")]
    Invalid { section: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum LevelDoc {
    Name(String),
    Score(f64),
}

impl LevelDoc {
    fn level(&self) -> Result<SensitivityLevel, DataError> {
        match self {
            LevelDoc::Name(n) => n.parse(),
            LevelDoc::Score(s) => classify(*s),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    /// Reject (rather than zero) nonzero trust on user-app edges.
    #[serde(default = "yes")]
    pub strict_trust: bool,
    /// Seed for token ids.
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    pub relation: String,
    #[serde(default)]
    pub trust: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InstallDoc {
    pub user: String,
    pub app: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub users: Vec<String>,
    #[serde(default)]
    pub relations: Vec<String>,
    #[serde(default)]
    pub edges: Vec<EdgeDoc>,
    #[serde(default)]
    pub installs: Vec<InstallDoc>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct AppDoc {
    #[serde(flatten)]
    pub profile: InformationFlowProfile,
    /// App-local objects and their labels.
    #[serde(default)]
    pub objects: BTreeMap<String, LevelDoc>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataItemDoc {
    pub owner: String,
    pub id: String,
    #[serde(default)]
    pub value: Vec<String>,
    pub sensitivity: LevelDoc,
    #[serde(default)]
    pub write_only: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    #[serde(default)]
    pub id: Option<String>,
    pub owner: String,
    pub policy: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizedValueDoc {
    pub value: Vec<String>,
    pub level: u32,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GrantDoc {
    #[serde(default)]
    pub id: Option<String>,
    pub user: String,
    pub app: String,
    #[serde(default)]
    pub scopes: Vec<String>,
    #[serde(default)]
    pub generalize: BTreeMap<String, GeneralizedValueDoc>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizationDoc {
    pub user: String,
    pub app: String,
    pub attribute: String,
    pub value: Vec<String>,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RequestDoc {
    pub app: String,
    pub component: String,
    pub owner: String,
    pub attribute: String,
    pub actions: Vec<String>,
    /// Grant whose token is presented; defaults to the owner's current
    /// token for the app.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDoc {
    pub app: String,
    pub source: String,
    pub sink: String,
    pub payload: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceStep {
    Request(RequestDoc),
    Flow(FlowDoc),
    /// Revokes the token issued for this grant id.
    Revoke(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub config: ConfigDoc,
    pub graph: GraphSection,
    #[serde(default)]
    pub apps: Vec<AppDoc>,
    #[serde(default)]
    pub data_items: Vec<DataItemDoc>,
    #[serde(default)]
    pub policies: Vec<PolicyDoc>,
    #[serde(default)]
    pub grants: Vec<GrantDoc>,
    #[serde(default)]
    pub generalizations: Vec<GeneralizationDoc>,
    #[serde(default)]
    pub trace: Vec<TraceStep>,
}

/// Outcome of replaying a trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub decisions: Vec<DecisionRecord>,
    pub flows: Vec<IfLogRecord>,
    pub alerts: Vec<Alert>,
}

impl RunOutput {
    pub fn decision_log_jsonl(&self) -> String {
        to_jsonl(&self.decisions)
    }

    pub fn if_log_jsonl(&self) -> String {
        to_jsonl(&self.flows)
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("log records serialize"));
        out.push('\n');
    }
    out
}

/// A loaded platform plus the trace still to replay.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub platform: Platform,
    pub trace: Vec<TraceStep>,
    /// Grant id to token id.
    pub grant_tokens: BTreeMap<String, String>,
}

fn reference(section: &str, id: &str, message: impl ToString) -> LoadError {
    LoadError::Reference {
        section: section.to_string(),
        id: id.to_string(),
        message: message.to_string(),
    }
}

fn invalid(section: &str, message: impl ToString) -> LoadError {
    LoadError::Invalid {
        section: section.to_string(),
        message: message.to_string(),
    }
}

fn classify_error(section: &str, e: PlatformError) -> LoadError {
    match &e {
        PlatformError::Graph(
            GraphError::UnknownEndpoint(id) | GraphError::UnknownRelation(id) | GraphError::UnregisteredApp(id),
        )
        | PlatformError::Data(DataError::UnknownOwner(id))
        | PlatformError::Policy(PolicyStoreError::UnknownOwner(id))
        | PlatformError::Policy(PolicyStoreError::Eval(
            EvalError::UnknownPredicate(id) | EvalError::UnknownConstant { name: id, .. },
        ))
        | PlatformError::Eval(EvalError::UnknownPredicate(id) | EvalError::UnknownConstant { name: id, .. })
        | PlatformError::Profile(ProfileError::UnknownApp(id))
        | PlatformError::Dam(crate::dam::DamError::UnregisteredApp(id) | crate::dam::DamError::UnknownUser(id)) => {
            reference(section, id, &e)
        }
        PlatformError::Profile(ProfileError::ProfileRejected { app, violations }) => LoadError::ProfileRejected {
            app: app.clone(),
            violations: violations.clone(),
        },
        _ => invalid(section, e),
    }
}

fn set(v: &[String]) -> BTreeSet<String> {
    v.iter().cloned().collect()
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LoadError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let doc: ScenarioDoc = serde_json::from_str(text).map_err(|e| LoadError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: ScenarioDoc) -> Result<Self, LoadError> {
        let mut p = Platform::new(doc.config.seed);
        let mode = if doc.config.strict_trust {
            TrustMode::Strict
        } else {
            TrustMode::Lenient
        };
        p.graph_mut().set_trust_mode(mode);
        for r in &doc.graph.relations {
            p.graph_mut().declare_relation(r);
        }
        for u in &doc.graph.users {
            p.graph_mut().add_user(u).map_err(|e| invalid("graph", e))?;
        }

        for d in &doc.data_items {
            let level = d.sensitivity.level().map_err(|e| invalid("data_items", e))?;
            p.set_data_item(&d.owner, &d.id, set(&d.value), level, d.write_only)
                .map_err(|e| classify_error("data_items", e))?;
        }

        for a in &doc.apps {
            let objects = a
                .objects
                .iter()
                .map(|(k, v)| v.level().map(|l| (k.clone(), l)))
                .collect::<Result<BTreeMap<_, _>, _>>()
                .map_err(|e| invalid("apps", e))?;
            p.register_tpa(TpaDefinition::new(a.profile.clone(), objects))
                .map_err(|e| classify_error("apps", e))?;
        }

        for e in &doc.graph.edges {
            p.graph_mut()
                .add_relationship(&e.from, &e.to, &e.relation, e.trust)
                .map_err(|err| classify_error("graph", err.into()))?;
        }
        for i in &doc.graph.installs {
            p.graph_mut()
                .install_app(&i.user, &i.app)
                .map_err(|err| classify_error("graph", err.into()))?;
        }

        for (n, pd) in doc.policies.iter().enumerate() {
            let id = pd.id.clone().unwrap_or_else(|| format!("p{}", n + 1));
            p.add_policy(&id, &pd.owner, &pd.policy)
                .map_err(|e| classify_error("policies", e))?;
        }

        let mut grant_tokens = BTreeMap::new();
        for (n, g) in doc.grants.iter().enumerate() {
            let id = g.id.clone().unwrap_or_else(|| format!("g{}", n + 1));
            if grant_tokens.contains_key(&id) {
                return Err(invalid("grants", format!("duplicate grant id `{id}`")));
            }
            let opts = g
                .generalize
                .iter()
                .map(|(k, v)| (k.clone(), (set(&v.value), v.level)))
                .collect();
            let token = p
                .consent_and_issue(&g.user, &g.app, &set(&g.scopes), &opts)
                .map_err(|e| classify_error("grants", e))?;
            grant_tokens.insert(id, token.token_id);
        }

        for g in &doc.generalizations {
            let entry = GeneralizationEntry {
                user: UserId::new(g.user.as_str()).map_err(|e| invalid("generalizations", e))?,
                app: AppId::new(g.app.as_str()).map_err(|e| invalid("generalizations", e))?,
                attribute: g.attribute.clone(),
                value: set(&g.value),
                level: g.level,
            };
            p.opt_generalize(entry)
                .map_err(|e| classify_error("generalizations", e))?;
        }

        let scenario = Self {
            platform: p,
            trace: doc.trace,
            grant_tokens,
        };
        scenario.check_trace()?;
        Ok(scenario)
    }

    /// Checks that every trace step refers to known apps, components, users
    /// and grants.
    pub fn check_trace(&self) -> Result<(), LoadError> {
        let p = &self.platform;
        for step in &self.trace {
            match step {
                TraceStep::Request(r) => {
                    if p.profiles().get(&r.app).is_none() {
                        return Err(reference("trace", &r.app, "unknown app"));
                    }
                    if p.profiles().component(&r.app, &r.component).is_err() {
                        return Err(reference("trace", &r.component, "unknown component"));
                    }
                    if !p.graph().has_user(&r.owner) {
                        return Err(reference("trace", &r.owner, "unknown user"));
                    }
                    if let Some(g) = &r.grant {
                        if !self.grant_tokens.contains_key(g) {
                            return Err(reference("trace", g, "unknown grant"));
                        }
                    }
                    if r.actions.is_empty() {
                        return Err(invalid("trace", "request with no actions"));
                    }
                }
                TraceStep::Flow(f) => {
                    if p.profiles().get(&f.app).is_none() {
                        return Err(reference("trace", &f.app, "unknown app"));
                    }
                    let core = f
                        .source
                        .strip_prefix(OSN_CORE)
                        .and_then(|s| s.strip_prefix('/'))
                        .is_some_and(|c| p.profiles().component(OSN_CORE, c).is_ok());
                    if f.source != DATA_SOURCE && !core && p.profiles().component(&f.app, &f.source).is_err() {
                        return Err(reference("trace", &f.source, "unknown flow source"));
                    }
                    if f.payload.is_empty() {
                        return Err(invalid("trace", "flow with empty payload"));
                    }
                    if let Some(o) = &f.owner {
                        if !p.graph().has_user(o) {
                            return Err(reference("trace", o, "unknown user"));
                        }
                    }
                }
                TraceStep::Revoke(g) => {
                    if !self.grant_tokens.contains_key(g) {
                        return Err(reference("trace", g, "unknown grant"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds the request a trace step describes.
    pub fn request(r: &RequestDoc) -> Option<AccessRequest> {
        let requester = ComponentRef::parse(&format!("{}/{}", r.app, r.component))?;
        let owner = UserId::new(r.owner.as_str()).ok()?;
        let actions: Vec<&str> = r.actions.iter().map(|s| s.as_str()).collect();
        Some(AccessRequest::new(requester, owner, &r.attribute, &actions))
    }

    /// Token presented for a request step.
    pub fn token_for(&self, r: &RequestDoc) -> String {
        match &r.grant {
            Some(g) => self.grant_tokens.get(g).cloned().unwrap_or_default(),
            None => self
                .platform
                .dam()
                .token_for(&r.owner, &r.app)
                .map(|t| t.token_id.clone())
                .unwrap_or_default(),
        }
    }

    /// Replays one step. Returns the decision for request steps.
    pub fn step(&mut self, step: &TraceStep) -> Result<Option<Decision>, PlatformError> {
        match step {
            TraceStep::Request(r) => {
                let req = Self::request(r).ok_or(PlatformError::Graph(GraphError::InvalidId))?;
                let token = self.token_for(r);
                Ok(Some(self.platform.evaluate_request(&token, &req)))
            }
            TraceStep::Flow(f) => {
                let ev = FlowEvent {
                    app: AppId::new(f.app.as_str())?,
                    source: f.source.clone(),
                    sink: f.sink.clone(),
                    payload: set(&f.payload),
                    owner: f.owner.as_deref().map(UserId::new).transpose()?,
                    timestamp: 0,
                };
                self.platform.check_flow(ev)?;
                Ok(None)
            }
            TraceStep::Revoke(g) => {
                let token = self.grant_tokens.get(g).cloned().unwrap_or_default();
                self.platform.revoke_token(&token)?;
                Ok(None)
            }
        }
    }

    /// Replays the whole trace and returns the logs it produced.
    pub fn run(&mut self) -> Result<RunOutput, PlatformError> {
        let trace = std::mem::take(&mut self.trace);
        let before = (
            self.platform.decision_log().len(),
            self.platform.if_log().len(),
            self.platform.alerts().len(),
        );
        let result = trace.iter().try_for_each(|s| self.step(s).map(|_| ()));
        self.trace = trace;
        result?;
        Ok(RunOutput {
            decisions: self.platform.decision_log()[before.0..].to_vec(),
            flows: self.platform.if_log()[before.1..].to_vec(),
            alerts: self.platform.alerts()[before.2..].to_vec(),
        })
    }
}
