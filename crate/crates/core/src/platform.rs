//! The platform: every store plus the decision and flow logs, driven through
//! one logical clock.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alert::{Alert, AlertKind};
use crate::dam::{self, AccessToken, Dam, DamError, Decision, Outcome, Snapshot, Stage};
use crate::data::{DataError, DataStore, SensitivityLevel};
use crate::generalizer::{GeneralizationEntry, Generalizer, GeneralizerError};
use crate::graph::{AppId, ComponentRef, GraphError, SocialGraph, UserId};
use crate::plc::{check_flow, detect_anomaly, FlowEvent, IfLogRecord, Plc, PlcError};
use crate::policy::{
    eval, explain_condition, parse_policy, AccessRequest, DataRef, Env, EvalError, Explanation, ParseError,
    PolicyStore, PolicyStoreError,
};
use crate::profile::{ProfileError, ProfileStore, TpaDefinition};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("policy `{id}`: {source}")]
    PolicyParse { id: String, source: ParseError },
    #[error(transparent)]
    Policy(#[from] PolicyStoreError),
    #[error(transparent)]
    Dam(#[from] DamError),
    #[error(transparent)]
    Generalizer(#[from] GeneralizerError),
    #[error(transparent)]
    Flow(#[from] PlcError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub ts: u64,
    pub requester: ComponentRef,
    pub target: DataRef,
    pub actions: BTreeSet<String>,
    pub outcome: String,
    pub value: Option<BTreeSet<String>>,
    pub matched_policy: Option<String>,
    pub alert: Option<AlertKind>,
    pub stage: Stage,
    pub reason: String,
}

impl DecisionRecord {
    pub fn from_decision(ts: u64, d: &Decision) -> Self {
        let (outcome, value) = match &d.outcome {
            Outcome::Grant(v) => ("grant", v.clone()),
            Outcome::Deny => ("deny", None),
        };
        Self {
            ts,
            requester: d.request.requester.clone(),
            target: d.request.target.clone(),
            actions: d.request.actions.clone(),
            outcome: outcome.to_string(),
            value,
            matched_policy: d.matched_policy.clone(),
            alert: d.alert.as_ref().map(|a| a.kind),
            stage: d.stage,
            reason: d.reason.clone(),
        }
    }
}

/// How one stored policy relates to a request, for `explain`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrace {
    pub id: String,
    pub owner: UserId,
    pub text: String,
    /// Target, data and action match the request.
    pub matches: bool,
    /// Author is the data owner or one of the owner's contacts.
    pub stakeholder: bool,
    pub condition: Option<Explanation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainReport {
    pub decision: Decision,
    pub token: Option<String>,
    pub policies: Vec<PolicyTrace>,
}

#[derive(Debug, Clone, Default)]
pub struct Platform {
    graph: SocialGraph,
    data: DataStore,
    profiles: ProfileStore,
    policies: PolicyStore,
    generalizer: Generalizer,
    dam: Dam,
    plc: Plc,
    decisions: Vec<DecisionRecord>,
    alerts: Vec<Alert>,
    clock: u64,
}

impl Platform {
    /// `seed` drives token ids.
    pub fn new(seed: u64) -> Self {
        Self {
            dam: Dam::new(seed),
            ..Self::default()
        }
    }

    pub fn with_graph(graph: SocialGraph, seed: u64) -> Self {
        Self {
            graph,
            ..Self::new(seed)
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn graph(&self) -> &SocialGraph {
        &self.graph
    }

    /// For building the user graph before apps and data are added.
    pub fn graph_mut(&mut self) -> &mut SocialGraph {
        &mut self.graph
    }

    pub fn data(&self) -> &DataStore {
        &self.data
    }

    pub fn profiles(&self) -> &ProfileStore {
        &self.profiles
    }

    pub fn policies(&self) -> &PolicyStore {
        &self.policies
    }

    pub fn generalizer(&self) -> &Generalizer {
        &self.generalizer
    }

    pub fn dam(&self) -> &Dam {
        &self.dam
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot::new(
            &self.graph,
            &self.data,
            &self.profiles,
            &self.policies,
            &self.generalizer,
        )
    }

    pub fn set_data_item(
        &mut self,
        owner: &str,
        id: &str,
        value: BTreeSet<String>,
        sensitivity: SensitivityLevel,
        write_only: bool,
    ) -> Result<(), PlatformError> {
        self.data
            .insert(&self.graph, owner, id, value, sensitivity, write_only)?;
        Ok(())
    }

    /// Registers an app, judging its external components against the most
    /// sensitive level each attribute has anywhere in the data store.
    pub fn register_tpa(&mut self, def: TpaDefinition) -> Result<AppId, PlatformError> {
        let ctx = self.data.attribute_levels();
        Ok(self.profiles.register_tpa(&mut self.graph, def, &ctx)?)
    }

    /// Parses and files a policy, attaching its id to the owner's items it
    /// covers.
    pub fn add_policy(&mut self, id: &str, owner: &str, text: &str) -> Result<(), PlatformError> {
        let policy = parse_policy(text).map_err(|source| PlatformError::PolicyParse {
            id: id.to_string(),
            source,
        })?;
        let covered: Vec<String> = self
            .data
            .items_of(owner)
            .filter(|i| policy.data.as_ref().is_none_or(|d| d.contains(&i.id)))
            .map(|i| i.id.clone())
            .collect();
        self.policies.add(id, owner, policy, &self.graph, &self.profiles)?;
        for attr in covered {
            self.data.attach_policy(owner, &attr, id);
        }
        Ok(())
    }

    pub fn consent_and_issue(
        &mut self,
        user: &str,
        app: &str,
        scopes: &BTreeSet<String>,
        generalize: &BTreeMap<String, (BTreeSet<String>, u32)>,
    ) -> Result<AccessToken, PlatformError> {
        let now = self.tick();
        Ok(self.dam.consent_and_issue(
            &mut self.graph,
            &self.profiles,
            &self.data,
            &mut self.generalizer,
            user,
            app,
            scopes,
            generalize,
            now,
        )?)
    }

    pub fn revoke_token(&mut self, token_id: &str) -> Result<(), PlatformError> {
        self.tick();
        Ok(self.dam.revoke_token(token_id)?)
    }

    pub fn opt_generalize(&mut self, entry: GeneralizationEntry) -> Result<(), PlatformError> {
        self.generalizer
            .opt_generalize(&self.graph, &self.profiles, &self.data, entry)?;
        Ok(())
    }

    /// Decides without logging.
    pub fn decide(&self, token_id: &str, r: &AccessRequest) -> Decision {
        self.dam.decide(&self.snapshot(), token_id, r)
    }

    /// Decides, logs the decision and any flow checks it ran, and records
    /// its alert.
    pub fn evaluate_request(&mut self, token_id: &str, r: &AccessRequest) -> Decision {
        let mut d = self.decide(token_id, r);
        let ts = self.tick();
        for rec in &mut d.flows {
            rec.event.timestamp = ts;
            self.plc.record(rec.clone());
        }
        self.decisions.push(DecisionRecord::from_decision(ts, &d));
        if let Some(a) = &d.alert {
            self.alerts.push(a.clone());
        }
        d
    }

    /// Checks and logs one flow, raising any alerts it warrants.
    pub fn check_flow(&mut self, mut e: FlowEvent) -> Result<IfLogRecord, PlatformError> {
        let rec = check_flow(&e, self.snapshot().flow_context())?;
        e.timestamp = self.tick();
        let rec = IfLogRecord { event: e, ..rec };
        self.alerts
            .extend(detect_anomaly(std::slice::from_ref(&rec), &self.profiles));
        self.plc.record(rec.clone());
        Ok(rec)
    }

    pub fn decision_log(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    pub fn if_log(&self) -> &[IfLogRecord] {
        self.plc.log()
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    /// Decision for `r` under the owner's current token for the app, with
    /// every stored policy's match status and condition trace.
    pub fn explain(&self, r: &AccessRequest) -> ExplainReport {
        let token = self.dam.token_for(r.target.owner.as_str(), r.requester.app.as_str());
        let snap = self.snapshot();
        let decision = dam::decide_with_token(&snap, token, r);
        let env = Env::for_request(r);
        let owner = r.target.owner.as_str();
        let policies = self
            .policies
            .iter()
            .map(|sp| {
                let matches = eval::targets(&sp.policy, r, &self.graph)
                    && sp.policy.actions.iter().any(|a| r.actions.contains(&a.name));
                let stakeholder = sp.owner.as_str() == owner
                    || matches!(self.graph.trust_between(owner, sp.owner.as_str()), Ok(Some(_)));
                let condition = explain_condition(&sp.policy.condition, &env, &self.graph, &self.profiles).ok();
                PolicyTrace {
                    id: sp.id.clone(),
                    owner: sp.owner.clone(),
                    text: sp.policy.to_string(),
                    matches,
                    stakeholder,
                    condition,
                }
            })
            .collect();
        ExplainReport {
            decision,
            token: token.map(|t| t.token_id.clone()),
            policies,
        }
    }
}
