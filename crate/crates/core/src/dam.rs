//! Authorization manager: consent and token issuance, the per-request
//! decision pipeline, and conflict resolution between stakeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alert::{Alert, AlertKind};
use crate::data::DataStore;
use crate::generalizer::{GeneralizationEntry, Generalizer, GeneralizerError};
use crate::graph::{AppId, GraphError, SocialGraph, UserId};
use crate::plc::{check_flow, FlowContext, FlowEvent, IfLogRecord, Verdict, DATA_SOURCE};
use crate::policy::{applicable, AccessRequest, Decision as Effect, PolicyStore};
use crate::profile::{is_read_like, ProfileStore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DamError {
    #[error("app `{0}` is not registered")]
    UnregisteredApp(String),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("`{scope}` is not in the required data of `{app}`")]
    UnknownScope { app: String, scope: String },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("no decisions to resolve")]
    EmptyDecisionSet,
    #[error(transparent)]
    Generalize(#[from] GeneralizerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    pub token_id: String,
    pub user: UserId,
    pub app: AppId,
    pub granted_scopes: BTreeSet<String>,
    pub issued_at: u64,
    pub revoked: bool,
}

/// Pipeline stage that settled a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Token,
    Profile,
    Flow,
    Resource,
    Policy,
    Default,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Token => "token",
            Stage::Profile => "profile",
            Stage::Flow => "flow",
            Stage::Resource => "resource",
            Stage::Policy => "policy",
            Stage::Default => "default",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "outcome", content = "value")]
pub enum Outcome {
    /// Carries the released value for read-like actions.
    Grant(Option<BTreeSet<String>>),
    Deny,
}

impl Outcome {
    pub fn is_grant(&self) -> bool {
        matches!(self, Outcome::Grant(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub request: AccessRequest,
    pub outcome: Outcome,
    pub matched_policy: Option<String>,
    pub alert: Option<Alert>,
    pub stage: Stage,
    pub reason: String,
    /// Flow checks run for external requesters, in action order.
    pub flows: Vec<IfLogRecord>,
}

impl Decision {
    fn deny(r: &AccessRequest, stage: Stage, reason: impl Into<String>) -> Self {
        Self {
            request: r.clone(),
            outcome: Outcome::Deny,
            matched_policy: None,
            alert: None,
            stage,
            reason: reason.into(),
            flows: Vec::new(),
        }
    }

    pub fn is_grant(&self) -> bool {
        self.outcome.is_grant()
    }
}

/// Read-only state the pipeline decides against.
pub struct Snapshot<'a> {
    pub graph: &'a SocialGraph,
    pub data: &'a DataStore,
    pub profiles: &'a ProfileStore,
    pub policies: &'a PolicyStore,
    pub generalizer: &'a Generalizer,
    flow: FlowContext<'a>,
}

impl<'a> Snapshot<'a> {
    pub fn new(
        graph: &'a SocialGraph,
        data: &'a DataStore,
        profiles: &'a ProfileStore,
        policies: &'a PolicyStore,
        generalizer: &'a Generalizer,
    ) -> Self {
        Self {
            graph,
            data,
            profiles,
            policies,
            generalizer,
            flow: FlowContext::new(profiles, data, generalizer),
        }
    }

    pub fn flow_context(&self) -> &FlowContext<'a> {
        &self.flow
    }
}

/// One stakeholder's verdict on a request.
#[derive(Debug, Clone, PartialEq)]
pub struct StakeholderDecision {
    pub stakeholder: UserId,
    pub policy: String,
    pub decision: Effect,
}

/// Picks the governing entry. The target's own entries win, deny over allow.
/// Otherwise each stakeholder's entries are merged deny-over-allow and the
/// stakeholder the target trusts most wins; equal trust goes to the
/// lexicographically smallest id. Stakeholders without a trust edge from the
/// target rank lowest.
pub fn resolve_conflict<'d>(
    decisions: &'d [StakeholderDecision],
    target: &str,
    graph: &SocialGraph,
) -> Result<&'d StakeholderDecision, DamError> {
    let merged = |who: &str| -> Option<&'d StakeholderDecision> {
        let mut own = decisions.iter().filter(|d| d.stakeholder.as_str() == who);
        let first = own.clone().next()?;
        Some(own.find(|d| d.decision == Effect::Deny).unwrap_or(first))
    };
    if let Some(d) = merged(target) {
        return Ok(d);
    }
    let stakeholders: BTreeSet<&str> = decisions.iter().map(|d| d.stakeholder.as_str()).collect();
    let mut best: Option<(f64, &str)> = None;
    for s in stakeholders {
        let trust = graph.trust_between(target, s).ok().flatten().unwrap_or(-1.0);
        // ascending iteration keeps the smallest id on ties
        if best.is_none_or(|(t, _)| trust > t) {
            best = Some((trust, s));
        }
    }
    let (_, winner) = best.ok_or(DamError::EmptyDecisionSet)?;
    Ok(merged(winner).expect("winner has entries"))
}

fn check_token(token: Option<&AccessToken>, r: &AccessRequest) -> Result<(), String> {
    let Some(t) = token else {
        return Err("unknown token".into());
    };
    if t.revoked {
        Err("token revoked".into())
    } else if t.user != r.target.owner {
        Err(format!("token belongs to `{}`", t.user))
    } else if t.app != r.requester.app {
        Err(format!("token issued to app `{}`", t.app))
    } else if !t.granted_scopes.contains(&r.target.attribute) {
        Err(format!("`{}` not in granted scopes", r.target.attribute))
    } else {
        Ok(())
    }
}

/// Decides a request for one action.
fn decide_action(snap: &Snapshot, token: Option<&AccessToken>, r: &AccessRequest, action: &str) -> Decision {
    let r1 = r.single(action);
    let (app, comp) = (r.requester.app.as_str(), r.requester.component.as_str());
    let (owner, attribute) = (r.target.owner.as_str(), r.target.attribute.as_str());

    if let Err(reason) = check_token(token, r) {
        return Decision::deny(&r1, Stage::Token, reason);
    }

    let permitted = snap.profiles.component_permits(app, comp, attribute, action);
    if !permitted.as_ref().is_ok_and(|ok| *ok) {
        let detail = match permitted {
            Err(e) => e.to_string(),
            Ok(_) if is_read_like(action) => format!("`{attribute}` is not a declared input"),
            Ok(_) => format!("`{action}` is not a declared output"),
        };
        let mut d = Decision::deny(&r1, Stage::Profile, detail.clone());
        d.alert = Some(Alert {
            kind: AlertKind::SuspiciousAccessRequest,
            subject: r.requester.clone(),
            detail,
        });
        return d;
    }

    let external = snap.profiles.resolve(&r.requester).is_some_and(|c| c.is_external());
    let mut flows = Vec::new();
    if external && is_read_like(action) {
        let ev = FlowEvent {
            app: r.requester.app.clone(),
            source: DATA_SOURCE.to_string(),
            sink: comp.to_string(),
            payload: BTreeSet::from([attribute.to_string()]),
            owner: Some(r.target.owner.clone()),
            timestamp: 0,
        };
        match check_flow(&ev, snap.flow_context()) {
            Ok(rec) if rec.verdict == Verdict::Permitted => flows.push(rec),
            blocked => {
                let detail = match &blocked {
                    Ok(rec) => format!(
                        "{attribute} of {owner} to external component blocked ({})",
                        rec.reason.map(|x| x.to_string()).unwrap_or_default()
                    ),
                    Err(e) => e.to_string(),
                };
                let mut d = Decision::deny(&r1, Stage::Flow, detail.clone());
                d.flows.extend(blocked.ok());
                d.alert = Some(Alert {
                    kind: AlertKind::UnauthorizedFlowAttempt,
                    subject: r.requester.clone(),
                    detail,
                });
                return d;
            }
        }
    }

    let with_flows = |mut d: Decision| {
        d.flows = flows.clone();
        d
    };
    let Some(item) = snap.data.get(owner, attribute) else {
        return with_flows(Decision::deny(&r1, Stage::Resource, "no such data item"));
    };

    let mut entries = Vec::new();
    for sp in snap.policies.iter() {
        let Some(effect) = sp.policy.effect_for(action) else {
            continue;
        };
        let author = sp.owner.as_str();
        if author != owner && !matches!(snap.graph.trust_between(owner, author), Ok(Some(_))) {
            continue;
        }
        match applicable(&sp.policy, &r1, snap.graph, snap.profiles) {
            Ok(true) => entries.push(StakeholderDecision {
                stakeholder: sp.owner.clone(),
                policy: sp.id.clone(),
                decision: effect,
            }),
            Ok(false) => {}
            Err(e) => log::warn!("policy {} skipped: {e}", sp.id),
        }
    }

    let grant = |stage, policy: Option<String>, reason: String| {
        let value = is_read_like(action).then(|| {
            snap.generalizer
                .release_value(snap.data, owner, app, attribute)
                .unwrap_or_default()
        });
        Decision {
            request: r1.clone(),
            outcome: Outcome::Grant(value),
            matched_policy: policy,
            alert: None,
            stage,
            reason,
            flows: flows.clone(),
        }
    };
    match resolve_conflict(&entries, owner, snap.graph) {
        Ok(win) => {
            let reason = if win.stakeholder == r.target.owner {
                "owner policy".to_string()
            } else {
                format!("policy of trusted contact `{}`", win.stakeholder)
            };
            match win.decision {
                Effect::Allow => grant(Stage::Policy, Some(win.policy.clone()), reason),
                Effect::Deny => {
                    let mut d = with_flows(Decision::deny(&r1, Stage::Policy, reason));
                    d.matched_policy = Some(win.policy.clone());
                    d
                }
            }
        }
        Err(_) if item.is_private() => with_flows(Decision::deny(
            &r1,
            Stage::Default,
            format!("no applicable policy; {} item", item.sensitivity),
        )),
        Err(_) => grant(Stage::Default, None, "no applicable policy; public item".into()),
    }
}

/// Runs the pipeline for every requested action; the request is granted only
/// when every action is.
pub fn decide_with_token(snap: &Snapshot, token: Option<&AccessToken>, r: &AccessRequest) -> Decision {
    if r.actions.is_empty() {
        return Decision::deny(r, Stage::Token, "request names no action");
    }
    let mut flows = Vec::new();
    let mut granted: Option<Decision> = None;
    let mut value = None;
    let mut matched = None;
    for action in &r.actions {
        let mut d = decide_action(snap, token, r, action);
        flows.append(&mut d.flows);
        match &d.outcome {
            Outcome::Deny => {
                d.request = r.clone();
                d.flows = flows;
                return d;
            }
            Outcome::Grant(v) => {
                if value.is_none() {
                    value = v.clone();
                }
                if matched.is_none() {
                    matched = d.matched_policy.clone();
                }
                granted.get_or_insert(d);
            }
        }
    }
    let mut d = granted.expect("at least one action");
    d.request = r.clone();
    d.outcome = Outcome::Grant(value);
    d.matched_policy = matched;
    d.flows = flows;
    d
}

/// Token table with deterministic id generation.
#[derive(Debug, Clone)]
pub struct Dam {
    tokens: BTreeMap<String, AccessToken>,
    rng: ChaCha8Rng,
}

impl Default for Dam {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Dam {
    pub fn new(seed: u64) -> Self {
        Self {
            tokens: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Records the install, stores the user's generalization choices and
    /// issues a token for exactly `scopes`. Nothing changes on error.
    #[allow(clippy::too_many_arguments)]
    pub fn consent_and_issue(
        &mut self,
        graph: &mut SocialGraph,
        profiles: &ProfileStore,
        data: &DataStore,
        generalizer: &mut Generalizer,
        user: &str,
        app: &str,
        scopes: &BTreeSet<String>,
        generalize: &BTreeMap<String, (BTreeSet<String>, u32)>,
        now: u64,
    ) -> Result<AccessToken, DamError> {
        let def = profiles
            .get(app)
            .ok_or_else(|| DamError::UnregisteredApp(app.to_string()))?;
        let user_id = graph
            .users()
            .get(user)
            .cloned()
            .ok_or_else(|| DamError::UnknownUser(user.to_string()))?;
        if let Some(s) = scopes.iter().find(|s| !def.profile.required_data.contains(*s)) {
            return Err(DamError::UnknownScope {
                app: app.to_string(),
                scope: s.clone(),
            });
        }
        let mut g = graph.clone();
        g.install_app(user, app)?;
        let mut gen = generalizer.clone();
        for (attribute, (value, level)) in generalize {
            gen.opt_generalize(
                &g,
                profiles,
                data,
                GeneralizationEntry {
                    user: user_id.clone(),
                    app: def.app.clone(),
                    attribute: attribute.clone(),
                    value: value.clone(),
                    level: *level,
                },
            )?;
        }
        *graph = g;
        *generalizer = gen;
        let token_id = loop {
            let id = format!("{:016x}", self.rng.random::<u64>());
            if !self.tokens.contains_key(&id) {
                break id;
            }
        };
        let token = AccessToken {
            token_id: token_id.clone(),
            user: user_id,
            app: def.app.clone(),
            granted_scopes: scopes.clone(),
            issued_at: now,
            revoked: false,
        };
        self.tokens.insert(token_id, token.clone());
        Ok(token)
    }

    /// Idempotent.
    pub fn revoke_token(&mut self, token_id: &str) -> Result<(), DamError> {
        let t = self
            .tokens
            .get_mut(token_id)
            .ok_or_else(|| DamError::UnknownToken(token_id.to_string()))?;
        t.revoked = true;
        Ok(())
    }

    pub fn token(&self, token_id: &str) -> Option<&AccessToken> {
        self.tokens.get(token_id)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &AccessToken> {
        self.tokens.values()
    }

    /// Most recently issued live token of `user` for `app`.
    pub fn token_for(&self, user: &str, app: &str) -> Option<&AccessToken> {
        self.tokens
            .values()
            .filter(|t| !t.revoked && t.user.as_str() == user && t.app.as_str() == app)
            .max_by(|a, b| a.issued_at.cmp(&b.issued_at).then(b.token_id.cmp(&a.token_id)))
    }

    pub fn decide(&self, snap: &Snapshot, token_id: &str, r: &AccessRequest) -> Decision {
        decide_with_token(snap, self.tokens.get(token_id), r)
    }
}
