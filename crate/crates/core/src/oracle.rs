//! Reference implementation for cross-checking the engine.
//!
//! Everything here is written independently of the engine's evaluator and
//! pipeline: relations are found by scanning the edge list, profiles by
//! scanning registered apps, and quantifiers by enumerating every binding.
//! [`audit`] compares the two over the whole (component, item, action) space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dam::{decide_with_token, AccessToken};
use crate::data::SensitivityLevel;
use crate::graph::{AppId, ComponentRef, SocialGraph, UserId};
use crate::platform::Platform;
use crate::policy::{
    AccessRequest, Condition, Decision, Env, Literal, Policy, QuantKind, Sort, Target, Term, APP_VAR, OWNER_VAR,
};
use crate::profile::{ComponentKind, ComponentProfile, ProfileStore};

/// Upper bound on `users x apps x components-per-app`.
pub const MAX_BINDINGS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("enumeration space of {0} bindings exceeds the limit")]
    TooLarge(u64),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("unknown constant `{0}`")]
    UnknownConstant(String),
}

fn guard(graph: &SocialGraph, profiles: &ProfileStore) -> Result<(), OracleError> {
    let comps = profiles
        .apps()
        .map(|d| d.profile.components.len() as u64)
        .max()
        .unwrap_or(0);
    let space = (graph.users().len() as u64).max(1) * (graph.apps().len() as u64).max(1) * comps.max(1);
    if space > MAX_BINDINGS {
        return Err(OracleError::TooLarge(space));
    }
    Ok(())
}

/// Lookups by linear scan.
struct Model<'a> {
    graph: &'a SocialGraph,
    profiles: &'a ProfileStore,
}

impl<'a> Model<'a> {
    fn edge(&self, from: &str, to: &str, relation: &str) -> bool {
        self.graph
            .edges()
            .iter()
            .any(|e| e.relation == relation && e.from.as_str() == from && e.to == to)
    }

    fn component(&self, name: &str) -> Option<(&'a str, &'a ComponentProfile)> {
        let (app, id) = name.split_once('/')?;
        for def in self.profiles.apps() {
            if def.app.as_str() != app {
                continue;
            }
            for c in &def.profile.components {
                if c.id.as_str() == id {
                    return Some((def.app.as_str(), c));
                }
            }
        }
        None
    }

    fn components_of(&self, app: &str) -> Vec<String> {
        self.profiles
            .apps()
            .filter(|d| d.app.as_str() == app)
            .flat_map(|d| d.profile.components.iter().map(move |c| format!("{}/{}", d.app, c.id)))
            .collect()
    }

    fn all_components(&self) -> Vec<String> {
        self.profiles
            .apps()
            .flat_map(|d| d.profile.components.iter().map(move |c| format!("{}/{}", d.app, c.id)))
            .collect()
    }

    /// Highest trust over user-user edges `from -> to`.
    fn trust(&self, from: &str, to: &str) -> Option<f64> {
        let vocab = &self.graph.vocabulary().user_user;
        self.graph
            .edges()
            .iter()
            .filter(|e| vocab.contains(&e.relation) && e.from.as_str() == from && e.to == to)
            .map(|e| e.trust)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
    }
}

struct Enumerator<'a> {
    model: Model<'a>,
    literals: &'a [Literal],
    /// Quantifiers left after binding the requester.
    quants: Vec<(QuantKind, &'a str, Sort)>,
}

impl Enumerator<'_> {
    fn value<'b>(&self, t: &'b Term, beta: &'b BTreeMap<String, String>) -> &'b str {
        match t {
            Term::Const(c) => c,
            Term::Var(v) => beta.get(v).map(|s| s.as_str()).unwrap_or(""),
        }
    }

    fn holds(&self, lit: &Literal, beta: &BTreeMap<String, String>) -> bool {
        let a = self.value(&lit.args[0], beta);
        let b = self.value(&lit.args[1], beta);
        let of_kind = |kind: Option<ComponentKind>| {
            self.model
                .component(a)
                .is_some_and(|(app, c)| app == b && kind.is_none_or(|k| c.kind == k))
        };
        let truth = match lit.predicate.as_str() {
            "is_component" => of_kind(None),
            "int_component" => of_kind(Some(ComponentKind::Internal)),
            "ext_component" => of_kind(Some(ComponentKind::External)),
            rel => self.model.edge(a, b, rel),
        };
        truth != lit.negated
    }

    fn mentions(&self, lit: &Literal, j: usize) -> bool {
        lit.args.iter().any(|t| t.as_var() == Some(self.quants[j].1))
    }

    fn domain(&self, i: usize, beta: &BTreeMap<String, String>) -> Vec<String> {
        let (_, var, sort) = self.quants[i];
        match sort {
            Sort::User => self.model.graph.users().iter().map(|u| u.to_string()).collect(),
            Sort::App => self.model.graph.apps().iter().map(|a| a.to_string()).collect(),
            Sort::Component => {
                let later: BTreeSet<&str> = self.quants[i..].iter().map(|q| q.1).collect();
                let owner_app = self.literals.iter().find(|l| {
                    !l.negated
                        && ["is_component", "int_component", "ext_component"].contains(&l.predicate.as_str())
                        && l.args[0].as_var() == Some(var)
                        && l.args[1].as_var().is_none_or(|v| !later.contains(v))
                });
                match owner_app {
                    Some(l) => self.model.components_of(self.value(&l.args[1], beta)),
                    None => self.model.all_components(),
                }
            }
        }
    }

    /// Truth of the conjunction `lits`, where quantifiers before `k` are
    /// already bound. The first quantifier mentioned takes the literals
    /// connected to it through later variables; the rest stay outside.
    fn truth(&self, lits: &[&Literal], beta: &mut BTreeMap<String, String>, k: usize) -> bool {
        let n = self.quants.len();
        let Some(i) = (k..n).find(|&j| lits.iter().any(|l| self.mentions(l, j))) else {
            return lits.iter().all(|l| self.holds(l, beta));
        };
        let mut vars = BTreeSet::from([i]);
        let mut inside = vec![false; lits.len()];
        loop {
            let mut grew = false;
            for (li, l) in lits.iter().enumerate() {
                if inside[li] || !vars.iter().any(|&j| self.mentions(l, j)) {
                    continue;
                }
                inside[li] = true;
                grew = true;
                for j in i..n {
                    if self.mentions(l, j) {
                        vars.insert(j);
                    }
                }
            }
            if !grew {
                break;
            }
        }
        let scope: Vec<&Literal> = lits.iter().zip(&inside).filter(|(_, &x)| x).map(|(l, _)| *l).collect();
        let rest: Vec<&Literal> = lits.iter().zip(&inside).filter(|(_, &x)| !x).map(|(l, _)| *l).collect();

        let (kind, var, _) = self.quants[i];
        let mut satisfied = Vec::new();
        for d in self.domain(i, beta) {
            beta.insert(var.to_string(), d);
            satisfied.push(self.truth(&scope, beta, i + 1));
            beta.remove(var);
        }
        let q = match kind {
            QuantKind::Forall => satisfied.iter().all(|&s| s),
            QuantKind::Exists => satisfied.iter().any(|&s| s),
            QuantKind::NotExists => !satisfied.iter().any(|&s| s),
        };
        q && self.truth(&rest, beta, i + 1)
    }
}

fn check_names(c: &Condition, graph: &SocialGraph, m: &Model) -> Result<(), OracleError> {
    for lit in &c.literals {
        let p = lit.predicate.as_str();
        let builtin = ["is_component", "int_component", "ext_component", "installed"].contains(&p);
        if !builtin && !graph.vocabulary().user_user.contains(p) {
            return Err(OracleError::UnknownPredicate(p.to_string()));
        }
        for (pos, t) in lit.args.iter().enumerate() {
            let Term::Const(name) = t else { continue };
            let known = match (p, pos) {
                ("is_component" | "int_component" | "ext_component", 0) => m.component(name).is_some(),
                ("is_component" | "int_component" | "ext_component" | "installed", 1) => {
                    graph.apps().iter().any(|a| a.as_str() == name)
                }
                _ => graph.users().iter().any(|u| u.as_str() == name),
            };
            if !known {
                return Err(OracleError::UnknownConstant(name.clone()));
            }
        }
    }
    Ok(())
}

/// Truth of `c` by exhaustive enumeration of quantifier bindings.
pub fn brute_eval(c: &Condition, env: &Env, graph: &SocialGraph, profiles: &ProfileStore) -> Result<bool, OracleError> {
    guard(graph, profiles)?;
    let model = Model { graph, profiles };
    check_names(c, graph, &model)?;
    let mut beta = BTreeMap::new();
    let quantified: BTreeSet<&str> = c.prefix.iter().map(|q| q.var.as_str()).collect();
    if !quantified.contains(OWNER_VAR) {
        beta.insert(OWNER_VAR.to_string(), env.owner.to_string());
    }
    if !quantified.contains(APP_VAR) {
        beta.insert(APP_VAR.to_string(), env.app.to_string());
    }
    // Leading universal block: the first component variable stands for the
    // requester, the first app variable for its app.
    let mut quants = Vec::new();
    let mut in_leading_block = true;
    let (mut comp_bound, mut app_bound) = (false, false);
    for q in &c.prefix {
        in_leading_block = in_leading_block && q.kind == QuantKind::Forall;
        if in_leading_block && q.sort == Sort::Component && !comp_bound {
            comp_bound = true;
            if let Some(r) = &env.component {
                beta.insert(q.var.clone(), format!("{}/{}", r.app, r.component));
                continue;
            }
        } else if in_leading_block && q.sort == Sort::App && !app_bound {
            app_bound = true;
            beta.insert(q.var.clone(), env.app.to_string());
            continue;
        }
        quants.push((q.kind, q.var.as_str(), q.sort));
    }
    let e = Enumerator {
        model,
        literals: &c.literals,
        quants,
    };
    let lits: Vec<&Literal> = c.literals.iter().collect();
    Ok(e.truth(&lits, &mut beta, 0))
}

fn policy_targets(p: &Policy, r: &AccessRequest, graph: &SocialGraph) -> bool {
    let attr = &r.target.attribute;
    let target = match &p.target {
        Target::Owner | Target::Implicit => true,
        Target::Named(x) => {
            if graph.users().iter().any(|u| u.as_str() == x) {
                r.target.owner.as_str() == x
            } else {
                p.data.is_some() || x == attr
            }
        }
    };
    target && p.data.as_ref().is_none_or(|d| d.contains(attr))
}

fn policy_effect(p: &Policy, action: &str) -> Option<Decision> {
    let terms: Vec<_> = p.actions.iter().filter(|t| t.name == action).collect();
    if terms.is_empty() {
        None
    } else if terms.iter().any(|t| t.negated) {
        Some(Decision::Deny)
    } else {
        Some(p.decision)
    }
}

/// Whether the reference pipeline grants a single-action request.
pub fn reference_grant(p: &Platform, token: Option<&AccessToken>, r: &AccessRequest) -> Result<bool, OracleError> {
    let graph = p.graph();
    let model = Model {
        graph,
        profiles: p.profiles(),
    };
    let action = r.actions.iter().next().map(|s| s.as_str()).unwrap_or("");
    let owner = r.target.owner.as_str();
    let app = r.requester.app.as_str();
    let attr = r.target.attribute.as_str();

    let token_ok = token.is_some_and(|t| {
        !t.revoked && t.user.as_str() == owner && t.app.as_str() == app && t.granted_scopes.contains(attr)
    });
    if !token_ok {
        return Ok(false);
    }

    let read = action == "read" || action == "access";
    let Some((_, comp)) = model.component(&r.requester.to_string()) else {
        return Ok(false);
    };
    if (read && !comp.inputs.contains(attr)) || (!read && !comp.outputs.contains(action)) {
        return Ok(false);
    }

    let item = p.data().items().find(|i| i.owner.as_str() == owner && i.id == attr);
    if comp.kind == ComponentKind::External && read {
        let generalized = p
            .generalizer()
            .entries()
            .any(|e| e.user.as_str() == owner && e.app.as_str() == app && e.attribute == attr && e.level > 0);
        let level = if generalized {
            SensitivityLevel::NS
        } else if let Some(i) = item {
            i.sensitivity
        } else if let Some(l) = p.profiles().get(app).and_then(|d| d.data_items.get(attr)) {
            *l
        } else {
            p.data()
                .items()
                .filter(|i| i.id == attr)
                .map(|i| i.sensitivity)
                .max()
                .unwrap_or(SensitivityLevel::HS)
        };
        if level != SensitivityLevel::NS {
            return Ok(false);
        }
    }
    let Some(item) = item else {
        return Ok(false);
    };

    let env = Env::new(
        r.target.owner.clone(),
        r.requester.app.clone(),
        Some(r.requester.clone()),
    );
    let mut by_author: BTreeMap<&str, Vec<Decision>> = BTreeMap::new();
    for sp in p.policies().iter() {
        let author = sp.owner.as_str();
        if author != owner && model.trust(owner, author).is_none() {
            continue;
        }
        let Some(effect) = policy_effect(&sp.policy, action) else {
            continue;
        };
        if !policy_targets(&sp.policy, r, graph) {
            continue;
        }
        if brute_eval(&sp.policy.condition, &env, graph, p.profiles())? {
            by_author.entry(author).or_default().push(effect);
        }
    }
    let deny_overrides = |ds: &[Decision]| !ds.contains(&Decision::Deny);
    if let Some(own) = by_author.get(owner) {
        return Ok(deny_overrides(own));
    }
    let mut winner: Option<(&str, f64)> = None;
    for &author in by_author.keys() {
        let t = model.trust(owner, author).unwrap_or(f64::NEG_INFINITY);
        match winner {
            Some((_, best)) if best >= t => {}
            _ => winner = Some((author, t)),
        }
    }
    Ok(match winner {
        Some((author, _)) => deny_overrides(&by_author[author]),
        None => item.sensitivity == SensitivityLevel::NS,
    })
}

/// Which token an audited request is presented with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentMode {
    /// The owner's current token for the app, if any.
    #[default]
    Tokens,
    /// A token covering all of the app's required data, as if every user
    /// had consented. Exercises the policy layer for every user/app pair.
    AssumeConsent,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub requester: ComponentRef,
    pub owner: UserId,
    pub attribute: String,
    pub action: String,
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}/{}",
            self.requester, self.action, self.owner, self.attribute
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Granted by the engine, not derivable.
    pub oversharing: Vec<Triple>,
    /// Derivable, denied by the engine.
    pub undersharing: Vec<Triple>,
    pub checked: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.oversharing.is_empty() && self.undersharing.is_empty()
    }
}

/// Every action name the audit tries: policy actions, component outputs and
/// `read`.
pub fn action_vocabulary(p: &Platform) -> BTreeSet<String> {
    let mut out = BTreeSet::from(["read".to_string()]);
    for sp in p.policies().iter() {
        out.extend(sp.policy.actions.iter().map(|a| a.name.clone()));
    }
    for (_, c) in p.profiles().all_components() {
        out.extend(c.outputs.iter().cloned());
    }
    out
}

fn audit_token(p: &Platform, mode: ConsentMode, owner: &UserId, app: &AppId) -> Option<AccessToken> {
    match mode {
        ConsentMode::Tokens => p.dam().token_for(owner.as_str(), app.as_str()).cloned(),
        ConsentMode::AssumeConsent => Some(AccessToken {
            token_id: "assumed".into(),
            user: owner.clone(),
            app: app.clone(),
            granted_scopes: p
                .profiles()
                .get(app.as_str())
                .map(|d| d.profile.required_data.clone())
                .unwrap_or_default(),
            issued_at: 0,
            revoked: false,
        }),
    }
}

/// Compares `engine` with the reference over every (component, item, action)
/// triple.
pub fn audit_with<F>(p: &Platform, mode: ConsentMode, engine: F) -> Result<AuditReport, OracleError>
where
    F: Fn(Option<&AccessToken>, &AccessRequest) -> bool,
{
    guard(p.graph(), p.profiles())?;
    let actions = action_vocabulary(p);
    let mut report = AuditReport::default();
    for (requester, _) in p.profiles().all_components() {
        for item in p.data().items() {
            let token = audit_token(p, mode, &item.owner, &requester.app);
            for action in &actions {
                let r = AccessRequest::new(requester.clone(), item.owner.clone(), &item.id, &[action]);
                let expected = reference_grant(p, token.as_ref(), &r)?;
                let got = engine(token.as_ref(), &r);
                report.checked += 1;
                if got == expected {
                    continue;
                }
                let t = Triple {
                    requester: requester.clone(),
                    owner: item.owner.clone(),
                    attribute: item.id.clone(),
                    action: action.clone(),
                };
                if got {
                    report.oversharing.push(t);
                } else {
                    report.undersharing.push(t);
                }
            }
        }
    }
    Ok(report)
}

/// Audits the platform's own decision pipeline.
pub fn audit(p: &Platform, mode: ConsentMode) -> Result<AuditReport, OracleError> {
    let snap = p.snapshot();
    audit_with(p, mode, |t, r| decide_with_token(&snap, t, r).is_grant())
}
