//! Condition evaluation.
//!
//! Semantics, in the order they are applied:
//!
//! 1. **Requester instantiation.** In the leading run of `forall`
//!    quantifiers, the first component variable is bound to the requesting
//!    component (when one is known) and the first app variable to the
//!    requesting app. `[forall c: int_component(c,A)]` therefore asks whether
//!    *the requester* is internal, not whether every component is.
//! 2. **Scoping.** Each remaining quantifier scopes over the literals that
//!    mention its variable, directly or through variables quantified after it.
//!    Literals that mention no quantified variable sit outside every
//!    quantifier. `exists v, notexists y: f(v,u) & g(y,u)` thus reads
//!    `(exists v: f(v,u)) & (notexists y: g(y,u))`.
//! 3. **Domains.** Users range over all users, apps over all registered apps,
//!    and a component variable `c` over the components of `X` when the
//!    condition contains a positive `is_component(c,X)` (or the `int_`/`ext_`
//!    variants) with `X` bound outside `c`; otherwise over every component.
//!
//! `notexists x: phi` is `!(exists x: phi)`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{
    AccessRequest, Condition, Literal, Policy, QuantKind, Sort, Target, Term, APP_VAR, EXT_COMPONENT, INSTALLED_PRED,
    INT_COMPONENT, IS_COMPONENT, OWNER_VAR,
};
use crate::graph::{AppId, ComponentRef, SocialGraph, UserId};
use crate::profile::{ComponentKind, ProfileStore};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("unknown {sort} constant `{name}`")]
    UnknownConstant { name: String, sort: Sort },
}

/// Values for the implicit variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Env {
    pub owner: UserId,
    pub app: AppId,
    pub component: Option<ComponentRef>,
}

impl Env {
    pub fn new(owner: UserId, app: AppId, component: Option<ComponentRef>) -> Self {
        Self { owner, app, component }
    }

    pub fn for_request(r: &AccessRequest) -> Self {
        Self {
            owner: r.target.owner.clone(),
            app: r.requester.app.clone(),
            component: Some(r.requester.clone()),
        }
    }
}

/// Checks that every predicate is known and every constant resolves.
pub fn check_references(c: &Condition, graph: &SocialGraph, profiles: &ProfileStore) -> Result<(), EvalError> {
    for lit in &c.literals {
        let sig = super::predicate_signature(&lit.predicate);
        if !super::is_builtin_predicate(&lit.predicate) && !graph.vocabulary().user_user.contains(&lit.predicate) {
            return Err(EvalError::UnknownPredicate(lit.predicate.clone()));
        }
        for (term, sort) in lit.args.iter().zip(sig) {
            let Term::Const(name) = term else { continue };
            let known = match sort {
                Sort::User => graph.has_user(name),
                Sort::App => graph.has_app(name),
                Sort::Component => ComponentRef::parse(name).is_some_and(|r| profiles.resolve(&r).is_some()),
            };
            if !known {
                return Err(EvalError::UnknownConstant {
                    name: name.clone(),
                    sort,
                });
            }
        }
    }
    Ok(())
}

/// One quantifier scope. The root scope has no quantifier.
#[derive(Debug)]
struct Scope<'a> {
    quant: Option<(QuantKind, &'a str, Sort)>,
    literals: Vec<&'a Literal>,
    children: Vec<Scope<'a>>,
    /// App term restricting a component variable's domain.
    owning_app: Option<&'a Term>,
}

impl Scope<'_> {
    fn free_vars(&self, out: &mut Vec<String>) {
        for lit in &self.literals {
            for t in &lit.args {
                if let Term::Var(v) = t {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
        }
        for ch in &self.children {
            ch.free_vars(out);
        }
        if let Some((_, var, _)) = self.quant {
            out.retain(|v| v != var);
        }
    }
}

struct Compiled<'a> {
    instantiated: Vec<(&'a str, String)>,
    root: Scope<'a>,
}

fn compile<'a>(c: &'a Condition, env: &Env) -> Compiled<'a> {
    let mut instantiated = Vec::new();
    let mut remaining = Vec::new();
    let (mut comp_done, mut app_done) = (false, false);
    let mut leading = true;
    for q in &c.prefix {
        leading &= q.kind == QuantKind::Forall;
        let value = match q.sort {
            Sort::Component if leading && !comp_done => {
                comp_done = true;
                env.component.as_ref().map(|r| r.to_string())
            }
            Sort::App if leading && !app_done => {
                app_done = true;
                Some(env.app.to_string())
            }
            _ => None,
        };
        match value {
            Some(v) => instantiated.push((q.var.as_str(), v)),
            None => remaining.push(q),
        }
    }

    let index_of = |name: &str| remaining.iter().position(|q| q.var == name);
    let mut buckets: Vec<Vec<&Literal>> = vec![Vec::new(); remaining.len()];
    let mut root_literals = Vec::new();
    for lit in &c.literals {
        let innermost = lit.args.iter().filter_map(|t| t.as_var().and_then(index_of)).max();
        match innermost {
            Some(i) => buckets[i].push(lit),
            None => root_literals.push(lit),
        }
    }

    let mut pending: Vec<Scope<'a>> = Vec::new();
    for (i, q) in remaining.iter().enumerate().rev() {
        let mut scope = Scope {
            quant: Some((q.kind, q.var.as_str(), q.sort)),
            literals: std::mem::take(&mut buckets[i]),
            children: Vec::new(),
            owning_app: None,
        };
        let mut rest = Vec::new();
        for p in pending {
            let mut fv = Vec::new();
            p.free_vars(&mut fv);
            if fv.contains(&q.var) {
                scope.children.push(p);
            } else {
                rest.push(p);
            }
        }
        pending = rest;
        if q.sort == Sort::Component {
            scope.owning_app = c.literals.iter().find_map(|lit| {
                let restricts = !lit.negated
                    && matches!(lit.predicate.as_str(), IS_COMPONENT | INT_COMPONENT | EXT_COMPONENT)
                    && lit.args[0].as_var() == Some(q.var.as_str());
                let app_bound_outside = match &lit.args[1] {
                    Term::Const(_) => true,
                    Term::Var(v) => index_of(v).is_none_or(|j| j < i),
                };
                (restricts && app_bound_outside).then_some(&lit.args[1])
            });
        }
        pending.push(scope);
    }
    pending.reverse();
    Compiled {
        instantiated,
        root: Scope {
            quant: None,
            literals: root_literals,
            children: pending,
            owning_app: None,
        },
    }
}

/// How a quantifier's value was settled during evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    /// `exists` found this value.
    Witness(String),
    /// `forall` failed at this value.
    Counterexample(String),
    /// `notexists` failed because this value satisfies the body.
    Violation(String),
    /// No value settled the quantifier early; it holds (`forall`, `notexists`)
    /// or fails (`exists`) over the whole domain.
    Exhausted { domain_size: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub depth: usize,
    pub kind: QuantKind,
    pub var: String,
    pub outcome: StepOutcome,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:indent$}{} {}: ",
            "",
            self.kind.keyword(),
            self.var,
            indent = self.depth * 2
        )?;
        match &self.outcome {
            StepOutcome::Witness(v) => write!(f, "witness {}={v}", self.var),
            StepOutcome::Counterexample(v) => write!(f, "counterexample {}={v}", self.var),
            StepOutcome::Violation(v) => write!(f, "violated by {}={v}", self.var),
            StepOutcome::Exhausted { domain_size } => {
                write!(f, "settled over the whole domain ({domain_size} values)")
            }
        }
    }
}

/// Result of [`explain_condition`]: truth value, requester bindings and the
/// quantifier steps that settled it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Explanation {
    pub holds: bool,
    pub bindings: BTreeMap<String, String>,
    pub steps: Vec<Step>,
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "condition holds: {}", self.holds)?;
        for (k, v) in &self.bindings {
            writeln!(f, "  {k} = {v}")?;
        }
        for s in &self.steps {
            writeln!(f, "  {s}")?;
        }
        Ok(())
    }
}

struct Evaluator<'a> {
    graph: &'a SocialGraph,
    profiles: &'a ProfileStore,
    bindings: Vec<(&'a str, String)>,
}

impl<'a> Evaluator<'a> {
    fn value<'t>(&'t self, t: &'t Term) -> &'t str {
        match t {
            Term::Const(c) => c,
            Term::Var(v) => self
                .bindings
                .iter()
                .rev()
                .find(|(n, _)| *n == v)
                .map(|(_, val)| val.as_str())
                .unwrap_or(""),
        }
    }

    fn component_of(&self, comp: &str, app: &str, kind: Option<ComponentKind>) -> bool {
        let Some((a, id)) = comp.split_once('/') else {
            return false;
        };
        a == app
            && self
                .profiles
                .get(app)
                .and_then(|d| d.component(id))
                .is_some_and(|c| kind.is_none_or(|k| c.kind == k))
    }

    fn holds(&self, lit: &Literal) -> bool {
        let a = self.value(&lit.args[0]);
        let b = self.value(&lit.args[1]);
        let truth = match lit.predicate.as_str() {
            IS_COMPONENT => self.component_of(a, b, None),
            INT_COMPONENT => self.component_of(a, b, Some(ComponentKind::Internal)),
            EXT_COMPONENT => self.component_of(a, b, Some(ComponentKind::External)),
            INSTALLED_PRED => self.graph.is_installed(a, b),
            rel => self.graph.has_edge(a, b, rel),
        };
        truth != lit.negated
    }

    fn domain(&self, s: &Scope, var: &str, sort: Sort, searching: bool) -> Vec<String> {
        match sort {
            Sort::App => self.graph.apps().iter().map(|a| a.to_string()).collect(),
            Sort::Component => match s.owning_app {
                Some(t) => {
                    let app = self.value(t);
                    self.profiles
                        .get(app)
                        .map(|d| d.profile.components.iter().map(|c| format!("{app}/{}", c.id)).collect())
                        .unwrap_or_default()
                }
                None => self.profiles.all_components().map(|(r, _)| r.to_string()).collect(),
            },
            Sort::User => {
                if searching {
                    if let Some(c) = self.user_candidates(s, var) {
                        return c;
                    }
                }
                self.graph.users().iter().map(|u| u.to_string()).collect()
            }
        }
    }

    /// When looking for a value that satisfies the body, only neighbours
    /// through a positive relation literal can qualify.
    fn user_candidates(&self, s: &Scope, var: &str) -> Option<Vec<String>> {
        let collect = |it: &mut dyn Iterator<Item = &UserId>| it.map(|u| u.to_string()).collect::<Vec<_>>();
        for lit in s.literals.iter().filter(|l| !l.negated) {
            let [a, b] = &lit.args;
            let a_is = a.as_var() == Some(var);
            let b_is = b.as_var() == Some(var);
            match lit.predicate.as_str() {
                INSTALLED_PRED if a_is => {
                    return Some(collect(&mut self.graph.installers(self.value(b))));
                }
                IS_COMPONENT | INT_COMPONENT | EXT_COMPONENT | INSTALLED_PRED => {}
                rel if a_is && !b_is => {
                    return Some(collect(&mut self.graph.in_neighbors(self.value(b), rel)));
                }
                rel if b_is && !a_is => {
                    return Some(collect(&mut self.graph.out_neighbors(self.value(a), rel)));
                }
                _ => {}
            }
        }
        None
    }

    fn body(&mut self, s: &Scope<'a>, depth: usize, trace: &mut Option<&mut Vec<Step>>) -> bool {
        if !s.literals.iter().all(|l| self.holds(l)) {
            return false;
        }
        for ch in &s.children {
            if !self.scope(ch, depth, trace) {
                return false;
            }
        }
        true
    }

    fn scope(&mut self, s: &Scope<'a>, depth: usize, trace: &mut Option<&mut Vec<Step>>) -> bool {
        let Some((kind, var, sort)) = s.quant else {
            return self.body(s, depth, trace);
        };
        let searching = kind != QuantKind::Forall;
        let domain = self.domain(s, var, sort, searching);
        let domain_size = domain.len();
        for d in domain {
            self.bindings.push((var, d));
            let ok = self.body(s, depth + 1, &mut None);
            let decisive = match kind {
                QuantKind::Forall => !ok,
                QuantKind::Exists | QuantKind::NotExists => ok,
            };
            if decisive {
                if let Some(steps) = trace.as_deref_mut() {
                    let value = self.bindings.last().map(|(_, v)| v.clone()).unwrap_or_default();
                    steps.push(Step {
                        depth,
                        kind,
                        var: var.to_string(),
                        outcome: match kind {
                            QuantKind::Forall => StepOutcome::Counterexample(value),
                            QuantKind::Exists => StepOutcome::Witness(value),
                            QuantKind::NotExists => StepOutcome::Violation(value),
                        },
                    });
                    self.body(s, depth + 1, trace);
                }
                self.bindings.pop();
                return kind == QuantKind::Exists;
            }
            self.bindings.pop();
        }
        if let Some(steps) = trace.as_deref_mut() {
            steps.push(Step {
                depth,
                kind,
                var: var.to_string(),
                outcome: StepOutcome::Exhausted { domain_size },
            });
        }
        kind != QuantKind::Exists
    }
}

fn run(
    c: &Condition,
    env: &Env,
    graph: &SocialGraph,
    profiles: &ProfileStore,
    trace: Option<&mut Vec<Step>>,
) -> Result<(bool, BTreeMap<String, String>), EvalError> {
    check_references(c, graph, profiles)?;
    let compiled = compile(c, env);
    let quantified = |name: &str| c.prefix.iter().any(|q| q.var == name);
    let mut bindings: Vec<(&str, String)> = Vec::new();
    if !quantified(OWNER_VAR) {
        bindings.push((OWNER_VAR, env.owner.to_string()));
    }
    if !quantified(APP_VAR) {
        bindings.push((APP_VAR, env.app.to_string()));
    }
    bindings.extend(compiled.instantiated.iter().cloned());
    let shown = bindings.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    let mut ev = Evaluator {
        graph,
        profiles,
        bindings,
    };
    let mut trace = trace;
    let holds = ev.scope(&compiled.root, 0, &mut trace);
    Ok((holds, shown))
}

pub fn evaluate_condition(
    c: &Condition,
    env: &Env,
    graph: &SocialGraph,
    profiles: &ProfileStore,
) -> Result<bool, EvalError> {
    run(c, env, graph, profiles, None).map(|(b, _)| b)
}

/// Evaluates `c` and records the witnesses and counterexamples that settled
/// each quantifier.
pub fn explain_condition(
    c: &Condition,
    env: &Env,
    graph: &SocialGraph,
    profiles: &ProfileStore,
) -> Result<Explanation, EvalError> {
    let mut steps = Vec::new();
    let (holds, bindings) = run(c, env, graph, profiles, Some(&mut steps))?;
    Ok(Explanation { holds, bindings, steps })
}

/// Whether the policy's target and data match the request's item.
pub fn targets(p: &Policy, r: &AccessRequest, graph: &SocialGraph) -> bool {
    let attribute = r.target.attribute.as_str();
    let target_ok = match &p.target {
        Target::Owner | Target::Implicit => true,
        Target::Named(x) if graph.has_user(x) => r.target.owner.as_str() == x,
        Target::Named(x) => p.data.is_some() || x == attribute,
    };
    let data_ok = p.data.as_ref().is_none_or(|d| d.contains(attribute));
    target_ok && data_ok
}

/// Whether `p` governs `r`: target and data match, some requested action is
/// mentioned, and the condition holds for the requester.
pub fn applicable(
    p: &Policy,
    r: &AccessRequest,
    graph: &SocialGraph,
    profiles: &ProfileStore,
) -> Result<bool, EvalError> {
    if !targets(p, r, graph) || !p.actions.iter().any(|a| r.actions.contains(&a.name)) {
        return Ok(false);
    }
    evaluate_condition(&p.condition, &Env::for_request(r), graph, profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ComponentId;
    use crate::policy::{parse_condition, parse_policy, Decision};
    use crate::profile::tests::{horoscope_ctx, horoscope_profile};
    use crate::profile::TpaDefinition;

    fn world() -> (SocialGraph, ProfileStore) {
        let mut g = SocialGraph::new();
        for rel in ["isfamily", "isfriend", "isclassmate", "iscoworker"] {
            g.declare_relation(rel);
        }
        for u in ["u1", "v1", "y1", "z1"] {
            g.add_user(u).unwrap();
        }
        let mut p = ProfileStore::new();
        p.register_tpa(
            &mut g,
            TpaDefinition::new(horoscope_profile(), BTreeMap::new()),
            &horoscope_ctx(),
        )
        .unwrap();
        (g, p)
    }

    fn env(owner: &str, comp: Option<&str>) -> Env {
        Env::new(
            UserId::new(owner).unwrap(),
            AppId::new("horoscope").unwrap(),
            comp.map(|c| ComponentRef::new(AppId::new("horoscope").unwrap(), ComponentId::new(c).unwrap())),
        )
    }

    fn eval(text: &str, g: &SocialGraph, p: &ProfileStore, e: &Env) -> bool {
        evaluate_condition(&parse_condition(text).unwrap(), e, g, p).unwrap()
    }

    #[test]
    fn family_member_installed() {
        let (mut g, p) = world();
        let c = "exists v: isfamily(v,u) & installed(v,A)";
        g.add_relationship("v1", "u1", "isfamily", 0.8).unwrap();
        assert!(!eval(c, &g, &p, &env("u1", None)));
        g.install_app("v1", "horoscope").unwrap();
        assert!(eval(c, &g, &p, &env("u1", None)));
    }

    #[test]
    fn vacuous_forall_over_empty_components() {
        let (mut g, p) = world();
        g.add_app("bare").unwrap();
        assert!(eval("forall c: is_component(c,bare)", &g, &p, &env("u1", None)));
        assert!(eval(
            "forall c: is_component(c,bare) & ext_component(c,bare)",
            &g,
            &p,
            &env("u1", None)
        ));
    }

    #[test]
    fn classmate_yes_coworker_no() {
        let (mut g, p) = world();
        let c = "exists v, notexists y: isclassmate(v,u) & installed(v,A) & iscoworker(y,u) & installed(y,A)";
        g.add_relationship("v1", "u1", "isclassmate", 0.5).unwrap();
        g.add_relationship("y1", "u1", "iscoworker", 0.5).unwrap();
        g.install_app("v1", "horoscope").unwrap();
        assert!(eval(c, &g, &p, &env("u1", None)));
        g.install_app("y1", "horoscope").unwrap();
        assert!(!eval(c, &g, &p, &env("u1", None)));
    }

    #[test]
    fn requester_component_is_instantiated() {
        let (mut g, p) = world();
        g.install_app("u1", "horoscope").unwrap();
        let c = "forall c: int_component(c,A) & installed(u,A)";
        assert!(eval(c, &g, &p, &env("u1", Some("C1"))));
        assert!(!eval(c, &g, &p, &env("u1", Some("C3"))));
        // without a requester the quantifier ranges over all four components
        assert!(!eval(c, &g, &p, &env("u1", None)));
        assert!(eval("forall c: is_component(c,A)", &g, &p, &env("u1", None)));
    }

    #[test]
    fn notexists_is_negated_exists() {
        let (mut g, p) = world();
        g.add_relationship("v1", "u1", "isfriend", 0.5).unwrap();
        let e = env("u1", None);
        for body in ["isfriend(v,u)", "isfriend(v,u) & installed(v,A)", "!isfriend(v,u)"] {
            let ex = eval(&format!("exists v: {body}"), &g, &p, &e);
            let nex = eval(&format!("notexists v: {body}"), &g, &p, &e);
            assert_eq!(ex, !nex, "{body}");
        }
    }

    #[test]
    fn unknown_references() {
        let (g, p) = world();
        let e = env("u1", None);
        let err = |t: &str| evaluate_condition(&parse_condition(t).unwrap(), &e, &g, &p).unwrap_err();
        assert_eq!(err("exists v: enemy(v,u)"), EvalError::UnknownPredicate("enemy".into()));
        assert!(matches!(
            err("isfriend(bob,u)"),
            EvalError::UnknownConstant { sort: Sort::User, .. }
        ));
        assert!(matches!(
            err("installed(u,nope)"),
            EvalError::UnknownConstant { sort: Sort::App, .. }
        ));
        assert!(matches!(
            err("is_component(horoscope/C9,A)"),
            EvalError::UnknownConstant {
                sort: Sort::Component,
                ..
            }
        ));
    }

    #[test]
    fn explanation_names_witness() {
        let (mut g, p) = world();
        g.add_relationship("v1", "u1", "isfamily", 0.8).unwrap();
        g.install_app("v1", "horoscope").unwrap();
        let c = parse_condition("exists v: isfamily(v,u) & installed(v,A)").unwrap();
        let x = explain_condition(&c, &env("u1", None), &g, &p).unwrap();
        assert!(x.holds);
        assert_eq!(x.steps[0].outcome, StepOutcome::Witness("v1".into()));
        assert_eq!(x.bindings["u"], "u1");
    }

    #[test]
    fn applicability_and_effects() {
        let (mut g, p) = world();
        g.install_app("u1", "horoscope").unwrap();
        let pol =
            parse_policy("[-, {dob}, {read, !share}, 1, [forall c: int_component(c,A) & installed(u,A)]]").unwrap();
        let req = |c: &str, attr: &str, act: &str| {
            AccessRequest::new(
                ComponentRef::parse(&format!("horoscope/{c}")).unwrap(),
                UserId::new("u1").unwrap(),
                attr,
                &[act],
            )
        };
        assert!(applicable(&pol, &req("C1", "dob", "read"), &g, &p).unwrap());
        assert_eq!(pol.effect_for("read"), Some(Decision::Allow));
        assert!(applicable(&pol, &req("C1", "dob", "share"), &g, &p).unwrap());
        assert_eq!(pol.effect_for("share"), Some(Decision::Deny));
        assert!(!applicable(&pol, &req("C1", "name", "read"), &g, &p).unwrap());
        assert!(!applicable(&pol, &req("C3", "dob", "read"), &g, &p).unwrap());
        assert!(!applicable(&pol, &req("C1", "dob", "post"), &g, &p).unwrap());
    }
}
