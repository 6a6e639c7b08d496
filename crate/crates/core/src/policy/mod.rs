//! Relationship-based policy language.
//!
//! A policy is written
//!
//! ```text
//! [target, {data}, {actions}, decision, [quantifiers: literal & literal ...]]
//! ```
//!
//! where the `{data}` set is optional. For example
//!
//! ```text
//! [-, {dateofbirth}, {read, !share}, 1, [forall c: int_component(c,A) & installed(u,A)]]
//! ```
//!
//! Conditions are a quantifier prefix over a conjunction of possibly negated
//! binary atoms. `u` is the owner of the requested data and `A` the
//! requesting app. See [`eval`] for the semantics.

pub mod eval;
mod parser;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use eval::{applicable, evaluate_condition, explain_condition, Env, EvalError, Explanation};
pub use parser::{parse_condition, parse_policy, ParseError, ParseErrorKind};

use crate::graph::{ComponentRef, SocialGraph, UserId};
use crate::profile::ProfileStore;

/// Implicit variable bound to the owner of the requested data.
pub const OWNER_VAR: &str = "u";
/// Implicit variable bound to the requesting app.
pub const APP_VAR: &str = "A";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    /// `u`
    Owner,
    /// `-`
    Implicit,
    /// A user name or an attribute name.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionTerm {
    pub name: String,
    pub negated: bool,
}

impl ActionTerm {
    pub fn allow(name: &str) -> Self {
        Self {
            name: name.to_string(),
            negated: false,
        }
    }

    pub fn deny(name: &str) -> Self {
        Self {
            name: name.to_string(),
            negated: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Deny,
    Allow,
}

impl Decision {
    pub fn as_bit(self) -> u8 {
        match self {
            Decision::Deny => 0,
            Decision::Allow => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantKind {
    Forall,
    Exists,
    NotExists,
}

impl QuantKind {
    pub fn keyword(self) -> &'static str {
        match self {
            QuantKind::Forall => "forall",
            QuantKind::Exists => "exists",
            QuantKind::NotExists => "notexists",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sort {
    User,
    Component,
    App,
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::User => "user",
            Sort::Component => "component",
            Sort::App => "app",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Quantifier {
    pub kind: QuantKind,
    pub var: String,
    pub sort: Sort,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn name(&self) -> &str {
        match self {
            Term::Var(s) | Term::Const(s) => s,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

pub const IS_COMPONENT: &str = "is_component";
pub const INT_COMPONENT: &str = "int_component";
pub const EXT_COMPONENT: &str = "ext_component";
pub const INSTALLED_PRED: &str = "installed";

/// Argument sorts of a predicate. Names other than the built-ins denote a
/// user-user relation from the graph vocabulary.
pub fn predicate_signature(name: &str) -> [Sort; 2] {
    match name {
        IS_COMPONENT | INT_COMPONENT | EXT_COMPONENT => [Sort::Component, Sort::App],
        INSTALLED_PRED => [Sort::User, Sort::App],
        _ => [Sort::User, Sort::User],
    }
}

pub fn is_builtin_predicate(name: &str) -> bool {
    matches!(name, IS_COMPONENT | INT_COMPONENT | EXT_COMPONENT | INSTALLED_PRED)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub negated: bool,
    pub predicate: String,
    pub args: [Term; 2],
}

impl Literal {
    pub fn mentions(&self, var: &str) -> bool {
        self.args.iter().any(|t| t.as_var() == Some(var))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Condition {
    pub prefix: Vec<Quantifier>,
    pub literals: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub target: Target,
    pub data: Option<BTreeSet<String>>,
    pub actions: BTreeSet<ActionTerm>,
    pub decision: Decision,
    pub condition: Condition,
}

impl Policy {
    /// Decision this policy gives for `action`, if it mentions the action at
    /// all. A negated action term is an explicit deny.
    pub fn effect_for(&self, action: &str) -> Option<Decision> {
        let mut out = None;
        for term in self.actions.iter().filter(|t| t.name == action) {
            if term.negated {
                return Some(Decision::Deny);
            }
            out = Some(self.decision);
        }
        out
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        write!(f, "{}({},{})", self.predicate, self.args[0], self.args[1])
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, q) in self.prefix.iter().enumerate() {
            let sep = if i + 1 == self.prefix.len() { ": " } else { ", " };
            write!(f, "{} {}{}", q.kind.keyword(), q.var, sep)?;
        }
        for (i, l) in self.literals.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

fn write_set<'a>(f: &mut fmt::Formatter<'_>, items: impl Iterator<Item = String> + 'a) -> fmt::Result {
    f.write_str("{")?;
    for (i, item) in items.enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        f.write_str(&item)?;
    }
    f.write_str("}")
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let target = match &self.target {
            Target::Owner => OWNER_VAR,
            Target::Implicit => "-",
            Target::Named(n) => n,
        };
        write!(f, "[{target}, ")?;
        if let Some(data) = &self.data {
            write_set(f, data.iter().cloned())?;
            f.write_str(", ")?;
        }
        write_set(
            f,
            self.actions.iter().map(|a| {
                if a.negated {
                    format!("!{}", a.name)
                } else {
                    a.name.clone()
                }
            }),
        )?;
        write!(f, ", {}, [{}]]", self.decision.as_bit(), self.condition)
    }
}

/// Access request: a component asks to perform actions on a user's item.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccessRequest {
    pub requester: ComponentRef,
    pub target: DataRef,
    pub actions: BTreeSet<String>,
}

impl AccessRequest {
    pub fn new(requester: ComponentRef, owner: UserId, attribute: &str, actions: &[&str]) -> Self {
        Self {
            requester,
            target: DataRef {
                owner,
                attribute: attribute.to_string(),
            },
            actions: actions.iter().map(|a| a.to_string()).collect(),
        }
    }

    /// The same request restricted to one action.
    pub fn single(&self, action: &str) -> Self {
        Self {
            requester: self.requester.clone(),
            target: self.target.clone(),
            actions: BTreeSet::from([action.to_string()]),
        }
    }
}

impl fmt::Display for AccessRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -> {}/{} [{}]",
            self.requester,
            self.target.owner,
            self.target.attribute,
            self.actions.iter().cloned().collect::<Vec<_>>().join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataRef {
    pub owner: UserId,
    pub attribute: String,
}

impl fmt::Display for DataRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.owner, self.attribute)
    }
}

/// A policy filed under its author.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPolicy {
    pub id: String,
    pub owner: UserId,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyStoreError {
    #[error("duplicate policy id `{0}`")]
    DuplicateId(String),
    #[error("unknown policy owner `{0}`")]
    UnknownOwner(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// The policy database, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct PolicyStore {
    policies: Vec<StoredPolicy>,
}

impl PolicyStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Files `policy` under `owner` after checking that its constants and
    /// relation predicates resolve.
    pub fn add(
        &mut self,
        id: &str,
        owner: &str,
        policy: Policy,
        graph: &SocialGraph,
        profiles: &ProfileStore,
    ) -> Result<(), PolicyStoreError> {
        if self.policies.iter().any(|p| p.id == id) {
            return Err(PolicyStoreError::DuplicateId(id.to_string()));
        }
        let owner = graph
            .users()
            .get(owner)
            .cloned()
            .ok_or_else(|| PolicyStoreError::UnknownOwner(owner.to_string()))?;
        eval::check_references(&policy.condition, graph, profiles)?;
        self.policies.push(StoredPolicy {
            id: id.to_string(),
            owner,
            policy,
        });
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredPolicy> {
        self.policies.iter()
    }

    pub fn by_owner<'a>(&'a self, owner: &'a str) -> impl Iterator<Item = &'a StoredPolicy> + 'a {
        self.policies.iter().filter(move |p| p.owner.as_str() == owner)
    }

    pub fn get(&self, id: &str) -> Option<&StoredPolicy> {
        self.policies.iter().find(|p| p.id == id)
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}
