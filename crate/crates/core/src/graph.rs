//! In-memory social graph: users, registered apps, typed trust-weighted
//! relationship edges and user→app installation records.
//!
//! Edges are directed. A mutual relationship is two edges.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relation name used for installation edges.
pub const INSTALLED: &str = "installed";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("identifier must be non-empty")]
    InvalidId,
    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("trust {trust} out of range for edge {from} -> {to}")]
    TrustOutOfRange { from: String, to: String, trust: f64 },
    #[error("app `{0}` is not registered")]
    UnregisteredApp(String),
    #[error("duplicate edge ({from}, {to}, {relation})")]
    DuplicateEdge { from: String, to: String, relation: String },
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, GraphError> {
                let id = id.into();
                if id.is_empty() {
                    return Err(GraphError::InvalidId);
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = GraphError;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = GraphError;
            fn try_from(s: &str) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(
    /// A social-network user.
    UserId
);
id_type!(
    /// A registered third-party application.
    AppId
);
id_type!(
    /// A component id, unique within its owning app.
    ComponentId
);

/// Globally unique component reference, written `app/component`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentRef {
    pub app: AppId,
    pub component: ComponentId,
}

impl ComponentRef {
    pub fn new(app: AppId, component: ComponentId) -> Self {
        Self { app, component }
    }

    /// Parses `app/component`. The app part may itself contain dots but not
    /// slashes.
    pub fn parse(s: &str) -> Option<Self> {
        let (app, comp) = s.split_once('/')?;
        Some(Self {
            app: AppId::new(app).ok()?,
            component: ComponentId::new(comp).ok()?,
        })
    }
}

impl fmt::Display for ComponentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.app, self.component)
    }
}

/// Edge head: a user or an app.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vertex {
    User(UserId),
    App(AppId),
}

impl Vertex {
    pub fn as_str(&self) -> &str {
        match self {
            Vertex::User(u) => u.as_str(),
            Vertex::App(a) => a.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipEdge {
    pub from: UserId,
    pub to: String,
    pub relation: String,
    pub trust: f64,
}

/// Declared relation names, split into user-user and user-app relations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationVocabulary {
    pub user_user: BTreeSet<String>,
    pub user_app: BTreeSet<String>,
}

impl Default for RelationVocabulary {
    fn default() -> Self {
        Self {
            user_user: BTreeSet::new(),
            user_app: BTreeSet::from([INSTALLED.to_string()]),
        }
    }
}

/// How a nonzero trust on a user→app edge is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustMode {
    /// Reject with [`GraphError::TrustOutOfRange`].
    #[default]
    Strict,
    /// Coerce to zero.
    Lenient,
}

/// Serialized form of a [`SocialGraph`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GraphDoc {
    pub users: Vec<UserId>,
    #[serde(default)]
    pub apps: Vec<AppId>,
    #[serde(default)]
    pub vocabulary: Option<RelationVocabulary>,
    #[serde(default)]
    pub edges: Vec<RelationshipEdge>,
}

#[derive(Debug, Clone, Default)]
pub struct SocialGraph {
    users: BTreeSet<UserId>,
    apps: BTreeSet<AppId>,
    vocabulary: RelationVocabulary,
    trust_mode: TrustMode,
    edges: Vec<RelationshipEdge>,
    edge_keys: HashSet<(UserId, String, String)>,
    // relation -> tail -> heads, and relation -> head -> tails; user-user only
    outgoing: HashMap<String, HashMap<UserId, BTreeSet<UserId>>>,
    incoming: HashMap<String, HashMap<UserId, BTreeSet<UserId>>>,
    trust: HashMap<UserId, HashMap<UserId, f64>>,
    installs_by_app: HashMap<AppId, BTreeSet<UserId>>,
}

impl PartialEq for SocialGraph {
    fn eq(&self, other: &Self) -> bool {
        self.users == other.users
            && self.apps == other.apps
            && self.vocabulary == other.vocabulary
            && self.edge_set() == other.edge_set()
    }
}

impl SocialGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_trust_mode(mode: TrustMode) -> Self {
        Self {
            trust_mode: mode,
            ..Self::default()
        }
    }

    pub fn trust_mode(&self) -> TrustMode {
        self.trust_mode
    }

    pub fn set_trust_mode(&mut self, mode: TrustMode) {
        self.trust_mode = mode;
    }

    pub fn vocabulary(&self) -> &RelationVocabulary {
        &self.vocabulary
    }

    pub fn declare_relation(&mut self, name: &str) {
        self.vocabulary.user_user.insert(name.to_string());
    }

    pub fn declare_app_relation(&mut self, name: &str) {
        self.vocabulary.user_app.insert(name.to_string());
    }

    pub fn add_user(&mut self, id: &str) -> Result<UserId, GraphError> {
        let id = UserId::new(id)?;
        if self.users.contains(&id) {
            return Err(GraphError::DuplicateId(id.to_string()));
        }
        self.users.insert(id.clone());
        Ok(id)
    }

    /// Adds an app vertex. Apps normally arrive through registration.
    pub fn add_app(&mut self, id: &str) -> Result<AppId, GraphError> {
        let id = AppId::new(id)?;
        if self.apps.contains(&id) {
            return Err(GraphError::DuplicateId(id.to_string()));
        }
        self.apps.insert(id.clone());
        Ok(id)
    }

    pub fn has_user(&self, id: &str) -> bool {
        self.users.contains(id)
    }

    pub fn has_app(&self, id: &str) -> bool {
        self.apps.contains(id)
    }

    pub fn users(&self) -> &BTreeSet<UserId> {
        &self.users
    }

    pub fn apps(&self) -> &BTreeSet<AppId> {
        &self.apps
    }

    pub fn edges(&self) -> &[RelationshipEdge] {
        &self.edges
    }

    fn edge_set(&self) -> BTreeMap<(String, String, String), u64> {
        self.edges
            .iter()
            .map(|e| {
                (
                    (e.from.to_string(), e.to.clone(), e.relation.clone()),
                    e.trust.to_bits(),
                )
            })
            .collect()
    }

    /// Records a directed edge. The head is resolved as a user for user-user
    /// relations and as an app for user-app relations.
    pub fn add_relationship(&mut self, from: &str, to: &str, relation: &str, trust: f64) -> Result<(), GraphError> {
        let from_id = self.user(from)?;
        let to_app = if self.vocabulary.user_app.contains(relation) {
            true
        } else if self.vocabulary.user_user.contains(relation) {
            false
        } else {
            return Err(GraphError::UnknownRelation(relation.to_string()));
        };
        let out_of_range = || GraphError::TrustOutOfRange {
            from: from.to_string(),
            to: to.to_string(),
            trust,
        };
        if !(0.0..=1.0).contains(&trust) {
            return Err(out_of_range());
        }
        let trust = if to_app {
            if !self.has_app(to) {
                return Err(GraphError::UnknownEndpoint(to.to_string()));
            }
            match (trust, self.trust_mode) {
                (0.0, _) => 0.0,
                (_, TrustMode::Strict) => return Err(out_of_range()),
                (_, TrustMode::Lenient) => 0.0,
            }
        } else {
            if !self.has_user(to) {
                return Err(GraphError::UnknownEndpoint(to.to_string()));
            }
            trust
        };
        let key = (from_id.clone(), to.to_string(), relation.to_string());
        if self.edge_keys.contains(&key) {
            return Err(GraphError::DuplicateEdge {
                from: from.to_string(),
                to: to.to_string(),
                relation: relation.to_string(),
            });
        }
        self.edge_keys.insert(key);
        self.index_edge(&from_id, to, relation, trust, to_app);
        self.edges.push(RelationshipEdge {
            from: from_id,
            to: to.to_string(),
            relation: relation.to_string(),
            trust,
        });
        Ok(())
    }

    fn index_edge(&mut self, from: &UserId, to: &str, relation: &str, trust: f64, to_app: bool) {
        if to_app {
            if relation == INSTALLED {
                let app = AppId::new(to).expect("checked non-empty");
                self.installs_by_app.entry(app).or_default().insert(from.clone());
            }
            return;
        }
        let to = UserId::new(to).expect("checked non-empty");
        self.outgoing
            .entry(relation.to_string())
            .or_default()
            .entry(from.clone())
            .or_default()
            .insert(to.clone());
        self.incoming
            .entry(relation.to_string())
            .or_default()
            .entry(to.clone())
            .or_default()
            .insert(from.clone());
        let slot = self.trust.entry(from.clone()).or_default().entry(to).or_insert(trust);
        if trust > *slot {
            *slot = trust;
        }
    }

    /// Records that `user` installed `app`. Idempotent.
    pub fn install_app(&mut self, user: &str, app: &str) -> Result<(), GraphError> {
        self.user(user)?;
        if !self.has_app(app) {
            return Err(GraphError::UnregisteredApp(app.to_string()));
        }
        if self.is_installed(user, app) {
            return Ok(());
        }
        self.add_relationship(user, app, INSTALLED, 0.0)
    }

    pub fn is_installed(&self, user: &str, app: &str) -> bool {
        self.installs_by_app.get(app).is_some_and(|users| users.contains(user))
    }

    /// Users that installed `app`.
    pub fn installers(&self, app: &str) -> impl Iterator<Item = &UserId> {
        self.installs_by_app.get(app).into_iter().flatten()
    }

    pub fn install_count(&self) -> usize {
        self.edges.iter().filter(|e| e.relation == INSTALLED).count()
    }

    fn user(&self, id: &str) -> Result<UserId, GraphError> {
        self.users
            .get(id)
            .cloned()
            .ok_or_else(|| GraphError::UnknownEndpoint(id.to_string()))
    }

    fn check_users(&self, ids: &[&str]) -> Result<(), GraphError> {
        for id in ids {
            self.user(id)?;
        }
        Ok(())
    }

    pub fn related(&self, u: &str, v: &str, relation: &str) -> Result<bool, GraphError> {
        self.check_users(&[u, v])?;
        Ok(self.has_edge(u, v, relation))
    }

    /// Unchecked indexed lookup used on evaluation hot paths.
    pub fn has_edge(&self, u: &str, v: &str, relation: &str) -> bool {
        self.outgoing
            .get(relation)
            .and_then(|by_tail| by_tail.get(u))
            .is_some_and(|heads| heads.contains(v))
    }

    /// Heads of `relation` edges leaving `u`.
    pub fn neighbors(&self, u: &str, relation: &str) -> Result<BTreeSet<UserId>, GraphError> {
        self.check_users(&[u])?;
        Ok(self.out_neighbors(u, relation).cloned().collect())
    }

    pub fn out_neighbors(&self, u: &str, relation: &str) -> impl Iterator<Item = &UserId> {
        self.outgoing
            .get(relation)
            .and_then(|by_tail| by_tail.get(u))
            .into_iter()
            .flatten()
    }

    /// Tails of `relation` edges entering `v`.
    pub fn in_neighbors(&self, v: &str, relation: &str) -> impl Iterator<Item = &UserId> {
        self.incoming
            .get(relation)
            .and_then(|by_head| by_head.get(v))
            .into_iter()
            .flatten()
    }

    /// Trust `u` places in `v`; the maximum over parallel edges, `None` when
    /// no user-user edge `u -> v` exists.
    pub fn trust_between(&self, u: &str, v: &str) -> Result<Option<f64>, GraphError> {
        self.check_users(&[u, v])?;
        Ok(self.trust.get(u).and_then(|m| m.get(v)).copied())
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            users: self.users.iter().cloned().collect(),
            apps: self.apps.iter().cloned().collect(),
            vocabulary: Some(self.vocabulary.clone()),
            edges: self.edges.clone(),
        }
    }

    pub fn from_doc(doc: &GraphDoc, mode: TrustMode) -> Result<Self, GraphError> {
        let mut g = SocialGraph::with_trust_mode(mode);
        if let Some(vocab) = &doc.vocabulary {
            g.vocabulary = vocab.clone();
        }
        for u in &doc.users {
            g.add_user(u.as_str())?;
        }
        for a in &doc.apps {
            g.add_app(a.as_str())?;
        }
        for e in &doc.edges {
            g.add_relationship(e.from.as_str(), &e.to, &e.relation, e.trust)?;
        }
        Ok(g)
    }
}

impl Serialize for SocialGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SocialGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = GraphDoc::deserialize(deserializer)?;
        SocialGraph::from_doc(&doc, TrustMode::Strict).map_err(serde::de::Error::custom)
    }
}
