//! User-chosen generalized values, substituted for exact values on release.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataStore, SensitivityLevel};
use crate::graph::{AppId, SocialGraph, UserId};
use crate::profile::ProfileStore;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneralizerError {
    #[error("`{user}` has no data item `{attribute}`")]
    UnknownAttribute { user: String, attribute: String },
    #[error("app `{app}` does not require `{attribute}`")]
    NotRequiredByApp { app: String, attribute: String },
    #[error("generalization of `{attribute}` for `{user}`: {detail}")]
    InvariantViolation {
        user: String,
        attribute: String,
        detail: String,
    },
    #[error("`{user}` has not installed `{app}`")]
    NotInstalled { user: String, app: String },
    #[error("unknown app `{0}`")]
    UnknownApp(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralizationEntry {
    pub user: UserId,
    pub app: AppId,
    pub attribute: String,
    pub value: BTreeSet<String>,
    /// 0 is the exact value; higher is coarser.
    pub level: u32,
}

/// Advisory generalization level for a sensitivity level.
pub fn recommend_level(s: SensitivityLevel) -> u32 {
    match s {
        SensitivityLevel::NS => 0,
        SensitivityLevel::LS => 1,
        SensitivityLevel::MS => 2,
        SensitivityLevel::HS => 3,
    }
}

#[derive(Debug, Clone, Default)]
pub struct Generalizer {
    entries: BTreeMap<(UserId, AppId, String), GeneralizationEntry>,
}

impl Generalizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores the user's generalized value for what `app` gets to see of
    /// `attribute`, replacing any earlier choice.
    ///
    /// A level-0 entry must repeat the exact value; an entry above level 0
    /// must differ from it.
    pub fn opt_generalize(
        &mut self,
        graph: &SocialGraph,
        profiles: &ProfileStore,
        data: &DataStore,
        entry: GeneralizationEntry,
    ) -> Result<(), GeneralizerError> {
        let (user, app, attribute) = (entry.user.as_str(), entry.app.as_str(), &entry.attribute);
        let def = profiles
            .get(app)
            .ok_or_else(|| GeneralizerError::UnknownApp(app.to_string()))?;
        if !def.profile.required_data.contains(attribute) {
            return Err(GeneralizerError::NotRequiredByApp {
                app: app.to_string(),
                attribute: attribute.clone(),
            });
        }
        let exact = &data
            .get(user, attribute)
            .ok_or_else(|| GeneralizerError::UnknownAttribute {
                user: user.to_string(),
                attribute: attribute.clone(),
            })?
            .value;
        if !graph.is_installed(user, app) {
            return Err(GeneralizerError::NotInstalled {
                user: user.to_string(),
                app: app.to_string(),
            });
        }
        let violation = |detail: &str| GeneralizerError::InvariantViolation {
            user: user.to_string(),
            attribute: attribute.clone(),
            detail: detail.to_string(),
        };
        if entry.level == 0 && entry.value != *exact {
            return Err(violation("level 0 must carry the exact value"));
        }
        if entry.level > 0 && entry.value == *exact {
            return Err(violation("a generalized value must differ from the exact value"));
        }
        if entry.value.is_empty() {
            return Err(violation("empty generalized value"));
        }
        let key = (entry.user.clone(), entry.app.clone(), attribute.clone());
        if let Some(old) = self.entries.get(&key) {
            log::debug!(
                "replacing generalization of {attribute} for {user}/{app}: level {} -> {}",
                old.level,
                entry.level
            );
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn entry(&self, user: &str, app: &str, attribute: &str) -> Option<&GeneralizationEntry> {
        let key = (UserId::new(user).ok()?, AppId::new(app).ok()?, attribute.to_string());
        self.entries.get(&key)
    }

    /// Whether `app` only ever sees a coarsened value of the attribute.
    pub fn is_generalized(&self, user: &str, app: &str, attribute: &str) -> bool {
        self.entry(user, app, attribute).is_some_and(|e| e.level > 0)
    }

    pub fn entries(&self) -> impl Iterator<Item = &GeneralizationEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Value handed to `app` once access is granted: the generalized value
    /// when the user chose one, the exact value otherwise.
    pub fn release_value(
        &self,
        data: &DataStore,
        user: &str,
        app: &str,
        attribute: &str,
    ) -> Result<BTreeSet<String>, GeneralizerError> {
        if let Some(e) = self.entry(user, app, attribute) {
            return Ok(e.value.clone());
        }
        data.get(user, attribute)
            .map(|item| item.value.clone())
            .ok_or_else(|| GeneralizerError::UnknownAttribute {
                user: user.to_string(),
                attribute: attribute.to_string(),
            })
    }
}
