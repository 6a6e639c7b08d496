//! Sensitivity-labelled user data items.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{SocialGraph, UserId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("sensitivity score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("derived sensitivity needs at least one source")]
    EmptySourceSet,
    #[error("unknown owner `{0}`")]
    UnknownOwner(String),
    #[error("no data item `{attribute}` for `{owner}`")]
    UnknownItem { owner: String, attribute: String },
    #[error("data item `{attribute}` of `{owner}` has no value and is not write-only")]
    EmptyValue { owner: String, attribute: String },
    #[error("unknown sensitivity level `{0}`")]
    UnknownLevel(String),
}

/// Ordered `NS < LS < MS < HS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum SensitivityLevel {
    #[default]
    NS,
    LS,
    MS,
    HS,
}

impl SensitivityLevel {
    pub const ALL: [SensitivityLevel; 4] = [Self::NS, Self::LS, Self::MS, Self::HS];

    /// Anything above `NS` is private and may not leave the platform.
    pub fn is_private(self) -> bool {
        self != SensitivityLevel::NS
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NS => "NS",
            Self::LS => "LS",
            Self::MS => "MS",
            Self::HS => "HS",
        }
    }
}

impl fmt::Display for SensitivityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensitivityLevel {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NS" | "ns" => Ok(Self::NS),
            "LS" | "ls" => Ok(Self::LS),
            "MS" | "ms" => Ok(Self::MS),
            "HS" | "hs" => Ok(Self::HS),
            other => Err(DataError::UnknownLevel(other.to_string())),
        }
    }
}

/// Maps a numeric score to its band: `[0.75, 1]` HS, `[0.5, 0.75)` MS,
/// `(0, 0.5)` LS, exactly `0` NS.
pub fn classify(score: f64) -> Result<SensitivityLevel, DataError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(DataError::ScoreOutOfRange(score));
    }
    Ok(if score >= 0.75 {
        SensitivityLevel::HS
    } else if score >= 0.5 {
        SensitivityLevel::MS
    } else if score > 0.0 {
        SensitivityLevel::LS
    } else {
        SensitivityLevel::NS
    })
}

/// Label of data derived from `sources`: the highest source level.
pub fn derived_sensitivity<I>(sources: I) -> Result<SensitivityLevel, DataError>
where
    I: IntoIterator<Item = SensitivityLevel>,
{
    sources.into_iter().max().ok_or(DataError::EmptySourceSet)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataItem {
    pub owner: UserId,
    pub id: String,
    pub value: BTreeSet<String>,
    pub sensitivity: SensitivityLevel,
    #[serde(default)]
    pub policies: BTreeSet<String>,
    #[serde(default)]
    pub write_only: bool,
}

impl DataItem {
    pub fn is_private(&self) -> bool {
        self.sensitivity.is_private()
    }
}

#[derive(Debug, Clone, Default)]
pub struct DataStore {
    items: BTreeMap<(UserId, String), DataItem>,
}

impl DataStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores or overwrites `(owner, id)`. Attached policy ids survive an
    /// overwrite.
    pub fn set_data_item(
        &mut self,
        graph: &SocialGraph,
        owner: &str,
        id: &str,
        value: BTreeSet<String>,
        sensitivity: SensitivityLevel,
    ) -> Result<(), DataError> {
        self.insert(graph, owner, id, value, sensitivity, false)
    }

    /// A write target such as a wall: empty value, allowed to stay empty.
    pub fn set_write_target(
        &mut self,
        graph: &SocialGraph,
        owner: &str,
        id: &str,
        sensitivity: SensitivityLevel,
    ) -> Result<(), DataError> {
        self.insert(graph, owner, id, BTreeSet::new(), sensitivity, true)
    }

    pub fn insert(
        &mut self,
        graph: &SocialGraph,
        owner: &str,
        id: &str,
        value: BTreeSet<String>,
        sensitivity: SensitivityLevel,
        write_only: bool,
    ) -> Result<(), DataError> {
        let owner_id = graph
            .users()
            .get(owner)
            .cloned()
            .ok_or_else(|| DataError::UnknownOwner(owner.to_string()))?;
        if value.is_empty() && !write_only {
            return Err(DataError::EmptyValue {
                owner: owner.to_string(),
                attribute: id.to_string(),
            });
        }
        let key = (owner_id.clone(), id.to_string());
        let policies = self.items.get(&key).map(|i| i.policies.clone()).unwrap_or_default();
        self.items.insert(
            key,
            DataItem {
                owner: owner_id,
                id: id.to_string(),
                value,
                sensitivity,
                policies,
                write_only,
            },
        );
        Ok(())
    }

    pub fn get_data_item(&self, owner: &str, id: &str) -> Result<&DataItem, DataError> {
        self.get(owner, id).ok_or_else(|| DataError::UnknownItem {
            owner: owner.to_string(),
            attribute: id.to_string(),
        })
    }

    pub fn get(&self, owner: &str, id: &str) -> Option<&DataItem> {
        // BTreeMap keyed by owned tuple; the store is small enough that the
        // allocation does not matter off the hot path.
        self.items.get(&(UserId::new(owner).ok()?, id.to_string()))
    }

    pub(crate) fn attach_policy(&mut self, owner: &str, id: &str, policy: &str) {
        if let Ok(owner) = UserId::new(owner) {
            if let Some(item) = self.items.get_mut(&(owner, id.to_string())) {
                item.policies.insert(policy.to_string());
            }
        }
    }

    pub fn items(&self) -> impl Iterator<Item = &DataItem> {
        self.items.values()
    }

    pub fn items_of<'a>(&'a self, owner: &'a str) -> impl Iterator<Item = &'a DataItem> + 'a {
        self.items.values().filter(move |i| i.owner.as_str() == owner)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Most conservative level per attribute name across all owners.
    pub fn attribute_levels(&self) -> BTreeMap<String, SensitivityLevel> {
        let mut out: BTreeMap<String, SensitivityLevel> = BTreeMap::new();
        for item in self.items.values() {
            let slot = out.entry(item.id.clone()).or_default();
            *slot = (*slot).max(item.sensitivity);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SensitivityLevel::*;

    #[test]
    fn classify_bands() {
        assert_eq!(classify(0.8), Ok(HS));
        assert_eq!(classify(0.75), Ok(HS));
        assert_eq!(classify(1.0), Ok(HS));
        assert_eq!(classify(0.5), Ok(MS));
        assert_eq!(classify(0.745), Ok(MS));
        assert_eq!(classify(0.3), Ok(LS));
        assert_eq!(classify(0.0), Ok(NS));
        assert_eq!(classify(1.2), Err(DataError::ScoreOutOfRange(1.2)));
        assert!(classify(f64::NAN).is_err());
    }

    #[test]
    fn derived_is_max() {
        assert_eq!(derived_sensitivity([MS, LS]), Ok(MS));
        assert_eq!(derived_sensitivity([NS]), Ok(NS));
        assert_eq!(derived_sensitivity([LS, LS, HS, NS]), Ok(HS));
        assert_eq!(derived_sensitivity(Vec::new()), Err(DataError::EmptySourceSet));
    }

    #[test]
    fn store_set_get_overwrite() {
        let mut g = SocialGraph::new();
        g.add_user("ajay").unwrap();
        let mut store = DataStore::new();
        store
            .set_data_item(&g, "ajay", "email", BTreeSet::from(["ajayatiitpacin".to_string()]), MS)
            .unwrap();
        let item = store.get_data_item("ajay", "email").unwrap();
        assert_eq!(item.sensitivity, MS);
        assert!(item.value.contains("ajayatiitpacin"));
        assert!(matches!(
            store.get_data_item("ajay", "phone"),
            Err(DataError::UnknownItem { .. })
        ));
        store
            .set_data_item(&g, "ajay", "email", BTreeSet::from(["x".to_string()]), LS)
            .unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get_data_item("ajay", "email").unwrap().sensitivity, LS);
        assert_eq!(
            store.set_data_item(&g, "bob", "email", BTreeSet::from(["x".into()]), LS),
            Err(DataError::UnknownOwner("bob".into()))
        );
        assert!(matches!(
            store.set_data_item(&g, "ajay", "dob", BTreeSet::new(), LS),
            Err(DataError::EmptyValue { .. })
        ));
        store.set_write_target(&g, "ajay", "wall", NS).unwrap();
        assert!(store.get_data_item("ajay", "wall").unwrap().value.is_empty());
    }

    fn level() -> impl Strategy<Value = SensitivityLevel> {
        prop_oneof![Just(NS), Just(LS), Just(MS), Just(HS)]
    }

    proptest! {
        #[test]
        fn classify_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classify(lo).unwrap() <= classify(hi).unwrap());
        }

        #[test]
        fn derived_is_a_semilattice_join(xs in proptest::collection::vec(level(), 1..8), ys in proptest::collection::vec(level(), 1..8)) {
            let dx = derived_sensitivity(xs.clone()).unwrap();
            let dy = derived_sensitivity(ys.clone()).unwrap();
            let all: Vec<_> = xs.iter().chain(ys.iter()).copied().collect();
            // associativity through regrouping
            prop_assert_eq!(derived_sensitivity(all.clone()).unwrap(), derived_sensitivity([dx, dy]).unwrap());
            // commutativity
            let mut rev = all.clone();
            rev.reverse();
            prop_assert_eq!(derived_sensitivity(rev).unwrap(), derived_sensitivity(all.clone()).unwrap());
            // idempotence and NS as identity
            prop_assert_eq!(derived_sensitivity([dx, dx]).unwrap(), dx);
            let mut with_ns = xs.clone();
            with_ns.push(NS);
            prop_assert_eq!(derived_sensitivity(with_ns).unwrap(), dx);
        }
    }
}
