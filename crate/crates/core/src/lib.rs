//! Relationship-based access control for third-party apps on a social
//! network, with information-flow enforcement between app components.
//!
//! [`Platform`] ties the pieces together: the social graph, users' data
//! items, registered app profiles, the policy store, generalized values,
//! tokens, and the decision and flow logs. [`scenario`] loads a whole
//! platform from JSON and replays a trace against it, and [`oracle`] checks
//! the engine against a brute-force reference.

pub mod alert;
pub mod dam;
pub mod data;
pub mod generalizer;
pub mod graph;
pub mod oracle;
pub mod platform;
pub mod plc;
pub mod policy;
pub mod profile;
pub mod scenario;

pub use alert::{Alert, AlertKind};
pub use dam::{AccessToken, Decision, Outcome, Stage};
pub use data::{DataItem, SensitivityLevel};
pub use graph::{AppId, ComponentId, ComponentRef, SocialGraph, UserId};
pub use platform::{Platform, PlatformError};
pub use policy::{parse_policy, AccessRequest, Policy};
