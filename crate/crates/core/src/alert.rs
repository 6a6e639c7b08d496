//! Alerts raised to the platform operator.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::ComponentRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlertKind {
    /// A component asked for something its profile does not declare.
    SuspiciousAccessRequest,
    /// A flow was blocked by the leakage controller.
    UnauthorizedFlowAttempt,
    /// A permitted flow went to an entity the source never declared.
    UndeclaredExternalEntity,
}

impl AlertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertKind::SuspiciousAccessRequest => "SuspiciousAccessRequest",
            AlertKind::UnauthorizedFlowAttempt => "UnauthorizedFlowAttempt",
            AlertKind::UndeclaredExternalEntity => "UndeclaredExternalEntity",
        }
    }
}

impl fmt::Display for AlertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Alert {
    pub kind: AlertKind,
    pub subject: ComponentRef,
    pub detail: String,
}

impl fmt::Display for Alert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} from {}: {}", self.kind, self.subject, self.detail)
    }
}
