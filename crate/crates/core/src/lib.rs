//! Learning dynamics of self-predictive (BYOL-style) representation objectives
//! over tabular MDPs.
//!
//! Three objectives are covered: the policy-marginal objective (`Pi`), the
//! action-conditional objective (`Ac`) and their difference (`Var`). For each
//! one the crate computes the optimal latent predictors, the semi-gradient flow
//! on the representation matrix, the trace objective that serves as its
//! Lyapunov function, and the eigenvector-selection rule that characterizes its
//! maximizers. The [`harness`] module runs seeded batches of MDPs through all of
//! it and writes CSV/JSON tables.

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mdp;
pub mod objectives;
pub mod spectral;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which self-predictive objective a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Single predictor for the policy-induced transition matrix.
    Pi,
    /// One predictor per action.
    Ac,
    /// Action-conditional minus policy-marginal.
    Var,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [ObjectiveKind::Pi, ObjectiveKind::Ac, ObjectiveKind::Var];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Pi => "pi",
            ObjectiveKind::Ac => "ac",
            ObjectiveKind::Var => "var",
        }
    }

    pub fn index(self) -> usize {
        match self {
            ObjectiveKind::Pi => 0,
            ObjectiveKind::Ac => 1,
            ObjectiveKind::Var => 2,
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pi" => Ok(ObjectiveKind::Pi),
            "ac" => Ok(ObjectiveKind::Ac),
            "var" => Ok(ObjectiveKind::Var),
            other => Err(Error::InvalidArgument(format!("unknown objective kind `{other}`"))),
        }
    }
}
