//! Differentiation substrate: a reverse-mode tape over dense matrices, tanh
//! MLPs evaluated through it, and Adam updates.

mod adam;
mod graph;
mod mlp;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, NonFiniteGradient};
pub use graph::{abs_pow, logistic, signed_pow, softplus, softplus_inv, Gradients, Graph, Var};
pub use mlp::{mlp_apply, Activation, Dense, MlpParams, MlpVars};
pub use tensor::{Real, Tensor};

use serde::{Deserialize, Serialize};

/// Arithmetic width used for rollouts and parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision {other:?} (expected f32 or f64)")),
        }
    }
}
