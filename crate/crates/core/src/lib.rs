//! Numerical laboratory for scalar softmax attention on linear state-space
//! sequences: synthetic data, a two-layer attention model with closed-form
//! gradients, tangent-kernel dynamics, training diagnostics and a residual
//! linear baseline, plus independent oracles for all of them.

pub mod attention;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod linear_baseline;
pub mod multidim_attn;
pub mod ntk;
pub mod persist;
pub mod rng;
pub mod ssm_data;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
