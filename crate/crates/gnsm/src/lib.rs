//! Gumbel-noise score matching for tabular anomaly detection.
//!
//! Categorical features are relaxed onto the simplex via an ExpConcrete
//! (log-domain Concrete) noise distribution. A noise-conditioned residual
//! network learns the scores of the perturbed data across a geometric
//! temperature schedule, and records are ranked by the negative
//! log-likelihood of their multiscale score-norm embeddings under a
//! Gaussian mixture model fitted on inliers.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod msma;
pub mod network;
pub mod noise;
pub mod schema;
pub mod trainer;

pub use error::{Error, Result};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

/// Element type for network math. Distribution math stays in `f64`
/// regardless; this only selects the precision of parameters and
/// activations (`f32` for speed, `f64` for gradient checks).
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ScalarOperand
    + LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoints so loads can verify the element type.
    const DTYPE: &'static str;
    /// Width of one serialized element in bytes.
    const BYTES: usize;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Append the little-endian bytes of `self` (bit-exact).
    fn write_le(self, out: &mut Vec<u8>);
    /// Inverse of `write_le`; `bytes.len()` must equal `BYTES`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn of_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("caller passes BYTES bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn of_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("caller passes BYTES bytes"))
    }
}
