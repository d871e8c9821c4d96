//! One module per subcommand, plus the small shared helpers.

pub mod embed;
pub mod eval;
pub mod fetch;
pub mod score;
pub mod synth;
pub mod train;

use gnsm::data::{ContStats, Dataset};
use gnsm::error::{Error, Result};

/// Apply a checkpoint's stored z-score stats to a freshly loaded dataset,
/// so scoring sees the same continuous scale training did.
pub(crate) fn apply_cont_stats(dataset: &mut Dataset, stats: Option<&ContStats>) -> Result<()> {
    if let Some(stats) = stats {
        for row in &mut dataset.cont {
            *row = stats.apply(row)?;
        }
    }
    Ok(())
}

/// Dispatch a checkpoint-consuming command on the stored element type.
pub(crate) fn with_checkpoint_dtype<T>(
    ckpt: &std::path::Path,
    f32_case: impl FnOnce() -> Result<T>,
    f64_case: impl FnOnce() -> Result<T>,
) -> Result<T> {
    match gnsm::checkpoint::peek_dtype(ckpt)?.as_str() {
        "f32" => f32_case(),
        "f64" => f64_case(),
        other => Err(Error::Validation(format!(
            "checkpoint stores unsupported element type {other:?}"
        ))),
    }
}

/// Sample mean and standard deviation (n−1 divisor; 0 for a single value).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_computation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
        let (m1, s1) = mean_std(&[5.0]);
        assert_eq!((m1, s1), (5.0, 0.0));
    }
}
