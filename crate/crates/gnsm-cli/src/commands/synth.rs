//! `gnsm synth`: labeled synthetic dataset plus the generator's own
//! parameters as an exact-likelihood oracle file.

use std::path::PathBuf;

use clap::Args;
use gnsm::data::{generate_synthetic, save_csv};
use gnsm::error::Result;
use serde::{Deserialize, Serialize};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for data.csv, schema.json, and oracle.json.
    #[arg(long)]
    pub out: PathBuf,

    /// Number of categorical features.
    #[arg(long, default_value_t = 5)]
    pub features: usize,

    /// Outcomes per feature.
    #[arg(long, default_value_t = 4)]
    pub outcomes: usize,

    /// Inlier rows (drawn from a skewed product law).
    #[arg(long, default_value_t = 8000)]
    pub inliers: usize,

    /// Anomaly rows (drawn uniformly over outcomes).
    #[arg(long, default_value_t = 800)]
    pub anomalies: usize,

    /// Dirichlet concentration of the per-feature probabilities;
    /// smaller is more skewed.
    #[arg(long, default_value_t = 0.3)]
    pub skew: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Generator parameters echoed next to the oracle probabilities, so a
/// dataset directory is self-describing.
#[derive(Serialize, Deserialize)]
pub struct OracleFile {
    pub features: usize,
    pub outcomes: usize,
    pub inliers: usize,
    pub anomalies: usize,
    pub skew: f64,
    pub seed: u64,
    /// `probs[d][k]` = inlier probability of outcome k for feature d.
    pub probs: Vec<Vec<f64>>,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let (dataset, oracle) = generate_synthetic(
        args.features,
        args.outcomes,
        args.inliers,
        args.anomalies,
        args.skew,
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out)?;
    save_csv(args.out.join("data.csv"), &dataset)?;
    dataset.schema.to_json_file(args.out.join("schema.json"))?;
    let oracle_file = OracleFile {
        features: args.features,
        outcomes: args.outcomes,
        inliers: args.inliers,
        anomalies: args.anomalies,
        skew: args.skew,
        seed: args.seed,
        probs: oracle.probs,
    };
    let json = serde_json::to_string_pretty(&oracle_file)?;
    std::fs::write(args.out.join("oracle.json"), json + "\n")?;
    println!(
        "wrote {} rows ({} inliers, {} anomalies) to {}",
        dataset.len(),
        args.inliers,
        args.anomalies,
        args.out.display()
    );
    Ok(())
}
