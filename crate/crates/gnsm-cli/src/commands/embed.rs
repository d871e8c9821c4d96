//! `gnsm embed`: compute multiscale score-norm embeddings of inlier rows
//! under a trained checkpoint and fit the GMM scoring head.

use std::path::{Path, PathBuf};

use clap::Args;
use gnsm::checkpoint::Checkpoint;
use gnsm::data::{load_csv, partition_by_label};
use gnsm::error::Result;
use gnsm::msma::{embed_batch, select_gmm, ScorerFile};
use gnsm::Scalar;
use ndarray::Array2;

#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// Trained checkpoint; supplies the schema, encoding offset, and
    /// standardization stats.
    #[arg(long)]
    pub ckpt: PathBuf,

    /// Fit data CSV; rows labeled 1 in `__label__` are ignored.
    #[arg(long)]
    pub data: PathBuf,

    /// Output scorer JSON (GMM + binding hashes).
    #[arg(long)]
    pub out: PathBuf,

    /// Candidate GMM component counts for the grid search.
    #[arg(long, value_delimiter = ',', default_values_t = vec![3, 5, 7, 9])]
    pub grid: Vec<usize>,

    /// Embed log score norms instead of raw norms.
    #[arg(long)]
    pub log_norms: bool,

    /// Seed for GMM initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also dump the embeddings to this CSV.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,

    /// Rows per forward pass.
    #[arg(long, default_value_t = 512)]
    pub chunk_size: usize,
}

pub fn run(args: &EmbedArgs) -> Result<()> {
    super::with_checkpoint_dtype(
        &args.ckpt,
        || run_typed::<f32>(args),
        || run_typed::<f64>(args),
    )
}

fn run_typed<S: Scalar>(args: &EmbedArgs) -> Result<()> {
    let (ckpt, ckpt_hash) = Checkpoint::<S>::load(&args.ckpt)?;
    let mut dataset = load_csv(&args.data, &ckpt.schema)?;
    super::apply_cont_stats(&mut dataset, ckpt.cont_stats.as_ref())?;
    let (inliers, anomalies) = partition_by_label(&dataset);
    if !anomalies.is_empty() {
        eprintln!(
            "note: fitting on {} inlier rows; ignoring {} labeled anomalies",
            inliers.len(),
            anomalies.len()
        );
    }
    let records = inliers.encode(ckpt.delta)?;
    let eta = embed_batch(
        &records,
        &ckpt.schema,
        &ckpt.config,
        &ckpt.params.ema_shadow,
        args.log_norms,
        args.chunk_size,
    )?;
    if let Some(path) = &args.embeddings {
        write_embeddings_csv(path, &eta)?;
    }
    let (gmm, report) = select_gmm(&eta, &args.grid, args.seed)?;
    let chosen_ll = report
        .candidates
        .iter()
        .find(|(k, _)| *k == report.chosen)
        .and_then(|(_, ll)| *ll);
    match chosen_ll {
        Some(ll) => println!(
            "fit GMM: {} components, held-in mean log-likelihood {ll:.6}",
            report.chosen
        ),
        None => println!(
            "fit GMM: single-component fallback (every grid candidate degenerated)"
        ),
    }
    let scorer = ScorerFile {
        gmm,
        checkpoint_hash: ckpt_hash,
        schema_hash: ckpt.schema_hash(),
        log_norms: args.log_norms,
        n_scales: ckpt.config.n_scales,
        selection: Some(report),
    };
    scorer.save(&args.out)?;
    println!("wrote scorer to {}", args.out.display());
    Ok(())
}

fn write_embeddings_csv(path: &Path, eta: &Array2<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..eta.ncols()).map(|l| format!("eta_{l}")).collect();
    writer.write_record(&header)?;
    for row in eta.outer_iter() {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush().map_err(gnsm::Error::from)?;
    Ok(())
}
