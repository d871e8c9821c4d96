//! `gnsm score`: rank rows by GMM negative log-likelihood of their
//! embeddings. Refuses to run when the scorer was fitted against a
//! different checkpoint or schema (exit code 5), writing nothing.

use std::path::{Path, PathBuf};

use clap::Args;
use gnsm::checkpoint::Checkpoint;
use gnsm::data::{load_csv, LABEL_COLUMN};
use gnsm::error::{Error, Result};
use gnsm::msma::{anomaly_score_batch, ScorerFile};
use gnsm::Scalar;

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,

    /// Scorer JSON produced by `embed`, bound to the checkpoint by hash.
    #[arg(long)]
    pub gmm: PathBuf,

    /// Data CSV to score; a `__label__` column passes through to the output.
    #[arg(long)]
    pub data: PathBuf,

    /// Output CSV of per-row anomaly scores.
    #[arg(long)]
    pub out: PathBuf,

    /// Rows per forward pass.
    #[arg(long, default_value_t = 512)]
    pub chunk_size: usize,
}

pub fn run(args: &ScoreArgs) -> Result<()> {
    super::with_checkpoint_dtype(
        &args.ckpt,
        || run_typed::<f32>(args),
        || run_typed::<f64>(args),
    )
}

fn run_typed<S: Scalar>(args: &ScoreArgs) -> Result<()> {
    let (ckpt, ckpt_hash) = Checkpoint::<S>::load(&args.ckpt)?;
    let scorer = ScorerFile::load(&args.gmm)?;
    if scorer.checkpoint_hash != ckpt_hash {
        return Err(Error::Binding(format!(
            "scorer was fitted against checkpoint {}…, this checkpoint is {}…",
            &scorer.checkpoint_hash[..12.min(scorer.checkpoint_hash.len())],
            &ckpt_hash[..12]
        )));
    }
    if scorer.schema_hash != ckpt.schema_hash() {
        return Err(Error::Binding(format!(
            "scorer schema hash {}… does not match the checkpoint's schema {}…",
            &scorer.schema_hash[..12.min(scorer.schema_hash.len())],
            &ckpt.schema_hash()[..12]
        )));
    }
    if scorer.n_scales != ckpt.config.n_scales {
        return Err(Error::Validation(format!(
            "scorer embeds {} scales, checkpoint model has {}",
            scorer.n_scales, ckpt.config.n_scales
        )));
    }

    let mut dataset = load_csv(&args.data, &ckpt.schema)?;
    super::apply_cont_stats(&mut dataset, ckpt.cont_stats.as_ref())?;
    let records = dataset.encode(ckpt.delta)?;
    let density = scorer.gmm.density()?;
    let scores = anomaly_score_batch(
        &records,
        &ckpt.schema,
        &ckpt.config,
        &ckpt.params.ema_shadow,
        &density,
        scorer.log_norms,
        args.chunk_size,
    )?;
    write_scores_csv(&args.out, &scores, dataset.labels.as_deref())?;
    println!("scored {} rows -> {}", scores.len(), args.out.display());
    Ok(())
}

fn write_scores_csv(path: &Path, scores: &[f64], labels: Option<&[u8]>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["row_id", "anomaly_score"];
    if labels.is_some() {
        header.push(LABEL_COLUMN);
    }
    writer.write_record(&header)?;
    for (i, score) in scores.iter().enumerate() {
        let mut row = vec![i.to_string(), score.to_string()];
        if let Some(l) = labels {
            row.push(l[i].to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(Error::from)?;
    Ok(())
}
