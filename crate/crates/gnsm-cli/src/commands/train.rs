//! `gnsm train`: full training runs over one or more seeds, writing per-run
//! checkpoints (best + rolling latest), a JSONL loss log, and the resolved
//! configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use gnsm::checkpoint::Checkpoint;
use gnsm::data::{
    load_csv, partition_by_label, split, standardize_continuous, ContStats, Dataset, SplitSpec,
};
use gnsm::error::{Error, Result};
use gnsm::schema::CategoricalSchema;
use gnsm::trainer::{train, TrainConfig, TrainEvent};
use gnsm::Scalar;
use serde::Serialize;

use crate::config::{resolve_config_path, ModelSettings, RunConfig};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration JSON; a bare name is searched in $GNSM_CONFIG_DIR.
    /// Omitted, the full-scale defaults apply (1M steps).
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Training data CSV; rows labeled 1 in a `__label__` column are dropped.
    #[arg(long)]
    pub data: PathBuf,

    /// Schema JSON defining feature kinds and outcome vocabularies.
    #[arg(long)]
    pub schema: PathBuf,

    /// Output directory; with --seeds > 1, runs land in seed-<i>/ subdirs.
    #[arg(long)]
    pub out: PathBuf,

    /// Repeat training with seeds base, base+1, ... and summarize.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    best_step: u64,
    best_val_loss: f64,
    checkpoint: String,
    checkpoint_sha256: String,
}

#[derive(Serialize)]
struct TrainSummary {
    val_loss_mean: f64,
    val_loss_std: f64,
    runs: Vec<SeedSummary>,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    if args.seeds < 1 {
        return Err(Error::Validation("--seeds must be >= 1".into()));
    }
    let schema = CategoricalSchema::from_json_file(&args.schema)?;
    let cfg = match &args.config {
        Some(path) => RunConfig::load(resolve_config_path(path)?)?,
        None => RunConfig::default(),
    };
    // Validates dtype and the model/schema pairing before any heavy work.
    cfg.model.to_model_config(&schema)?;
    let dataset = load_csv(&args.data, &schema)?;
    let (inliers, anomalies) = partition_by_label(&dataset);
    if !anomalies.is_empty() {
        eprintln!(
            "note: dropping {} labeled anomalies; training sees inliers only",
            anomalies.len()
        );
    }
    match cfg.model.dtype.as_str() {
        "f32" => run_seeds::<f32>(args, &cfg, &schema, &inliers),
        _ => run_seeds::<f64>(args, &cfg, &schema, &inliers),
    }
}

fn run_seeds<S: Scalar>(
    args: &TrainArgs,
    cfg: &RunConfig,
    schema: &CategoricalSchema,
    inliers: &Dataset,
) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let mut runs = Vec::with_capacity(args.seeds as usize);
    for i in 0..args.seeds {
        let dir = if args.seeds == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed-{i}"))
        };
        std::fs::create_dir_all(&dir)?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = cfg.train.seed + i;
        let summary = run_one::<S>(&cfg.model, &train_cfg, schema, inliers, &dir)?;
        println!(
            "seed {}: best step {}, val loss {:.6}, checkpoint sha256 {}",
            summary.seed, summary.best_step, summary.best_val_loss, summary.checkpoint_sha256
        );
        runs.push(summary);
    }
    if args.seeds > 1 {
        let losses: Vec<f64> = runs.iter().map(|r| r.best_val_loss).collect();
        let (mean, std) = super::mean_std(&losses);
        println!("val loss over {} seeds: {mean:.6} ± {std:.6}", args.seeds);
        let summary = TrainSummary {
            val_loss_mean: mean,
            val_loss_std: std,
            runs,
        };
        let json = serde_json::to_string_pretty(&summary)?;
        std::fs::write(args.out.join("summary.json"), json + "\n")?;
    }
    Ok(())
}

fn run_one<S: Scalar>(
    model: &ModelSettings,
    train_cfg: &TrainConfig,
    schema: &CategoricalSchema,
    inliers: &Dataset,
    dir: &Path,
) -> Result<SeedSummary> {
    let spec = SplitSpec {
        seed: train_cfg.seed,
        ..SplitSpec::default()
    };
    let (mut train_ds, mut val_ds, mut test_ds) = split(inliers, &spec)?;
    let cont_stats: Option<ContStats> = if schema.n_cont() > 0 {
        let outcome = standardize_continuous(&mut train_ds, &mut [&mut val_ds, &mut test_ds])?;
        for name in &outcome.constant_features {
            eprintln!("warning: continuous feature {name} is constant in the train split");
        }
        Some(outcome.stats)
    } else {
        None
    };
    let train_records = train_ds.encode(train_cfg.delta)?;
    let val_records = val_ds.encode(train_cfg.delta)?;
    let model_config = model.to_model_config(schema)?;

    RunConfig {
        model: model.clone(),
        train: train_cfg.clone(),
    }
    .save(dir.join("config.json"))?;

    let mut log = BufWriter::new(File::create(dir.join("log.jsonl"))?);
    let snapshot_path = dir.join("ckpt-latest.bin");
    // Callbacks cannot abort training, so the first sink failure is
    // captured here and reported once the run returns.
    let mut sink_err: Option<Error> = None;
    let mut last_val = f64::MAX;
    let outcome = train::<S>(
        &train_records,
        &val_records,
        schema,
        &model_config,
        train_cfg,
        |event| {
            if sink_err.is_some() {
                return;
            }
            match event {
                TrainEvent::Log(entry) => {
                    if let Some(v) = entry.val_loss {
                        last_val = v;
                    }
                    let result = serde_json::to_string(entry)
                        .map_err(Error::from)
                        .and_then(|line| writeln!(log, "{line}").map_err(Error::from));
                    if let Err(e) = result {
                        sink_err = Some(e);
                    }
                }
                TrainEvent::Snapshot { step, params, opt } => {
                    let snapshot = Checkpoint {
                        config: model_config.clone(),
                        schema: schema.clone(),
                        delta: train_cfg.delta,
                        step,
                        best_val_loss: last_val,
                        cont_stats: cont_stats.clone(),
                        params: params.clone(),
                        opt: opt.clone(),
                    };
                    if let Err(e) = snapshot.save(&snapshot_path) {
                        sink_err = Some(e);
                    }
                }
            }
        },
    )?;
    log.flush()?;
    if let Some(e) = sink_err {
        return Err(e);
    }

    let checkpoint = Checkpoint {
        config: model_config,
        schema: schema.clone(),
        delta: train_cfg.delta,
        step: outcome.best_step,
        best_val_loss: outcome.best_val_loss,
        cont_stats,
        params: outcome.params,
        opt: outcome.opt,
    };
    let ckpt_path = dir.join("checkpoint.bin");
    let hash = checkpoint.save(&ckpt_path)?;
    Ok(SeedSummary {
        seed: train_cfg.seed,
        best_step: outcome.best_step,
        best_val_loss: outcome.best_val_loss,
        checkpoint: ckpt_path.display().to_string(),
        checkpoint_sha256: hash,
    })
}
