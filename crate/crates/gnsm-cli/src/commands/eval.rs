//! `gnsm eval`: AP/AUROC per score file, mean ± std across files, and
//! plot-ready precision-recall CSVs. AP is the mean of precision at the
//! ranks holding anomalies (no interpolation), matching the library oracle.

use std::path::{Path, PathBuf};

use clap::Args;
use gnsm::data::LABEL_COLUMN;
use gnsm::error::{Error, Result};
use gnsm::metrics::{auroc, average_precision, pr_points, PrPoint, ScoredSet};
use serde::Serialize;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// One score CSV per run/seed, each with anomaly_score and __label__.
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,

    /// Output directory for metrics.json and pr[-i].csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct RunMetrics {
    file: String,
    rows: usize,
    anomalies: usize,
    ap: f64,
    auroc: f64,
    pr_csv: String,
}

#[derive(Serialize)]
struct MetricsReport {
    ap_mean: f64,
    ap_std: f64,
    auroc_mean: f64,
    auroc_std: f64,
    per_seed: Vec<RunMetrics>,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let mut per_seed = Vec::with_capacity(args.scores.len());
    for (i, path) in args.scores.iter().enumerate() {
        let (scores, labels) = read_scores_csv(path)?;
        let set = ScoredSet::new(scores, labels)?;
        let pr_name = if args.scores.len() == 1 {
            "pr.csv".to_string()
        } else {
            format!("pr-{i}.csv")
        };
        write_pr_csv(&args.out.join(&pr_name), &pr_points(&set))?;
        per_seed.push(RunMetrics {
            file: path.display().to_string(),
            rows: set.len(),
            anomalies: set.n_positives(),
            ap: average_precision(&set),
            auroc: auroc(&set),
            pr_csv: pr_name,
        });
    }
    let (ap_mean, ap_std) = super::mean_std(&per_seed.iter().map(|m| m.ap).collect::<Vec<_>>());
    let (auroc_mean, auroc_std) =
        super::mean_std(&per_seed.iter().map(|m| m.auroc).collect::<Vec<_>>());
    let report = MetricsReport {
        ap_mean,
        ap_std,
        auroc_mean,
        auroc_std,
        per_seed,
    };
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(args.out.join("metrics.json"), json + "\n")?;
    println!(
        "AP {ap_mean:.4} ± {ap_std:.4}, AUROC {auroc_mean:.4} ± {auroc_std:.4} ({} run{})",
        args.scores.len(),
        if args.scores.len() == 1 { "" } else { "s" }
    );
    Ok(())
}

/// Read (anomaly_score, __label__) columns by header name; column order
/// and extra columns are irrelevant.
fn read_scores_csv(path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Validation(format!(
                "{}: missing column {name:?} (eval needs labeled scores)",
                path.display()
            ))
        })
    };
    let score_col = find("anomaly_score")?;
    let label_col = find(LABEL_COLUMN)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parse_err = |what: &str, v: &str| {
            Error::Validation(format!(
                "{}, row {i}: bad {what} value {v:?}",
                path.display()
            ))
        };
        let score: f64 = record[score_col]
            .parse()
            .map_err(|_| parse_err("score", &record[score_col]))?;
        let label: u8 = record[label_col]
            .parse()
            .map_err(|_| parse_err("label", &record[label_col]))?;
        scores.push(score);
        labels.push(label);
    }
    Ok((scores, labels))
}

fn write_pr_csv(path: &Path, points: &[PrPoint]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["threshold", "recall", "precision"])?;
    for p in points {
        writer.write_record([
            p.threshold.to_string(),
            p.recall.to_string(),
            p.precision.to_string(),
        ])?;
    }
    writer.flush().map_err(Error::from)?;
    Ok(())
}
