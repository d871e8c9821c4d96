//! Dataset ingestion, encoding, splitting, standardization, and a
//! synthetic generator with an exact-likelihood oracle.
//!
//! Categorical values are validated against an explicit external schema;
//! vocabularies are never inferred from data, so train and test encodings
//! always agree. Anomaly labels live in a dedicated `__label__` column
//! (0 inlier, 1 anomaly) that training ignores and evaluation requires.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Dirichlet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{encode_indices, LogitRecord};
use crate::schema::{CategoricalSchema, Feature};

pub const LABEL_COLUMN: &str = "__label__";

// ===========================================================================
// Dataset
// ===========================================================================

/// Rows as categorical outcome indices plus raw continuous values.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: CategoricalSchema,
    /// `cat[i][d]` = outcome index of categorical feature d in row i.
    pub cat: Vec<Vec<usize>>,
    /// `cont[i][j]` = value of continuous feature j in row i.
    pub cont: Vec<Vec<f64>>,
    /// 0 = inlier, 1 = anomaly; present only for evaluation data.
    pub labels: Option<Vec<u8>>,
    /// Where the rows came from (file path or generator parameters).
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        schema: CategoricalSchema,
        cat: Vec<Vec<usize>>,
        cont: Vec<Vec<f64>>,
        labels: Option<Vec<u8>>,
        provenance: String,
    ) -> Result<Self> {
        let n = cat.len();
        if cont.len() != n {
            return Err(Error::Validation(
                "categorical and continuous row counts differ".into(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Validation("label count != row count".into()));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::Validation("labels must be 0 or 1".into()));
            }
        }
        let sizes = schema.block_sizes();
        let n_cont = schema.n_cont();
        for (i, (c, v)) in cat.iter().zip(&cont).enumerate() {
            if c.len() != sizes.len() || v.len() != n_cont {
                return Err(Error::Validation(format!(
                    "row {i} has {} categorical / {} continuous values, schema expects {} / {}",
                    c.len(),
                    v.len(),
                    sizes.len(),
                    n_cont
                )));
            }
            for (d, (&idx, &k)) in c.iter().zip(&sizes).enumerate() {
                if idx >= k {
                    return Err(Error::Validation(format!(
                        "row {i}, feature {d}: outcome index {idx} out of range (K={k})"
                    )));
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "row {i} has a non-finite continuous value"
                )));
            }
        }
        Ok(Dataset {
            schema,
            cat,
            cont,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.cat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cat.is_empty()
    }

    /// Encode every row for training/scoring: categorical indices become
    /// logit blocks, continuous values are carried through as-is (the
    /// caller standardizes them first).
    pub fn encode(&self, delta: f64) -> Result<Vec<LogitRecord>> {
        self.cat
            .iter()
            .zip(&self.cont)
            .map(|(c, v)| {
                let mut rec = encode_indices(c, &self.schema, delta)?;
                rec.cont = v.clone();
                Ok(rec)
            })
            .collect()
    }

    /// New dataset containing the given rows, in order.
    fn take(&self, rows: &[usize], provenance: String) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            cat: rows.iter().map(|&i| self.cat[i].clone()).collect(),
            cont: rows.iter().map(|&i| self.cont[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
            provenance,
        }
    }
}

// ===========================================================================
// CSV I/O
// ===========================================================================

/// Load a CSV whose header matches the schema's feature names in order,
/// optionally followed by a final `__label__` column.
pub fn load_csv(path: impl AsRef<Path>, schema: &CategoricalSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;

    let expected: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let has_label = headers.last().map(String::as_str) == Some(LABEL_COLUMN);
    let feature_headers = &headers[..headers.len() - usize::from(has_label)];
    if feature_headers != expected.as_slice() {
        return Err(Error::Validation(format!(
            "header {:?} does not match schema features {:?} (optional trailing {LABEL_COLUMN})",
            headers, expected
        )));
    }

    let mut cat = Vec::new();
    let mut cont = Vec::new();
    let mut labels: Option<Vec<u8>> = has_label.then(Vec::new);
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut c = Vec::with_capacity(schema.d_cat());
        let mut v = Vec::with_capacity(schema.n_cont());
        for (feature, raw) in schema.features().iter().zip(record.iter()) {
            let raw = raw.trim();
            if feature.is_categorical() {
                let idx = feature
                    .outcomes
                    .iter()
                    .position(|o| o == raw)
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "row {i}: unknown outcome {raw:?} for feature {:?}",
                            feature.name
                        ))
                    })?;
                c.push(idx);
            } else {
                let x: f64 = raw.parse().map_err(|_| {
                    Error::Validation(format!(
                        "row {i}: {raw:?} is not a number for feature {:?}",
                        feature.name
                    ))
                })?;
                v.push(x);
            }
        }
        if let Some(l) = labels.as_mut() {
            let raw = record
                .get(record.len() - 1)
                .map(str::trim)
                .unwrap_or_default();
            let lab: u8 = raw
                .parse()
                .ok()
                .filter(|&b| b <= 1)
                .ok_or_else(|| {
                    Error::Validation(format!("row {i}: label {raw:?} is not 0 or 1"))
                })?;
            l.push(lab);
        }
        cat.push(c);
        cont.push(v);
    }
    Dataset::new(
        schema.clone(),
        cat,
        cont,
        labels,
        path.display().to_string(),
    )
}

/// Write a dataset back to CSV in the load format (label column last,
/// only when labels are present).
pub fn save_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = dataset
        .schema
        .features()
        .iter()
        .map(|f| f.name.clone())
        .collect();
    if dataset.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    writer.write_record(&header)?;

    for i in 0..dataset.len() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        let mut ci = 0;
        let mut vi = 0;
        for feature in dataset.schema.features() {
            if feature.is_categorical() {
                row.push(feature.outcomes[dataset.cat[i][ci]].clone());
                ci += 1;
            } else {
                row.push(format!("{}", dataset.cont[i][vi]));
                vi += 1;
            }
        }
        if let Some(l) = &dataset.labels {
            row.push(l[i].to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(Error::from)?;
    Ok(())
}

// ===========================================================================
// Splitting
// ===========================================================================

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::Validation("split fractions must be positive".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Seeded shuffle of an inlier-only dataset into disjoint, exhaustive
/// train/val/test splits (`floor` sizing; the test split takes the rest).
/// Anomalies are held aside by the caller and concatenated to the test
/// split for evaluation.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    if let Some(l) = &dataset.labels {
        if l.iter().any(|&v| v == 1) {
            return Err(Error::Validation(
                "split expects inliers only; hold anomalies aside first".into(),
            ));
        }
    }
    let n = dataset.len();
    if n < 10 {
        return Err(Error::Validation(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (spec.train * n as f64).floor() as usize;
    let n_val = (spec.val * n as f64).floor() as usize;
    let src = &dataset.provenance;
    let train = dataset.take(&order[..n_train], format!("{src} [train]"));
    let val = dataset.take(&order[n_train..n_train + n_val], format!("{src} [val]"));
    let test = dataset.take(&order[n_train + n_val..], format!("{src} [test]"));
    Ok((train, val, test))
}

/// Separate labelled rows into (inliers, anomalies). Unlabelled datasets
/// count every row as an inlier; the anomaly side comes back empty.
pub fn partition_by_label(dataset: &Dataset) -> (Dataset, Dataset) {
    let src = &dataset.provenance;
    let (zeros, ones): (Vec<usize>, Vec<usize>) = match &dataset.labels {
        Some(l) => (0..dataset.len()).partition(|&i| l[i] == 0),
        None => ((0..dataset.len()).collect(), Vec::new()),
    };
    (
        dataset.take(&zeros, format!("{src} [inliers]")),
        dataset.take(&ones, format!("{src} [anomalies]")),
    )
}

/// Concatenate rows of two datasets over the same schema.
pub fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if a.schema != b.schema {
        return Err(Error::Validation("schemas differ".into()));
    }
    if a.labels.is_some() != b.labels.is_some() {
        return Err(Error::Validation(
            "cannot concatenate labelled with unlabelled data".into(),
        ));
    }
    let mut out = a.clone();
    out.cat.extend(b.cat.iter().cloned());
    out.cont.extend(b.cont.iter().cloned());
    if let (Some(la), Some(lb)) = (out.labels.as_mut(), b.labels.as_ref()) {
        la.extend(lb.iter().copied());
    }
    out.provenance = format!("{} + {}", a.provenance, b.provenance);
    Ok(out)
}

// ===========================================================================
// Standardization
// ===========================================================================

/// Per-feature affine transform fitted on the train split (population
/// standard deviation; zero-variance features get a unit divisor).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ContStats {
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::Validation(format!(
                "row has {} continuous values, stats expect {}",
                row.len(),
                self.mean.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect())
    }
}

pub struct StandardizeOutcome {
    pub stats: ContStats,
    /// Features whose train variance was zero (divisor replaced by 1).
    pub constant_features: Vec<String>,
}

/// Fit z-score stats on `train` and apply them in place to `train` and
/// every dataset in `others`.
pub fn standardize_continuous(
    train: &mut Dataset,
    others: &mut [&mut Dataset],
) -> Result<StandardizeOutcome> {
    let n_cont = train.schema.n_cont();
    if n_cont == 0 {
        return Err(Error::Validation(
            "schema has no continuous features to standardize".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::Validation("empty train split".into()));
    }
    let n = train.len() as f64;
    let mut mean = vec![0.0; n_cont];
    for row in &train.cont {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; n_cont];
    for row in &train.cont {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
            *v += (x - m) * (x - m);
        }
    }
    let mut constant_features = Vec::new();
    let cont_names: Vec<&str> = train
        .schema
        .features()
        .iter()
        .filter(|f| !f.is_categorical())
        .map(|f| f.name.as_str())
        .collect();
    let std: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let s = (v / n).sqrt();
            if s == 0.0 {
                constant_features.push(cont_names[j].to_string());
                1.0
            } else {
                s
            }
        })
        .collect();
    let stats = ContStats { mean, std };

    for row in &mut train.cont {
        *row = stats.apply(row)?;
    }
    for ds in others {
        for row in &mut ds.cont {
            *row = stats.apply(row)?;
        }
    }
    Ok(StandardizeOutcome {
        stats,
        constant_features,
    })
}

// ===========================================================================
// Synthetic generator with exact-likelihood oracle
// ===========================================================================

/// The generator's own parameters: per-feature categorical probabilities
/// of the inlier product law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub probs: Vec<Vec<f64>>,
}

impl SyntheticOracle {
    /// Exact log-likelihood of a row (as outcome indices) under the
    /// inlier law: sum of per-feature log-probabilities.
    pub fn log_likelihood(&self, row: &[usize]) -> Result<f64> {
        if row.len() != self.probs.len() {
            return Err(Error::Validation(format!(
                "row has {} features, oracle has {}",
                row.len(),
                self.probs.len()
            )));
        }
        let mut ll = 0.0;
        for (&idx, p) in row.iter().zip(&self.probs) {
            let pk = *p.get(idx).ok_or_else(|| {
                Error::Validation(format!("outcome index {idx} out of range"))
            })?;
            ll += pk.ln();
        }
        Ok(ll)
    }
}

/// Inliers from a product of skewed categorical laws (per-feature
/// probabilities drawn once from Dirichlet(`skew`, ..., `skew`)),
/// anomalies uniform over outcomes. Rows are inliers first, then
/// anomalies, with labels to match.
pub fn generate_synthetic(
    d: usize,
    k: usize,
    n_inliers: usize,
    n_anomalies: usize,
    skew: f64,
    seed: u64,
) -> Result<(Dataset, SyntheticOracle)> {
    if d < 1 || k < 2 {
        return Err(Error::Validation(format!(
            "need d >= 1 and k >= 2, got d={d}, k={k}"
        )));
    }
    if !(skew > 0.0) || !skew.is_finite() {
        return Err(Error::Validation(format!(
            "skew must be positive and finite, got {skew}"
        )));
    }

    let features: Vec<Feature> = (0..d)
        .map(|j| {
            Feature::categorical(
                format!("f{j}"),
                (0..k).map(|o| format!("c{o}")).collect(),
            )
        })
        .collect();
    let schema = CategoricalSchema::new(features)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirichlet = Dirichlet::new(&vec![skew; k])
        .map_err(|e| Error::Validation(format!("bad Dirichlet concentration: {e}")))?;
    let probs: Vec<Vec<f64>> = (0..d).map(|_| dirichlet.sample(&mut rng)).collect();
    let samplers: Vec<WeightedIndex<f64>> = probs
        .iter()
        .map(|p| {
            WeightedIndex::new(p)
                .map_err(|e| Error::Numeric(format!("degenerate Dirichlet draw: {e}")))
        })
        .collect::<Result<_>>()?;

    let mut cat = Vec::with_capacity(n_inliers + n_anomalies);
    for _ in 0..n_inliers {
        cat.push(samplers.iter().map(|s| s.sample(&mut rng)).collect());
    }
    for _ in 0..n_anomalies {
        cat.push((0..d).map(|_| rng.gen_range(0..k)).collect());
    }
    let mut labels = vec![0u8; n_inliers];
    labels.extend(std::iter::repeat(1u8).take(n_anomalies));

    let n = cat.len();
    let dataset = Dataset::new(
        schema,
        cat,
        vec![Vec::new(); n],
        Some(labels),
        format!("synthetic(d={d}, k={k}, skew={skew}, seed={seed})"),
    )?;
    Ok((dataset, SyntheticOracle { probs }))
}

// ===========================================================================
// Tests
// ===========================================================================
