//! Multiscale score-norm embeddings and GMM-based anomaly scoring.
//!
//! A clean record is embedded as the L-vector of squared score norms,
//! one entry per noise scale: `eta_i(x) = ||s_theta(x, lambda_i)||^2`
//! over every input dimension. A full-covariance Gaussian mixture is
//! fitted on inlier embeddings in f64 (EM with k-means++ seeding and an
//! eigenvalue floor); the anomaly score of a record is the negative
//! log-likelihood of its embedding under that mixture.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward, score_from_epsilon_batch, ModelConfig, ParamSet};
use crate::noise::LogitRecord;
use crate::schema::CategoricalSchema;
use crate::Scalar;

/// Eigenvalue floor applied to every covariance after each M-step.
pub const COV_EIG_FLOOR: f64 = 1e-6;
/// A component below this weight is a degenerate fit.
pub const DEGENERATE_WEIGHT: f64 = 1e-8;
/// EM stops when mean log-likelihood improves by less than this.
pub const EM_TOL: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 500;
/// Component grid searched by `select_gmm`.
pub const DEFAULT_COMPONENT_GRID: &[usize] = &[3, 5, 7, 9];
const LN_2PI: f64 = 1.8378770664093453;

// ===========================================================================
// Embedding
// ===========================================================================

/// Assemble the clean network input for a record: logit blocks in schema
/// order, then (already standardized) continuous values.
fn clean_row<S: Scalar>(record: &LogitRecord, schema: &CategoricalSchema) -> Result<Vec<S>> {
    let sizes = schema.block_sizes();
    if record.blocks.len() != sizes.len()
        || record.blocks.iter().zip(&sizes).any(|(b, &k)| b.len() != k)
        || record.cont.len() != schema.n_cont()
    {
        return Err(Error::Validation(
            "record does not match the schema block layout".into(),
        ));
    }
    let mut row = Vec::with_capacity(schema.input_dim());
    for b in &record.blocks {
        row.extend(b.iter().map(|&v| S::of_f64(v)));
    }
    row.extend(record.cont.iter().map(|&v| S::of_f64(v)));
    Ok(row)
}

/// Multiscale embeddings for a batch of clean records: row i holds
/// `||s_theta(x_i, lambda_j)||^2` for every scale j (optionally
/// log-transformed). Use the EMA weights for inference.
pub fn embed_batch<S: Scalar>(
    records: &[LogitRecord],
    schema: &CategoricalSchema,
    config: &ModelConfig,
    params: &ParamSet<S>,
    log_norms: bool,
    chunk_size: usize,
) -> Result<Array2<f64>> {
    if chunk_size == 0 {
        return Err(Error::Validation("chunk_size must be >= 1".into()));
    }
    let schedule = config.schedule()?;
    let l = schedule.len();
    let n = records.len();
    let dim = schema.input_dim();
    if config.input_dim != dim {
        return Err(Error::Validation(format!(
            "model input_dim {} != schema input_dim {dim}",
            config.input_dim
        )));
    }
    let mut out = Array2::<f64>::zeros((n, l));
    for (c, recs) in records.chunks(chunk_size).enumerate() {
        let start = c * chunk_size;
        let mut x = Array2::<S>::zeros((recs.len(), dim));
        for (i, rec) in recs.iter().enumerate() {
            let row = clean_row::<S>(rec, schema)?;
            for (j, v) in row.into_iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        for (li, &lambda) in schedule.lambdas.iter().enumerate() {
            let lambdas = vec![lambda; recs.len()];
            let eps_hat = forward(config, params, &x, &lambdas)?;
            let scores = score_from_epsilon_batch(&eps_hat, schema, &lambdas)?;
            for i in 0..recs.len() {
                let sq: f64 = scores.row(i).iter().map(|&s| s * s).sum();
                if !sq.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite score norm for record {} at scale {li}",
                        start + i
                    )));
                }
                out[[start + i, li]] = if log_norms { (sq + 1e-12).ln() } else { sq };
            }
        }
    }
    Ok(out)
}

/// Single-record convenience wrapper around `embed_batch`.
pub fn embed<S: Scalar>(
    record: &LogitRecord,
    schema: &CategoricalSchema,
    config: &ModelConfig,
    params: &ParamSet<S>,
    log_norms: bool,
) -> Result<Vec<f64>> {
    let e = embed_batch(
        std::slice::from_ref(record),
        schema,
        config,
        params,
        log_norms,
        1,
    )?;
    Ok(e.row(0).to_vec())
}

// ===========================================================================
// Gaussian mixture model
// ===========================================================================

/// Full-covariance GMM in f64. Covariances are stored row-major and are
/// symmetric positive definite (eigenvalues floored at `COV_EIG_FLOOR`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// `covariances[k]` is the row-major `dim x dim` matrix of component k.
    pub covariances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty()
            || self.means.len() != self.weights.len()
            || self.covariances.len() != self.weights.len()
        {
            return Err(Error::Validation("component counts disagree".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Validation("weights must sum to 1".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Validation("weights must be positive".into()));
        }
        for (m, c) in self.means.iter().zip(&self.covariances) {
            if m.len() != self.dim || c.len() != self.dim * self.dim {
                return Err(Error::Validation("tensor shapes disagree with dim".into()));
            }
        }
        Ok(())
    }

    /// Precompute Cholesky factors for fast density evaluation.
    pub fn density(&self) -> Result<GmmDensity> {
        self.validate()?;
        let mut comps = Vec::with_capacity(self.n_components());
        for ((&w, m), c) in self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
        {
            let cov = DMatrix::from_row_slice(self.dim, self.dim, c);
            let chol = Cholesky::new(cov).ok_or_else(|| {
                Error::Numeric("covariance not positive definite".into())
            })?;
            let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            comps.push(DensityComponent {
                log_weight: w.ln(),
                mean: DVector::from_row_slice(m),
                chol,
                log_norm: -0.5 * (self.dim as f64 * LN_2PI + log_det),
            });
        }
        Ok(GmmDensity { comps })
    }
}

struct DensityComponent {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

/// Evaluates mixture log-densities; build once per model via
/// `GmmModel::density`.
pub struct GmmDensity {
    comps: Vec<DensityComponent>,
}

impl GmmDensity {
    pub fn dim(&self) -> usize {
        self.comps[0].mean.len()
    }

    /// Per-component log (weight * density); the mixture log-likelihood
    /// is the logsumexp of this vector.
    fn component_log_terms(&self, x: &DVector<f64>) -> Vec<f64> {
        self.comps
            .iter()
            .map(|c| {
                let diff = x - &c.mean;
                // Mahalanobis via forward substitution: L z = diff.
                let z = c
                    .chol
                    .l_dirty()
                    .solve_lower_triangular(&diff)
                    .expect("Cholesky L is nonsingular");
                c.log_weight + c.log_norm - 0.5 * z.norm_squared()
            })
            .collect()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Validation(format!(
                "point has dim {}, model has {}",
                x.len(),
                self.dim()
            )));
        }
        let terms = self.component_log_terms(&DVector::from_row_slice(x));
        Ok(crate::noise::logsumexp(&terms))
    }
}

// ===========================================================================
// Fitting
// ===========================================================================

fn as_matrix(embeddings: &Array2<f64>) -> Result<DMatrix<f64>> {
    if embeddings.nrows() == 0 || embeddings.ncols() == 0 {
        return Err(Error::Validation("empty embedding matrix".into()));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("embeddings must be finite".into()));
    }
    Ok(DMatrix::from_fn(
        embeddings.nrows(),
        embeddings.ncols(),
        |i, j| embeddings[[i, j]],
    ))
}

/// Symmetrize and floor the eigenvalues of a covariance estimate. The
/// result is exactly symmetric (entry-wise), so row- and column-major
/// serializations agree.
fn regularize_cov(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let floored = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| v.max(COV_EIG_FLOOR)),
    );
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// k-means++ seeding: first center uniform, later centers sampled with
/// probability proportional to squared distance from the nearest chosen
/// center.
fn kmeans_pp_centers(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = data.nrows();
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    centers.push(data.row(rng.gen_range(0..n)).transpose());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| (data.row(i).transpose() - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..n) // all points coincide with a center
        };
        let c = data.row(idx).transpose();
        for i in 0..n {
            d2[i] = d2[i].min((data.row(i).transpose() - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn sample_mean(data: &DMatrix<f64>) -> DVector<f64> {
    data.row_mean().transpose()
}

fn scatter_about(data: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let d = data.ncols();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let diff = data.row(i).transpose() - mean;
        cov.ger(1.0 / n as f64, &diff, &diff, 1.0);
    }
    cov
}

struct EmFit {
    model: GmmModel,
    /// Mean log-likelihood after every EM iteration.
    history: Vec<f64>,
}

/// One EM run from a k-means++ seed. Errors with `Numeric` when a
/// component weight collapses below `DEGENERATE_WEIGHT`.
fn fit_once(data: &DMatrix<f64>, k: usize, seed: u64) -> Result<EmFit> {
    let n = data.nrows();
    let d = data.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Seed: k-means++ centers, global covariance, uniform weights.
    let centers = kmeans_pp_centers(data, k, &mut rng);
    let global_cov = regularize_cov(&scatter_about(data, &sample_mean(data)));
    let mut model = GmmModel {
        dim: d,
        weights: vec![1.0 / k as f64; k],
        means: centers.iter().map(|c| c.iter().copied().collect()).collect(),
        covariances: vec![global_cov.as_slice().to_vec(); k],
    };

    let mut history = Vec::new();
    let mut resp = DMatrix::<f64>::zeros(n, k);
    loop {
        // E-step in the log domain.
        let density = model.density()?;
        let mut mean_ll = 0.0;
        for i in 0..n {
            let terms = density.component_log_terms(&data.row(i).transpose());
            let lse = crate::noise::logsumexp(&terms);
            mean_ll += lse;
            for (j, &t) in terms.iter().enumerate() {
                resp[(i, j)] = (t - lse).exp();
            }
        }
        mean_ll /= n as f64;

        let done = match history.last() {
            Some(&prev) => mean_ll - prev < EM_TOL,
            None => false,
        };
        history.push(mean_ll);
        if done || history.len() > EM_MAX_ITERS {
            break;
        }

        // M-step.
        for j in 0..k {
            let nk: f64 = resp.column(j).sum();
            let w = nk / n as f64;
            if w < DEGENERATE_WEIGHT {
                return Err(Error::Numeric(format!(
                    "component {j} collapsed (weight {w:.3e})"
                )));
            }
            let mut mean = DVector::<f64>::zeros(d);
            for i in 0..n {
                mean.axpy(resp[(i, j)], &data.row(i).transpose(), 1.0);
            }
            mean /= nk;
            let mut cov = DMatrix::<f64>::zeros(d, d);
            for i in 0..n {
                let diff = data.row(i).transpose() - &mean;
                cov.ger(resp[(i, j)] / nk, &diff, &diff, 1.0);
            }
            let cov = regularize_cov(&cov);
            model.weights[j] = w;
            model.means[j] = mean.iter().copied().collect();
            model.covariances[j] = cov.as_slice().to_vec();
        }
        // Renormalize against accumulated rounding.
        let wsum: f64 = model.weights.iter().sum();
        for w in &mut model.weights {
            *w /= wsum;
        }
    }
    Ok(EmFit { model, history })
}

/// Fit a `k`-component GMM on inlier embeddings, retrying with fresh
/// seeds up to 3 times if a component degenerates.
pub fn gmm_fit(embeddings: &Array2<f64>, n_components: usize, seed: u64) -> Result<GmmModel> {
    gmm_fit_with_history(embeddings, n_components, seed).map(|f| f.0)
}

/// Like `gmm_fit` but also returns the per-iteration mean log-likelihood
/// trace of the successful run.
pub fn gmm_fit_with_history(
    embeddings: &Array2<f64>,
    n_components: usize,
    seed: u64,
) -> Result<(GmmModel, Vec<f64>)> {
    if n_components < 1 {
        return Err(Error::Validation("need at least 1 component".into()));
    }
    let data = as_matrix(embeddings)?;
    let needed = n_components * (data.ncols() + 1);
    if data.nrows() < needed {
        return Err(Error::Validation(format!(
            "{} samples cannot support {n_components} components over {} dims (need >= {needed})",
            data.nrows(),
            data.ncols()
        )));
    }
    let mut last_err = None;
    for attempt in 0..4u64 {
        match fit_once(&data, n_components, seed.wrapping_add(attempt)) {
            Ok(fit) => return Ok((fit.model, fit.history)),
            Err(e @ Error::Numeric(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("loop ran"))
}

/// Outcome of the component-count grid search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionReport {
    /// (candidate component count, held-in mean log-likelihood); `None`
    /// marks a candidate whose every retry degenerated.
    pub candidates: Vec<(usize, Option<f64>)>,
    pub chosen: usize,
    /// True when every grid candidate degenerated and a single-component
    /// fallback was used.
    pub fallback: bool,
}

/// Fit every candidate in the grid and keep the one with the highest
/// held-in log-likelihood; ties break toward fewer components. Falls back
/// to a single component when every candidate degenerates.
pub fn select_gmm(
    embeddings: &Array2<f64>,
    grid: &[usize],
    seed: u64,
) -> Result<(GmmModel, SelectionReport)> {
    if grid.is_empty() {
        return Err(Error::Validation("component grid is empty".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut candidates = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, usize, GmmModel)> = None;
    for &k in &sorted {
        match gmm_fit_with_history(embeddings, k, seed) {
            Ok((model, history)) => {
                let ll = *history.last().expect("EM records at least one iteration");
                candidates.push((k, Some(ll)));
                let better = match &best {
                    Some((b, _, _)) => ll > *b,
                    None => true,
                };
                if better {
                    best = Some((ll, k, model));
                }
            }
            Err(Error::Numeric(_)) => candidates.push((k, None)),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((_, chosen, model)) => Ok((
            model,
            SelectionReport {
                candidates,
                chosen,
                fallback: false,
            },
        )),
        None => {
            let model = gmm_fit(embeddings, 1, seed)?;
            Ok((
                model,
                SelectionReport {
                    candidates,
                    chosen: 1,
                    fallback: true,
                },
            ))
        }
    }
}

// ===========================================================================
// Anomaly scoring
// ===========================================================================

/// Negative mixture log-likelihood of the record's embedding: higher
/// means more anomalous.
pub fn anomaly_score<S: Scalar>(
    record: &LogitRecord,
    schema: &CategoricalSchema,
    config: &ModelConfig,
    params: &ParamSet<S>,
    density: &GmmDensity,
    log_norms: bool,
) -> Result<f64> {
    let eta = embed(record, schema, config, params, log_norms)?;
    Ok(-density.log_likelihood(&eta)?)
}

/// Batched scoring; one pass of `embed_batch`, then per-row likelihoods.
pub fn anomaly_score_batch<S: Scalar>(
    records: &[LogitRecord],
    schema: &CategoricalSchema,
    config: &ModelConfig,
    params: &ParamSet<S>,
    density: &GmmDensity,
    log_norms: bool,
    chunk_size: usize,
) -> Result<Vec<f64>> {
    let eta = embed_batch(records, schema, config, params, log_norms, chunk_size)?;
    eta.outer_iter()
        .map(|row| {
            let v: Vec<f64> = row.to_vec();
            Ok(-density.log_likelihood(&v)?)
        })
        .collect()
}

// ===========================================================================
// Scorer file
// ===========================================================================

/// Serialized scoring head: the fitted GMM plus the hashes that bind it
/// to one checkpoint and one schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScorerFile {
    pub gmm: GmmModel,
    pub checkpoint_hash: String,
    pub schema_hash: String,
    pub log_norms: bool,
    pub n_scales: usize,
    pub selection: Option<SelectionReport>,
}

impl ScorerFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.gmm.validate()?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let file: ScorerFile = serde_json::from_str(&text)?;
        file.gmm.validate()?;
        if file.gmm.dim != file.n_scales {
            return Err(Error::Validation(format!(
                "GMM dimension {} != embedding length {}",
                file.gmm.dim, file.n_scales
            )));
        }
        Ok(file)
    }
}

// ===========================================================================
// Tests
// ===========================================================================
