//! Training objective and optimization loop.
//!
//! Each step draws a batch of encoded records, assigns every sample a
//! uniformly random noise scale, perturbs it with fresh Gumbel noise, and
//! regresses the per-block softmax of the network's logit-noise estimate
//! onto the softmax of the true logit noise `eps = log alpha - lambda * x~`,
//! weighted by `lambda^2 K^2` per block (squared-error by default, KL as a
//! variant). Continuous features add a standard Gaussian denoising score
//! matching term. Optimization is AdamW with decoupled weight decay,
//! global gradient clipping, cosine learning-rate decay, and an EMA shadow
//! of the weights used for validation and inference.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    backward, forward, forward_cached, init_parameters, ModelConfig, ModelParameters, ParamSet,
};
use crate::noise::{
    perturb, perturb_continuous, softmax, LogitRecord, NoiseSchedule,
};
use crate::schema::CategoricalSchema;
use crate::Scalar;

const ADAM_EPS: f64 = 1e-8;
/// Abort training after this many consecutive non-finite steps.
const MAX_BAD_STEPS: u32 = 100;

// ===========================================================================
// Configuration
// ===========================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Kl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// 512 suits small tabular sets; 2048 is the large-data setting.
    pub batch_size: usize,
    pub n_steps: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip: f64,
    pub ema_decay: f64,
    pub loss_kind: LossKind,
    /// Weight variant that additionally scales each block residual by K
    /// inside the norm (so the effective block weight becomes
    /// lambda^2 K^4). Off by default.
    pub inner_k: bool,
    /// Emit a rolling snapshot event this often (steps).
    pub checkpoint_every: u64,
    pub validation_every: u64,
    /// Stop after this many evaluations without improvement; 0 disables.
    pub early_stop_patience: u64,
    pub seed: u64,
    /// Offset used when encoding one-hot rows to logits.
    pub delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            n_steps: 1_000_000,
            lr_max: 1e-3,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip: 1.0,
            ema_decay: 0.999,
            loss_kind: LossKind::Mse,
            inner_k: false,
            checkpoint_every: 10_000,
            validation_every: 1_000,
            early_stop_patience: 20,
            seed: 0,
            delta: crate::noise::DEFAULT_DELTA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.n_steps < 1 || self.validation_every < 1 {
            return Err(Error::Validation(
                "batch_size, n_steps and validation_every must be >= 1".into(),
            ));
        }
        if !(self.lr_min <= self.lr_max) || !(self.lr_min > 0.0) {
            return Err(Error::Validation(format!(
                "need 0 < lr_min <= lr_max, got [{}, {}]",
                self.lr_min, self.lr_max
            )));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Validation(format!(
                "ema_decay must lie in (0,1), got {}",
                self.ema_decay
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b >= 0.0 && b < 1.0) {
                return Err(Error::Validation(format!("{name} must lie in [0,1)")));
            }
        }
        if !(self.grad_clip > 0.0) || self.weight_decay < 0.0 || !(self.delta > 0.0) {
            return Err(Error::Validation(
                "grad_clip and delta must be > 0, weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

// ===========================================================================
// Loss terms (per-sample, distribution level)
// ===========================================================================

/// Distribution-level view of one sample's loss: per-block softmax targets
/// and predictions with their `lambda^2 K^2` weights, plus the optional
/// continuous residual term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub epsilon_true: Vec<Vec<f64>>,
    pub epsilon_pred: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub continuous_term: Option<f64>,
}

impl LossTerms {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon_true.len() != self.epsilon_pred.len()
            || self.epsilon_true.len() != self.weights.len()
        {
            return Err(Error::Validation(
                "loss terms need matching block counts".into(),
            ));
        }
        for (q, p) in self.epsilon_true.iter().zip(&self.epsilon_pred) {
            if q.len() != p.len() {
                return Err(Error::Validation("block length mismatch".into()));
            }
            for (name, v) in [("target", q), ("prediction", p)] {
                let sum: f64 = v.iter().sum();
                if (sum - 1.0).abs() > 1e-6 || v.iter().any(|&x| x < 0.0) {
                    return Err(Error::Validation(format!(
                        "{name} block is not a distribution (sum {sum})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, kind: LossKind) -> Result<f64> {
        self.validate()?;
        let mut total = self.continuous_term.unwrap_or(0.0);
        for ((q, p), &w) in self
            .epsilon_true
            .iter()
            .zip(&self.epsilon_pred)
            .zip(&self.weights)
        {
            total += w * block_residual(p, q, kind);
        }
        Ok(total)
    }
}

fn block_residual(p: &[f64], q: &[f64], kind: LossKind) -> f64 {
    match kind {
        LossKind::Mse => p.iter().zip(q).map(|(&pj, &qj)| (pj - qj) * (pj - qj)).sum(),
        LossKind::Kl => q
            .iter()
            .zip(p)
            .filter(|(&qj, _)| qj > 0.0)
            .map(|(&qj, &pj)| qj * (qj.ln() - pj.max(1e-300).ln()))
            .sum(),
    }
}

/// Gaussian denoising score-matching term for the continuous block:
/// `sigma^2 * ||s_pred - (x - x_noisy)/sigma^2||^2`. The target equals
/// `-z/sigma` for the noise draw `z` that produced `x_noisy`.
pub fn gaussian_dsm_term(s_pred: &[f64], x: &[f64], x_noisy: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    s_pred
        .iter()
        .zip(x.iter().zip(x_noisy))
        .map(|(&s, (&xc, &xn))| {
            let r = s - (xc - xn) / s2;
            s2 * r * r
        })
        .sum()
}

// ===========================================================================
// Batch preparation
// ===========================================================================

/// A perturbed batch with everything the loss needs: network input,
/// per-sample noise levels, per-block softmax targets, and the clean /
/// noisy continuous values.
pub struct NoisedBatch<S: Scalar> {
    pub x_tilde: Array2<S>,
    pub lambdas: Vec<f64>,
    pub sigmas: Option<Vec<f64>>,
    /// `target_q[i][d]` = softmax(log alpha_d - lambda_i * x~_d).
    pub target_q: Vec<Vec<Vec<f64>>>,
    /// Clean standardized continuous values per sample (empty when none).
    pub cont_x: Vec<Vec<f64>>,
    /// Noisy continuous values per sample (empty when none).
    pub cont_noisy: Vec<Vec<f64>>,
}

/// Perturb `records` at the given schedule indices with fresh noise and
/// assemble the training batch.
pub fn prepare_noised_batch<S: Scalar>(
    records: &[&LogitRecord],
    schema: &CategoricalSchema,
    schedule: &NoiseSchedule,
    lambda_indices: &[usize],
    rng: &mut impl Rng,
) -> Result<NoisedBatch<S>> {
    if records.len() != lambda_indices.len() {
        return Err(Error::Validation(
            "one lambda index per record required".into(),
        ));
    }
    let sizes = schema.block_sizes();
    let n_cont = schema.n_cont();
    if n_cont > 0 && schedule.sigmas.is_none() {
        return Err(Error::Validation(
            "schema has continuous features but the schedule has no sigmas".into(),
        ));
    }
    let b = records.len();
    let dim = schema.input_dim();
    let mut x_tilde = Array2::zeros((b, dim));
    let mut lambdas = Vec::with_capacity(b);
    let mut sigmas = (n_cont > 0).then(|| Vec::with_capacity(b));
    let mut target_q = Vec::with_capacity(b);
    let mut cont_x = Vec::with_capacity(b);
    let mut cont_noisy = Vec::with_capacity(b);

    for (i, (&rec, &li)) in records.iter().zip(lambda_indices).enumerate() {
        if li >= schedule.len() {
            return Err(Error::Validation(format!(
                "lambda index {li} out of range (L={})",
                schedule.len()
            )));
        }
        if rec.blocks.len() != sizes.len()
            || rec.blocks.iter().zip(&sizes).any(|(blk, &k)| blk.len() != k)
            || rec.cont.len() != n_cont
        {
            return Err(Error::Validation(format!(
                "record {i} does not match the schema block layout"
            )));
        }
        let lambda = schedule.lambdas[li];
        let perturbed = perturb(rec, lambda, li, rng)?;

        let mut qs = Vec::with_capacity(rec.blocks.len());
        let mut off = 0;
        for (log_alpha, y) in rec.blocks.iter().zip(&perturbed.blocks) {
            let eps: Vec<f64> = log_alpha
                .iter()
                .zip(y)
                .map(|(&a, &yk)| a - lambda * yk)
                .collect();
            qs.push(softmax(&eps));
            for (j, &yk) in y.iter().enumerate() {
                x_tilde[[i, off + j]] = S::of_f64(yk);
            }
            off += y.len();
        }

        if n_cont > 0 {
            let sigma = schedule.sigmas.as_ref().expect("checked above")[li];
            let noisy = perturb_continuous(&rec.cont, sigma, rng);
            for (j, &v) in noisy.iter().enumerate() {
                x_tilde[[i, off + j]] = S::of_f64(v);
            }
            sigmas.as_mut().expect("n_cont > 0").push(sigma);
            cont_x.push(rec.cont.clone());
            cont_noisy.push(noisy);
        } else {
            cont_x.push(Vec::new());
            cont_noisy.push(Vec::new());
        }

        lambdas.push(lambda);
        target_q.push(qs);
    }

    Ok(NoisedBatch {
        x_tilde,
        lambdas,
        sigmas,
        target_q,
        cont_x,
        cont_noisy,
    })
}

// ===========================================================================
// Batch loss and its gradient w.r.t. the network output
// ===========================================================================

pub struct BatchLoss<S: Scalar> {
    /// Mean categorical term.
    pub categorical: f64,
    /// Mean continuous term (0 when the schema has none).
    pub continuous: f64,
    /// d(total mean loss)/d(eps_hat).
    pub d_eps_hat: Array2<S>,
}

impl<S: Scalar> BatchLoss<S> {
    pub fn total(&self) -> f64 {
        self.categorical + self.continuous
    }
}

/// Evaluate the training loss and its gradient with respect to the
/// network output. Distribution math runs in f64 regardless of `S`.
pub fn batch_loss_and_grad<S: Scalar>(
    batch: &NoisedBatch<S>,
    eps_hat: &Array2<S>,
    schema: &CategoricalSchema,
    kind: LossKind,
    inner_k: bool,
) -> Result<BatchLoss<S>> {
    let b = batch.x_tilde.nrows();
    if eps_hat.dim() != batch.x_tilde.dim() {
        return Err(Error::Validation(
            "eps_hat shape != batch input shape".into(),
        ));
    }
    let sizes = schema.block_sizes();
    let n_cont = schema.n_cont();
    let inv_b = 1.0 / b as f64;
    let mut cat_sum = 0.0;
    let mut cont_sum = 0.0;
    let mut d_eps = Array2::<S>::zeros(eps_hat.dim());

    for i in 0..b {
        let lambda = batch.lambdas[i];
        let row = eps_hat.row(i);
        let mut off = 0;
        for (d, &k) in sizes.iter().enumerate() {
            let logits: Vec<f64> = (0..k).map(|j| row[off + j].as_f64()).collect();
            let p = softmax(&logits);
            let q = &batch.target_q[i][d];
            let kf = k as f64;
            let mut w = lambda * lambda * kf * kf;
            if inner_k {
                w *= kf * kf;
            }
            cat_sum += w * block_residual(&p, q, kind);

            // d(residual)/d(logits): for MSE, 2 J_softmax^T (p - q) with
            // J v = p .* v - (p . v) p; for KL simply p - q.
            match kind {
                LossKind::Mse => {
                    let r: Vec<f64> = p.iter().zip(q).map(|(&pj, &qj)| pj - qj).collect();
                    let pr: f64 = p.iter().zip(&r).map(|(&pj, &rj)| pj * rj).sum();
                    for j in 0..k {
                        let g = 2.0 * w * p[j] * (r[j] - pr) * inv_b;
                        d_eps[[i, off + j]] = S::of_f64(g);
                    }
                }
                LossKind::Kl => {
                    for j in 0..k {
                        let g = w * (p[j] - q[j]) * inv_b;
                        d_eps[[i, off + j]] = S::of_f64(g);
                    }
                }
            }
            off += k;
        }

        if n_cont > 0 {
            let sigma = batch.sigmas.as_ref().expect("sigmas present")[i];
            let s_pred: Vec<f64> = (0..n_cont).map(|j| row[off + j].as_f64()).collect();
            cont_sum += gaussian_dsm_term(&s_pred, &batch.cont_x[i], &batch.cont_noisy[i], sigma);
            let s2 = sigma * sigma;
            for j in 0..n_cont {
                let target = (batch.cont_x[i][j] - batch.cont_noisy[i][j]) / s2;
                let g = 2.0 * s2 * (s_pred[j] - target) * inv_b;
                d_eps[[i, off + j]] = S::of_f64(g);
            }
        }
    }

    Ok(BatchLoss {
        categorical: cat_sum * inv_b,
        continuous: cont_sum * inv_b,
        d_eps_hat: d_eps,
    })
}

/// Squared-error form of the categorical objective on freshly perturbed
/// records: mean over the batch of
/// `sum_d lambda_i^2 K_d^2 ||softmax(eps_hat_d) - softmax(eps_d)||^2`.
pub fn gnsm_loss<S: Scalar>(
    records: &[&LogitRecord],
    lambda_indices: &[usize],
    model_config: &ModelConfig,
    params: &ParamSet<S>,
    schema: &CategoricalSchema,
    rng: &mut impl Rng,
) -> Result<f64> {
    loss_of_kind(
        records,
        lambda_indices,
        model_config,
        params,
        schema,
        rng,
        LossKind::Mse,
    )
}

/// KL form: `D_KL(softmax(eps) || softmax(eps_hat))` with the same
/// per-block weights.
pub fn kl_loss<S: Scalar>(
    records: &[&LogitRecord],
    lambda_indices: &[usize],
    model_config: &ModelConfig,
    params: &ParamSet<S>,
    schema: &CategoricalSchema,
    rng: &mut impl Rng,
) -> Result<f64> {
    loss_of_kind(
        records,
        lambda_indices,
        model_config,
        params,
        schema,
        rng,
        LossKind::Kl,
    )
}

fn loss_of_kind<S: Scalar>(
    records: &[&LogitRecord],
    lambda_indices: &[usize],
    model_config: &ModelConfig,
    params: &ParamSet<S>,
    schema: &CategoricalSchema,
    rng: &mut impl Rng,
    kind: LossKind,
) -> Result<f64> {
    let schedule = model_config.schedule()?;
    let batch = prepare_noised_batch::<S>(records, schema, &schedule, lambda_indices, rng)?;
    let eps_hat = forward(model_config, params, &batch.x_tilde, &batch.lambdas)?;
    let loss = batch_loss_and_grad(&batch, &eps_hat, schema, kind, false)?;
    Ok(loss.categorical)
}

// ===========================================================================
// Optimizer
// ===========================================================================

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar> {
    pub step: u64,
    pub m: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![S::zero(); n_params],
            v: vec![S::zero(); n_params],
        }
    }
}

/// Euclidean norm over every gradient entry.
pub fn global_grad_norm<S: Scalar>(grads: &ParamSet<S>) -> f64 {
    grads
        .visit()
        .iter()
        .flat_map(|s| s.iter())
        .map(|g| {
            let g = g.as_f64();
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

/// Scale gradients so their global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients<S: Scalar>(grads: &mut ParamSet<S>, max_norm: f64) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let scale = S::of_f64(max_norm / norm);
        for s in grads.visit_mut() {
            for g in s {
                *g *= scale;
            }
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay and bias correction.
/// Signals non-finite gradients so the caller can skip the step.
pub fn adamw_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &ParamSet<S>,
    state: &mut AdamState<S>,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if params.n_params() != state.m.len() {
        return Err(Error::Validation(
            "optimizer state size != parameter count".into(),
        ));
    }
    for s in grads.visit() {
        if s.iter().any(|g| !g.as_f64().is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let decay = 1.0 - lr * config.weight_decay;

    let mut off = 0;
    let g_slices: Vec<&[S]> = grads.visit();
    for (slot, p_slice) in params.visit_mut().into_iter().enumerate() {
        let g_slice = g_slices[slot];
        for (j, p) in p_slice.iter_mut().enumerate() {
            let g = g_slice[j].as_f64();
            let m = config.beta1 * state.m[off + j].as_f64() + (1.0 - config.beta1) * g;
            let v = config.beta2 * state.v[off + j].as_f64() + (1.0 - config.beta2) * g * g;
            state.m[off + j] = S::of_f64(m);
            state.v[off + j] = S::of_f64(v);
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            let theta = p.as_f64() * decay - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            *p = S::of_f64(theta);
        }
        off += p_slice.len();
    }
    Ok(())
}

/// Cosine decay: `lr_min + (lr_max - lr_min)/2 * (1 + cos(pi * step/n))`.
pub fn cosine_lr(step: u64, n_steps: u64, lr_min: f64, lr_max: f64) -> f64 {
    let frac = (step.min(n_steps)) as f64 / n_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// `shadow <- decay * shadow + (1 - decay) * live` over every trainable
/// tensor.
pub fn ema_update<S: Scalar>(live: &ParamSet<S>, shadow: &mut ParamSet<S>, decay: f64) {
    let d = S::of_f64(decay);
    let one_minus = S::of_f64(1.0 - decay);
    let live_slices = live.visit();
    for (slot, s_slice) in shadow.visit_mut().into_iter().enumerate() {
        let l_slice = live_slices[slot];
        for (sv, &lv) in s_slice.iter_mut().zip(l_slice) {
            *sv = d * *sv + one_minus * lv;
        }
    }
}

// ===========================================================================
// Training loop
// ===========================================================================

#[derive(Clone, Debug, Serialize)]
pub struct LogEntry {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub enum TrainEvent<'a, S: Scalar> {
    Log(&'a LogEntry),
    /// Rolling snapshot every `checkpoint_every` steps.
    Snapshot {
        step: u64,
        params: &'a ModelParameters<S>,
        opt: &'a AdamState<S>,
    },
}

#[derive(Debug)]
pub struct TrainOutcome<S: Scalar> {
    /// Weights at the best validation loss (live + EMA).
    pub params: ModelParameters<S>,
    pub opt: AdamState<S>,
    pub best_step: u64,
    pub best_val_loss: f64,
    pub history: Vec<LogEntry>,
}

/// Mean loss of a whole record set under fixed parameters, chunked into
/// batches. The caller controls the rng, so a re-seeded rng reproduces
/// identical noise draws across evaluations.
pub fn dataset_loss<S: Scalar>(
    records: &[LogitRecord],
    schema: &CategoricalSchema,
    model_config: &ModelConfig,
    params: &ParamSet<S>,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Validation("empty record set".into()));
    }
    let schedule = model_config.schedule()?;
    let l = schedule.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in records.chunks(config.batch_size) {
        let refs: Vec<&LogitRecord> = chunk.iter().collect();
        let idx: Vec<usize> = (0..refs.len()).map(|_| rng.gen_range(0..l)).collect();
        let batch = prepare_noised_batch::<S>(&refs, schema, &schedule, &idx, rng)?;
        let eps_hat = forward(model_config, params, &batch.x_tilde, &batch.lambdas)?;
        let loss = batch_loss_and_grad(&batch, &eps_hat, schema, config.loss_kind, config.inner_k)?;
        total += loss.total() * refs.len() as f64;
        count += refs.len();
    }
    Ok(total / count as f64)
}

/// Full training run. Returns the checkpoint (weights + optimizer state)
/// with the lowest validation loss, evaluated with EMA weights on noise
/// draws that are identical across evaluations.
pub fn train<S: Scalar>(
    train_records: &[LogitRecord],
    val_records: &[LogitRecord],
    schema: &CategoricalSchema,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_, S>),
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    model_config.validate()?;
    if model_config.input_dim != schema.input_dim() {
        return Err(Error::Validation(format!(
            "model input_dim {} != schema input_dim {}",
            model_config.input_dim,
            schema.input_dim()
        )));
    }
    if train_records.is_empty() || val_records.is_empty() {
        return Err(Error::Validation(
            "train and validation sets must be non-empty".into(),
        ));
    }

    let schedule = model_config.schedule()?;
    let l = schedule.len();
    let mut params = init_parameters::<S>(model_config, config.seed)?;
    let mut opt = AdamState::<S>::new(params.live.n_params());
    // Independent streams: one for batch composition and noise, one
    // (re-seeded per evaluation) for validation noise.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x517c_c1b7_2722_0a95));
    let val_seed = config.seed.wrapping_add(0x2545_f491_4f6c_dd1d);

    let mut history: Vec<LogEntry> = Vec::new();
    let mut best: Option<(u64, f64, ModelParameters<S>, AdamState<S>)> = None;
    let mut bad_steps: u32 = 0;
    let mut evals_since_improve: u64 = 0;

    for step in 1..=config.n_steps {
        let lr = cosine_lr(step - 1, config.n_steps, config.lr_min, config.lr_max);

        let refs: Vec<&LogitRecord> = (0..config.batch_size)
            .map(|_| &train_records[rng.gen_range(0..train_records.len())])
            .collect();
        let idx: Vec<usize> = (0..refs.len()).map(|_| rng.gen_range(0..l)).collect();
        let batch = prepare_noised_batch::<S>(&refs, schema, &schedule, &idx, &mut rng)?;

        let (eps_hat, cache) =
            forward_cached(model_config, &params.live, &batch.x_tilde, &batch.lambdas)?;
        let loss =
            batch_loss_and_grad(&batch, &eps_hat, schema, config.loss_kind, config.inner_k)?;

        let mut stepped = false;
        if loss.total().is_finite() {
            let mut grads = backward(model_config, &params.live, &cache, &loss.d_eps_hat)?;
            clip_gradients(&mut grads, config.grad_clip);
            match adamw_step(&mut params.live, &grads, &mut opt, lr, config) {
                Ok(()) => {
                    ema_update(&params.live, &mut params.ema_shadow, config.ema_decay);
                    stepped = true;
                }
                Err(Error::Numeric(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if stepped {
            bad_steps = 0;
        } else {
            bad_steps += 1;
            if bad_steps >= MAX_BAD_STEPS {
                return Err(Error::Numeric(format!(
                    "loss or gradients non-finite for {MAX_BAD_STEPS} consecutive steps \
                     (last train loss {}, step {step})",
                    loss.total()
                )));
            }
        }

        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            on_event(TrainEvent::Snapshot {
                step,
                params: &params,
                opt: &opt,
            });
        }

        if step % config.validation_every == 0 || step == config.n_steps {
            let mut val_rng = ChaCha8Rng::seed_from_u64(val_seed);
            let val_loss = dataset_loss(
                val_records,
                schema,
                model_config,
                &params.ema_shadow,
                config,
                &mut val_rng,
            )?;
            let entry = LogEntry {
                step,
                lr,
                train_loss: loss.total(),
                val_loss: Some(val_loss),
            };
            on_event(TrainEvent::Log(&entry));
            history.push(entry);

            let improved = match &best {
                Some((_, b, _, _)) => val_loss < *b,
                None => val_loss.is_finite(),
            };
            if improved {
                best = Some((step, val_loss, params.clone(), opt.clone()));
                evals_since_improve = 0;
            } else {
                evals_since_improve += 1;
                if config.early_stop_patience > 0
                    && evals_since_improve >= config.early_stop_patience
                {
                    break;
                }
            }
        }
    }

    let (best_step, best_val_loss, params, opt) = best.ok_or_else(|| {
        Error::Numeric("no finite validation loss was ever recorded".into())
    })?;
    Ok(TrainOutcome {
        params,
        opt,
        best_step,
        best_val_loss,
        history,
    })
}

// ===========================================================================
// Tests
// ===========================================================================
