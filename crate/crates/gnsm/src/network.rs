//! Noise-conditioned residual score network with hand-written
//! reverse-mode gradients.
//!
//! Architecture per batch row (width W, input dim D, embedding dim T):
//!
//! ```text
//! x -> n_blocks * [ LayerNorm -> gelu -> Linear(D,W) -> FiLM(t) -> Linear(W,D) -> + x ]
//!   -> LayerNorm -> leaky_relu -> Linear(D,D)  (zero-initialized head)
//! ```
//!
//! where `t = [sin(2 pi w log lambda), cos(2 pi w log lambda)]` with frozen
//! Gaussian frequencies `w`. The output is the per-block logit-noise
//! estimate; `score_from_epsilon` maps it onto score space.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{softmax, NoiseSchedule};
use crate::schema::CategoricalSchema;
use crate::Scalar;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

// ===========================================================================
// Configuration
// ===========================================================================

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width of each residual block.
    pub width: usize,
    pub n_blocks: usize,
    /// Length of the noise embedding (must be even: sin/cos halves).
    pub time_embedding_size: usize,
    /// Total input width: one-hot blocks plus continuous dims.
    pub input_dim: usize,
    /// Number of noise scales L.
    pub n_scales: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Gaussian noise bounds for continuous features, when present.
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    /// Std of the frozen Fourier frequencies.
    pub fourier_scale: f64,
    /// Negative slope of the head activation.
    pub leaky_slope: f64,
}

impl ModelConfig {
    /// Full-scale defaults for a given input width.
    pub fn new(input_dim: usize) -> Self {
        ModelConfig {
            width: 1024,
            n_blocks: 20,
            time_embedding_size: 128,
            input_dim,
            n_scales: 20,
            lambda_min: 2.0,
            lambda_max: 20.0,
            sigma_min: None,
            sigma_max: None,
            fourier_scale: 16.0,
            leaky_slope: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.n_blocks < 1 || self.input_dim < 1 {
            return Err(Error::Validation(
                "width, n_blocks and input_dim must all be >= 1".into(),
            ));
        }
        if self.time_embedding_size < 2 || self.time_embedding_size % 2 != 0 {
            return Err(Error::Validation(format!(
                "time_embedding_size must be even and >= 2, got {}",
                self.time_embedding_size
            )));
        }
        if self.n_scales < 2 {
            return Err(Error::Validation(format!(
                "n_scales must be >= 2, got {}",
                self.n_scales
            )));
        }
        if self.sigma_min.is_some() != self.sigma_max.is_some() {
            return Err(Error::Validation(
                "sigma_min and sigma_max must be set together".into(),
            ));
        }
        if !(self.fourier_scale > 0.0) || self.leaky_slope < 0.0 {
            return Err(Error::Validation(
                "fourier_scale must be > 0 and leaky_slope >= 0".into(),
            ));
        }
        self.schedule().map(|_| ())
    }

    /// Reconstruct the noise schedule this model was configured for.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let sigma = match (self.sigma_min, self.sigma_max) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => None,
        };
        crate::noise::build_schedule(self.lambda_min, self.lambda_max, self.n_scales, sigma)
    }
}

// ===========================================================================
// Parameters
// ===========================================================================

#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<S: Scalar> {
    /// (fan_in, fan_out)
    pub w: Array2<S>,
    pub b: Array1<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<S: Scalar> {
    pub gamma: Array1<S>,
    pub beta: Array1<S>,
}

/// Affine maps from the noise embedding to per-channel scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmParams<S: Scalar> {
    pub scale: LinearParams<S>,
    pub shift: LinearParams<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<S: Scalar> {
    pub norm: LayerNormParams<S>,
    pub lin1: LinearParams<S>,
    pub film: FilmParams<S>,
    pub lin2: LinearParams<S>,
}

/// One full set of weights. `fourier_freqs` is frozen (never trained,
/// never visited); everything else is trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S: Scalar> {
    pub fourier_freqs: Array1<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub head_norm: LayerNormParams<S>,
    pub head: LinearParams<S>,
}

/// Live weights plus their EMA shadow (the inference-time weights).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<S: Scalar> {
    pub live: ParamSet<S>,
    pub ema_shadow: ParamSet<S>,
}

fn slice<S: Scalar>(a: &Array1<S>) -> &[S] {
    a.as_slice().expect("owned arrays are contiguous")
}

fn slice2<S: Scalar>(a: &Array2<S>) -> &[S] {
    a.as_slice().expect("owned arrays are contiguous")
}

impl<S: Scalar> ParamSet<S> {
    /// All trainable tensors as flat slices, in a fixed order shared by
    /// the optimizer, EMA, checkpointing, and gradient flattening.
    pub fn visit(&self) -> Vec<&[S]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(slice(&b.norm.gamma));
            out.push(slice(&b.norm.beta));
            out.push(slice2(&b.lin1.w));
            out.push(slice(&b.lin1.b));
            out.push(slice2(&b.film.scale.w));
            out.push(slice(&b.film.scale.b));
            out.push(slice2(&b.film.shift.w));
            out.push(slice(&b.film.shift.b));
            out.push(slice2(&b.lin2.w));
            out.push(slice(&b.lin2.b));
        }
        out.push(slice(&self.head_norm.gamma));
        out.push(slice(&self.head_norm.beta));
        out.push(slice2(&self.head.w));
        out.push(slice(&self.head.b));
        out
    }

    /// Mutable counterpart of `visit`, same order.
    pub fn visit_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(b.norm.gamma.as_slice_mut().unwrap());
            out.push(b.norm.beta.as_slice_mut().unwrap());
            out.push(b.lin1.w.as_slice_mut().unwrap());
            out.push(b.lin1.b.as_slice_mut().unwrap());
            out.push(b.film.scale.w.as_slice_mut().unwrap());
            out.push(b.film.scale.b.as_slice_mut().unwrap());
            out.push(b.film.shift.w.as_slice_mut().unwrap());
            out.push(b.film.shift.b.as_slice_mut().unwrap());
            out.push(b.lin2.w.as_slice_mut().unwrap());
            out.push(b.lin2.b.as_slice_mut().unwrap());
        }
        out.push(self.head_norm.gamma.as_slice_mut().unwrap());
        out.push(self.head_norm.beta.as_slice_mut().unwrap());
        out.push(self.head.w.as_slice_mut().unwrap());
        out.push(self.head.b.as_slice_mut().unwrap());
        out
    }

    pub fn n_params(&self) -> usize {
        self.visit().iter().map(|s| s.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for s in self.visit() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Validation(format!(
                "flat vector has {} entries, parameters need {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for s in self.visit_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    /// Same shapes, all trainable entries (and frozen frequencies) zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fourier_freqs.fill(S::zero());
        for s in z.visit_mut() {
            s.fill(S::zero());
        }
        z
    }

    /// All-zero parameters with the shapes `config` dictates. Mainly a
    /// target for `assign_flat` when deserializing.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, w, t) = (config.input_dim, config.width, config.time_embedding_size);
        let zero_linear = |fan_in: usize, fan_out: usize| LinearParams {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        };
        let zero_norm = |dim: usize| LayerNormParams {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        };
        let blocks = (0..config.n_blocks)
            .map(|_| BlockParams {
                norm: zero_norm(d),
                lin1: zero_linear(d, w),
                film: FilmParams {
                    scale: zero_linear(t, w),
                    shift: zero_linear(t, w),
                },
                lin2: zero_linear(w, d),
            })
            .collect();
        Ok(ParamSet {
            fourier_freqs: Array1::zeros(t / 2),
            blocks,
            head_norm: zero_norm(d),
            head: zero_linear(d, d),
        })
    }
}

// ===========================================================================
// Initialization
// ===========================================================================

fn he_normal<S: Scalar>(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Array2<S> {
    let std = (2.0 / fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        S::of_f64(std * rng.sample::<f64, _>(StandardNormal))
    })
}

fn linear_he<S: Scalar>(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> LinearParams<S> {
    LinearParams {
        w: he_normal(fan_in, fan_out, fan_in, rng),
        b: Array1::zeros(fan_out),
    }
}

fn linear_const<S: Scalar>(fan_in: usize, fan_out: usize, bias: f64) -> LinearParams<S> {
    LinearParams {
        w: Array2::zeros((fan_in, fan_out)),
        b: Array1::from_elem(fan_out, S::of_f64(bias)),
    }
}

fn layer_norm_identity<S: Scalar>(dim: usize) -> LayerNormParams<S> {
    LayerNormParams {
        gamma: Array1::from_elem(dim, S::one()),
        beta: Array1::zeros(dim),
    }
}

/// Seeded parameter initialization:
/// - linear weights: normal with variance 2/fan_in, zero bias
/// - FiLM: identity modulation (scale 1, shift 0 for every embedding)
/// - head linear: fully zero, so the initial output is identically zero
/// - Fourier frequencies: normal, std `fourier_scale`, frozen
/// - EMA shadow starts equal to the live weights
pub fn init_parameters<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParameters<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, w, t) = (config.input_dim, config.width, config.time_embedding_size);

    let fourier_freqs = Array1::from_shape_fn(t / 2, |_| {
        S::of_f64(config.fourier_scale * rng.sample::<f64, _>(StandardNormal))
    });

    let blocks = (0..config.n_blocks)
        .map(|_| BlockParams {
            norm: layer_norm_identity(d),
            lin1: linear_he(d, w, &mut rng),
            film: FilmParams {
                scale: linear_const(t, w, 1.0),
                shift: linear_const(t, w, 0.0),
            },
            lin2: linear_he(w, d, &mut rng),
        })
        .collect();

    let live = ParamSet {
        fourier_freqs,
        blocks,
        head_norm: layer_norm_identity(d),
        head: LinearParams {
            w: Array2::zeros((d, d)),
            b: Array1::zeros(d),
        },
    };
    Ok(ModelParameters {
        ema_shadow: live.clone(),
        live,
    })
}

// ===========================================================================
// Forward
// ===========================================================================

/// Noise embedding for a single temperature:
/// `[sin(2 pi w_i log lambda) .. , cos(2 pi w_i log lambda) ..]`.
pub fn fourier_noise_embedding<S: Scalar>(lambda: f64, freqs: &Array1<S>) -> Result<Vec<S>> {
    if !(lambda > 0.0) {
        return Err(Error::Validation(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    let log_l = lambda.ln();
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(freqs.len() * 2);
    for &w in freqs.iter() {
        out.push(S::of_f64((tau * w.as_f64() * log_l).sin()));
    }
    for &w in freqs.iter() {
        out.push(S::of_f64((tau * w.as_f64() * log_l).cos()));
    }
    Ok(out)
}

fn embedding_batch<S: Scalar>(lambdas: &[f64], freqs: &Array1<S>) -> Result<Array2<S>> {
    let t = freqs.len() * 2;
    let mut out = Array2::zeros((lambdas.len(), t));
    for (i, &l) in lambdas.iter().enumerate() {
        let e = fourier_noise_embedding(l, freqs)?;
        for (j, v) in e.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// FiLM: `scale(t) * h + shift(t)`, both maps affine in the embedding.
pub fn film<S: Scalar>(
    h: &Array2<S>,
    t_emb: &Array2<S>,
    params: &FilmParams<S>,
) -> Result<Array2<S>> {
    if h.nrows() != t_emb.nrows() {
        return Err(Error::Validation(format!(
            "film batch mismatch: {} rows vs {} embeddings",
            h.nrows(),
            t_emb.nrows()
        )));
    }
    if t_emb.ncols() != params.scale.w.nrows() || h.ncols() != params.scale.w.ncols() {
        return Err(Error::Validation("film dimension mismatch".into()));
    }
    let scale = t_emb.dot(&params.scale.w) + &params.scale.b;
    let shift = t_emb.dot(&params.shift.w) + &params.shift.b;
    Ok(&(&scale * h) + &shift)
}

fn layer_norm_forward<S: Scalar>(
    x: &Array2<S>,
    p: &LayerNormParams<S>,
) -> (Array2<S>, Array2<S>, Array1<S>) {
    let d = x.ncols();
    let mu = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mu.clone().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("rows");
    let inv_std = var.mapv(|v| S::one() / (v + S::of_f64(LN_EPS)).sqrt());
    let xhat = &centered * &inv_std.clone().insert_axis(Axis(1));
    let mut out = &xhat * &p.gamma;
    out += &p.beta;
    debug_assert_eq!(out.ncols(), d);
    (out, xhat, inv_std)
}

fn layer_norm_backward<S: Scalar>(
    dy: &Array2<S>,
    xhat: &Array2<S>,
    inv_std: &Array1<S>,
    p: &LayerNormParams<S>,
) -> (Array2<S>, Array1<S>, Array1<S>) {
    let dgamma = (dy * xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * &p.gamma;
    let m1 = dxhat.mean_axis(Axis(1)).expect("rows");
    let m2 = (&dxhat * xhat).mean_axis(Axis(1)).expect("rows");
    let dx = (&(&dxhat - &m1.insert_axis(Axis(1))) - &(xhat * &m2.insert_axis(Axis(1))))
        * &inv_std.clone().insert_axis(Axis(1));
    (dx, dgamma, dbeta)
}

fn gelu<S: Scalar>(y: S) -> S {
    let y = y.as_f64();
    let inner = GELU_C * (y + GELU_A * y * y * y);
    S::of_f64(0.5 * y * (1.0 + inner.tanh()))
}

fn gelu_grad<S: Scalar>(y: S) -> S {
    let y = y.as_f64();
    let inner = GELU_C * (y + GELU_A * y * y * y);
    let th = inner.tanh();
    let d = 0.5 * (1.0 + th) + 0.5 * y * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * y * y);
    S::of_f64(d)
}

struct BlockCache<S: Scalar> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
    ln_out: Array2<S>,
    act: Array2<S>,
    u: Array2<S>,
    scale: Array2<S>,
    f: Array2<S>,
}

struct HeadCache<S: Scalar> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
    pre: Array2<S>,
    act: Array2<S>,
}

/// Every intermediate needed to run `backward` after a cached forward.
pub struct ForwardCache<S: Scalar> {
    t_emb: Array2<S>,
    blocks: Vec<BlockCache<S>>,
    head: HeadCache<S>,
}

fn forward_impl<S: Scalar>(
    config: &ModelConfig,
    params: &ParamSet<S>,
    x: &Array2<S>,
    lambdas: &[f64],
    want_cache: bool,
) -> Result<(Array2<S>, Option<ForwardCache<S>>)> {
    if x.ncols() != config.input_dim {
        return Err(Error::Validation(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            config.input_dim
        )));
    }
    if lambdas.len() != x.nrows() {
        return Err(Error::Validation(format!(
            "{} lambda values for {} rows",
            lambdas.len(),
            x.nrows()
        )));
    }
    if params.blocks.len() != config.n_blocks {
        return Err(Error::Validation("parameter/config block mismatch".into()));
    }

    let t_emb = embedding_batch(lambdas, &params.fourier_freqs)?;
    let mut h = x.clone();
    let mut caches = Vec::with_capacity(config.n_blocks);

    for bp in &params.blocks {
        let (ln_out, xhat, inv_std) = layer_norm_forward(&h, &bp.norm);
        let act = ln_out.mapv(gelu);
        let u = act.dot(&bp.lin1.w) + &bp.lin1.b;
        let scale = t_emb.dot(&bp.film.scale.w) + &bp.film.scale.b;
        let shift = t_emb.dot(&bp.film.shift.w) + &bp.film.shift.b;
        let f = &(&scale * &u) + &shift;
        let v = f.dot(&bp.lin2.w) + &bp.lin2.b;
        h += &v;
        if want_cache {
            caches.push(BlockCache {
                xhat,
                inv_std,
                ln_out,
                act,
                u,
                scale,
                f,
            });
        }
    }

    let (pre, xhat, inv_std) = layer_norm_forward(&h, &params.head_norm);
    let slope = S::of_f64(config.leaky_slope);
    let act = pre.mapv(|v| if v > S::zero() { v } else { slope * v });
    let out = act.dot(&params.head.w) + &params.head.b;

    let cache = want_cache.then_some(ForwardCache {
        t_emb,
        blocks: caches,
        head: HeadCache {
            xhat,
            inv_std,
            pre,
            act,
        },
    });
    Ok((out, cache))
}

/// Run the network on a batch. Row i is conditioned on `lambdas[i]`.
pub fn forward<S: Scalar>(
    config: &ModelConfig,
    params: &ParamSet<S>,
    x: &Array2<S>,
    lambdas: &[f64],
) -> Result<Array2<S>> {
    forward_impl(config, params, x, lambdas, false).map(|(out, _)| out)
}

/// Forward pass that keeps the intermediates `backward` needs.
pub fn forward_cached<S: Scalar>(
    config: &ModelConfig,
    params: &ParamSet<S>,
    x: &Array2<S>,
    lambdas: &[f64],
) -> Result<(Array2<S>, ForwardCache<S>)> {
    forward_impl(config, params, x, lambdas, true).map(|(out, c)| (out, c.expect("cache")))
}

// ===========================================================================
// Backward
// ===========================================================================

/// Reverse-mode gradients of a scalar loss with respect to every
/// trainable parameter, given `d_out = dLoss/d(network output)` from the
/// loss layer. Returns a `ParamSet` of gradients (frozen frequencies stay
/// zero).
pub fn backward<S: Scalar>(
    config: &ModelConfig,
    params: &ParamSet<S>,
    cache: &ForwardCache<S>,
    d_out: &Array2<S>,
) -> Result<ParamSet<S>> {
    if cache.blocks.len() != params.blocks.len() {
        return Err(Error::Validation(
            "cache does not match parameters; run forward_cached first".into(),
        ));
    }
    if d_out.ncols() != config.input_dim || d_out.nrows() != cache.head.pre.nrows() {
        return Err(Error::Validation("d_out shape mismatch".into()));
    }
    let mut grads = params.zeros_like();

    // Head: linear -> leaky -> layer norm.
    let hc = &cache.head;
    grads.head.w = hc.act.t().dot(d_out);
    grads.head.b = d_out.sum_axis(Axis(0));
    let d_act = d_out.dot(&params.head.w.t());
    let slope = S::of_f64(config.leaky_slope);
    let d_pre = ndarray::Zip::from(&d_act)
        .and(&hc.pre)
        .map_collect(|&g, &p| if p > S::zero() { g } else { slope * g });
    let (mut d_h, dgamma, dbeta) =
        layer_norm_backward(&d_pre, &hc.xhat, &hc.inv_std, &params.head_norm);
    grads.head_norm.gamma = dgamma;
    grads.head_norm.beta = dbeta;

    // Blocks in reverse; each block adds its branch gradient to the
    // residual stream gradient d_h.
    for (bp, (bc, bg)) in params
        .blocks
        .iter()
        .zip(cache.blocks.iter().zip(&mut grads.blocks))
        .rev()
    {
        let d_v = &d_h;
        bg.lin2.w = bc.f.t().dot(d_v);
        bg.lin2.b = d_v.sum_axis(Axis(0));
        let d_f = d_v.dot(&bp.lin2.w.t());

        let d_scale = &d_f * &bc.u;
        let d_shift = d_f.clone();
        let d_u = &d_f * &bc.scale;
        bg.film.scale.w = cache.t_emb.t().dot(&d_scale);
        bg.film.scale.b = d_scale.sum_axis(Axis(0));
        bg.film.shift.w = cache.t_emb.t().dot(&d_shift);
        bg.film.shift.b = d_shift.sum_axis(Axis(0));

        bg.lin1.w = bc.act.t().dot(&d_u);
        bg.lin1.b = d_u.sum_axis(Axis(0));
        let d_act = d_u.dot(&bp.lin1.w.t());

        let d_ln = &d_act * &bc.ln_out.mapv(gelu_grad);
        let (d_branch_in, dgamma, dbeta) =
            layer_norm_backward(&d_ln, &bc.xhat, &bc.inv_std, &bp.norm);
        bg.norm.gamma = dgamma;
        bg.norm.beta = dbeta;

        d_h = &d_h + &d_branch_in;
    }

    Ok(grads)
}

// ===========================================================================
// Score parameterization
// ===========================================================================

/// Map one block of logit-noise estimates onto score space:
/// `s_j = -lambda + lambda * K * softmax(eps_hat)_j`. Components sum to 0.
pub fn score_from_epsilon(eps_hat_block: &[f64], lambda: f64) -> Vec<f64> {
    let k = eps_hat_block.len() as f64;
    softmax(eps_hat_block)
        .into_iter()
        .map(|p| -lambda + lambda * k * p)
        .collect()
}

/// Batched, schema-aware score map. Categorical blocks go through
/// `score_from_epsilon` (in f64); continuous dims pass through raw.
pub fn score_from_epsilon_batch<S: Scalar>(
    eps_hat: &Array2<S>,
    schema: &CategoricalSchema,
    lambdas: &[f64],
) -> Result<Array2<f64>> {
    if eps_hat.ncols() != schema.input_dim() {
        return Err(Error::Validation(format!(
            "network output width {} != schema input width {}",
            eps_hat.ncols(),
            schema.input_dim()
        )));
    }
    if lambdas.len() != eps_hat.nrows() {
        return Err(Error::Validation("lambda count != batch rows".into()));
    }
    let sizes = schema.block_sizes();
    let mut out = Array2::zeros((eps_hat.nrows(), eps_hat.ncols()));
    for (i, row) in eps_hat.outer_iter().enumerate() {
        let mut off = 0;
        for &k in &sizes {
            let block: Vec<f64> = row
                .slice(ndarray::s![off..off + k])
                .iter()
                .map(|&v| Scalar::as_f64(v))
                .collect();
            for (j, s) in score_from_epsilon(&block, lambdas[i]).into_iter().enumerate() {
                out[[i, off + j]] = s;
            }
            off += k;
        }
        for j in off..row.len() {
            out[[i, j]] = row[j].as_f64();
        }
    }
    Ok(out)
}

// ===========================================================================
// Tests
// ===========================================================================
