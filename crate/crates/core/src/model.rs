//! A from-scratch audio spectrogram transformer: overlapping patch
//! embedding, [CLS] token, trainable positional embeddings with
//! cut-and-bilinear resizing, a pre-norm encoder stack, and a softmax
//! classification head. Forward and backward passes are written out in
//! plain f64 so gradients can be verified against finite differences.

use std::path::Path;

use thiserror::Error;

use crate::features::Spectrogram;
use crate::rng::Rng;
use crate::weights::{self, Container, TensorEntry, WeightsError};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value produced at {stage}")]
    NonFinite { stage: String },

    #[error(transparent)]
    Weights(#[from] WeightsError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Transformer hyperparameters. `base()` is the standard 86M-parameter
/// base-model geometry; `toy()` is the desk-scale default used by the
/// tests and demos.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    pub stride: usize,
    pub classes: usize,
    pub mel_bins: usize,
    /// Time extent of the stored positional grid, in patches.
    pub max_time_patches: usize,
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            embed_dim: 64,
            layers: 2,
            heads: 4,
            mlp_ratio: 4,
            patch: 16,
            stride: 10,
            classes: 4,
            mel_bins: 128,
            max_time_patches: 59, // 6-second inputs
        }
    }

    pub fn base() -> Self {
        Self {
            embed_dim: 768,
            layers: 12,
            heads: 12,
            mlp_ratio: 4,
            patch: 16,
            stride: 10,
            classes: 4,
            mel_bins: 128,
            max_time_patches: 100, // 10-second inputs
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Argument(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.stride == 0 || self.patch < self.stride {
            return Err(ModelError::Argument(format!(
                "need patch >= stride >= 1, got {} / {}",
                self.patch, self.stride
            )));
        }
        if self.classes < 2 {
            return Err(ModelError::Argument("need at least 2 classes".into()));
        }
        if self.mel_bins < self.patch || self.max_time_patches == 0 {
            return Err(ModelError::Argument("patch grid would be empty".into()));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }

    /// Patch-grid height for this config's mel bins.
    pub fn freq_patches(&self) -> usize {
        (self.mel_bins - self.patch) / self.stride + 1
    }

    /// Patch-grid shape for an F x T spectrogram.
    pub fn grid_for(&self, mel_bins: usize, frames: usize) -> Result<(usize, usize)> {
        if mel_bins < self.patch || frames < self.patch {
            return Err(ModelError::Argument(format!(
                "spectrogram {mel_bins}x{frames} is smaller than one {}x{} patch",
                self.patch, self.patch
            )));
        }
        Ok((
            (mel_bins - self.patch) / self.stride + 1,
            (frames - self.patch) / self.stride + 1,
        ))
    }
}

/// One encoder block's learnable tensors. Linear weights are row-major with
/// one row per output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Vec<f64>,
    pub mlp_b2: Vec<f64>,
}

/// All learnable tensors. The positional grid is stored (pos_h, pos_w, D)
/// with the embedding dimension innermost and is resized to each input's
/// patch grid on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cls_token: Vec<f64>,
    pub cls_pos: Vec<f64>,
    pub pos_grid: Vec<f64>,
    pub pos_h: usize,
    pub pos_w: usize,
    pub patch_weight: Vec<f64>,
    pub patch_bias: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Vec<f64>,
    pub final_beta: Vec<f64>,
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl ModelParams {
    /// Standard ViT-style initialization: truncated normal (std 0.02) for
    /// projections and embeddings, ones for layernorm gains, zeros for
    /// biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut rng = Rng::new(seed);
        let mut tn =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.next_trunc_normal(0.02)).collect() };
        let pos_h = config.freq_patches();
        let pos_w = config.max_time_patches;
        let cls_token = tn(d);
        let cls_pos = tn(d);
        let pos_grid = tn(pos_h * pos_w * d);
        let patch_weight = tn(d * config.patch_dim());
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gamma: vec![1.0; d],
                ln1_beta: vec![0.0; d],
                wq: tn(d * d),
                bq: vec![0.0; d],
                wk: tn(d * d),
                bk: vec![0.0; d],
                wv: tn(d * d),
                bv: vec![0.0; d],
                wo: tn(d * d),
                bo: vec![0.0; d],
                ln2_gamma: vec![1.0; d],
                ln2_beta: vec![0.0; d],
                mlp_w1: tn(config.mlp_ratio * d * d),
                mlp_b1: vec![0.0; config.mlp_ratio * d],
                mlp_w2: tn(d * config.mlp_ratio * d),
                mlp_b2: vec![0.0; d],
            })
            .collect();
        let head_weight = tn(config.classes * d);
        Ok(Self {
            cls_token,
            cls_pos,
            pos_grid,
            pos_h,
            pos_w,
            patch_weight,
            patch_bias: vec![0.0; d],
            layers,
            final_gamma: vec![1.0; d],
            final_beta: vec![0.0; d],
            head_weight,
            head_bias: vec![0.0; config.classes],
        })
    }

    /// Same shapes, all values zero — the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Named tensors in a fixed order; this order defines optimizer
    /// traversal and the checkpoint layout.
    pub fn tensors(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out: Vec<(String, &Vec<f64>)> = vec![
            ("cls_token".into(), &self.cls_token),
            ("cls_pos".into(), &self.cls_pos),
            ("pos_grid".into(), &self.pos_grid),
            ("patch_weight".into(), &self.patch_weight),
            ("patch_bias".into(), &self.patch_bias),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (suffix, tensor) in layer.named() {
                out.push((format!("layers.{i}.{suffix}"), tensor));
            }
        }
        out.push(("final_gamma".into(), &self.final_gamma));
        out.push(("final_beta".into(), &self.final_beta));
        out.push(("head_weight".into(), &self.head_weight));
        out.push(("head_bias".into(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = vec![
            ("cls_token".into(), &mut self.cls_token),
            ("cls_pos".into(), &mut self.cls_pos),
            ("pos_grid".into(), &mut self.pos_grid),
            ("patch_weight".into(), &mut self.patch_weight),
            ("patch_bias".into(), &mut self.patch_bias),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (suffix, tensor) in layer.named_mut() {
                out.push((format!("layers.{i}.{suffix}"), tensor));
            }
        }
        out.push(("final_gamma".into(), &mut self.final_gamma));
        out.push(("final_beta".into(), &mut self.final_beta));
        out.push(("head_weight".into(), &mut self.head_weight));
        out.push(("head_bias".into(), &mut self.head_bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

impl LayerParams {
    fn named(&self) -> Vec<(&'static str, &Vec<f64>)> {
        vec![
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_gamma", &self.ln2_gamma),
            ("ln2_beta", &self.ln2_beta),
            ("mlp_w1", &self.mlp_w1),
            ("mlp_b1", &self.mlp_b1),
            ("mlp_w2", &self.mlp_w2),
            ("mlp_b2", &self.mlp_b2),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("ln1_gamma", &mut self.ln1_gamma),
            ("ln1_beta", &mut self.ln1_beta),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln2_gamma", &mut self.ln2_gamma),
            ("ln2_beta", &mut self.ln2_beta),
            ("mlp_w1", &mut self.mlp_w1),
            ("mlp_b1", &mut self.mlp_b1),
            ("mlp_w2", &mut self.mlp_w2),
            ("mlp_b2", &mut self.mlp_b2),
        ]
    }
}

/// Exact learnable-parameter count for a config, from the tensor layout.
pub fn count_params(config: &ModelConfig) -> usize {
    let d = config.embed_dim;
    let p = config.patch_dim();
    let r = config.mlp_ratio;
    let per_layer = 2 * d               // ln1
        + 4 * (d * d + d)               // q, k, v, o
        + 2 * d                         // ln2
        + (r * d * d + r * d)           // mlp in
        + (d * r * d + d); // mlp out
    2 * d                               // cls token + cls pos
        + config.freq_patches() * config.max_time_patches * d
        + d * p + d                     // patch projection
        + config.layers * per_layer
        + 2 * d                         // final layernorm
        + config.classes * d + config.classes
}

// ---------------------------------------------------------------------------
// Patch extraction and pretrained-weight adaptation
// ---------------------------------------------------------------------------

/// Cuts an F x T spectrogram into overlapping patch-size squares, flattened
/// frequency-major, in raster order over the (Hp, Wp) grid.
pub fn extract_patches(
    spec: &Spectrogram,
    config: &ModelConfig,
) -> Result<(Vec<f64>, usize, usize)> {
    let (hp, wp) = config.grid_for(spec.mel_bins(), spec.frames())?;
    let pd = config.patch_dim();
    let mut patches = vec![0.0; hp * wp * pd];
    for pi in 0..hp {
        for pj in 0..wp {
            let base = (pi * wp + pj) * pd;
            for r in 0..config.patch {
                for c in 0..config.patch {
                    patches[base + r * config.patch + c] =
                        spec.at(pi * config.stride + r, pj * config.stride + c);
                }
            }
        }
    }
    Ok((patches, hp, wp))
}

/// Per-axis corner-aligned sampling positions: target index `t` reads from
/// source coordinate `t * (S - 1) / (T - 1)`.
fn axis_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|t| {
            let u = if dst > 1 {
                t as f64 * (src - 1) as f64 / (dst - 1) as f64
            } else {
                0.0
            };
            let i0 = (u.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, u - i0 as f64)
        })
        .collect()
}

/// Cut-and-bilinear resize of an (H, W, D) positional grid. Equal shapes
/// return the grid unchanged; shrinking an axis is the same formula and
/// performs the cut. The [CLS] positional vector never passes through here.
pub fn resize_positional(
    grid: &[f64],
    src_h: usize,
    src_w: usize,
    dim: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f64> {
    assert_eq!(grid.len(), src_h * src_w * dim);
    if (src_h, src_w) == (dst_h, dst_w) {
        return grid.to_vec();
    }
    let rows = axis_positions(src_h, dst_h);
    let cols = axis_positions(src_w, dst_w);
    let mut out = vec![0.0; dst_h * dst_w * dim];
    for (th, &(h0, h1, fh)) in rows.iter().enumerate() {
        for (tw, &(w0, w1, fw)) in cols.iter().enumerate() {
            let dst = (th * dst_w + tw) * dim;
            let s00 = (h0 * src_w + w0) * dim;
            let s01 = (h0 * src_w + w1) * dim;
            let s10 = (h1 * src_w + w0) * dim;
            let s11 = (h1 * src_w + w1) * dim;
            for d in 0..dim {
                out[dst + d] = if fh == 0.0 && fw == 0.0 {
                    grid[s00 + d]
                } else {
                    (1.0 - fh) * ((1.0 - fw) * grid[s00 + d] + fw * grid[s01 + d])
                        + fh * ((1.0 - fw) * grid[s10 + d] + fw * grid[s11 + d])
                };
            }
        }
    }
    out
}

/// Adjoint of [`resize_positional`]: scatters target-grid gradients back to
/// the stored grid with the same bilinear weights. Source cells no target
/// cell reads from stay exactly zero.
fn resize_positional_backward(
    d_out: &[f64],
    src_h: usize,
    src_w: usize,
    dim: usize,
    dst_h: usize,
    dst_w: usize,
    d_grid: &mut [f64],
) {
    if (src_h, src_w) == (dst_h, dst_w) {
        for (g, d) in d_grid.iter_mut().zip(d_out) {
            *g += d;
        }
        return;
    }
    let rows = axis_positions(src_h, dst_h);
    let cols = axis_positions(src_w, dst_w);
    for (th, &(h0, h1, fh)) in rows.iter().enumerate() {
        for (tw, &(w0, w1, fw)) in cols.iter().enumerate() {
            let src = (th * dst_w + tw) * dim;
            let s00 = (h0 * src_w + w0) * dim;
            let s01 = (h0 * src_w + w1) * dim;
            let s10 = (h1 * src_w + w0) * dim;
            let s11 = (h1 * src_w + w1) * dim;
            for d in 0..dim {
                let g = d_out[src + d];
                if fh == 0.0 && fw == 0.0 {
                    d_grid[s00 + d] += g;
                } else {
                    d_grid[s00 + d] += (1.0 - fh) * (1.0 - fw) * g;
                    d_grid[s01 + d] += (1.0 - fh) * fw * g;
                    d_grid[s10 + d] += fh * (1.0 - fw) * g;
                    d_grid[s11 + d] += fh * fw * g;
                }
            }
        }
    }
}

/// Averages the three input channels of an RGB patch-projection weight
/// (rows of `3 * patch_dim`, channel-major) down to the single-channel
/// layout this model uses.
pub fn adapt_channels(rgb_weights: &[f64], embed_dim: usize, patch_dim: usize) -> Result<Vec<f64>> {
    if rgb_weights.len() != embed_dim * 3 * patch_dim {
        return Err(ModelError::Argument(format!(
            "expected {}x{} RGB weights, got {} values",
            embed_dim,
            3 * patch_dim,
            rgb_weights.len()
        )));
    }
    let mut out = vec![0.0; embed_dim * patch_dim];
    for d in 0..embed_dim {
        for p in 0..patch_dim {
            let row = d * 3 * patch_dim;
            out[d * patch_dim + p] = (rgb_weights[row + p]
                + rgb_weights[row + patch_dim + p]
                + rgb_weights[row + 2 * patch_dim + p])
                / 3.0;
        }
    }
    Ok(out)
}

/// Elementwise mean of two [CLS] token vectors (for sources that carry a
/// class token and a distillation token).
pub fn merge_dual_cls(cls_a: &[f64], cls_b: &[f64]) -> Result<Vec<f64>> {
    if cls_a.len() != cls_b.len() {
        return Err(ModelError::Argument(format!(
            "dimension mismatch: {} vs {}",
            cls_a.len(),
            cls_b.len()
        )));
    }
    Ok(cls_a
        .iter()
        .zip(cls_b)
        .map(|(a, b)| (a + b) / 2.0)
        .collect())
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// y[s] = W x[s] + b, with W row-major (rows = outputs).
fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * d_out];
    for s in 0..rows {
        let xs = &x[s * d_in..(s + 1) * d_in];
        let ys = &mut y[s * d_out..(s + 1) * d_out];
        for o in 0..d_out {
            let wr = &w[o * d_in..(o + 1) * d_in];
            let mut acc = b[o];
            for i in 0..d_in {
                acc += wr[i] * xs[i];
            }
            ys[o] = acc;
        }
    }
    y
}

/// Accumulates dW, db, and dx for [`linear`].
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    d_in: usize,
    d_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    for s in 0..rows {
        let xs = &x[s * d_in..(s + 1) * d_in];
        let dys = &dy[s * d_out..(s + 1) * d_out];
        let dxs = &mut dx[s * d_in..(s + 1) * d_in];
        for o in 0..d_out {
            let g = dys[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wr = &w[o * d_in..(o + 1) * d_in];
            let dwr = &mut dw[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                dwr[i] += g * xs[i];
                dxs[i] += g * wr[i];
            }
        }
    }
}

struct LnTrace {
    out: Vec<f64>,
    mean: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], rows: usize, dim: usize) -> LnTrace {
    let mut out = vec![0.0; rows * dim];
    let mut mean = vec![0.0; rows];
    let mut rstd = vec![0.0; rows];
    for s in 0..rows {
        let xs = &x[s * dim..(s + 1) * dim];
        let mu = xs.iter().sum::<f64>() / dim as f64;
        let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / dim as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        mean[s] = mu;
        rstd[s] = r;
        let os = &mut out[s * dim..(s + 1) * dim];
        for d in 0..dim {
            os[d] = (xs[d] - mu) * r * gamma[d] + beta[d];
        }
    }
    LnTrace { out, mean, rstd }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    x: &[f64],
    gamma: &[f64],
    trace: &LnTrace,
    dy: &[f64],
    rows: usize,
    dim: usize,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
    dx: &mut [f64],
) {
    for s in 0..rows {
        let xs = &x[s * dim..(s + 1) * dim];
        let dys = &dy[s * dim..(s + 1) * dim];
        let (mu, r) = (trace.mean[s], trace.rstd[s]);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for d in 0..dim {
            let xhat = (xs[d] - mu) * r;
            let dxhat = dys[d] * gamma[d];
            d_gamma[d] += dys[d] * xhat;
            d_beta[d] += dys[d];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let inv_dim = 1.0 / dim as f64;
        let dxs = &mut dx[s * dim..(s + 1) * dim];
        for d in 0..dim {
            let xhat = (xs[d] - mu) * r;
            let dxhat = dys[d] * gamma[d];
            dxs[d] += r * (dxhat - inv_dim * sum_dxhat - xhat * inv_dim * sum_dxhat_xhat);
        }
    }
}

// tanh approximation of GELU, used consistently forward and backward
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

struct LayerTrace {
    x_in: Vec<f64>,
    ln1: LnTrace,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads x S x S attention rows, each a probability distribution
    attn: Vec<f64>,
    ctx: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: LnTrace,
    mlp_pre: Vec<f64>,
    mlp_act: Vec<f64>,
}

struct ForwardTrace {
    hp: usize,
    wp: usize,
    tokens: usize,
    patches: Vec<f64>,
    layers: Vec<LayerTrace>,
    final_ln: LnTrace,
    x_last: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

/// Class scores for one spectrogram.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn check_finite(values: &[f64], stage: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite {
            stage: stage.into(),
        });
    }
    Ok(())
}

fn run_forward(
    spec: &Spectrogram,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardTrace> {
    config.validate()?;
    let d = config.embed_dim;
    let heads = config.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (patches, hp, wp) = extract_patches(spec, config)?;
    let n_patches = hp * wp;
    let tokens = n_patches + 1;

    let pos = resize_positional(&params.pos_grid, params.pos_h, params.pos_w, d, hp, wp);
    let proj = linear(
        &patches,
        &params.patch_weight,
        &params.patch_bias,
        n_patches,
        config.patch_dim(),
        d,
    );

    let mut x = vec![0.0; tokens * d];
    for ((slot, c), p) in x.iter_mut().zip(&params.cls_token).zip(&params.cls_pos) {
        *slot = c + p;
    }
    for i in 0..n_patches {
        for j in 0..d {
            x[(i + 1) * d + j] = proj[i * d + j] + pos[i * d + j];
        }
    }
    check_finite(&x, "embedding")?;

    let mut layer_traces = Vec::with_capacity(config.layers);
    for (li, layer) in params.layers.iter().enumerate() {
        let x_in = x.clone();
        let ln1 = layer_norm(&x_in, &layer.ln1_gamma, &layer.ln1_beta, tokens, d);
        let q = linear(&ln1.out, &layer.wq, &layer.bq, tokens, d, d);
        let k = linear(&ln1.out, &layer.wk, &layer.bk, tokens, d, d);
        let v = linear(&ln1.out, &layer.wv, &layer.bv, tokens, d, d);

        let mut attn = vec![0.0; heads * tokens * tokens];
        let mut ctx = vec![0.0; tokens * d];
        for h in 0..heads {
            let off = h * dh;
            for s in 0..tokens {
                let row = &mut attn[(h * tokens + s) * tokens..(h * tokens + s + 1) * tokens];
                let qs = &q[s * d + off..s * d + off + dh];
                for (t, rt) in row.iter_mut().enumerate() {
                    let kt = &k[t * d + off..t * d + off + dh];
                    *rt = qs.iter().zip(kt).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(row);
                let cs = &mut ctx[s * d + off..s * d + off + dh];
                for (t, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let vt = &v[t * d + off..t * d + off + dh];
                    for j in 0..dh {
                        cs[j] += w * vt[j];
                    }
                }
            }
        }

        let attn_out = linear(&ctx, &layer.wo, &layer.bo, tokens, d, d);
        let mut x_mid = x_in.clone();
        for (xm, a) in x_mid.iter_mut().zip(&attn_out) {
            *xm += a;
        }

        let ln2 = layer_norm(&x_mid, &layer.ln2_gamma, &layer.ln2_beta, tokens, d);
        let rd = config.mlp_ratio * d;
        let mlp_pre = linear(&ln2.out, &layer.mlp_w1, &layer.mlp_b1, tokens, d, rd);
        let mlp_act: Vec<f64> = mlp_pre.iter().map(|&v| gelu(v)).collect();
        let mlp_out = linear(&mlp_act, &layer.mlp_w2, &layer.mlp_b2, tokens, rd, d);

        x = x_mid.clone();
        for (xo, m) in x.iter_mut().zip(&mlp_out) {
            *xo += m;
        }
        check_finite(&x, &format!("encoder block {li}"))?;

        layer_traces.push(LayerTrace {
            x_in,
            ln1,
            q,
            k,
            v,
            attn,
            ctx,
            x_mid,
            ln2,
            mlp_pre,
            mlp_act,
        });
    }

    let final_ln = layer_norm(&x, &params.final_gamma, &params.final_beta, tokens, d);
    let logits = linear(
        &final_ln.out[..d],
        &params.head_weight,
        &params.head_bias,
        1,
        d,
        config.classes,
    );
    check_finite(&logits, "classification head")?;
    let mut probs = logits.clone();
    softmax_in_place(&mut probs);

    Ok(ForwardTrace {
        hp,
        wp,
        tokens,
        patches,
        layers: layer_traces,
        final_ln,
        x_last: x,
        logits,
        probs,
    })
}

/// Runs the encoder and classification head on one spectrogram.
pub fn forward(
    spec: &Spectrogram,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    let trace = run_forward(spec, params, config)?;
    Ok(ForwardOutput {
        logits: trace.logits,
        probs: trace.probs,
    })
}

/// One example's loss and gradients.
#[derive(Debug)]
pub struct BackwardOutput {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grads: ModelParams,
}

/// Cross-entropy backward pass through the whole network. Gradient tensors
/// mirror the parameter shapes exactly.
pub fn backward(
    spec: &Spectrogram,
    label: usize,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<BackwardOutput> {
    if label >= config.classes {
        return Err(ModelError::Argument(format!(
            "label {label} out of range for {} classes",
            config.classes
        )));
    }
    let trace = run_forward(spec, params, config)?;
    let d = config.embed_dim;
    let heads = config.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let tokens = trace.tokens;
    let n_patches = trace.hp * trace.wp;

    let mut grads = params.zeros_like();
    let loss = -trace.probs[label].max(1e-300).ln();

    // softmax + cross-entropy
    let mut d_logits = trace.probs.clone();
    d_logits[label] -= 1.0;

    // head (reads the [CLS] row of the final layernorm)
    let mut d_final_out = vec![0.0; tokens * d];
    linear_backward(
        &trace.final_ln.out[..d],
        &params.head_weight,
        &d_logits,
        1,
        d,
        config.classes,
        &mut grads.head_weight,
        &mut grads.head_bias,
        &mut d_final_out[..d],
    );

    let mut dx = vec![0.0; tokens * d];
    layer_norm_backward(
        &trace.x_last,
        &params.final_gamma,
        &trace.final_ln,
        &d_final_out,
        tokens,
        d,
        &mut grads.final_gamma,
        &mut grads.final_beta,
        &mut dx,
    );

    for (li, layer_trace) in trace.layers.iter().enumerate().rev() {
        let layer = &params.layers[li];
        let g = &mut grads.layers[li];
        let rd = config.mlp_ratio * d;

        // MLP branch: dx holds the gradient at x_out = x_mid + mlp_out
        let d_mlp_out = dx.clone();
        let mut d_mlp_act = vec![0.0; tokens * rd];
        linear_backward(
            &layer_trace.mlp_act,
            &layer.mlp_w2,
            &d_mlp_out,
            tokens,
            rd,
            d,
            &mut g.mlp_w2,
            &mut g.mlp_b2,
            &mut d_mlp_act,
        );
        let d_mlp_pre: Vec<f64> = d_mlp_act
            .iter()
            .zip(&layer_trace.mlp_pre)
            .map(|(dg, &pre)| dg * gelu_grad(pre))
            .collect();
        let mut d_ln2_out = vec![0.0; tokens * d];
        linear_backward(
            &layer_trace.ln2.out,
            &layer.mlp_w1,
            &d_mlp_pre,
            tokens,
            d,
            rd,
            &mut g.mlp_w1,
            &mut g.mlp_b1,
            &mut d_ln2_out,
        );
        // residual: the skip path plus the LN2 path
        let mut d_x_mid = dx.clone();
        layer_norm_backward(
            &layer_trace.x_mid,
            &layer.ln2_gamma,
            &layer_trace.ln2,
            &d_ln2_out,
            tokens,
            d,
            &mut g.ln2_gamma,
            &mut g.ln2_beta,
            &mut d_x_mid,
        );

        // attention branch: x_mid = x_in + attn_out
        let d_attn_out = d_x_mid.clone();
        let mut d_ctx = vec![0.0; tokens * d];
        linear_backward(
            &layer_trace.ctx,
            &layer.wo,
            &d_attn_out,
            tokens,
            d,
            d,
            &mut g.wo,
            &mut g.bo,
            &mut d_ctx,
        );

        let mut dq = vec![0.0; tokens * d];
        let mut dk = vec![0.0; tokens * d];
        let mut dv = vec![0.0; tokens * d];
        for h in 0..heads {
            let off = h * dh;
            for s in 0..tokens {
                let row =
                    &layer_trace.attn[(h * tokens + s) * tokens..(h * tokens + s + 1) * tokens];
                let d_cs = &d_ctx[s * d + off..s * d + off + dh];
                // dA[t] = d_ctx . v_t ; dV_t += A[t] * d_ctx
                let mut d_row = vec![0.0; tokens];
                for (t, dr) in d_row.iter_mut().enumerate() {
                    let vt = &layer_trace.v[t * d + off..t * d + off + dh];
                    let a = row[t];
                    let mut acc = 0.0;
                    for j in 0..dh {
                        acc += d_cs[j] * vt[j];
                        dv[t * d + off + j] += a * d_cs[j];
                    }
                    *dr = acc;
                }
                // softmax backward within the row
                let dot: f64 = d_row.iter().zip(row).map(|(dr, a)| dr * a).sum();
                let qs = &layer_trace.q[s * d + off..s * d + off + dh];
                for t in 0..tokens {
                    let ds = row[t] * (d_row[t] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kt = &layer_trace.k[t * d + off..t * d + off + dh];
                    for j in 0..dh {
                        dq[s * d + off + j] += ds * kt[j];
                        dk[t * d + off + j] += ds * qs[j];
                    }
                }
            }
        }

        let mut d_ln1_out = vec![0.0; tokens * d];
        linear_backward(
            &layer_trace.ln1.out,
            &layer.wq,
            &dq,
            tokens,
            d,
            d,
            &mut g.wq,
            &mut g.bq,
            &mut d_ln1_out,
        );
        linear_backward(
            &layer_trace.ln1.out,
            &layer.wk,
            &dk,
            tokens,
            d,
            d,
            &mut g.wk,
            &mut g.bk,
            &mut d_ln1_out,
        );
        linear_backward(
            &layer_trace.ln1.out,
            &layer.wv,
            &dv,
            tokens,
            d,
            d,
            &mut g.wv,
            &mut g.bv,
            &mut d_ln1_out,
        );

        let mut d_x_in = d_x_mid.clone();
        layer_norm_backward(
            &layer_trace.x_in,
            &layer.ln1_gamma,
            &layer_trace.ln1,
            &d_ln1_out,
            tokens,
            d,
            &mut g.ln1_gamma,
            &mut g.ln1_beta,
            &mut d_x_in,
        );
        dx = d_x_in;
    }

    // embedding: token 0 feeds the cls token and its positional vector
    for ((ct, cp), g) in grads
        .cls_token
        .iter_mut()
        .zip(grads.cls_pos.iter_mut())
        .zip(&dx[..d])
    {
        *ct += g;
        *cp += g;
    }
    // patch tokens split into the projection and the resized positions
    let d_patch_tokens = &dx[d..];
    let mut d_patches = vec![0.0; n_patches * config.patch_dim()];
    linear_backward(
        &trace.patches,
        &params.patch_weight,
        d_patch_tokens,
        n_patches,
        config.patch_dim(),
        d,
        &mut grads.patch_weight,
        &mut grads.patch_bias,
        &mut d_patches,
    );
    resize_positional_backward(
        d_patch_tokens,
        params.pos_h,
        params.pos_w,
        d,
        trace.hp,
        trace.wp,
        &mut grads.pos_grid,
    );

    Ok(BackwardOutput {
        loss,
        probs: trace.probs,
        grads,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints and pretrained import
// ---------------------------------------------------------------------------

fn tensor_shape(name: &str, len: usize, params: &ModelParams, config: &ModelConfig) -> Vec<usize> {
    let d = config.embed_dim;
    if name == "pos_grid" {
        return vec![params.pos_h, params.pos_w, d];
    }
    if name == "patch_weight" {
        return vec![d, config.patch_dim()];
    }
    if name == "head_weight" {
        return vec![config.classes, d];
    }
    if name.ends_with(".mlp_w1") {
        return vec![config.mlp_ratio * d, d];
    }
    if name.ends_with(".mlp_w2") {
        return vec![d, config.mlp_ratio * d];
    }
    if name.ends_with(".wq")
        || name.ends_with(".wk")
        || name.ends_with(".wv")
        || name.ends_with(".wo")
    {
        return vec![d, d];
    }
    vec![len]
}

/// Writes all parameters into a named-tensor container.
pub fn save_params(
    params: &ModelParams,
    config: &ModelConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let entries = params
        .tensors()
        .into_iter()
        .map(|(name, data)| {
            let shape = tensor_shape(&name, data.len(), params, config);
            TensorEntry::new(name, shape, data.clone())
        })
        .collect();
    weights::save(&Container { entries }, path)?;
    Ok(())
}

/// Loads a checkpoint written by [`save_params`], validating every shape
/// against the config. The positional grid's stored extent is recovered
/// from its shape.
pub fn load_params(config: &ModelConfig, path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let container = weights::load(path)?;
    let mut params = ModelParams::init(config, 0)?;

    let pos = container.require(path, "pos_grid")?;
    if pos.shape.len() != 3 || pos.shape[2] != config.embed_dim {
        return Err(ModelError::Weights(WeightsError::Shape {
            name: "pos_grid".into(),
            got: pos.shape.clone(),
            expected: vec![params.pos_h, params.pos_w, config.embed_dim],
        }));
    }
    params.pos_h = pos.shape[0];
    params.pos_w = pos.shape[1];
    params.pos_grid = vec![0.0; pos.shape.iter().product()];

    for (name, tensor) in params.tensors_mut() {
        let entry = container.require(path, &name)?;
        if entry.data.len() != tensor.len() {
            return Err(ModelError::Weights(WeightsError::Shape {
                name,
                got: entry.shape.clone(),
                expected: vec![tensor.len()],
            }));
        }
        tensor.copy_from_slice(&entry.data);
    }
    Ok(params)
}

/// Builds model parameters from an external vision-transformer container:
/// RGB patch weights are channel-averaged, dual [CLS]/distillation tokens
/// merged, the positional grid cut-and-bilinear resized to this config's
/// grid, and the classification head freshly initialized (the source head
/// is discarded).
pub fn import_pretrained(
    config: &ModelConfig,
    container: &Container,
    path: &Path,
    seed: u64,
) -> Result<ModelParams> {
    let mut params = ModelParams::init(config, seed)?;
    let d = config.embed_dim;

    let rgb = container.require(path, "patch_weight_rgb")?;
    params.patch_weight = adapt_channels(&rgb.data, d, config.patch_dim())?;
    if let Some(bias) = container.get("patch_bias") {
        params.patch_bias.copy_from_slice(&bias.data);
    }

    let cls = container.require(path, "cls_token")?;
    params.cls_token = if let Some(dist) = container.get("dist_token") {
        merge_dual_cls(&cls.data, &dist.data)?
    } else {
        cls.data.clone()
    };

    let pos = container.require(path, "pos_grid")?;
    if pos.shape.len() != 3 || pos.shape[2] != d {
        return Err(ModelError::Weights(WeightsError::Shape {
            name: "pos_grid".into(),
            got: pos.shape.clone(),
            expected: vec![0, 0, d],
        }));
    }
    params.pos_grid = resize_positional(
        &pos.data,
        pos.shape[0],
        pos.shape[1],
        d,
        params.pos_h,
        params.pos_w,
    );
    // the [CLS] positional vector is reused unchanged
    let cls_pos = container.require(path, "cls_pos")?;
    params.cls_pos = cls_pos.data.clone();

    for (name, tensor) in params.tensors_mut() {
        if name.starts_with("layers.") || name == "final_gamma" || name == "final_beta" {
            if let Some(entry) = container.get(&name) {
                if entry.data.len() != tensor.len() {
                    return Err(ModelError::Weights(WeightsError::Shape {
                        name,
                        got: entry.shape.clone(),
                        expected: vec![tensor.len()],
                    }));
                }
                tensor.copy_from_slice(&entry.data);
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_config() -> ModelConfig {
        ModelConfig::toy()
    }

    fn random_spec(mel_bins: usize, frames: usize, seed: u64) -> Spectrogram {
        let mut rng = Rng::new(seed);
        let values = (0..mel_bins * frames)
            .map(|_| rng.next_f64() * 2.0 - 1.0)
            .collect();
        Spectrogram::new(values, mel_bins, frames, true)
    }

    #[test]
    fn patch_grid_shapes() {
        let config = toy_config();
        assert_eq!(config.freq_patches(), 12);
        assert_eq!(config.grid_for(128, 16).unwrap(), (12, 1));
        assert_eq!(config.grid_for(128, 598).unwrap(), (12, 59));
        assert!(config.grid_for(8, 8).is_err());
    }

    #[test]
    fn patch_sequence_layout() {
        // tiny geometry so the raster order is easy to enumerate
        let config = ModelConfig {
            embed_dim: 8,
            layers: 1,
            heads: 2,
            mlp_ratio: 4,
            patch: 2,
            stride: 1,
            classes: 4,
            mel_bins: 3,
            max_time_patches: 2,
        };
        // 3x3 spectrogram with value = 10*bin + frame
        let values: Vec<f64> = (0..3)
            .flat_map(|b| (0..3).map(move |f| (10 * b + f) as f64))
            .collect();
        let spec = Spectrogram::new(values, 3, 3, true);
        let (patches, hp, wp) = extract_patches(&spec, &config).unwrap();
        assert_eq!((hp, wp), (2, 2));
        // first patch: rows 0..2, cols 0..2, frequency-major
        assert_eq!(&patches[0..4], &[0.0, 1.0, 10.0, 11.0]);
        // second patch in raster order shifts one frame
        assert_eq!(&patches[4..8], &[1.0, 2.0, 11.0, 12.0]);
        // third patch starts the next frequency row
        assert_eq!(&patches[8..12], &[10.0, 11.0, 20.0, 21.0]);
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let mut rng = Rng::new(4);
        let grid: Vec<f64> = (0..12 * 100 * 3).map(|_| rng.next_gaussian()).collect();
        let out = resize_positional(&grid, 12, 100, 3, 12, 100);
        assert_eq!(out, grid);
    }

    #[test]
    fn resize_one_dimensional_cases() {
        // [0, 1] stretched to length 3 -> [0, 0.5, 1]
        let out = resize_positional(&[0.0, 1.0], 1, 2, 1, 1, 3);
        assert_eq!(out, vec![0.0, 0.5, 1.0]);

        // rows [[0,0],[1,1]] to 3 rows: middle row interpolates to 0.5
        let out = resize_positional(&[0.0, 0.0, 1.0, 1.0], 2, 2, 1, 3, 2);
        assert_eq!(out, vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn resize_cut_keeps_corners() {
        let grid: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let out = resize_positional(&grid, 1, 5, 1, 1, 2);
        assert_eq!(out, vec![0.0, 4.0]);
    }

    #[test]
    fn adapt_channels_averages() {
        let d = 2;
        let pd = 3;
        // row 0: channels are (1,2,3) at every position; row 1: (0.3, 0, 0)
        let mut rgb = Vec::new();
        for c in 1..=3 {
            rgb.extend(std::iter::repeat_n(c as f64, pd));
        }
        rgb.extend([0.3, 0.3, 0.3]);
        rgb.extend(std::iter::repeat_n(0.0, 2 * pd));
        let out = adapt_channels(&rgb, d, pd).unwrap();
        assert_eq!(&out[..pd], &[2.0, 2.0, 2.0]);
        for v in &out[pd..] {
            assert_relative_eq!(*v, 0.1, epsilon = 1e-15);
        }
        assert!(adapt_channels(&rgb[1..], d, pd).is_err());

        // identical channels pass through unchanged
        let w = [0.5, -0.25, 0.125];
        let mut rgb = Vec::new();
        for _ in 0..3 {
            rgb.extend_from_slice(&w);
        }
        assert_eq!(adapt_channels(&rgb, 1, 3).unwrap(), w.to_vec());
    }

    #[test]
    fn merge_dual_cls_means() {
        assert_eq!(merge_dual_cls(&[1.0], &[1.0]).unwrap(), vec![1.0]);
        assert_eq!(
            merge_dual_cls(&[0.0, 2.0], &[2.0, 0.0]).unwrap(),
            vec![1.0, 1.0]
        );
        let mut rng = Rng::new(8);
        let a: Vec<f64> = (0..16).map(|_| rng.next_gaussian()).collect();
        let b: Vec<f64> = (0..16).map(|_| rng.next_gaussian()).collect();
        let m = merge_dual_cls(&a, &b).unwrap();
        for i in 0..16 {
            assert_relative_eq!(m[i], (a[i] + b[i]) / 2.0);
        }
        assert!(merge_dual_cls(&a, &b[..8]).is_err());
    }

    #[test]
    fn degenerate_network_reproduces_head_bias() {
        let config = toy_config();
        let mut params = ModelParams::init(&config, 7).unwrap();
        for (name, tensor) in params.tensors_mut() {
            if name == "head_bias" {
                tensor.copy_from_slice(&[0.4, -0.2, 0.9, 0.1]);
            } else if name.ends_with("gamma") {
                // keep layernorm gains at 1 so the pass stays well-defined
                tensor.iter_mut().for_each(|v| *v = 1.0);
            } else {
                tensor.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let spec = random_spec(128, 26, 3);
        let out = forward(&spec, &params, &config).unwrap();
        let mut expected = vec![0.4, -0.2, 0.9, 0.1];
        softmax_in_place(&mut expected);
        for (p, e) in out.probs.iter().zip(&expected) {
            assert_relative_eq!(p, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_properties() {
        let mut row = vec![0.0, 0.0, 0.0, 0.0];
        softmax_in_place(&mut row);
        assert_eq!(row, vec![0.25; 4]);

        let mut a = vec![0.3, -1.2, 2.0, 0.7];
        let mut b: Vec<f64> = a.iter().map(|v| v + 17.5).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_relative_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let config = toy_config();
        let params = ModelParams::init(&config, 11).unwrap();
        let spec = random_spec(128, 36, 5);
        let a = forward(&spec, &params, &config).unwrap();
        let b = forward(&spec, &params, &config).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_relative_eq!(a.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let config = toy_config();
        let params = ModelParams::init(&config, 13).unwrap();
        let spec = random_spec(128, 26, 9);
        let trace = run_forward(&spec, &params, &config).unwrap();
        for layer in &trace.layers {
            for row in layer.attn.chunks(trace.tokens) {
                assert!(row.iter().all(|&w| w >= 0.0));
                assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn nonfinite_input_is_reported() {
        let config = toy_config();
        let params = ModelParams::init(&config, 1).unwrap();
        let mut values = vec![0.0; 128 * 26];
        values[0] = f64::NAN;
        let spec = Spectrogram::new(values, 128, 26, true);
        assert!(matches!(
            forward(&spec, &params, &config),
            Err(ModelError::NonFinite { .. })
        ));
    }

    #[test]
    fn count_params_matches_enumeration_and_head_delta() {
        let config = toy_config();
        let params = ModelParams::init(&config, 2).unwrap();
        assert_eq!(count_params(&config), params.param_count());

        // head swap at base scale: 527 -> 4 classes removes 402,187 params
        let wide = ModelConfig {
            classes: 527,
            ..ModelConfig::base()
        };
        let narrow = ModelConfig::base();
        assert_eq!(count_params(&wide) - count_params(&narrow), 402_187);
        // 4-class head contribution at D=768
        assert_eq!(narrow.classes * narrow.embed_dim + narrow.classes, 3_076);
    }

    #[test]
    fn softmax_cross_entropy_identity() {
        // d loss / d logit_k == prob_k - [k == label], checked through the
        // head bias (d logits / d bias = I)
        let config = toy_config();
        let params = ModelParams::init(&config, 21).unwrap();
        let spec = random_spec(128, 26, 22);
        let out = backward(&spec, 2, &params, &config).unwrap();
        let fwd = forward(&spec, &params, &config).unwrap();
        for k in 0..config.classes {
            let expected = fwd.probs[k] - if k == 2 { 1.0 } else { 0.0 };
            assert_relative_eq!(out.grads.head_bias[k], expected, epsilon = 1e-12);
        }
        assert_relative_eq!(out.loss, -fwd.probs[2].ln(), epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // small dims keep each forward cheap; the full toy-config check
        // lives in the acceptance suite
        let config = ModelConfig {
            embed_dim: 16,
            layers: 2,
            heads: 2,
            mlp_ratio: 4,
            patch: 16,
            stride: 10,
            classes: 4,
            mel_bins: 26,
            max_time_patches: 4,
        };
        let params = ModelParams::init(&config, 31).unwrap();
        let spec = random_spec(26, 26, 32);
        let label = 1;
        let analytic = backward(&spec, label, &params, &config).unwrap().grads;

        let mut rng = Rng::new(33);
        let names: Vec<String> = params.tensors().iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let len = params
                .tensors()
                .iter()
                .find(|(n, _)| *n == name)
                .unwrap()
                .1
                .len();
            for _ in 0..6.min(len) {
                let idx = rng.next_below(len as u64) as usize;
                let eps = 1e-5;
                let mut plus = params.clone();
                plus.tensors_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1[idx] += eps;
                let mut minus = params.clone();
                minus
                    .tensors_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1[idx] -= eps;
                let lp = backward(&spec, label, &plus, &config).unwrap().loss;
                let lm = backward(&spec, label, &minus, &config).unwrap().loss;
                let numeric = (lp - lm) / (2.0 * eps);
                let a = analytic
                    .tensors()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1[idx];
                let scale = a.abs().max(numeric.abs());
                if scale > 1e-7 {
                    assert!(
                        (a - numeric).abs() / scale < 1e-4,
                        "{name}[{idx}]: analytic {a} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn positional_rows_outside_cut_get_zero_gradient() {
        // stored grid 12 x 8, input grid 12 x 2: corner-aligned sampling at
        // width 2 touches only source columns 0 and 7
        let config = ModelConfig {
            embed_dim: 16,
            layers: 1,
            heads: 2,
            mlp_ratio: 4,
            patch: 16,
            stride: 10,
            classes: 4,
            mel_bins: 128,
            max_time_patches: 8,
        };
        let params = ModelParams::init(&config, 41).unwrap();
        let spec = random_spec(128, 26, 42); // wp = 2
        let out = backward(&spec, 0, &params, &config).unwrap();
        let d = config.embed_dim;
        let (pos_h, pos_w) = (params.pos_h, params.pos_w);
        assert_eq!((pos_h, pos_w), (12, 8));
        let mut touched_any = false;
        for h in 0..pos_h {
            for w in 0..pos_w {
                let cell = &out.grads.pos_grid[(h * pos_w + w) * d..(h * pos_w + w + 1) * d];
                if w == 0 || w == pos_w - 1 {
                    touched_any |= cell.iter().any(|&v| v != 0.0);
                } else {
                    assert!(cell.iter().all(|&v| v == 0.0), "column {w} should be cut");
                }
            }
        }
        assert!(touched_any);
    }

    #[test]
    fn checkpoint_round_trip() {
        let config = toy_config();
        let params = ModelParams::init(&config, 51).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_params(&params, &config, f.path()).unwrap();
        let back = load_params(&config, f.path()).unwrap();
        assert_eq!(back.pos_h, params.pos_h);
        assert_eq!(back.pos_w, params.pos_w);
        // values survive modulo the f32 storage precision
        for ((_, a), (_, b)) in params.tensors().iter().zip(back.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_relative_eq!(*x, *y, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn import_pretrained_adapts_all_pieces() {
        let config = ModelConfig {
            embed_dim: 8,
            layers: 1,
            heads: 2,
            mlp_ratio: 4,
            patch: 16,
            stride: 10,
            classes: 4,
            mel_bins: 128,
            max_time_patches: 3,
        };
        let d = config.embed_dim;
        let pd = config.patch_dim();
        let mut rng = Rng::new(61);
        let mut gen = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.next_below(100) as f64) / 100.0)
                .collect()
        };
        let rgb = gen(d * 3 * pd);
        let cls = gen(d);
        let dist = gen(d);
        let cls_pos = gen(d);
        // source positional grid 24 x 24 like an image model
        let pos = gen(24 * 24 * d);
        let container = Container {
            entries: vec![
                TensorEntry::new("patch_weight_rgb", vec![d, 3 * pd], rgb.clone()),
                TensorEntry::new("cls_token", vec![d], cls.clone()),
                TensorEntry::new("dist_token", vec![d], dist.clone()),
                TensorEntry::new("cls_pos", vec![d], cls_pos.clone()),
                TensorEntry::new("pos_grid", vec![24, 24, d], pos.clone()),
            ],
        };
        let params = import_pretrained(&config, &container, Path::new("synthetic"), 62).unwrap();
        assert_eq!(params.patch_weight, adapt_channels(&rgb, d, pd).unwrap());
        assert_eq!(params.cls_token, merge_dual_cls(&cls, &dist).unwrap());
        assert_eq!(params.cls_pos, cls_pos);
        assert_eq!(
            params.pos_grid,
            resize_positional(&pos, 24, 24, d, params.pos_h, params.pos_w)
        );
    }
}
