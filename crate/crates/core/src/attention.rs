//! Scaled dot-product attention, multi-head attention, and Gumbel-Attention.
//!
//! Gumbel-Attention replaces the softmax over keys with an independent
//! Gumbel-Sigmoid gate per (text position, image region) pair. The gated
//! values are summed without renormalization, so a row of closed gates yields
//! a zero vector.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gumbel::{gumbel_sigmoid, GateMode, NoiseSource, Temperature};
use crate::tensor::Tensor;

/// Query/key/value projections of one head.
#[derive(Debug, Clone, Copy)]
pub struct HeadProjections {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// Per-head projections plus the output projection `W^O`.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub heads: Vec<HeadProjections>,
    pub wo: Var,
}

impl AttentionWeights {
    /// Checks that the heads tile `d_model` exactly and returns
    /// `(d_head, d_model)`.
    pub fn dims(&self, tape: &Tape<'_>) -> Result<(usize, usize)> {
        let h = self.heads.len();
        if h == 0 {
            return Err(Error::invalid("attention", "at least one head is required"));
        }
        let d_head = tape.shape(self.heads[0].wq).get(1).copied().unwrap_or(0);
        for head in &self.heads {
            for w in [head.wq, head.wk, head.wv] {
                if tape.shape(w).len() != 2 || tape.shape(w)[1] != d_head {
                    return Err(Error::shape(
                        "attention head",
                        tape.shape(self.heads[0].wq),
                        tape.shape(w),
                    ));
                }
            }
        }
        let wo = tape.shape(self.wo);
        if wo.len() != 2 || wo[0] != h * d_head {
            return Err(Error::shape("attention output", &[h * d_head], wo));
        }
        let d_model = wo[1];
        if h * d_head != d_model {
            return Err(Error::invalid(
                "attention",
                format!("{h} heads do not divide d_model = {d_model}"),
            ));
        }
        Ok((d_head, d_model))
    }
}

/// Divisor applied to attention scores of width `d_head`.
pub fn score_scale(d_head: usize) -> f64 {
    (d_head as f64).sqrt()
}

/// Causal mask for `n` positions: entry `(i, j)` is masked when `j > i`.
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|idx| idx % n > idx / n).collect()
}

/// `softmax(q·kᵀ / √d_k) · v`, with masked scores set to −∞.
pub fn scaled_dot_attention(
    tape: &mut Tape<'_>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let d_k = tape.value(q).cols();
    if tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::shape(
            "scaled_dot_attention",
            tape.shape(k),
            tape.shape(v),
        ));
    }
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / score_scale(d_k));
    let scores = match mask {
        Some(m) => tape.mask_fill(scores, m.to_vec())?,
        None => scores,
    };
    let weights = tape.softmax_rows(scores)?;
    tape.matmul(weights, v)
}

/// `Concat(head_1, …, head_h) · W^O` with
/// `head_i = Attention(q·W_i^Q, k·W_i^K, v·W_i^V)`.
pub fn multi_head_attention(
    tape: &mut Tape<'_>,
    q: Var,
    k: Var,
    v: Var,
    weights: &AttentionWeights,
    mask: Option<&[bool]>,
) -> Result<Var> {
    weights.dims(tape)?;
    let mut heads = Vec::with_capacity(weights.heads.len());
    for p in &weights.heads {
        let qh = tape.matmul(q, p.wq)?;
        let kh = tape.matmul(k, p.wk)?;
        let vh = tape.matmul(v, p.wv)?;
        heads.push(scaled_dot_attention(tape, qh, kh, vh, mask)?);
    }
    let cat = tape.concat_cols(&heads)?;
    tape.matmul(cat, weights.wo)
}

/// Selection weights `α` of one Gumbel-Attention head, shape
/// `text_len × n_regions`. Entries are in `(0, 1)` in train mode and exactly
/// `0` or `1` in infer mode.
#[derive(Debug, Clone, Copy)]
pub struct GateMatrix {
    pub alpha: Var,
}

impl GateMatrix {
    pub fn values<'t>(&self, tape: &'t Tape<'_>) -> &'t Tensor {
        tape.value(self.alpha)
    }
}

/// `α = GumbelSigmoid((x_text·W^Q)(x_image·W^K)ᵀ / √d_head)`.
#[allow(clippy::too_many_arguments)]
pub fn gumbel_scores(
    tape: &mut Tape<'_>,
    x_text: Var,
    x_image: Var,
    wq: Var,
    wk: Var,
    tau: Temperature,
    src: &mut NoiseSource,
    mode: GateMode,
) -> Result<GateMatrix> {
    let q = tape.matmul(x_text, wq)?;
    let k = tape.matmul(x_image, wk)?;
    if tape.value(q).cols() != tape.value(k).cols() {
        return Err(Error::shape(
            "gumbel_scores",
            tape.shape(wq),
            tape.shape(wk),
        ));
    }
    let d_head = tape.value(q).cols();
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / score_scale(d_head));
    let alpha = gumbel_sigmoid(tape, scores, tau, src, mode)?;
    Ok(GateMatrix { alpha })
}

/// `v_i = Σ_j α_ij · (x_j^image · W^V)`, an unnormalized gated sum.
pub fn image_aware_representation(
    tape: &mut Tape<'_>,
    alpha: &GateMatrix,
    x_image: Var,
    wv: Var,
) -> Result<Var> {
    if tape.value(alpha.alpha).cols() != tape.value(x_image).rows() {
        return Err(Error::shape(
            "image_aware_representation",
            tape.shape(alpha.alpha),
            tape.shape(x_image),
        ));
    }
    let values = tape.matmul(x_image, wv)?;
    tape.matmul(alpha.alpha, values)
}

/// Output of [`multi_head_gumbel_attention`].
#[derive(Debug, Clone)]
pub struct GumbelAttention {
    pub output: Var,
    pub gates: Vec<GateMatrix>,
}

/// Multi-head Gumbel-Attention: text queries, image keys and values. Each
/// head draws its own noise from `src`.
pub fn multi_head_gumbel_attention(
    tape: &mut Tape<'_>,
    x_text: Var,
    x_image: Var,
    weights: &AttentionWeights,
    tau: Temperature,
    src: &mut NoiseSource,
    mode: GateMode,
) -> Result<GumbelAttention> {
    weights.dims(tape)?;
    let mut heads = Vec::with_capacity(weights.heads.len());
    let mut gates = Vec::with_capacity(weights.heads.len());
    for p in &weights.heads {
        let g = gumbel_scores(tape, x_text, x_image, p.wq, p.wk, tau, src, mode)?;
        heads.push(image_aware_representation(tape, &g, x_image, p.wv)?);
        gates.push(g);
    }
    let cat = tape.concat_cols(&heads)?;
    let output = tape.matmul(cat, weights.wo)?;
    Ok(GumbelAttention { output, gates })
}
