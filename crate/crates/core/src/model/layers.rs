//! Parameter layouts and forward passes of the Transformer building blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{multi_head_attention, AttentionWeights, HeadProjections};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::seeding;
use crate::tensor::Tensor;

/// Registers parameters under a name prefix with seed-per-name
/// initialization, so a parameter's initial value depends only on the model
/// seed and its name.
pub(crate) struct Builder<'s> {
    pub store: &'s mut ParamStore,
    pub seed: u64,
}

impl Builder<'_> {
    fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seeding::derive(self.seed, &[seeding::hash_name(name)]))
    }

    /// Uniform in `±bound`.
    pub fn uniform(&mut self, name: &str, shape: [usize; 2], bound: f64) -> Result<ParamId> {
        let mut rng = self.rng(name);
        let n = shape[0] * shape[1];
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.store.add(name, Tensor::new(shape, data)?)
    }

    /// Weight matrix, uniform in `±1/√d_in`.
    pub fn matrix(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<ParamId> {
        self.uniform(name, [d_in, d_out], 1.0 / (d_in as f64).sqrt())
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::full(shape.to_vec(), value))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearIds {
    pub fn build(b: &mut Builder<'_>, prefix: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(LinearIds {
            w: b.matrix(&format!("{prefix}.w"), d_in, d_out)?,
            b: b.constant(&format!("{prefix}.b"), &[d_out], 0.0)?,
        })
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl NormIds {
    pub fn build(b: &mut Builder<'_>, prefix: &str, d: usize) -> Result<Self> {
        Ok(NormIds {
            gain: b.constant(&format!("{prefix}.gain"), &[d], 1.0)?,
            bias: b.constant(&format!("{prefix}.bias"), &[d], 0.0)?,
        })
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionIds {
    pub heads: Vec<[ParamId; 3]>,
    pub wo: ParamId,
}

impl AttentionIds {
    /// `d_q` and `d_kv` are the input widths of queries and of keys/values.
    pub fn build(
        b: &mut Builder<'_>,
        prefix: &str,
        n_heads: usize,
        d_q: usize,
        d_kv: usize,
        d_model: usize,
    ) -> Result<Self> {
        let d_head = d_model / n_heads;
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            heads.push([
                b.matrix(&format!("{prefix}.head{h}.wq"), d_q, d_head)?,
                b.matrix(&format!("{prefix}.head{h}.wk"), d_kv, d_head)?,
                b.matrix(&format!("{prefix}.head{h}.wv"), d_kv, d_head)?,
            ]);
        }
        let wo = b.matrix(&format!("{prefix}.wo"), d_head * n_heads, d_model)?;
        Ok(AttentionIds { heads, wo })
    }

    pub fn weights<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore) -> AttentionWeights {
        AttentionWeights {
            heads: self
                .heads
                .iter()
                .map(|[q, k, v]| HeadProjections {
                    wq: tape.param(store, *q),
                    wk: tape.param(store, *k),
                    wv: tape.param(store, *v),
                })
                .collect(),
            wo: tape.param(store, self.wo),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIds {
    pub up: LinearIds,
    pub down: LinearIds,
}

impl FfnIds {
    pub fn build(b: &mut Builder<'_>, prefix: &str, d_model: usize, d_ffn: usize) -> Result<Self> {
        Ok(FfnIds {
            up: LinearIds::build(b, &format!("{prefix}.up"), d_model, d_ffn)?,
            down: LinearIds::build(b, &format!("{prefix}.down"), d_ffn, d_model)?,
        })
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.down.forward(tape, store, h)
    }
}

/// Self-attention → add & norm → feed-forward → add & norm.
#[derive(Debug, Clone)]
pub(crate) struct EncoderLayerIds {
    pub self_attn: AttentionIds,
    pub norm1: NormIds,
    pub ffn: FfnIds,
    pub norm2: NormIds,
}

impl EncoderLayerIds {
    pub fn build(
        b: &mut Builder<'_>,
        prefix: &str,
        n_heads: usize,
        d_model: usize,
        d_ffn: usize,
    ) -> Result<Self> {
        Ok(EncoderLayerIds {
            self_attn: AttentionIds::build(
                b,
                &format!("{prefix}.self_attn"),
                n_heads,
                d_model,
                d_model,
                d_model,
            )?,
            norm1: NormIds::build(b, &format!("{prefix}.norm1"), d_model)?,
            ffn: FfnIds::build(b, &format!("{prefix}.ffn"), d_model, d_ffn)?,
            norm2: NormIds::build(b, &format!("{prefix}.norm2"), d_model)?,
        })
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = self.self_attn.weights(tape, store);
        let a = multi_head_attention(tape, x, x, x, &w, None)?;
        let x = tape.add(x, a)?;
        let x = self.norm1.forward(tape, store, x)?;
        let f = self.ffn.forward(tape, store, x)?;
        let x = tape.add(x, f)?;
        self.norm2.forward(tape, store, x)
    }
}

/// Masked self-attention, cross-attention over the encoder memory, and a
/// feed-forward block, each followed by add & norm.
#[derive(Debug, Clone)]
pub(crate) struct DecoderLayerIds {
    pub self_attn: AttentionIds,
    pub norm1: NormIds,
    pub cross_attn: AttentionIds,
    pub norm2: NormIds,
    pub ffn: FfnIds,
    pub norm3: NormIds,
}

impl DecoderLayerIds {
    pub fn build(
        b: &mut Builder<'_>,
        prefix: &str,
        n_heads: usize,
        d_model: usize,
        d_ffn: usize,
    ) -> Result<Self> {
        Ok(DecoderLayerIds {
            self_attn: AttentionIds::build(
                b,
                &format!("{prefix}.self_attn"),
                n_heads,
                d_model,
                d_model,
                d_model,
            )?,
            norm1: NormIds::build(b, &format!("{prefix}.norm1"), d_model)?,
            cross_attn: AttentionIds::build(
                b,
                &format!("{prefix}.cross_attn"),
                n_heads,
                d_model,
                d_model,
                d_model,
            )?,
            norm2: NormIds::build(b, &format!("{prefix}.norm2"), d_model)?,
            ffn: FfnIds::build(b, &format!("{prefix}.ffn"), d_model, d_ffn)?,
            norm3: NormIds::build(b, &format!("{prefix}.norm3"), d_model)?,
        })
    }

    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        y: Var,
        memory: Var,
        mask: &[bool],
    ) -> Result<Var> {
        let w = self.self_attn.weights(tape, store);
        let a = multi_head_attention(tape, y, y, y, &w, Some(mask))?;
        let y = tape.add(y, a)?;
        let y = self.norm1.forward(tape, store, y)?;
        let w = self.cross_attn.weights(tape, store);
        let c = multi_head_attention(tape, y, memory, memory, &w, None)?;
        let y = tape.add(y, c)?;
        let y = self.norm2.forward(tape, store, y)?;
        let f = self.ffn.forward(tape, store, y)?;
        let y = tape.add(y, f)?;
        self.norm3.forward(tape, store, y)
    }
}

/// Sinusoidal position encoding, `PE(pos, 2i) = sin(pos / 10000^(2i/d))` and
/// `PE(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for j in 0..d {
            let pair = (j / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(pair as f64 / d as f64);
            data[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new([len, d], data).expect("length matches shape")
}
