//! Dual-encoder Gumbel-Attention translation model and its ablations.
//!
//! The text branch is a plain Transformer encoder. The image branch encodes
//! the image-aware text representation produced by Gumbel-Attention (or by
//! softmax cross-attention under `vanilla_attention`). The two branch outputs
//! are merged by a sigmoid gate and fed to a standard Transformer decoder.
//!
//! Placement: with `gumbel_layer = L`, the image branch runs its first
//! `L − 1` layers over the text embeddings to form queries, while the image
//! regions are projected to `d_model` and encoded by `L − 1` region layers;
//! Gumbel-Attention then produces `v`, and the remaining image-branch layers
//! encode `v`. With `L = 1` the raw embeddings attend to the raw region
//! features.

mod config;
mod layers;

use std::borrow::Cow;

pub use config::{AblationFlags, LossWeightMode, ModelConfig};
pub use layers::positional_encoding;

use crate::attention::{
    causal_mask, multi_head_attention, multi_head_gumbel_attention, GateMatrix,
};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::vocab::{BOS, EOS};
use crate::error::{Error, Result};
use crate::gumbel::{GateMode, NoiseSource, Temperature};
use crate::seeding;
use crate::tensor::Tensor;
use layers::{AttentionIds, Builder, DecoderLayerIds, EncoderLayerIds, LinearIds};

#[derive(Debug, Clone)]
struct RegionEncoderIds {
    proj: LinearIds,
    layers: Vec<EncoderLayerIds>,
}

#[derive(Debug, Clone)]
struct ImageBranchIds {
    /// Encoder stack of the image branch (the text stack when shared).
    layers: Vec<EncoderLayerIds>,
    cross: AttentionIds,
    region: Option<RegionEncoderIds>,
    fusion: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
struct Layout {
    src_embed: ParamId,
    tgt_embed: ParamId,
    text_layers: Vec<EncoderLayerIds>,
    image: Option<ImageBranchIds>,
    dec_layers: Vec<DecoderLayerIds>,
    output: LinearIds,
    alpha_raw: Option<ParamId>,
}

/// Encoder outputs, all `t × d_model`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub h_text: Var,
    /// Absent under `text_only`.
    pub h_image: Option<Var>,
    pub fused: Var,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub output: EncoderOutput,
    /// One gate matrix per Gumbel-Attention head; empty without Gumbel
    /// gates.
    pub gates: Vec<GateMatrix>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    pub encoded: Encoded,
}

/// Total loss and its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub nll: Var,
    pub similarity: Option<Var>,
    pub alpha: Option<Var>,
}

/// Result of [`Model::greedy_decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Generated tokens without BOS and EOS.
    pub tokens: Vec<usize>,
    /// Infer-mode gate matrices, one per head.
    pub gates: Vec<Tensor>,
}

const RANDOM_IMAGE_STREAM: u64 = 0x524e_4449;

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

fn inverse_softplus(y: f64) -> f64 {
    // ln(eʸ − 1), written to stay accurate for large y
    y + (-(-y).exp_m1()).ln()
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            seed: c.init_seed,
        };
        let flags = c.ablation;

        // embedding lookups have a fan-in of one active input
        let src_embed = b.uniform("embed.src", [c.vocab_src, c.d_model], 1.0)?;
        let tgt_embed = b.uniform("embed.tgt", [c.vocab_tgt, c.d_model], 1.0)?;
        let text_layers = (0..c.n_enc_layers)
            .map(|i| {
                EncoderLayerIds::build(
                    &mut b,
                    &format!("encoder.text.layer{i}"),
                    c.n_heads,
                    c.d_model,
                    c.d_ffn,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let image = if flags.uses_image() {
            let layers = if flags.uses_shared_encoders() {
                text_layers.clone()
            } else {
                (0..c.n_enc_layers)
                    .map(|i| {
                        EncoderLayerIds::build(
                            &mut b,
                            &format!("encoder.image.layer{i}"),
                            c.n_heads,
                            c.d_model,
                            c.d_ffn,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let region = if c.gumbel_layer > 1 {
                Some(RegionEncoderIds {
                    proj: LinearIds::build(&mut b, "region.proj", c.d_image, c.d_model)?,
                    layers: (0..c.gumbel_layer - 1)
                        .map(|i| {
                            EncoderLayerIds::build(
                                &mut b,
                                &format!("region.layer{i}"),
                                c.n_heads,
                                c.d_model,
                                c.d_ffn,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?,
                })
            } else {
                None
            };
            let d_kv = if region.is_some() {
                c.d_model
            } else {
                c.d_image
            };
            let cross =
                AttentionIds::build(&mut b, "image_attn", c.n_heads, c.d_model, d_kv, c.d_model)?;
            let fusion = if flags.uses_gated_fusion() {
                Some((
                    b.matrix("fusion.w", c.d_model, c.d_model)?,
                    b.matrix("fusion.u", c.d_model, c.d_model)?,
                ))
            } else {
                None
            };
            Some(ImageBranchIds {
                layers,
                cross,
                region,
                fusion,
            })
        } else {
            None
        };

        let dec_layers = (0..c.n_dec_layers)
            .map(|i| {
                DecoderLayerIds::build(
                    &mut b,
                    &format!("decoder.layer{i}"),
                    c.n_heads,
                    c.d_model,
                    c.d_ffn,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let output = LinearIds::build(&mut b, "output", c.d_model, c.vocab_tgt)?;
        let alpha_raw = match c.loss_alpha {
            LossWeightMode::Trainable { init } if flags.uses_similarity_loss() => {
                Some(b.constant("loss.alpha_raw", &[1], inverse_softplus(init))?)
            }
            _ => None,
        };

        Ok(Model {
            layout: Layout {
                src_embed,
                tgt_embed,
                text_layers,
                image,
                dec_layers,
                output,
                alpha_raw,
            },
            params,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Number of scalar parameters whose names start with `prefix`.
    pub fn count_params(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    fn embed_with<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        tokens: &[usize],
        table: ParamId,
    ) -> Result<Var> {
        let t = tape.param(&self.params, table);
        let e = tape.embedding(t, tokens)?;
        let pe = tape.constant(positional_encoding(tokens.len(), self.config.d_model));
        tape.add(e, pe)
    }

    /// Source word embeddings plus sinusoidal position encoding.
    pub fn embed_source<'a>(&'a self, tape: &mut Tape<'a>, tokens: &[usize]) -> Result<Var> {
        self.embed_with(tape, tokens, self.layout.src_embed)
    }

    pub fn embed_target<'a>(&'a self, tape: &mut Tape<'a>, tokens: &[usize]) -> Result<Var> {
        self.embed_with(tape, tokens, self.layout.tgt_embed)
    }

    /// Text-branch encoder stack.
    pub fn encode_text<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        self.layout
            .text_layers
            .iter()
            .try_fold(x, |h, layer| layer.forward(tape, &self.params, h))
    }

    /// Both encoder branches and their fusion.
    pub fn encode_multimodal<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        image: Var,
        tau: Temperature,
        src: &mut NoiseSource,
        mode: GateMode,
    ) -> Result<Encoded> {
        let h_text = self.encode_text(tape, x)?;
        let Some(branch) = &self.layout.image else {
            return Ok(Encoded {
                output: EncoderOutput {
                    h_text,
                    h_image: None,
                    fused: h_text,
                },
                gates: Vec::new(),
            });
        };
        let c = &self.config;
        let img_shape = tape.shape(image);
        if img_shape.len() != 2 || img_shape[0] != c.n_regions || img_shape[1] != c.d_image {
            return Err(Error::shape(
                "encode_multimodal",
                &[c.n_regions, c.d_image],
                img_shape,
            ));
        }

        let split = c.gumbel_layer - 1;
        let mut query = x;
        for layer in &branch.layers[..split] {
            query = layer.forward(tape, &self.params, query)?;
        }
        let keys = match &branch.region {
            None => image,
            Some(region) => {
                let r = region.proj.forward(tape, &self.params, image)?;
                region
                    .layers
                    .iter()
                    .try_fold(r, |h, layer| layer.forward(tape, &self.params, h))?
            }
        };

        let weights = branch.cross.weights(tape, &self.params);
        let (v, gates) = if c.ablation.uses_gumbel() {
            let g = multi_head_gumbel_attention(tape, query, keys, &weights, tau, src, mode)?;
            (g.output, g.gates)
        } else {
            (
                multi_head_attention(tape, query, keys, keys, &weights, None)?,
                Vec::new(),
            )
        };

        let mut h_image = v;
        for layer in &branch.layers[split..] {
            h_image = layer.forward(tape, &self.params, h_image)?;
        }

        let fused = match branch.fusion {
            Some((w, u)) => {
                let (w, u) = (tape.param(&self.params, w), tape.param(&self.params, u));
                gated_fusion(tape, h_image, h_text, w, u)?
            }
            None => tape.add(h_text, h_image)?,
        };
        Ok(Encoded {
            output: EncoderOutput {
                h_text,
                h_image: Some(h_image),
                fused,
            },
            gates,
        })
    }

    /// Decoder logits (`t_out × vocab_tgt`) for a shifted target prefix.
    pub fn decode<'a>(&'a self, tape: &mut Tape<'a>, tgt_in: &[usize], memory: Var) -> Result<Var> {
        let mut y = self.embed_target(tape, tgt_in)?;
        let mask = causal_mask(tgt_in.len());
        for layer in &self.layout.dec_layers {
            y = layer.forward(tape, &self.params, y, memory, &mask)?;
        }
        self.layout.output.forward(tape, &self.params, y)
    }

    /// Encoder and decoder on one example. `tgt_in` starts with BOS.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        src_ids: &[usize],
        tgt_in: &[usize],
        image: Var,
        tau: Temperature,
        noise: &mut NoiseSource,
        mode: GateMode,
    ) -> Result<Forward> {
        let x = self.embed_source(tape, src_ids)?;
        let encoded = self.encode_multimodal(tape, x, image, tau, noise, mode)?;
        let logits = self.decode(tape, tgt_in, encoded.output.fused)?;
        Ok(Forward { logits, encoded })
    }

    /// Effective similarity weight `α`, or `None` when the term is disabled.
    pub fn alpha<'a>(&'a self, tape: &mut Tape<'a>) -> Option<Var> {
        if !self.config.ablation.uses_similarity_loss() {
            return None;
        }
        Some(match (self.config.loss_alpha, self.layout.alpha_raw) {
            (LossWeightMode::Trainable { .. }, Some(raw)) => {
                let r = tape.param(&self.params, raw);
                tape.softplus(r)
            }
            (LossWeightMode::Fixed(a), _) | (LossWeightMode::Trainable { init: a }, None) => {
                tape.constant(Tensor::scalar(a))
            }
        })
    }

    /// Current value of `α`; `None` when the similarity term is disabled.
    pub fn alpha_value(&self) -> Option<f64> {
        let mut tape = Tape::new();
        let a = self.alpha(&mut tape)?;
        Some(tape.value(a).item())
    }

    /// Cross-entropy plus `α · loss_sim` (the second term only when the
    /// similarity loss is enabled and an image branch exists).
    pub fn total_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        logits: Var,
        targets: &[usize],
        enc: &EncoderOutput,
    ) -> Result<LossTerms> {
        let nll = tape.cross_entropy(logits, targets, crate::data::vocab::PAD)?;
        let (Some(h_image), Some(alpha)) = (enc.h_image, self.alpha(tape)) else {
            return Ok(LossTerms {
                total: nll,
                nll,
                similarity: None,
                alpha: None,
            });
        };
        let sim = similarity_loss(tape, h_image, enc.h_text, self.config.margin)?;
        let weighted = tape.mul(alpha, sim)?;
        let total = tape.add(nll, weighted)?;
        Ok(LossTerms {
            total,
            nll,
            similarity: Some(sim),
            alpha: Some(alpha),
        })
    }

    /// Gate mode used at inference time.
    pub fn infer_mode(&self) -> GateMode {
        GateMode::Infer {
            threshold: self.config.gate_threshold,
        }
    }

    /// Greedy autoregressive decoding with infer-mode gates. Stops at EOS or
    /// after `max_len` generated tokens.
    pub fn greedy_decode(
        &self,
        src_ids: &[usize],
        image: &Tensor,
        max_len: usize,
    ) -> Result<Decoded> {
        let mut tape = Tape::new();
        let img = tape.constant_ref(image);
        let x = self.embed_source(&mut tape, src_ids)?;
        // infer-mode gates draw no noise
        let mut noise = NoiseSource::new(0);
        let enc = self.encode_multimodal(
            &mut tape,
            x,
            img,
            Temperature::default(),
            &mut noise,
            self.infer_mode(),
        )?;
        let tokens = self.greedy_from(&mut tape, enc.output.fused, max_len)?;
        let gates = enc.gates.iter().map(|g| g.values(&tape).clone()).collect();
        Ok(Decoded { tokens, gates })
    }

    /// Greedy decoding against an already encoded source.
    pub fn greedy_from<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        memory: Var,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(Error::invalid("greedy_decode", "max_len must be positive"));
        }
        let mut prefix = vec![BOS];
        for _ in 0..max_len {
            let logits = self.decode(tape, &prefix, memory)?;
            let next = argmax(tape.value(logits).row(prefix.len() - 1));
            if next == EOS {
                break;
            }
            prefix.push(next);
        }
        prefix.remove(0);
        Ok(prefix)
    }

    /// Image tensor for an example, honouring the `random_image` ablation:
    /// the replacement is N(0, 1) noise fixed per example id.
    pub fn image_for<'i>(&self, image: &'i Tensor, example_id: u64) -> Cow<'i, Tensor> {
        if self.config.ablation.uses_random_image() {
            let seed = seeding::derive(self.config.init_seed, &[RANDOM_IMAGE_STREAM, example_id]);
            Cow::Owned(crate::data::random_image(
                seed,
                self.config.n_regions,
                self.config.d_image,
            ))
        } else {
            Cow::Borrowed(image)
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `H = h_text + λ ⊙ h_image` with `λ = sigmoid(h_image·W + h_text·U)`,
/// gated per position and per dimension.
pub fn gated_fusion(tape: &mut Tape<'_>, h_image: Var, h_text: Var, w: Var, u: Var) -> Result<Var> {
    if tape.shape(h_image) != tape.shape(h_text) {
        return Err(Error::shape(
            "gated_fusion",
            tape.shape(h_image),
            tape.shape(h_text),
        ));
    }
    let a = tape.matmul(h_image, w)?;
    let b = tape.matmul(h_text, u)?;
    let pre = tape.add(a, b)?;
    let lambda = tape.sigmoid(pre);
    let gated = tape.mul(lambda, h_image)?;
    tape.add(h_text, gated)
}

/// `max(0, 1 − cos(mean(h_image), mean(h_text)) − margin)`, pooling each
/// representation over positions first.
pub fn similarity_loss(tape: &mut Tape<'_>, h_image: Var, h_text: Var, margin: f64) -> Result<Var> {
    let pi = tape.mean_rows(h_image)?;
    let pt = tape.mean_rows(h_text)?;
    let cos = tape.cosine_similarity(pi, pt)?;
    let slack = tape.affine(cos, -1.0, 1.0 - margin);
    Ok(tape.hinge(slack))
}
