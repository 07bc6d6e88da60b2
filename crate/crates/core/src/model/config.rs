use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architecture and loss settings of a [`Model`](super::Model).
///
/// `Default` is the full-size configuration; run configurations start from
/// smaller desk-scale values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub d_image: usize,
    pub n_regions: usize,
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    /// Gumbel-Attention is applied before encoder layer `gumbel_layer`
    /// (1-based); `n_enc_layers + 1` applies it after all layers.
    pub gumbel_layer: usize,
    pub ablation: AblationFlags,
    pub margin: f64,
    pub loss_alpha: LossWeightMode,
    /// Inference-time gate threshold on `sigmoid(score)`.
    pub gate_threshold: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_enc_layers: 4,
            n_dec_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ffn: 512,
            d_image: 512,
            n_regions: 49,
            vocab_src: 50,
            vocab_tgt: 50,
            gumbel_layer: 1,
            ablation: AblationFlags::default(),
            margin: 0.3,
            loss_alpha: LossWeightMode::default(),
            gate_threshold: 0.5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "n_heads = {} must divide d_model = {}",
                self.n_heads, self.d_model
            ));
        }
        if self.d_model == 0 || self.d_ffn == 0 || self.d_image == 0 || self.n_regions == 0 {
            return fail("model dimensions must be positive".into());
        }
        if !(1..=self.n_enc_layers + 1).contains(&self.gumbel_layer) {
            return fail(format!(
                "gumbel_layer = {} outside 1..={}",
                self.gumbel_layer,
                self.n_enc_layers + 1
            ));
        }
        if !(-1.0..=1.0).contains(&self.margin) {
            return fail(format!("margin = {} outside [-1, 1]", self.margin));
        }
        if !(self.gate_threshold > 0.0 && self.gate_threshold < 1.0) {
            return fail(format!(
                "gate_threshold = {} outside (0, 1)",
                self.gate_threshold
            ));
        }
        if self.vocab_src < 4 || self.vocab_tgt < 4 {
            return fail("vocabularies must hold the four reserved tokens".into());
        }
        match self.loss_alpha {
            LossWeightMode::Fixed(a) if !(a >= 0.0 && a.is_finite()) => {
                return fail(format!("loss weight {a} must be finite and non-negative"));
            }
            LossWeightMode::Trainable { init } if !(init > 0.0 && init.is_finite()) => {
                return fail(format!(
                    "trainable loss weight must start positive, got {init}"
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// The ablation variants. `text_only` overrides every other flag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub vanilla_attention: bool,
    pub random_image: bool,
    pub shared_encoders: bool,
    pub no_gated_fusion: bool,
    pub no_similarity_loss: bool,
    pub text_only: bool,
}

impl AblationFlags {
    pub const VARIANTS: [&'static str; 7] = [
        "full",
        "vanilla_attention",
        "random_image",
        "shared_encoders",
        "no_gated_fusion",
        "no_similarity_loss",
        "text_only",
    ];

    pub fn uses_image(&self) -> bool {
        !self.text_only
    }

    pub fn uses_gumbel(&self) -> bool {
        !self.text_only && !self.vanilla_attention
    }

    pub fn uses_random_image(&self) -> bool {
        !self.text_only && self.random_image
    }

    pub fn uses_shared_encoders(&self) -> bool {
        !self.text_only && self.shared_encoders
    }

    pub fn uses_gated_fusion(&self) -> bool {
        !self.text_only && !self.no_gated_fusion
    }

    pub fn uses_similarity_loss(&self) -> bool {
        !self.text_only && !self.no_similarity_loss
    }

    fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let flags = [
            (self.vanilla_attention, "vanilla_attention"),
            (self.random_image, "random_image"),
            (self.shared_encoders, "shared_encoders"),
            (self.no_gated_fusion, "no_gated_fusion"),
            (self.no_similarity_loss, "no_similarity_loss"),
            (self.text_only, "text_only"),
        ];
        for (on, name) in flags {
            if on {
                out.push(name);
            }
        }
        out
    }
}

impl FromStr for AblationFlags {
    type Err = Error;

    /// Comma-separated flag names; `full` or `none` for no ablation.
    fn from_str(s: &str) -> Result<Self> {
        let mut flags = AblationFlags::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "full" | "none" => {}
                "vanilla_attention" => flags.vanilla_attention = true,
                "random_image" => flags.random_image = true,
                "shared_encoders" => flags.shared_encoders = true,
                "no_gated_fusion" => flags.no_gated_fusion = true,
                "no_similarity_loss" => flags.no_similarity_loss = true,
                "text_only" => flags.text_only = true,
                other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
            }
        }
        Ok(flags)
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.names();
        if names.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// Weight `α` of the similarity term in the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossWeightMode {
    Fixed(f64),
    /// `α = softplus(raw)` with `raw` trained; `init` is the starting `α`.
    Trainable {
        init: f64,
    },
}

impl Default for LossWeightMode {
    fn default() -> Self {
        LossWeightMode::Fixed(0.5)
    }
}

impl FromStr for LossWeightMode {
    type Err = Error;

    /// `fixed:<value>` or `trainable:<initial value>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "loss weight `{s}`: expected fixed:<v> or trainable:<v>"
            ))
        })?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("loss weight `{s}`: bad number")))?;
        match kind.trim() {
            "fixed" => Ok(LossWeightMode::Fixed(v)),
            "trainable" => Ok(LossWeightMode::Trainable { init: v }),
            other => Err(Error::Config(format!("unknown loss weight mode `{other}`"))),
        }
    }
}

impl fmt::Display for LossWeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossWeightMode::Fixed(v) => write!(f, "fixed:{v}"),
            LossWeightMode::Trainable { init } => write!(f, "trainable:{init}"),
        }
    }
}
