//! Gumbel noise, Gumbel-Max sampling and the Gumbel-Softmax / Gumbel-Sigmoid
//! relaxations.
//!
//! Noise enters the tape as a constant, so gradients flow through the logits
//! only. Re-creating a [`NoiseSource`] from the same seed replays the same
//! noise, which is how gradient checks freeze it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Uniform draws are clamped to `[UNIFORM_CLAMP, 1 - UNIFORM_CLAMP]`.
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// Seeded stream of uniform and Gumbel(0, 1) draws.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    seed: u64,
    draws: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            draws: 0,
        }
    }

    /// Source positioned after `draws` draws from `seed`.
    pub fn restore(seed: u64, draws: u64) -> Self {
        let mut src = Self::new(seed);
        // every draw consumes one u64, i.e. two 32-bit words of the stream
        src.rng.set_word_pos(u128::from(draws) * 2);
        src.draws = draws;
        src
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform draw in `[1e-12, 1 - 1e-12]`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    }

    /// Standard Gumbel draw `−ln(−ln u)`.
    pub fn gumbel(&mut self) -> f64 {
        gumbel_from_uniform(self.uniform())
    }

    /// `G′ − G″` for two independent Gumbel draws (a standard logistic draw).
    pub fn gumbel_difference(&mut self) -> f64 {
        let g1 = self.gumbel();
        let g2 = self.gumbel();
        g1 - g2
    }
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Positive softmax / sigmoid temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive and finite, got {tau}"
            )));
        }
        Ok(Temperature(tau))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(1.0)
    }
}

/// Stochastic gates while training, thresholded gates at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode {
    Train,
    Infer { threshold: f64 },
}

impl GateMode {
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    pub fn infer() -> Self {
        GateMode::Infer {
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }

    pub fn is_train(self) -> bool {
        matches!(self, GateMode::Train)
    }
}

/// I.i.d. Gumbel(0, 1) samples of the given shape.
pub fn sample_gumbel(src: &mut NoiseSource, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| src.gumbel()).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Index of `argmax(log_pi + g)`; ties go to the lowest index.
pub fn gumbel_max_index(log_pi: &[f64], src: &mut NoiseSource) -> usize {
    assert!(!log_pi.is_empty(), "gumbel_max over zero classes");
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, lp) in log_pi.iter().enumerate() {
        let v = lp + src.gumbel();
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// One-hot sample from the categorical distribution with log-probabilities
/// (or unnormalized logits) `log_pi`.
pub fn gumbel_max(log_pi: &Tensor, src: &mut NoiseSource) -> Result<Tensor> {
    if log_pi.numel() == 0 {
        return Err(Error::invalid("gumbel_max", "need at least one class"));
    }
    let idx = gumbel_max_index(log_pi.data(), src);
    let mut out = Tensor::zeros(log_pi.shape().to_vec());
    out.data_mut()[idx] = 1.0;
    Ok(out)
}

/// `softmax((log_pi + g) / τ)` over the `k` entries of `log_pi`.
pub fn gumbel_softmax(
    tape: &mut Tape<'_>,
    log_pi: Var,
    tau: Temperature,
    src: &mut NoiseSource,
) -> Result<Var> {
    let shape = tape.shape(log_pi).to_vec();
    let k = tape.value(log_pi).numel();
    let noise = tape.constant(sample_gumbel(src, &[1, k]));
    let row = tape.reshape(log_pi, &[1, k])?;
    let perturbed = tape.add(row, noise)?;
    let scaled = tape.scale(perturbed, 1.0 / tau.value());
    let y = tape.softmax_rows(scaled)?;
    tape.reshape(y, &shape)
}

/// Elementwise Gumbel-Sigmoid gate.
///
/// Train: `sigmoid((e + G′ − G″) / τ)` with fresh noise per element.
/// Infer: `1` where `sigmoid(e) > threshold`, else `0`; no noise and no
/// gradient.
pub fn gumbel_sigmoid(
    tape: &mut Tape<'_>,
    e: Var,
    tau: Temperature,
    src: &mut NoiseSource,
    mode: GateMode,
) -> Result<Var> {
    match mode {
        GateMode::Train => {
            let shape = tape.shape(e).to_vec();
            let n = tape.value(e).numel();
            let noise: Vec<f64> = (0..n).map(|_| src.gumbel_difference()).collect();
            let noise = tape.constant(Tensor::new(shape, noise)?);
            let z = tape.add(e, noise)?;
            let z = tape.scale(z, 1.0 / tau.value());
            Ok(tape.sigmoid(z))
        }
        GateMode::Infer { threshold } => {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(Error::Config(format!(
                    "gate threshold must lie in (0, 1), got {threshold}"
                )));
            }
            let gates = tape
                .value(e)
                .map(|x| if sigmoid(x) > threshold { 1.0 } else { 0.0 });
            Ok(tape.constant(gates))
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
