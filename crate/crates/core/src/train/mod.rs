//! Mini-batch training with Adam and per-epoch validation.
//!
//! All randomness is derived from the run seed: the shuffle of epoch `e`
//! from `(seed, e)` and the Gumbel noise of example `j` in step `s` from
//! `(seed, s, j)`. A [`TrainState`] therefore captures everything needed to
//! resume a run mid-epoch and continue on the uninterrupted trajectory.

pub mod adam;
pub mod bleu;
pub mod eval;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use bleu::corpus_bleu;
pub use eval::{evaluate, evaluate_detailed, ExampleResult, Metrics};

use crate::autodiff::{Gradients, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gumbel::{GateMode, NoiseSource, Temperature};
use crate::model::Model;
use crate::seeding;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const NOISE_STREAM: u64 = 0x4e4f_4953;

/// Per-epoch temperature `max(min, initial · decay^epoch)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSchedule {
    pub initial: f64,
    pub min: f64,
    pub decay: f64,
}

impl TauSchedule {
    pub fn constant(tau: f64) -> Self {
        TauSchedule {
            initial: tau,
            min: tau,
            decay: 1.0,
        }
    }

    pub fn at(&self, epoch: usize) -> Result<Temperature> {
        Temperature::new((self.initial * self.decay.powi(epoch as i32)).max(self.min))
    }
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

impl FromStr for TauSchedule {
    type Err = Error;

    /// `<tau>` for a constant, or `<initial>,<min>,<decay>`.
    fn from_str(s: &str) -> Result<Self> {
        let nums = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("tau schedule `{s}`: bad number")))?;
        let sched = match nums[..] {
            [t] => Self::constant(t),
            [initial, min, decay] => TauSchedule {
                initial,
                min,
                decay,
            },
            _ => {
                return Err(Error::Config(format!(
                    "tau schedule `{s}`: expected 1 or 3 numbers"
                )))
            }
        };
        if !(sched.min > 0.0 && sched.initial > 0.0 && sched.decay > 0.0) {
            return Err(Error::Config(format!(
                "tau schedule `{s}`: values must be positive"
            )));
        }
        Ok(sched)
    }
}

impl fmt::Display for TauSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.decay == 1.0 && self.min == self.initial {
            write!(f, "{}", self.initial)
        } else {
            write!(f, "{},{},{}", self.initial, self.min, self.decay)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau: TauSchedule,
    pub seed: u64,
    /// Stop after this many optimizer steps in total, as if interrupted.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 10,
            tau: TauSchedule::default(),
            seed: 7,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.tau.at(0).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_bleu: f64,
    pub val_amb_acc: Option<f64>,
    pub gate_open_rate: Option<f64>,
    pub alpha_eff: Option<f64>,
    /// Mean train-mode gate value over the epoch.
    pub train_gate_mean: Option<f64>,
}

/// Running sums of the epoch in progress.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochAccumulator {
    pub loss_sum: f64,
    pub examples: u64,
    pub gate_sum: f64,
    pub gate_count: u64,
}

/// Everything besides the parameters that a resumed run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed batches of the current epoch.
    pub batch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub adam: AdamState,
    pub acc: EpochAccumulator,
    pub log: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        TrainState {
            epoch: 0,
            batch: 0,
            step: 0,
            adam: AdamState::new(model.params()),
            acc: EpochAccumulator::default(),
            log: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event<'e> {
    Step { step: u64, loss: f64 },
    Epoch(&'e EpochRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Finished,
    /// Stopped by `max_steps`.
    Interrupted,
}

/// Result of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Mean batch loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

/// Example order of `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[SHUFFLE_STREAM, epoch as u64]));
    order.shuffle(&mut rng);
    order
}

pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    let mut state = TrainState::new(model);
    let mut step_losses = Vec::new();
    run(model, data, cfg, &mut state, &mut |_, _, ev| {
        if let Event::Step { loss, .. } = ev {
            step_losses.push(loss);
        }
        Ok(())
    })?;
    Ok(TrainLog {
        epochs: state.log,
        step_losses,
    })
}

/// Trains from `state` until `cfg.epochs` are complete or `cfg.max_steps` is
/// reached. `on_event` sees the model and state after every step and every
/// epoch.
pub fn run(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
    on_event: &mut dyn FnMut(&Model, &TrainState, Event<'_>) -> Result<()>,
) -> Result<Outcome> {
    cfg.validate()?;
    if cfg.epochs == 0 || state.epoch >= cfg.epochs {
        return Ok(Outcome::Finished);
    }
    if data.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if data.val.is_empty() {
        return Err(Error::Empty("validation split"));
    }

    let n = data.train.len();
    let batches = n.div_ceil(cfg.batch_size);
    let mut grads = Gradients::zeros_like(model.params());
    while state.epoch < cfg.epochs {
        let order = epoch_order(cfg.seed, state.epoch, n);
        let tau = cfg.tau.at(state.epoch)?;
        while state.batch < batches {
            if cfg.max_steps.is_some_and(|m| state.step >= m) {
                return Ok(Outcome::Interrupted);
            }
            let idx =
                &order[state.batch * cfg.batch_size..((state.batch + 1) * cfg.batch_size).min(n)];
            grads.zero();
            let mut batch_loss = 0.0;
            for (j, &i) in idx.iter().enumerate() {
                let ex = &data.train[i];
                let raw = ex.image.to_tensor();
                let image = model.image_for(&raw, ex.id);
                let mut tape = Tape::new();
                let img = tape.constant_ref(image.as_ref());
                let mut noise = NoiseSource::new(seeding::derive(
                    cfg.seed,
                    &[NOISE_STREAM, state.step, j as u64],
                ));
                let fw = model.forward(
                    &mut tape,
                    &ex.src,
                    ex.decoder_input(),
                    img,
                    tau,
                    &mut noise,
                    GateMode::Train,
                )?;
                let terms = model.total_loss(
                    &mut tape,
                    fw.logits,
                    ex.decoder_targets(),
                    &fw.encoded.output,
                )?;
                let loss = tape.value(terms.total).item();
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        step: state.step + 1,
                    });
                }
                batch_loss += loss;
                for g in &fw.encoded.gates {
                    let v = g.values(&tape);
                    state.acc.gate_sum += v.sum();
                    state.acc.gate_count += v.numel() as u64;
                }
                tape.backward(terms.total, &mut grads)?;
            }
            grads.scale(1.0 / idx.len() as f64);
            adam_step(model.params_mut(), &mut grads, &mut state.adam, &cfg.adam)?;
            state.acc.loss_sum += batch_loss;
            state.acc.examples += idx.len() as u64;
            state.step += 1;
            state.batch += 1;
            let loss = batch_loss / idx.len() as f64;
            on_event(
                model,
                state,
                Event::Step {
                    step: state.step,
                    loss,
                },
            )?;
        }

        let val = evaluate(model, &data.val)?;
        let acc = std::mem::take(&mut state.acc);
        let record = EpochRecord {
            epoch: state.epoch + 1,
            train_loss: acc.loss_sum / acc.examples as f64,
            val_loss: val.loss,
            val_bleu: val.bleu,
            val_amb_acc: val.ambiguous_token_accuracy,
            gate_open_rate: val.gate_open_rate,
            alpha_eff: model.alpha_value(),
            train_gate_mean: (acc.gate_count > 0).then(|| acc.gate_sum / acc.gate_count as f64),
        };
        log::info!(
            "epoch {} train_loss {:.4} val_loss {:.4} val_bleu {:.4} val_amb_acc {:?}",
            record.epoch,
            record.train_loss,
            record.val_loss,
            record.val_bleu,
            record.val_amb_acc
        );
        state.log.push(record.clone());
        state.epoch += 1;
        state.batch = 0;
        on_event(model, state, Event::Epoch(&record))?;
    }
    Ok(Outcome::Finished)
}
