//! Flat `section.key = value` run configuration.
//!
//! Sections are `model.`, `train.`, `task.` and `io.`. Every key has a
//! default, unknown keys are rejected, and [`RunConfig::to_text`] writes the
//! fully resolved configuration in a form [`RunConfig::parse`] reads back
//! unchanged.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SyntheticTaskSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// File locations used by the command-line tool.
#[derive(Debug, Clone, PartialEq)]
pub struct IoPaths {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    /// Root directory of ablation sweeps.
    pub sweep_dir: PathBuf,
}

impl Default for IoPaths {
    fn default() -> Self {
        IoPaths {
            data_dir: "data".into(),
            checkpoint: "run/model.ckpt".into(),
            log: "run/train.csv".into(),
            sweep_dir: "sweep".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Image geometry and vocabulary sizes are taken from `task`.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: SyntheticTaskSpec,
    pub io: IoPaths,
}

impl Default for RunConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        let mut cfg = RunConfig {
            model: ModelConfig {
                n_enc_layers: 2,
                n_dec_layers: 2,
                n_heads: 4,
                d_model: 64,
                d_ffn: 128,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            task: SyntheticTaskSpec::default(),
            io: IoPaths::default(),
        };
        cfg.sync();
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn opt_to_string<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl RunConfig {
    /// Reads `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    n + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Overrides a single key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "model.n_enc_layers" => m.n_enc_layers = parse(key, value)?,
            "model.n_dec_layers" => m.n_dec_layers = parse(key, value)?,
            "model.n_heads" => m.n_heads = parse(key, value)?,
            "model.d_model" => m.d_model = parse(key, value)?,
            "model.d_ffn" => m.d_ffn = parse(key, value)?,
            "model.gumbel_layer" => m.gumbel_layer = parse(key, value)?,
            "model.ablation" => m.ablation = value.parse()?,
            "model.margin" => m.margin = parse(key, value)?,
            "model.loss_alpha" => m.loss_alpha = value.parse()?,
            "model.gate_threshold" => m.gate_threshold = parse(key, value)?,
            "model.init_seed" => m.init_seed = parse(key, value)?,
            "train.lr" => t.adam.lr = parse(key, value)?,
            "train.beta1" => t.adam.beta1 = parse(key, value)?,
            "train.beta2" => t.adam.beta2 = parse(key, value)?,
            "train.eps" => t.adam.eps = parse(key, value)?,
            "train.clip_norm" => t.adam.clip_norm = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.tau" => t.tau = value.parse()?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.max_steps" => {
                t.max_steps = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            _ => return self.set_task_or_io(key, value),
        }
        self.sync();
        Ok(())
    }

    fn set_task_or_io(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(rest) = key.strip_prefix("task.") {
            set_task_key(&mut self.task, rest, value)?;
        } else {
            let io = &mut self.io;
            match key {
                "io.data_dir" => io.data_dir = value.into(),
                "io.checkpoint" => io.checkpoint = value.into(),
                "io.log" => io.log = value.into(),
                "io.sweep_dir" => io.sweep_dir = value.into(),
                _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
            }
        }
        self.sync();
        Ok(())
    }

    /// Copies task geometry into the model configuration.
    fn sync(&mut self) {
        self.model.d_image = self.task.d_image;
        self.model.n_regions = self.task.n_regions;
        self.model.vocab_src = self.task.src_vocab_size();
        self.model.vocab_tgt = self.task.tgt_vocab_size();
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// Every key with its resolved value, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let (m, t) = (&self.model, &self.train);
        let mut out: Vec<(String, String)> = [
            ("model.n_enc_layers", m.n_enc_layers.to_string()),
            ("model.n_dec_layers", m.n_dec_layers.to_string()),
            ("model.n_heads", m.n_heads.to_string()),
            ("model.d_model", m.d_model.to_string()),
            ("model.d_ffn", m.d_ffn.to_string()),
            ("model.gumbel_layer", m.gumbel_layer.to_string()),
            ("model.ablation", m.ablation.to_string()),
            ("model.margin", m.margin.to_string()),
            ("model.loss_alpha", m.loss_alpha.to_string()),
            ("model.gate_threshold", m.gate_threshold.to_string()),
            ("model.init_seed", m.init_seed.to_string()),
            ("train.lr", t.adam.lr.to_string()),
            ("train.beta1", t.adam.beta1.to_string()),
            ("train.beta2", t.adam.beta2.to_string()),
            ("train.eps", t.adam.eps.to_string()),
            ("train.clip_norm", t.adam.clip_norm.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.tau", t.tau.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.max_steps", opt_to_string(t.max_steps)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(task_entries(&self.task));
        for (k, v) in [
            ("io.data_dir", &self.io.data_dir),
            ("io.checkpoint", &self.io.checkpoint),
            ("io.log", &self.io.log),
            ("io.sweep_dir", &self.io.sweep_dir),
        ] {
            out.push((k.to_string(), v.display().to_string()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// The model configuration, including task-derived sizes.
    pub fn model_config(&self) -> ModelConfig {
        self.model.clone()
    }
}

/// Sets `task.<key>` on a spec; `key` has the prefix removed.
pub fn set_task_key(spec: &mut SyntheticTaskSpec, key: &str, value: &str) -> Result<()> {
    let full = format!("task.{key}");
    let k = full.as_str();
    match key {
        "kind" => spec.task = value.parse()?,
        "vocab_size" => spec.vocab_size = parse(k, value)?,
        "min_len" => spec.min_len = parse(k, value)?,
        "max_len" => spec.max_len = parse(k, value)?,
        "n_regions" => spec.n_regions = parse(k, value)?,
        "d_image" => spec.d_image = parse(k, value)?,
        "n_relevant_regions" => spec.n_relevant_regions = parse(k, value)?,
        "noise_regions_std" => spec.noise_regions_std = parse(k, value)?,
        "signal_noise_std" => spec.signal_noise_std = parse(k, value)?,
        "n_train" => spec.n_train = parse(k, value)?,
        "n_val" => spec.n_val = parse(k, value)?,
        "n_test" => spec.n_test = parse(k, value)?,
        "seed" => spec.seed = parse(k, value)?,
        _ => return Err(Error::Config(format!("unknown config key `{full}`"))),
    }
    Ok(())
}

/// `task.*` entries of a spec in canonical order.
pub fn task_entries(spec: &SyntheticTaskSpec) -> Vec<(String, String)> {
    [
        ("kind", spec.task.to_string()),
        ("vocab_size", spec.vocab_size.to_string()),
        ("min_len", spec.min_len.to_string()),
        ("max_len", spec.max_len.to_string()),
        ("n_regions", spec.n_regions.to_string()),
        ("d_image", spec.d_image.to_string()),
        ("n_relevant_regions", spec.n_relevant_regions.to_string()),
        ("noise_regions_std", spec.noise_regions_std.to_string()),
        ("signal_noise_std", spec.signal_noise_std.to_string()),
        ("n_train", spec.n_train.to_string()),
        ("n_val", spec.n_val.to_string()),
        ("n_test", spec.n_test.to_string()),
        ("seed", spec.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("task.{k}"), v))
    .collect()
}
