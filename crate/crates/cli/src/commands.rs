use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gumbel_mmt::checkpoint;
use gumbel_mmt::config::task_entries;
use gumbel_mmt::data::{self, Dataset, Split};
use gumbel_mmt::dataset_io::{self, MANIFEST};
use gumbel_mmt::train::{
    self, evaluate, evaluate_detailed, EpochRecord, Event, Outcome, TrainState,
};
use gumbel_mmt::{AblationFlags, Error as CoreError, Model, RunConfig};
use serde_json::json;

use crate::render::render_gates;
use crate::{resolve, CliError, CliResult, Common};

pub const LOG_COLUMNS: [&str; 7] = [
    "epoch",
    "train_loss",
    "val_loss",
    "val_bleu",
    "val_amb_acc",
    "gate_open_rate",
    "alpha_eff",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn generate(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let data = data::generate(&cfg.task)?;
    dataset_io::write_dataset(&cfg.io.data_dir, &data)?;
    writeln!(
        out,
        "wrote {} train / {} val / {} test examples to {} (seed {})",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        cfg.io.data_dir.display(),
        data.spec.seed
    )?;
    Ok(())
}

fn read_data(dir: &Path) -> CliResult<Dataset> {
    if !dir.join(MANIFEST).is_file() {
        return Err(CliError::MissingData(dir.to_path_buf()));
    }
    Ok(dataset_io::read_dataset(dir)?)
}

/// Loads the dataset and adopts its task settings into `cfg`.
fn load_data(cfg: &mut RunConfig) -> CliResult<Dataset> {
    let data = read_data(&cfg.io.data_dir)?;
    if data.spec != cfg.task {
        log::warn!(
            "task settings differ from the dataset manifest in {}; using the manifest",
            cfg.io.data_dir.display()
        );
        for (k, v) in task_entries(&data.spec) {
            cfg.set(&k, &v)?;
        }
    }
    Ok(data)
}

fn log_csv(records: &[EpochRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LOG_COLUMNS)?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.val_bleu.to_string(),
            opt(r.val_amb_acc),
            opt(r.gate_open_rate),
            opt(r.alpha_eff),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

pub fn best_checkpoint_path(path: &Path) -> PathBuf {
    path.with_extension("best.ckpt")
}

pub fn config_echo_path(path: &Path) -> PathBuf {
    path.with_extension("config.txt")
}

fn training(
    cfg: &RunConfig,
    data: &Dataset,
    mut model: Model,
    mut state: TrainState,
    out: &mut dyn Write,
) -> CliResult<(Model, TrainState, Outcome)> {
    let ckpt = cfg.io.checkpoint.clone();
    write_file(&config_echo_path(&ckpt), cfg.to_text().as_bytes())?;
    let outcome = train::run(
        &mut model,
        data,
        &cfg.train,
        &mut state,
        &mut |model, state, event| {
            match event {
                Event::Step { step, loss } => log::debug!("step {step} loss {loss}"),
                Event::Epoch(record) => {
                    let csv = log_csv(&state.log).map_err(|e| CoreError::Format(e.to_string()))?;
                    write_file(&cfg.io.log, &csv)?;
                    checkpoint::save(&ckpt, cfg, model, state)?;
                    let earlier = &state.log[..state.log.len() - 1];
                    if earlier.iter().all(|r| record.val_loss < r.val_loss) {
                        checkpoint::save(&best_checkpoint_path(&ckpt), cfg, model, state)?;
                    }
                }
            }
            Ok(())
        },
    )?;
    match outcome {
        Outcome::Interrupted => {
            checkpoint::save(&ckpt, cfg, &model, &state)?;
            writeln!(
                out,
                "stopped after step {}; continue with `gmmt train --resume`",
                state.step
            )?;
        }
        Outcome::Finished => match state.log.last() {
            Some(r) => writeln!(
                out,
                "epoch={} train_loss={} val_loss={} val_bleu={} val_amb_acc={} gate_open_rate={} alpha_eff={}",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.val_bleu,
                na(r.val_amb_acc),
                na(r.gate_open_rate),
                na(r.alpha_eff)
            )?,
            None => {
                checkpoint::save(&ckpt, cfg, &model, &state)?;
                writeln!(out, "no epochs to run")?;
            }
        },
    }
    Ok((model, state, outcome))
}

pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = cfg.clone();
    let data = load_data(&mut cfg)?;
    let model = Model::new(cfg.model_config())?;
    let state = TrainState::new(&model);
    training(&cfg, &data, model, state, out).map(|_| ())
}

/// Continues the run stored at `io.checkpoint`. The stored configuration is
/// used, with `train.max_steps` cleared and command-line overrides applied.
pub fn resume(
    common: &Common,
    overrides: &[(String, String)],
    out: &mut dyn Write,
) -> CliResult<()> {
    let base = resolve(common, overrides)?;
    let ck = checkpoint::load(&base.io.checkpoint)?;
    let mut cfg = ck.config;
    cfg.train.max_steps = None;
    cfg.io = base.io;
    for (k, v) in overrides.iter().filter(|(k, _)| !k.starts_with("io.")) {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    if cfg.model_config() != *ck.model.config() {
        return Err(CliError::Usage(
            "model settings cannot change when resuming".into(),
        ));
    }
    let data = load_data(&mut cfg)?;
    training(&cfg, &data, ck.model, ck.state, out).map(|_| ())
}

/// Checkpoint and dataset for `eval` and `inspect-gates`. Only `io.*` keys
/// may be overridden; the model comes from the checkpoint.
fn load_run(
    common: &Common,
    overrides: &[(String, String)],
    path: Option<PathBuf>,
) -> CliResult<(Model, Dataset)> {
    if let Some((k, _)) = overrides.iter().find(|(k, _)| !k.starts_with("io.")) {
        return Err(CliError::Usage(format!(
            "--{k}: only io.* keys can be overridden here; model settings come from the checkpoint"
        )));
    }
    let resolved = resolve(common, overrides)?;
    let ck = checkpoint::load(&path.unwrap_or_else(|| resolved.io.checkpoint.clone()))?;
    let explicit = common.config.is_some() || overrides.iter().any(|(k, _)| k == "io.data_dir");
    let dir = if explicit {
        resolved.io.data_dir
    } else {
        ck.config.io.data_dir
    };
    let data = read_data(&dir)?;
    let m = ck.model.config();
    if (m.n_regions, m.d_image, m.vocab_src, m.vocab_tgt)
        != (
            data.spec.n_regions,
            data.spec.d_image,
            data.spec.src_vocab_size(),
            data.spec.tgt_vocab_size(),
        )
    {
        return Err(CliError::Runtime(format!(
            "dataset in {} does not match the checkpoint's image or vocabulary sizes",
            dir.display()
        )));
    }
    Ok((ck.model, data))
}

pub fn eval(
    common: &Common,
    overrides: &[(String, String)],
    checkpoint: Option<PathBuf>,
    split: Split,
    dump: Option<PathBuf>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let (model, data) = load_run(common, overrides, checkpoint)?;
    let (m, results) = evaluate_detailed(&model, data.split(split))?;
    for (k, v) in [
        ("split", split.to_string()),
        ("examples", m.examples.to_string()),
        ("loss", m.loss.to_string()),
        ("bleu", m.bleu.to_string()),
        ("token_accuracy", m.token_accuracy.to_string()),
        ("exact_match", m.exact_match.to_string()),
        ("ambiguous_token_accuracy", na(m.ambiguous_token_accuracy)),
        (
            "ambiguous_decoded_accuracy",
            na(m.ambiguous_decoded_accuracy),
        ),
        ("gate_open_rate", na(m.gate_open_rate)),
        ("relevant_open_rate", na(m.relevant_open_rate)),
        ("noise_open_rate", na(m.noise_open_rate)),
    ] {
        writeln!(out, "{k}={v}")?;
    }
    if let Some(path) = dump {
        let mut text = String::new();
        for r in &results {
            let line = json!({
                "id": r.id,
                "hypothesis": r.hypothesis,
                "reference": r.reference,
                "loss": r.loss,
                "ambiguous_correct": r.ambiguous_correct,
                "ambiguous_decoded": r.ambiguous_decoded,
                "gate_open_rate": r.gate_open_rate,
            });
            text.push_str(&line.to_string());
            text.push('\n');
        }
        write_file(&path, text.as_bytes())?;
    }
    Ok(())
}

pub fn inspect_gates(
    common: &Common,
    overrides: &[(String, String)],
    checkpoint: Option<PathBuf>,
    example: u64,
    out: &mut dyn Write,
) -> CliResult<()> {
    let (model, data) = load_run(common, overrides, checkpoint)?;
    let ex = Split::ALL
        .iter()
        .flat_map(|&s| data.split(s))
        .find(|e| e.id == example)
        .ok_or_else(|| CliError::Runtime(format!("no example with id {example}")))?;
    if !model.config().ablation.uses_gumbel() {
        return Err(CliError::Runtime(format!(
            "the `{}` model has no Gumbel gates to inspect",
            model.config().ablation
        )));
    }
    let raw = ex.image.to_tensor();
    let image = model.image_for(&raw, ex.id);
    let decoded = model.greedy_decode(&ex.src, &image, ex.src.len() + train::eval::DECODE_SLACK)?;
    let src_vocab = data.spec.src_vocab();
    let tokens: Vec<String> = ex
        .src
        .iter()
        .map(|&t| src_vocab.token(t).unwrap_or("<unk>").to_string())
        .collect();
    write!(
        out,
        "{}",
        render_gates(&tokens, &decoded.gates, &ex.meta.relevant_regions)?
    )?;
    Ok(())
}

pub fn ablation_sweep(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = cfg.clone();
    let data = load_data(&mut cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "val_bleu",
        "val_amb_acc",
        "test_bleu",
        "test_amb_acc",
        "gate_open_rate",
    ])?;
    for variant in AblationFlags::VARIANTS {
        let mut vcfg = cfg.clone();
        vcfg.set("model.ablation", variant)?;
        let dir = cfg.io.sweep_dir.join(variant);
        vcfg.io.checkpoint = dir.join("model.ckpt");
        vcfg.io.log = dir.join("train.csv");
        writeln!(out, "== {variant}")?;
        let model = Model::new(vcfg.model_config())?;
        let state = TrainState::new(&model);
        let (model, state, _) = training(&vcfg, &data, model, state, out)?;
        let last = state.log.last();
        let test = if data.test.is_empty() {
            None
        } else {
            Some(evaluate(&model, &data.test)?)
        };
        w.write_record([
            variant.to_string(),
            opt(last.map(|r| r.val_bleu)),
            opt(last.and_then(|r| r.val_amb_acc)),
            opt(test.as_ref().map(|m| m.bleu)),
            opt(test.as_ref().and_then(|m| m.ambiguous_token_accuracy)),
            opt(test.as_ref().and_then(|m| m.gate_open_rate)),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    let path = cfg.io.sweep_dir.join("summary.csv");
    write_file(&path, &bytes)?;
    writeln!(out, "summary written to {}", path.display())?;
    out.write_all(&bytes)?;
    Ok(())
}
