//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes  "GMMTCKPT"
//! version   u32
//! config    str      resolved run configuration text
//! counters  u64 ×3   completed epochs, batches in the current epoch, steps
//! partial   f64 u64 f64 u64   running sums of the current epoch
//! log       u64 n, then n × (u64 epoch, f64 ×3, opt ×4)
//! params    u64 n, then n × (str name, u64 ndim, u64 dims…, f64 data…)
//! adam      u64 t, then m and v for every parameter in order
//! ```
//!
//! `str` is a `u64` byte length followed by UTF-8; `opt` is a `u8` presence
//! flag followed by an `f64`. Random streams are pure functions of the
//! configured seeds and the step counters, so no generator state is stored.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::{AdamState, EpochAccumulator, EpochRecord, TrainState};

pub const MAGIC: [u8; 8] = *b"GMMTCKPT";
pub const VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    pub state: TrainState,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn opt(&mut self, v: Option<f64>) -> io::Result<()> {
        self.u8(u8::from(v.is_some()))?;
        self.f64(v.unwrap_or(0.0))
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        self.u64(s.len() as u64)?;
        self.0.write_all(s.as_bytes())
    }
    fn floats(&mut self, xs: &[f64]) -> io::Result<()> {
        let mut buf = Vec::with_capacity(xs.len() * 8);
        for x in xs {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.0.write_all(&buf)
    }
}

struct Reader<R: Read>(R);

fn truncated(e: io::Error) -> Error {
    Error::Checkpoint(format!("truncated or unreadable checkpoint: {e}"))
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn opt(&mut self) -> Result<Option<f64>> {
        let flag = self.u8()?;
        let v = self.f64()?;
        match flag {
            0 => Ok(None),
            1 => Ok(Some(v)),
            f => Err(Error::Checkpoint(format!("bad option flag {f}"))),
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let mut buf = Vec::new();
        (&mut self.0)
            .take(n as u64)
            .read_to_end(&mut buf)
            .map_err(truncated)?;
        if buf.len() != n {
            return Err(Error::Checkpoint("truncated string".into()));
        }
        String::from_utf8(buf).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = Vec::new();
        (&mut self.0)
            .take(n as u64 * 8)
            .read_to_end(&mut buf)
            .map_err(truncated)?;
        if buf.len() != n * 8 {
            return Err(Error::Checkpoint("truncated tensor data".into()));
        }
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

/// Serializes a checkpoint into `out`.
pub fn write(out: impl Write, config: &RunConfig, model: &Model, state: &TrainState) -> Result<()> {
    let mut w = Writer(out);
    let io = |e: io::Error| Error::Checkpoint(format!("write failed: {e}"));
    (|| -> io::Result<()> {
        w.0.write_all(&MAGIC)?;
        w.u32(VERSION)?;
        w.str(&config.to_text())?;
        w.u64(state.epoch as u64)?;
        w.u64(state.batch as u64)?;
        w.u64(state.step)?;
        w.f64(state.acc.loss_sum)?;
        w.u64(state.acc.examples)?;
        w.f64(state.acc.gate_sum)?;
        w.u64(state.acc.gate_count)?;
        w.u64(state.log.len() as u64)?;
        for r in &state.log {
            w.u64(r.epoch as u64)?;
            w.f64(r.train_loss)?;
            w.f64(r.val_loss)?;
            w.f64(r.val_bleu)?;
            w.opt(r.val_amb_acc)?;
            w.opt(r.gate_open_rate)?;
            w.opt(r.alpha_eff)?;
            w.opt(r.train_gate_mean)?;
        }
        let params = model.params();
        w.u64(params.len() as u64)?;
        for (_, p) in params.iter() {
            w.str(&p.name)?;
            w.u64(p.value.ndim() as u64)?;
            for &d in p.value.shape() {
                w.u64(d as u64)?;
            }
            w.floats(p.value.data())?;
        }
        w.u64(state.adam.t)?;
        for (m, v) in state.adam.m.iter().zip(&state.adam.v) {
            w.floats(m)?;
            w.floats(v)?;
        }
        w.0.flush()
    })()
    .map_err(io)
}

/// Reads a checkpoint and rebuilds the model from its stored configuration.
pub fn read(input: impl Read) -> Result<Checkpoint> {
    let mut r = Reader(input);
    let magic: [u8; 8] = r.bytes()?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    let config = RunConfig::parse(&r.str()?)?;
    let epoch = r.len()?;
    let batch = r.len()?;
    let step = r.u64()?;
    let acc = EpochAccumulator {
        loss_sum: r.f64()?,
        examples: r.u64()?,
        gate_sum: r.f64()?,
        gate_count: r.u64()?,
    };
    let n_log = r.len()?;
    let mut log = Vec::new();
    for _ in 0..n_log {
        log.push(EpochRecord {
            epoch: r.len()?,
            train_loss: r.f64()?,
            val_loss: r.f64()?,
            val_bleu: r.f64()?,
            val_amb_acc: r.opt()?,
            gate_open_rate: r.opt()?,
            alpha_eff: r.opt()?,
            train_gate_mean: r.opt()?,
        });
    }

    let mut model = Model::new(config.model_config())?;
    let n_params = r.len()?;
    if n_params != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {n_params} parameters, configuration expects {}",
            model.params().len()
        )));
    }
    let mut order = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let ndim = r.len()?;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let slot = model
            .params_mut()
            .by_name_mut(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
        if slot.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        let data = r.floats(slot.numel())?;
        *slot = Tensor::new(shape, data)?;
        order.push(name);
    }
    check_order(model.params(), &order)?;

    let t = r.u64()?;
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for (_, p) in model.params().iter() {
        m.push(r.floats(p.value.numel())?);
        v.push(r.floats(p.value.numel())?);
    }
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest).map_err(truncated)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }

    Ok(Checkpoint {
        config,
        model,
        state: TrainState {
            epoch,
            batch,
            step,
            adam: AdamState { m, v, t },
            acc,
            log,
        },
    })
}

fn check_order(params: &ParamStore, order: &[String]) -> Result<()> {
    for ((_, p), name) in params.iter().zip(order) {
        if &p.name != name {
            return Err(Error::Checkpoint(format!(
                "parameter order differs: found `{name}` where `{}` was expected",
                p.name
            )));
        }
    }
    Ok(())
}

pub fn save(path: &Path, config: &RunConfig, model: &Model, state: &TrainState) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    write(&mut buf, config, model, state)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read(bytes.as_slice())
}
