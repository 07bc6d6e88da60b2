//! Dataset files.
//!
//! A dataset directory holds `manifest.txt` and one file per split
//! (`train.tsv`, `val.tsv`, `test.tsv`). Every file starts with a `#` header
//! line carrying the generating seed. The manifest then lists the resolved
//! `task.*` keys and one `count.<split>` line per split.
//!
//! Split records are one line each, with tab-separated fields:
//!
//! 1. example id
//! 2. source ids, space separated, with BOS and EOS
//! 3. target ids, same form
//! 4. index of the image-dependent target token, or `-`
//! 5. reading label `0`/`1`, or `-`
//! 6. relevant region indices, comma separated, or `-`
//! 7. image: standard base64 of the row-major `n_regions × d_image` matrix as
//!    little-endian `f32`

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::config::{set_task_key, task_entries};
use crate::data::{Dataset, Example, ExampleMeta, Image, Split, SyntheticTaskSpec};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.tsv", split.name()))
}

fn join_ids(ids: &[usize], sep: &str) -> String {
    ids.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(sep)
}

fn opt_field<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

pub fn encode_record(ex: &Example) -> String {
    let mut bytes = Vec::with_capacity(ex.image.data.len() * 4);
    for x in &ex.image.data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let relevant = if ex.meta.relevant_regions.is_empty() {
        "-".to_string()
    } else {
        join_ids(&ex.meta.relevant_regions, ",")
    };
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        ex.id,
        join_ids(&ex.src, " "),
        join_ids(&ex.tgt, " "),
        opt_field(ex.meta.ambiguous_pos),
        opt_field(ex.meta.label),
        relevant,
        STANDARD.encode(bytes)
    )
}

fn format_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format(format!("line {line}: {}", msg.into()))
}

fn parse_ids(field: &str, sep: char, line: usize) -> Result<Vec<usize>> {
    field
        .split(sep)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| format_err(line, format!("bad id {s:?}")))
        })
        .collect()
}

fn parse_opt<T: std::str::FromStr>(field: &str, line: usize) -> Result<Option<T>> {
    if field == "-" {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| format_err(line, format!("bad field {field:?}")))
}

pub fn decode_record(text: &str, spec: &SyntheticTaskSpec, line: usize) -> Result<Example> {
    let fields: Vec<&str> = text.split('\t').collect();
    let [id, src, tgt, pos, label, relevant, image] = fields[..] else {
        return Err(format_err(
            line,
            format!("expected 7 fields, found {}", fields.len()),
        ));
    };
    let bytes = STANDARD
        .decode(image)
        .map_err(|e| format_err(line, format!("bad image encoding: {e}")))?;
    let expected = spec.n_regions * spec.d_image;
    if bytes.len() != expected * 4 {
        return Err(format_err(
            line,
            format!(
                "image holds {} floats, expected {expected}",
                bytes.len() / 4
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let ex = Example {
        id: id
            .parse()
            .map_err(|_| format_err(line, format!("bad example id {id:?}")))?,
        src: parse_ids(src, ' ', line)?,
        tgt: parse_ids(tgt, ' ', line)?,
        image: Image {
            rows: spec.n_regions,
            cols: spec.d_image,
            data,
        },
        meta: ExampleMeta {
            ambiguous_pos: parse_opt(pos, line)?,
            label: parse_opt(label, line)?,
            relevant_regions: if relevant == "-" {
                Vec::new()
            } else {
                parse_ids(relevant, ',', line)?
            },
        },
    };
    if ex.src.len() < 2 || ex.tgt.len() < 2 {
        return Err(format_err(line, "source and target need BOS and EOS"));
    }
    if ex.src.iter().any(|&t| t >= spec.src_vocab_size())
        || ex.tgt.iter().any(|&t| t >= spec.tgt_vocab_size())
    {
        return Err(format_err(line, "token id outside the vocabulary"));
    }
    if ex
        .meta
        .ambiguous_pos
        .is_some_and(|p| p == 0 || p + 1 >= ex.tgt.len())
    {
        return Err(format_err(line, "ambiguous position outside the target"));
    }
    Ok(ex)
}

fn header(kind: &str, seed: u64) -> String {
    format!("# gumbel-mmt dataset {kind} seed={seed}\n")
}

fn header_seed(line: &str, path: &Path) -> Result<u64> {
    line.strip_prefix("# gumbel-mmt dataset ")
        .and_then(|rest| {
            rest.split_whitespace()
                .find_map(|kv| kv.strip_prefix("seed="))
        })
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::Format(format!(
                "{}: missing dataset header with seed",
                path.display()
            ))
        })
}

pub fn manifest_text(data: &Dataset) -> String {
    let mut out = header("manifest", data.spec.seed);
    for (k, v) in task_entries(&data.spec) {
        let _ = writeln!(out, "{k} = {v}");
    }
    for split in Split::ALL {
        let _ = writeln!(out, "count.{} = {}", split.name(), data.split(split).len());
    }
    out
}

pub fn split_text(data: &Dataset, split: Split) -> String {
    let mut out = header(&format!("split={}", split.name()), data.spec.seed);
    for ex in data.split(split) {
        out.push_str(&encode_record(ex));
        out.push('\n');
    }
    out
}

/// Writes the manifest and all three split files into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for split in Split::ALL {
        let path = split_path(dir, split);
        fs::write(&path, split_text(data, split)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest_text(data)).map_err(|e| Error::io(&path, e))
}

/// Reads the manifest: the task spec and the per-split record counts.
pub fn read_manifest(dir: &Path) -> Result<(SyntheticTaskSpec, [usize; 3])> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    let seed = header_seed(lines.next().unwrap_or(""), &path)?;
    let mut spec = SyntheticTaskSpec::default();
    let mut counts = [None; 3];
    for line in lines.map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Format(format!("{}: bad line {line:?}", path.display())))?;
        if let Some(name) = k.strip_prefix("count.") {
            let split: Split = name.parse()?;
            let n = v
                .parse()
                .map_err(|_| Error::Format(format!("{}: bad count {v:?}", path.display())))?;
            counts[Split::ALL
                .iter()
                .position(|&s| s == split)
                .expect("known split")] = Some(n);
        } else if let Some(key) = k.strip_prefix("task.") {
            set_task_key(&mut spec, key, v)?;
        } else {
            return Err(Error::Format(format!(
                "{}: unknown key `{k}`",
                path.display()
            )));
        }
    }
    if spec.seed != seed {
        return Err(Error::Format(format!(
            "{}: header seed differs from task.seed",
            path.display()
        )));
    }
    spec.validate()?;
    let counts = counts.map(|c| {
        c.ok_or_else(|| Error::Format(format!("{}: missing split count", path.display())))
    });
    let [a, b, c] = counts;
    Ok((spec, [a?, b?, c?]))
}

pub fn read_split(
    dir: &Path,
    split: Split,
    spec: &SyntheticTaskSpec,
    expected: usize,
) -> Result<Vec<Example>> {
    let path = split_path(dir, split);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    let seed = header_seed(lines.next().unwrap_or(""), &path)?;
    if seed != spec.seed {
        return Err(Error::Format(format!(
            "{}: seed {seed} differs from manifest seed {}",
            path.display(),
            spec.seed
        )));
    }
    let examples = lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| decode_record(l, spec, i + 2))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if examples.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} records, manifest says {expected}",
            path.display(),
            examples.len()
        )));
    }
    Ok(examples)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (spec, [n_train, n_val, n_test]) = read_manifest(dir)?;
    Ok(Dataset {
        train: read_split(dir, Split::Train, &spec, n_train)?,
        val: read_split(dir, Split::Val, &spec, n_val)?,
        test: read_split(dir, Split::Test, &spec, n_test)?,
        spec,
    })
}
