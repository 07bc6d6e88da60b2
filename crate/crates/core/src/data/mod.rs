//! Synthetic multi-modal translation tasks.
//!
//! `Disambiguation` is the desk-scale stand-in for a captioned-image corpus:
//! the source sentence holds one ambiguous word whose translation depends on
//! a few image regions, while the remaining regions are pure noise.

pub mod vocab;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::Tensor;
use vocab::{Vocabulary, BOS, EOS, RESERVED};

/// Source id of the ambiguous word.
pub const AMBIGUOUS: usize = RESERVED.len();
/// Target ids of the two readings of the ambiguous word.
pub const READINGS: [usize; 2] = [RESERVED.len(), RESERVED.len() + 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Target equals source.
    Copy,
    Disambiguation,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "disambiguation" => Ok(TaskKind::Disambiguation),
            _ => Err(Error::Config(format!(
                "unknown task {s:?} (expected copy or disambiguation)"
            ))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Copy => "copy",
            TaskKind::Disambiguation => "disambiguation",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub task: TaskKind,
    /// Source vocabulary size including reserved ids.
    pub vocab_size: usize,
    /// Inclusive range of content words per sentence, BOS/EOS excluded.
    pub min_len: usize,
    pub max_len: usize,
    pub n_regions: usize,
    pub d_image: usize,
    pub n_relevant_regions: usize,
    pub noise_regions_std: f64,
    /// Std of the noise added to signature rows.
    pub signal_noise_std: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            task: TaskKind::Disambiguation,
            vocab_size: 50,
            min_len: 6,
            max_len: 10,
            n_regions: 49,
            d_image: 512,
            n_relevant_regions: 3,
            noise_regions_std: 1.0,
            signal_noise_std: 0.1,
            n_train: 2000,
            n_val: 200,
            n_test: 200,
            seed: 1,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let min_vocab = match self.task {
            TaskKind::Copy => RESERVED.len() + 1,
            TaskKind::Disambiguation => RESERVED.len() + 3,
        };
        if self.vocab_size < min_vocab {
            return fail(format!(
                "vocab_size {} too small for the {} task (need at least {min_vocab})",
                self.vocab_size, self.task
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            ));
        }
        if self.n_regions == 0 || self.d_image == 0 {
            return fail("n_regions and d_image must be positive".into());
        }
        if self.n_relevant_regions >= self.n_regions {
            return fail(format!(
                "n_relevant_regions {} must be below n_regions {}",
                self.n_relevant_regions, self.n_regions
            ));
        }
        if self.task == TaskKind::Disambiguation && self.n_relevant_regions == 0 {
            return fail("the disambiguation task needs at least one relevant region".into());
        }
        if !(self.noise_regions_std >= 0.0 && self.signal_noise_std >= 0.0) {
            return fail("noise std must be non-negative".into());
        }
        Ok(())
    }

    pub fn src_vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Disambiguation targets need one extra id for the second reading.
    pub fn tgt_vocab_size(&self) -> usize {
        match self.task {
            TaskKind::Copy => self.vocab_size,
            TaskKind::Disambiguation => self.vocab_size + 1,
        }
    }

    pub fn src_vocab(&self) -> Vocabulary {
        Vocabulary::synthetic("s", self.src_vocab_size()).expect("validated size")
    }

    pub fn tgt_vocab(&self) -> Vocabulary {
        Vocabulary::synthetic("t", self.tgt_vocab_size()).expect("validated size")
    }

    fn content_words(&self) -> std::ops::Range<usize> {
        match self.task {
            TaskKind::Copy => RESERVED.len()..self.vocab_size,
            TaskKind::Disambiguation => AMBIGUOUS + 1..self.vocab_size,
        }
    }
}

/// Region features, stored in single precision.
#[derive(Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{})", self.rows, self.cols)
    }
}

impl Image {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [self.rows, self.cols],
            self.data.iter().map(|&x| f64::from(x)).collect(),
        )
        .expect("image dims match data")
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExampleMeta {
    /// Index into `tgt` of the image-dependent token.
    pub ambiguous_pos: Option<usize>,
    /// Which reading (0 or 1) the image encodes.
    pub label: Option<u8>,
    /// Sorted indices of the image rows carrying the signature.
    pub relevant_regions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub image: Image,
    pub meta: ExampleMeta,
}

impl Example {
    /// Decoder input: the target without its final token.
    pub fn decoder_input(&self) -> &[usize] {
        &self.tgt[..self.tgt.len() - 1]
    }

    /// Next-token targets: the target without BOS.
    pub fn decoder_targets(&self) -> &[usize] {
        &self.tgt[1..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!(
                "unknown split {s:?} (expected train, val or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticTaskSpec,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

const SIGNATURE_STREAM: u64 = 0x5349_474e;
const LEXICON_STREAM: u64 = 0x4c45_5849;
const EXAMPLE_STREAM: u64 = 0x4558_4d50;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `rows × cols` matrix of i.i.d. N(0, 1) draws from `seed`.
pub fn random_image(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| f64::from(normal(&mut rng) as f32))
        .collect();
    Tensor::new([rows, cols], data).expect("length matches shape")
}

/// The two image signatures of the disambiguation task.
pub fn signatures(spec: &SyntheticTaskSpec) -> [Vec<f64>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(spec.seed, &[SIGNATURE_STREAM]));
    let mut draw = || {
        (0..spec.d_image)
            .map(|_| normal(&mut rng))
            .collect::<Vec<_>>()
    };
    [draw(), draw()]
}

/// Word-for-word translation table from source to target ids.
pub fn lexicon(spec: &SyntheticTaskSpec) -> Vec<usize> {
    let mut table: Vec<usize> = (0..spec.src_vocab_size()).collect();
    if spec.task == TaskKind::Disambiguation {
        let words = spec.content_words();
        let mut targets: Vec<usize> = words.clone().map(|w| w + 1).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(spec.seed, &[LEXICON_STREAM]));
        for i in (1..targets.len()).rev() {
            targets.swap(i, rng.random_range(0..=i));
        }
        for (w, t) in words.zip(targets) {
            table[w] = t;
        }
    }
    table
}

struct Generator<'s> {
    spec: &'s SyntheticTaskSpec,
    signatures: Option<[Vec<f64>; 2]>,
    lexicon: Vec<usize>,
}

impl Generator<'_> {
    fn example(&self, id: u64) -> Example {
        let spec = self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(spec.seed, &[EXAMPLE_STREAM, id]));
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let words = spec.content_words();
        let mut content: Vec<usize> = (0..len).map(|_| rng.random_range(words.clone())).collect();

        let mut meta = ExampleMeta::default();
        let mut target: Vec<usize> = content.iter().map(|&w| self.lexicon[w]).collect();
        if let Some(sigs) = &self.signatures {
            let pos = rng.random_range(0..len);
            let label = (id % 2) as u8;
            content[pos] = AMBIGUOUS;
            target[pos] = READINGS[label as usize];
            let mut relevant = sample(&mut rng, spec.n_regions, spec.n_relevant_regions).into_vec();
            relevant.sort_unstable();
            meta = ExampleMeta {
                ambiguous_pos: Some(pos + 1),
                label: Some(label),
                relevant_regions: relevant,
            };
            let sig = &sigs[label as usize];
            let mut data = Vec::with_capacity(spec.n_regions * spec.d_image);
            for r in 0..spec.n_regions {
                let is_signal = meta.relevant_regions.binary_search(&r).is_ok();
                for &s in &sig[..spec.d_image] {
                    let x = if is_signal {
                        s + spec.signal_noise_std * normal(&mut rng)
                    } else {
                        spec.noise_regions_std * normal(&mut rng)
                    };
                    data.push(x as f32);
                }
            }
            return self.finish(id, content, target, data, meta);
        }

        let data = (0..spec.n_regions * spec.d_image)
            .map(|_| (spec.noise_regions_std * normal(&mut rng)) as f32)
            .collect();
        self.finish(id, content, target, data, meta)
    }

    fn finish(
        &self,
        id: u64,
        content: Vec<usize>,
        target: Vec<usize>,
        data: Vec<f32>,
        meta: ExampleMeta,
    ) -> Example {
        let wrap = |body: Vec<usize>| {
            let mut v = Vec::with_capacity(body.len() + 2);
            v.push(BOS);
            v.extend(body);
            v.push(EOS);
            v
        };
        Example {
            id,
            src: wrap(content),
            tgt: wrap(target),
            image: Image {
                rows: self.spec.n_regions,
                cols: self.spec.d_image,
                data,
            },
            meta,
        }
    }
}

/// Generates the three splits. Example ids run consecutively through train,
/// val and test, and each example depends only on `(seed, id)`.
pub fn generate(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let gen = Generator {
        spec,
        signatures: (spec.task == TaskKind::Disambiguation).then(|| signatures(spec)),
        lexicon: lexicon(spec),
    };
    let mut next = 0u64;
    let mut take = |n: usize| {
        let out: Vec<Example> = (next..next + n as u64).map(|id| gen.example(id)).collect();
        next += n as u64;
        out
    };
    let train = take(spec.n_train);
    let val = take(spec.n_val);
    let test = take(spec.n_test);
    Ok(Dataset {
        spec: spec.clone(),
        train,
        val,
        test,
    })
}
