//! Greedy-decoding evaluation with infer-mode gates.

use crate::autodiff::Tape;
use crate::data::{Example, READINGS};
use crate::error::{Error, Result};
use crate::gumbel::{NoiseSource, Temperature};
use crate::model::Model;
use crate::train::bleu::corpus_bleu;

/// Extra tokens allowed beyond the source length when decoding.
pub const DECODE_SLACK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub examples: usize,
    /// Mean teacher-forced total loss.
    pub loss: f64,
    pub bleu: f64,
    /// Position-wise token matches over the longer of hypothesis and
    /// reference, pooled over the split.
    pub token_accuracy: f64,
    pub exact_match: f64,
    /// Fraction of image-dependent positions where the decoder, given the
    /// reference prefix, scores the correct reading above the other one.
    /// Present when the split carries image-dependent tokens.
    pub ambiguous_token_accuracy: Option<f64>,
    /// Fraction of image-dependent tokens reproduced by greedy decoding.
    pub ambiguous_decoded_accuracy: Option<f64>,
    /// Fraction of infer-mode gates equal to 1; absent without Gumbel gates.
    pub gate_open_rate: Option<f64>,
    pub relevant_open_rate: Option<f64>,
    pub noise_open_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleResult {
    pub id: u64,
    pub hypothesis: Vec<usize>,
    /// Target without BOS and EOS.
    pub reference: Vec<usize>,
    pub loss: f64,
    pub ambiguous_correct: Option<bool>,
    pub ambiguous_decoded: Option<bool>,
    pub gate_open_rate: Option<f64>,
}

#[derive(Default)]
struct OpenCount {
    open: usize,
    total: usize,
}

impl OpenCount {
    fn add(&mut self, value: f64) {
        self.total += 1;
        if value == 1.0 {
            self.open += 1;
        }
    }

    fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.open as f64 / self.total as f64)
    }
}

pub fn evaluate(model: &Model, examples: &[Example]) -> Result<Metrics> {
    evaluate_detailed(model, examples).map(|(m, _)| m)
}

pub fn evaluate_detailed(
    model: &Model,
    examples: &[Example],
) -> Result<(Metrics, Vec<ExampleResult>)> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluate: empty split"));
    }
    let mut results = Vec::with_capacity(examples.len());
    let (mut matched, mut positions, mut exact) = (0usize, 0usize, 0usize);
    let (mut amb_right, mut amb_decoded, mut amb_total) = (0usize, 0usize, 0usize);
    let (mut all, mut relevant, mut noise) = (
        OpenCount::default(),
        OpenCount::default(),
        OpenCount::default(),
    );
    let mut loss_sum = 0.0;

    for ex in examples {
        let raw = ex.image.to_tensor();
        let image = model.image_for(&raw, ex.id);
        let mut tape = Tape::new();
        let img = tape.constant_ref(image.as_ref());
        let x = model.embed_source(&mut tape, &ex.src)?;
        let mut rng = NoiseSource::new(0);
        let enc = model.encode_multimodal(
            &mut tape,
            x,
            img,
            Temperature::default(),
            &mut rng,
            model.infer_mode(),
        )?;
        let logits = model.decode(&mut tape, ex.decoder_input(), enc.output.fused)?;
        let terms = model.total_loss(&mut tape, logits, ex.decoder_targets(), &enc.output)?;
        let loss = tape.value(terms.total).item();
        loss_sum += loss;
        let hyp = model.greedy_from(&mut tape, enc.output.fused, ex.src.len() + DECODE_SLACK)?;

        let reference = ex.tgt[1..ex.tgt.len() - 1].to_vec();
        matched += hyp.iter().zip(&reference).filter(|(h, r)| h == r).count();
        positions += hyp.len().max(reference.len());
        exact += usize::from(hyp == reference);
        let ambiguous_decoded = ex
            .meta
            .ambiguous_pos
            .map(|pos| hyp.get(pos - 1) == Some(&ex.tgt[pos]));
        let ambiguous_correct = match (ex.meta.ambiguous_pos, ex.meta.label) {
            (Some(pos), Some(label)) => {
                let row = tape.value(logits).row(pos - 1);
                let (right, wrong) = (READINGS[label as usize], READINGS[1 - label as usize]);
                Some(row[right] > row[wrong])
            }
            _ => None,
        };
        if let (Some(ok), Some(dec)) = (ambiguous_correct, ambiguous_decoded) {
            amb_total += 1;
            amb_right += usize::from(ok);
            amb_decoded += usize::from(dec);
        }

        let mut own = OpenCount::default();
        for g in &enc.gates {
            let values = g.values(&tape);
            let cols = values.cols();
            for (k, &v) in values.data().iter().enumerate() {
                own.add(v);
                all.add(v);
                if ex.meta.relevant_regions.binary_search(&(k % cols)).is_ok() {
                    relevant.add(v);
                } else if !ex.meta.relevant_regions.is_empty() {
                    noise.add(v);
                }
            }
        }
        results.push(ExampleResult {
            id: ex.id,
            hypothesis: hyp,
            reference,
            loss,
            ambiguous_correct,
            ambiguous_decoded,
            gate_open_rate: own.rate(),
        });
    }

    let hyps: Vec<&[usize]> = results.iter().map(|r| r.hypothesis.as_slice()).collect();
    let refs: Vec<&[usize]> = results.iter().map(|r| r.reference.as_slice()).collect();
    let n = examples.len();
    let metrics = Metrics {
        examples: n,
        loss: loss_sum / n as f64,
        bleu: corpus_bleu(&hyps, &refs, 4)?,
        token_accuracy: if positions == 0 {
            1.0
        } else {
            matched as f64 / positions as f64
        },
        exact_match: exact as f64 / n as f64,
        ambiguous_token_accuracy: (amb_total > 0).then(|| amb_right as f64 / amb_total as f64),
        ambiguous_decoded_accuracy: (amb_total > 0).then(|| amb_decoded as f64 / amb_total as f64),
        gate_open_rate: all.rate(),
        relevant_open_rate: relevant.rate(),
        noise_open_rate: noise.rate(),
    };
    Ok((metrics, results))
}
