//! Corpus-level BLEU.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with clipped n-gram precisions for `n = 1..=max_n` and the
/// brevity penalty `exp(1 − r/c)` when `c < r`.
///
/// A zero precision with `c_n` candidate n-grams is replaced by
/// `1 / (2·c_n)`. Orders for which the corpus has no candidate n-grams at all
/// are left out of the geometric mean.
pub fn corpus_bleu<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(
    hypotheses: &[H],
    references: &[R],
    max_n: usize,
) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Empty("corpus_bleu: no hypotheses"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(
            "corpus_bleu",
            format!(
                "{} hypotheses but {} references",
                hypotheses.len(),
                references.len()
            ),
        ));
    }
    if max_n == 0 {
        return Err(Error::invalid("corpus_bleu", "max_n must be positive"));
    }

    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hypotheses.iter().zip(references) {
        let (h, rf) = (h.as_ref(), rf.as_ref());
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(rf, n);
            for (gram, &k) in &hc {
                matches[n - 1] += k.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if c == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    let mut orders = 0;
    for (&m, &t) in matches.iter().zip(&totals) {
        if t == 0 {
            continue;
        }
        let p = if m == 0 {
            1.0 / (2.0 * t as f64)
        } else {
            m as f64 / t as f64
        };
        log_sum += p.ln();
        orders += 1;
    }
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / orders as f64).exp())
}
