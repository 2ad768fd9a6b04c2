//! Accuracy and the n-gram overlap metrics used for rationales.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        if candidate == 0 || overlap == 0 {
            return Self::default();
        }
        let precision = overlap as f64 / candidate as f64;
        let recall = overlap as f64 / reference as f64;
        Self { precision, recall, f: 2.0 * precision * recall / (precision + recall) }
    }
}

pub fn accuracy<S: PartialEq>(predictions: &[S], gold: &[S]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::Data(format!("{} predictions for {} gold labels", predictions.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gold.len() as f64)
}

fn counts<T: Eq + Hash>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut map = HashMap::new();
    for item in items {
        *map.entry(item).or_insert(0) += 1;
    }
    map
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    counts(tokens.windows(n).map(|w| w.iter().map(AsRef::as_ref).collect::<Vec<_>>()))
}

/// Overlap count of unigrams with each type clipped at its reference count.
pub fn clipped_unigram_overlap<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> usize {
    let reference = ngrams(reference, 1);
    ngrams(candidate, 1).iter().map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0))).sum()
}

pub fn rouge_1<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<Prf> {
    if reference.is_empty() {
        return Err(Error::Data("ROUGE needs a non-empty reference".into()));
    }
    Ok(Prf::from_counts(clipped_unigram_overlap(candidate, reference), candidate.len(), reference.len()))
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<Prf> {
    if reference.is_empty() {
        return Err(Error::Data("ROUGE needs a non-empty reference".into()));
    }
    Ok(Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len()))
}

/// Sentence BLEU with per-reference clipping, add-one smoothing for orders
/// ≥ 2, and the brevity penalty against the closest reference length.
/// Orders for which the candidate has no n-grams are left out of the mean.
pub fn bleu<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R], max_n: usize) -> Result<f64> {
    if !(1..=4).contains(&max_n) {
        return Err(Error::Config(format!("BLEU order must lie in [1, 4], got {max_n}")));
    }
    if references.is_empty() {
        return Err(Error::Data("BLEU needs at least one reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=max_n {
        if candidate.len() < n {
            continue;
        }
        let cand = ngrams(candidate, n);
        let refs: Vec<_> = references.iter().map(|r| ngrams(r.as_ref(), n)).collect();
        let total = candidate.len() + 1 - n;
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refs.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0)))
            .sum();
        let p = if n == 1 { matched as f64 / total as f64 } else { (matched + 1) as f64 / (total + 1) as f64 };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
        orders += 1;
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / orders as f64).exp())
}
