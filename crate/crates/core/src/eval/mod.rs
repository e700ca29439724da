//! Corpus BLEU-4, ROUGE-L and ROUGE-4 over pre-tokenized text.
//!
//! BLEU follows the usual corpus definition: clipped n-gram counts summed over
//! the corpus, uniform weights over n = 1..4, no smoothing, and a brevity penalty
//! against the closest reference length per example (shorter on ties). Every
//! example adds at least one to each order's n-gram total, as nltk does, so
//! empty or very short hypotheses still count against precision.
//! Per-example BLEU adds one to the higher-order counts and is for reporting
//! only. ROUGE scores each example against its best reference by F-measure
//! (β = 1) and averages over examples.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{hypotheses} hypotheses but {references} reference lists")]
    CountMismatch { hypotheses: usize, references: usize },
    #[error("example {0} has no reference")]
    NoReference(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    /// Longest common subsequence.
    L,
    /// n-gram overlap of the given order.
    N(usize),
}

impl RougeVariant {
    pub fn name(&self) -> String {
        match self {
            RougeVariant::L => String::from("ROUGE-L"),
            RougeVariant::N(n) => alloc::format!("ROUGE-{n}"),
        }
    }
}

/// Precision, recall and F-measure of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    fn new(overlap: usize, hyp: usize, reference: usize) -> Self {
        let precision = if hyp == 0 { 0.0 } else { overlap as f64 / hyp as f64 };
        let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    /// BLEU on a 0–100 scale; ROUGE F-measure in [0, 1].
    pub score: f64,
    pub per_example: Vec<f64>,
    /// Modified n-gram precisions for n = 1..4 (BLEU only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precisions: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brevity_penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_length: Option<usize>,
    /// Mean precision and recall of the chosen references (ROUGE only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
}

pub type Tokens = Vec<String>;

/// Splits texts with the corpus tokenizer.
pub fn tokenize_all(texts: &[String], lowercase: bool) -> Vec<Tokens> {
    texts.iter().map(|t| tokenize(t, lowercase)).collect()
}

fn check(hyps: &[Tokens], refs: &[Vec<Tokens>]) -> Result<(), MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::CountMismatch { hypotheses: hyps.len(), references: refs.len() });
    }
    if hyps.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(MetricError::NoReference(i));
    }
    Ok(())
}

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram count for order `n`. The count is at
/// least 1, so a hypothesis shorter than `n` still adds to the corpus total.
fn clipped(hyp: &[String], refs: &[Tokens], n: usize) -> (usize, usize) {
    let counts = ngrams(hyp, n);
    let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
    for r in refs {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = counts.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matched, hyp.len().saturating_sub(n - 1).max(1))
}

fn closest_ref_len(hyp_len: usize, refs: &[Tokens]) -> usize {
    refs.iter().map(Vec::len).min_by_key(|&r| (r.abs_diff(hyp_len), r)).expect("checked non-empty")
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        libm::exp(1.0 - r as f64 / c as f64)
    }
}

/// Sentence BLEU on a 0–100 scale with add-one smoothing on the 2- to 4-gram
/// precisions; the unigram precision is left as is.
pub fn sentence_bleu(hyp: &[String], refs: &[Tokens]) -> f64 {
    let (m1, l1) = clipped(hyp, refs, 1);
    if m1 == 0 {
        return 0.0;
    }
    let mut log_sum = libm::log(m1 as f64 / l1 as f64);
    for n in 2..=4 {
        let (m, l) = clipped(hyp, refs, n);
        log_sum += libm::log((m as f64 + 1.0) / (l as f64 + 1.0));
    }
    100.0 * brevity_penalty(hyp.len(), closest_ref_len(hyp.len(), refs)) * libm::exp(log_sum / 4.0)
}

pub fn bleu4(hyps: &[Tokens], refs: &[Vec<Tokens>]) -> Result<MetricReport, MetricError> {
    check(hyps, refs)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0, 0);
    for (h, rs) in hyps.iter().zip(refs) {
        for n in 1..=4 {
            let (m, l) = clipped(h, rs, n);
            matched[n - 1] += m;
            total[n - 1] += l;
        }
        c += h.len();
        r += closest_ref_len(h.len(), rs);
    }
    let precisions = core::array::from_fn(|i| if total[i] == 0 { 0.0 } else { matched[i] as f64 / total[i] as f64 });
    let bp = brevity_penalty(c, r);
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        100.0 * bp * libm::exp(precisions.iter().map(|&p| libm::log(p)).sum::<f64>() / 4.0)
    };
    Ok(MetricReport {
        metric: String::from("BLEU-4"),
        score,
        per_example: hyps.iter().zip(refs).map(|(h, rs)| sentence_bleu(h, rs)).collect(),
        precisions: Some(precisions),
        brevity_penalty: Some(bp),
        hypothesis_length: Some(c),
        reference_length: Some(r),
        precision: None,
        recall: None,
    })
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One hypothesis against one reference.
pub fn rouge_pair(hyp: &[String], reference: &[String], variant: RougeVariant) -> Prf {
    match variant {
        RougeVariant::L => Prf::new(lcs_len(hyp, reference), hyp.len(), reference.len()),
        RougeVariant::N(n) => {
            let h = ngrams(hyp, n);
            let r = ngrams(reference, n);
            let overlap = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
            Prf::new(overlap, h.values().sum(), r.values().sum())
        }
    }
}

/// Best reference by F-measure; the first one wins ties.
pub fn rouge_example(hyp: &[String], refs: &[Tokens], variant: RougeVariant) -> Prf {
    refs.iter()
        .map(|r| rouge_pair(hyp, r, variant))
        .reduce(|best, p| if p.f > best.f { p } else { best })
        .unwrap_or_default()
}

pub fn rouge(hyps: &[Tokens], refs: &[Vec<Tokens>], variant: RougeVariant) -> Result<MetricReport, MetricError> {
    check(hyps, refs)?;
    let scores: Vec<Prf> = hyps.iter().zip(refs).map(|(h, rs)| rouge_example(h, rs, variant)).collect();
    let n = scores.len() as f64;
    let mean = |f: fn(&Prf) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        metric: variant.name(),
        score: mean(|p| p.f),
        per_example: scores.iter().map(|p| p.f).collect(),
        precisions: None,
        brevity_penalty: None,
        hypothesis_length: None,
        reference_length: None,
        precision: Some(mean(|p| p.precision)),
        recall: Some(mean(|p| p.recall)),
    })
}

/// Share of examples whose hypothesis equals one of the references.
pub fn exact_match(hyps: &[Tokens], refs: &[Vec<Tokens>]) -> Result<MetricReport, MetricError> {
    check(hyps, refs)?;
    let per_example: Vec<f64> = hyps.iter().zip(refs).map(|(h, rs)| if rs.contains(h) { 1.0 } else { 0.0 }).collect();
    Ok(MetricReport {
        metric: String::from("exact-match"),
        score: per_example.iter().sum::<f64>() / per_example.len() as f64,
        per_example,
        precisions: None,
        brevity_penalty: None,
        hypothesis_length: None,
        reference_length: None,
        precision: None,
        recall: None,
    })
}

#[cfg(test)]
mod tests;
