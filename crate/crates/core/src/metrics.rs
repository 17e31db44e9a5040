//! BLEU, casing ratios, uppercasing preservation, and masculine-ratio
//! binning.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::factorize::{deduce_case, CaseFactor, GenderFactor};
use crate::infer::ProfessionPair;
use crate::text::{lowercase, ParallelCorpus, Sentence, Token};

pub const BLEU_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    /// Smoothed precisions p₁..p₄; 0 for an order without hypothesis n-grams.
    pub precisions: [f64; BLEU_ORDER],
    pub matches: [usize; BLEU_ORDER],
    pub totals: [usize; BLEU_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

pub const BLEU_SMOOTHING: &str = "zero-match precision floored to 1/(2*hyp_ngrams)";

fn ngram_counts(tokens: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_default() += 1;
    }
    m
}

/// Corpus BLEU-4 against a single reference per sentence.
pub fn bleu(hypotheses: &[Sentence], references: &[Sentence], case_insensitive: bool) -> Result<BleuScore> {
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let prep = |s: &Sentence| if case_insensitive { lowercase(s) } else { s.clone() };
    let mut matches = [0usize; BLEU_ORDER];
    let mut totals = [0usize; BLEU_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (prep(h), prep(r));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=BLEU_ORDER {
            let hc = ngram_counts(&h.tokens, n);
            let rc = ngram_counts(&r.tokens, n);
            for (g, &c) in &hc {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; BLEU_ORDER];
    for n in 0..BLEU_ORDER {
        precisions[n] = if totals[n] == 0 {
            0.0
        } else if matches[n] == 0 {
            1.0 / (2.0 * totals[n] as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
    };
    // orders the hypotheses are too short to contain are left out of the mean
    let used: Vec<f64> = (0..BLEU_ORDER).filter(|&n| totals[n] > 0).map(|n| precisions[n]).collect();
    let score = if used.is_empty() {
        0.0
    } else {
        let log_mean = used.iter().map(|p| p.ln()).sum::<f64>() / used.len() as f64;
        (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
    };
    Ok(BleuScore {
        score,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Case class of a surface token; tokens that mix case count as neither
/// upper nor capitalized.
fn case_of(t: &Token) -> Option<CaseFactor> {
    deduce_case(t).ok().map(|(_, c)| c)
}

fn token_ratio(side: &[Sentence], class: CaseFactor) -> Result<f64> {
    let total: usize = side.iter().map(Sentence::len).sum();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let hits = side
        .iter()
        .flat_map(|s| s.iter())
        .filter(|t| case_of(t) == Some(class))
        .count();
    Ok(hits as f64 / total as f64)
}

/// Uppercased tokens over all tokens, punctuation included.
pub fn uppercased_token_ratio(side: &[Sentence]) -> Result<f64> {
    token_ratio(side, CaseFactor::Uppercased)
}

/// Capitalized tokens over all tokens.
pub fn capitalized_token_ratio(side: &[Sentence]) -> Result<f64> {
    token_ratio(side, CaseFactor::Capitalized)
}

fn cased_letters(t: &Token) -> usize {
    t.chars().filter(|c| c.is_uppercase() || c.is_lowercase()).count()
}

/// At least one uppercased token, and every cased token uppercased. A
/// token with one cased letter ("I", "A") is ambiguous and does not break
/// an uppercased sentence.
pub fn is_all_uppercased(s: &Sentence) -> bool {
    let mut any_upper = false;
    for t in s.iter() {
        match case_of(t) {
            Some(CaseFactor::Uppercased) => any_upper = true,
            Some(CaseFactor::Undefined) => {}
            Some(CaseFactor::Capitalized) if cased_letters(t) == 1 => {}
            _ => return false,
        }
    }
    any_upper
}

/// Share of all-uppercased sources whose target is also all-uppercased;
/// `None` without any all-uppercased source.
pub fn upr(corpus: &ParallelCorpus) -> Option<f64> {
    let mut sources = 0usize;
    let mut both = 0usize;
    for (s, t) in &corpus.pairs {
        if is_all_uppercased(s) {
            sources += 1;
            if is_all_uppercased(t) {
                both += 1;
            }
        }
    }
    (sources > 0).then(|| both as f64 / sources as f64)
}

/// Fraction of sentences that are all-uppercased.
pub fn uppercased_sentence_ratio(side: &[Sentence]) -> Result<f64> {
    if side.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(side.iter().filter(|s| is_all_uppercased(s)).count() as f64 / side.len() as f64)
}

/// `count_masc / (count_masc + count_fem)`.
pub fn training_masculine_ratio(pair: &ProfessionPair) -> Result<f64> {
    let total = pair.count_masc + pair.count_fem;
    if total == 0 {
        return Err(Error::Invalid(format!("pair `{}` never occurs", pair.english)));
    }
    Ok(pair.count_masc as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub training_ratio: f64,
    pub predicted_ratio: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub bins: Vec<Bin>,
    /// Mean over bins of (predicted − training)².
    pub mse: f64,
    /// Mean over pairs of (1[masculine] − training ratio)².
    pub pair_mse: f64,
}

pub const DEFAULT_BINS: usize = 15;

/// Sorts by training ratio and splits into `n_bins` contiguous bins whose
/// sizes differ by at most one, earlier bins taking the remainder.
pub fn bin_analysis(pairs: &[(f64, GenderFactor)], n_bins: usize) -> Result<BinReport> {
    if n_bins == 0 || pairs.len() < n_bins {
        return Err(Error::Invalid(format!(
            "{} pairs cannot fill {n_bins} bins",
            pairs.len()
        )));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let base = sorted.len() / n_bins;
    let extra = sorted.len() % n_bins;
    let is_masc = |g: GenderFactor| if g == GenderFactor::Masculine { 1.0 } else { 0.0 };
    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0;
    for b in 0..n_bins {
        let size = base + usize::from(b < extra);
        let chunk = &sorted[start..start + size];
        start += size;
        let n = size as f64;
        bins.push(Bin {
            training_ratio: chunk.iter().map(|p| p.0).sum::<f64>() / n,
            predicted_ratio: chunk.iter().map(|p| is_masc(p.1)).sum::<f64>() / n,
            count: size,
        });
    }
    let mse = bins
        .iter()
        .map(|b| (b.predicted_ratio - b.training_ratio).powi(2))
        .sum::<f64>()
        / n_bins as f64;
    let pair_mse = sorted.iter().map(|p| (is_masc(p.1) - p.0).powi(2)).sum::<f64>() / sorted.len() as f64;
    Ok(BinReport { bins, mse, pair_mse })
}

/// One line of a metric report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: Option<f64>,
    pub details: Value,
}

impl MetricRecord {
    pub fn new(metric: &str, value: Option<f64>, details: Value) -> Self {
        MetricRecord {
            metric: metric.into(),
            value,
            details,
        }
    }

    pub fn bleu(b: &BleuScore, case_insensitive: bool) -> Self {
        MetricRecord::new(
            "bleu",
            Some(b.score),
            json!({
                "precisions": b.precisions,
                "brevity_penalty": b.brevity_penalty,
                "hyp_len": b.hyp_len,
                "ref_len": b.ref_len,
                "case_insensitive": case_insensitive,
                "smoothing": BLEU_SMOOTHING,
            }),
        )
    }
}

pub fn write_report(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
