//! Controlled casing distributions: the uppercasing-preservation sweep and
//! uppercase data augmentation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{lowercase, uppercase, ParallelCorpus};

/// Fractions of the preservation sweep, 0% to 100% in steps of 20%.
pub const UPR_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Augmentation sizes 2^-5 % .. 2^5 % of the original corpus.
pub fn augment_grid() -> Vec<f64> {
    (-5..=5).map(|e| 2f64.powi(e) / 100.0).collect()
}

/// Nearest-integer count, halves rounded up.
pub fn round_count(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UprSpec {
    pub upper_source_fraction: f64,
    pub upr: f64,
    pub seed: u64,
}

impl Default for UprSpec {
    fn default() -> Self {
        UprSpec {
            upper_source_fraction: 0.02,
            upr: 0.0,
            seed: 1,
        }
    }
}

impl UprSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("upper_source_fraction", self.upper_source_fraction),
            ("upr", self.upr),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub fraction: f64,
    pub seed: u64,
}

/// Realized counts, written next to generated corpora.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub input_pairs: usize,
    pub output_pairs: usize,
    pub upper_source: usize,
    pub upper_target: usize,
    pub appended: usize,
    pub warnings: Vec<String>,
}

/// Lowercases everything, uppercases the source of `⌊f·N⌉` random pairs and,
/// of those, the target of `⌊upr·k⌉`.
pub fn make_upr_corpus(
    corpus: &ParallelCorpus,
    spec: &UprSpec,
) -> Result<(ParallelCorpus, GenerationReport)> {
    spec.validate()?;
    let n = corpus.len();
    let mut report = GenerationReport {
        input_pairs: n,
        output_pairs: n,
        ..Default::default()
    };
    if spec.upper_source_fraction > 0.0 && (n as f64) < 1.0 / spec.upper_source_fraction {
        report.warnings.push(format!(
            "corpus of {n} pairs is smaller than 1/upper_source_fraction"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let k = round_count(spec.upper_source_fraction * n as f64).min(n);
    let m = round_count(spec.upr * k as f64).min(k);

    let mut out = ParallelCorpus {
        name: format!("{}.upr{}", corpus.name, spec.upr),
        pairs: corpus
            .pairs
            .iter()
            .map(|(s, t)| (lowercase(s), lowercase(t)))
            .collect(),
    };
    for (rank, &i) in order[..k].iter().enumerate() {
        let pair = &mut out.pairs[i];
        pair.0 = uppercase(&pair.0);
        if rank < m {
            pair.1 = uppercase(&pair.1);
        }
    }
    report.upper_source = k;
    report.upper_target = m;
    Ok((out, report))
}

/// Appends `⌊fraction·N⌉` sampled pairs uppercased on both sides.
pub fn augment_uppercase(
    corpus: &ParallelCorpus,
    spec: &AugmentSpec,
) -> Result<(ParallelCorpus, GenerationReport)> {
    if !(spec.fraction >= 0.0) || !spec.fraction.is_finite() {
        return Err(Error::Config(format!(
            "augmentation fraction must be finite and >= 0, got {}",
            spec.fraction
        )));
    }
    let n = corpus.len();
    let extra = round_count(spec.fraction * n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let picks: Vec<usize> = if n == 0 {
        Vec::new()
    } else if extra <= n {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order.truncate(extra);
        order
    } else {
        (0..extra).map(|_| rng.gen_range(0..n)).collect()
    };
    let mut out = corpus.clone();
    out.name = format!("{}.aug{}", corpus.name, spec.fraction);
    for &i in &picks {
        let (s, t) = &corpus.pairs[i];
        out.pairs.push((uppercase(s), uppercase(t)));
    }
    let report = GenerationReport {
        input_pairs: n,
        output_pairs: out.len(),
        appended: picks.len(),
        upper_source: picks.len(),
        upper_target: picks.len(),
        warnings: Vec::new(),
    };
    Ok((out, report))
}
