//! Raw text to factored model inputs: tokenization, optional truecasing,
//! case-safe subword segmentation and factor annotation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::{
    deduce_case, CaseFactor, FactorKind, FactorLabel, FactoredSentence, FactoredToken, GenderFactor, GenderLexicon,
};
use crate::seq2seq::{FactoredPair, ModelConfig, StreamSpec};
use crate::subword::{bpe_apply_word, bpe_train, SubwordModel, Vocab};
use crate::text::{tokenize, truecase_apply, truecase_train, ParallelCorpus, Sentence, Side, TruecaseModel};

/// Which sides of the model see factor streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorConfig {
    None,
    Source,
    Target,
    Both,
}

impl FactorConfig {
    pub const ALL: [FactorConfig; 4] = [
        FactorConfig::None,
        FactorConfig::Source,
        FactorConfig::Target,
        FactorConfig::Both,
    ];

    pub fn source(self) -> bool {
        matches!(self, FactorConfig::Source | FactorConfig::Both)
    }

    pub fn target(self) -> bool {
        matches!(self, FactorConfig::Target | FactorConfig::Both)
    }

    pub fn factored(self, side: Side) -> bool {
        match side {
            Side::Source => self.source(),
            Side::Target => self.target(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorConfig::None => "none",
            FactorConfig::Source => "source",
            FactorConfig::Target => "target",
            FactorConfig::Both => "both",
        }
    }
}

impl std::str::FromStr for FactorConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FactorConfig::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown factor configuration `{s}`")))
    }
}

/// Preprocessing state fitted on a training corpus.
///
/// Every prepared token carries one label per entry of `streams`. On a
/// factored side the form is lowercased and casing lives in the case
/// factor; on an unfactored side the form keeps its surface casing.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub factors: FactorConfig,
    pub streams: Vec<FactorKind>,
    pub truecase: Option<TruecaseModel>,
    pub bpe: SubwordModel,
    pub case_safe: bool,
    pub lexicon: Option<GenderLexicon>,
}

impl Pipeline {
    /// Fits truecasing (optional) and BPE on `corpus`.
    pub fn fit(
        corpus: &ParallelCorpus,
        factors: FactorConfig,
        merges: usize,
        truecase: bool,
        lexicon: Option<GenderLexicon>,
    ) -> Result<Self> {
        let truecase = if truecase {
            let mut both = corpus.clone();
            both.pairs.extend(corpus.pairs.iter().map(|(s, t)| (t.clone(), s.clone())));
            Some(truecase_train(&both, Side::Source)?)
        } else {
            None
        };
        let cased = match &truecase {
            Some(tc) => ParallelCorpus {
                name: corpus.name.clone(),
                pairs: corpus
                    .pairs
                    .iter()
                    .map(|(s, t)| (truecase_apply(s, tc), truecase_apply(t, tc)))
                    .collect(),
            },
            None => corpus.clone(),
        };
        let mut streams = vec![FactorKind::Case];
        if lexicon.is_some() {
            streams.push(FactorKind::Gender);
        }
        Ok(Pipeline {
            factors,
            streams,
            truecase,
            bpe: bpe_train(&cased, merges)?,
            case_safe: true,
            lexicon,
        })
    }

    pub fn stream_specs(&self) -> Vec<StreamSpec> {
        self.streams.iter().map(|&k| StreamSpec::of(k)).collect()
    }

    /// `base` with vocabulary size and factor settings filled in.
    pub fn model_config(&self, base: &ModelConfig, vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.len(),
            source_factors: self.factors.source(),
            target_factors: self.factors.target(),
            factor_streams: self.stream_specs(),
            ..base.clone()
        }
    }

    pub fn prepare_line(&self, line: &str, side: Side) -> Result<FactoredSentence> {
        self.prepare(&tokenize(line), side)
    }

    pub fn prepare(&self, sentence: &Sentence, side: Side) -> Result<FactoredSentence> {
        let sentence = match &self.truecase {
            Some(tc) => truecase_apply(sentence, tc),
            None => sentence.clone(),
        };
        let factored = self.factors.factored(side);
        let mut out = Vec::with_capacity(sentence.len());
        for word in sentence.iter() {
            let gender = self.lexicon.as_ref().map(|l| l.lookup(word));
            for sub in bpe_apply_word(word, &self.bpe, self.case_safe) {
                let (lower, case) = deduce_case(&sub)?;
                let mut factors = Vec::with_capacity(self.streams.len());
                for kind in &self.streams {
                    factors.push(match kind {
                        FactorKind::Case => FactorLabel::Case(case),
                        FactorKind::Gender => FactorLabel::Gender(gender.expect("gender stream implies a lexicon")),
                    });
                }
                out.push(FactoredToken {
                    form: if factored { lower } else { sub },
                    factors,
                });
            }
        }
        Ok(out)
    }

    pub fn prepare_corpus(&self, corpus: &ParallelCorpus) -> Result<Vec<FactoredPair>> {
        corpus
            .pairs
            .iter()
            .map(|(s, t)| {
                Ok(FactoredPair {
                    source: self.prepare(s, Side::Source)?,
                    target: self.prepare(t, Side::Target)?,
                })
            })
            .collect()
    }
}

/// Serialized form of a [`Pipeline`], stored inside checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineState {
    pub factors: FactorConfig,
    pub streams: Vec<FactorKind>,
    pub case_safe: bool,
    pub truecase: Option<Vec<(String, String)>>,
    pub merges: Vec<(String, String)>,
    pub bpe_vocab: Vocab,
    pub lexicon: Option<Vec<(String, GenderFactor)>>,
}

impl Pipeline {
    pub fn state(&self) -> PipelineState {
        PipelineState {
            factors: self.factors,
            streams: self.streams.clone(),
            case_safe: self.case_safe,
            truecase: self
                .truecase
                .as_ref()
                .map(|t| t.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()),
            merges: self.bpe.merges.clone(),
            bpe_vocab: self.bpe.vocab.clone(),
            lexicon: self
                .lexicon
                .as_ref()
                .map(|l| l.entries().into_iter().map(|(f, g)| (f.to_string(), g)).collect()),
        }
    }

    pub fn from_state(state: PipelineState) -> Result<Self> {
        if state.streams.contains(&FactorKind::Gender) != state.lexicon.is_some() {
            return Err(Error::Invalid("gender stream and lexicon must come together".into()));
        }
        let lexicon = match state.lexicon {
            Some(rows) => {
                let mut lex = GenderLexicon::default();
                for (form, g) in rows {
                    lex.insert(&form, g)?;
                }
                Some(lex)
            }
            None => None,
        };
        Ok(Pipeline {
            factors: state.factors,
            streams: state.streams,
            truecase: state.truecase.map(TruecaseModel::from_entries).transpose()?,
            bpe: SubwordModel::new(state.merges, state.bpe_vocab),
            case_safe: state.case_safe,
            lexicon,
        })
    }
}

/// Joint source+target vocabulary of prepared pairs.
pub fn build_vocab(pairs: &[FactoredPair]) -> Vocab {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for p in pairs {
        for t in p.source.iter().chain(&p.target) {
            *counts.entry(t.form.to_string()).or_default() += 1;
        }
    }
    Vocab::from_counts(&counts)
}

/// Case factor of each token of a prepared sentence, if it has a case stream.
pub fn case_factors(sentence: &FactoredSentence, streams: &[FactorKind]) -> Option<Vec<CaseFactor>> {
    let idx = streams.iter().position(|&k| k == FactorKind::Case)?;
    sentence
        .iter()
        .map(|t| match t.factors.get(idx) {
            Some(FactorLabel::Case(c)) => Some(*c),
            _ => None,
        })
        .collect()
}
