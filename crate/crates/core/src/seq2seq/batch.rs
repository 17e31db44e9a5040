//! Padded id matrices with time-shifted target factor streams.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::factorize::{FactoredSentence, SHIFT_LABEL};
use crate::subword::{Vocab, BOS, EOS, PAD, UNK};

use super::config::ModelConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactoredPair {
    pub source: FactoredSentence,
    pub target: FactoredSentence,
}

/// Row `b` describes pair `b`. Source rows are `w₁ … wₙ EOS`; target word
/// rows are `BOS w₁ … wₘ EOS`. Decoder outputs are aligned with
/// `tgt_words[b, 1..]`, and `tgt_factors[s][b, t]` is the factor of output
/// word `t − 1` (the shift label at `t = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredBatch {
    pub src_words: Array2<u32>,
    pub src_factors: Vec<Array2<u32>>,
    pub src_lens: Vec<usize>,
    pub tgt_words: Array2<u32>,
    pub tgt_factors: Vec<Array2<u32>>,
    /// True at real (non-pad) decoder output positions.
    pub tgt_mask: Array2<bool>,
    pub tgt_lens: Vec<usize>,
    /// Sentences cut to `max_len`.
    pub truncated: usize,
    /// Tokens mapped to UNK.
    pub unknown: usize,
}

impl FactoredBatch {
    pub fn len(&self) -> usize {
        self.src_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src_lens.is_empty()
    }

    /// Number of loss positions.
    pub fn positions(&self) -> usize {
        self.tgt_lens.iter().sum()
    }

    pub fn source_ids(&self, b: usize) -> Vec<u32> {
        self.src_words.row(b).iter().take(self.src_lens[b]).copied().collect()
    }

    pub fn source_factor_ids(&self, b: usize) -> Vec<Vec<u32>> {
        self.src_factors
            .iter()
            .map(|m| m.row(b).iter().take(self.src_lens[b]).copied().collect())
            .collect()
    }

    /// Decoder input words: `BOS w₁ … wₘ`.
    pub fn decoder_input_words(&self, b: usize) -> Vec<u32> {
        self.tgt_words.row(b).iter().take(self.tgt_lens[b]).copied().collect()
    }

    /// Output word targets: `w₁ … wₘ EOS`.
    pub fn output_words(&self, b: usize) -> Vec<u32> {
        self.tgt_words
            .row(b)
            .iter()
            .skip(1)
            .take(self.tgt_lens[b])
            .copied()
            .collect()
    }

    /// Shifted factor targets per stream, aligned with [`Self::output_words`].
    pub fn output_factors(&self, b: usize) -> Vec<Vec<u32>> {
        self.tgt_factors
            .iter()
            .map(|m| m.row(b).iter().take(self.tgt_lens[b]).copied().collect())
            .collect()
    }

    /// Factor labels fed to the decoder: the label emitted one step earlier.
    pub fn decoder_input_factors(&self, b: usize) -> Vec<Vec<u32>> {
        self.output_factors(b)
            .into_iter()
            .map(|targets| shift_right(&targets))
            .collect()
    }
}

/// `[SHIFT, x₀, …, xₙ₋₂]`, same length as the input.
pub fn shift_right(xs: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(xs.len());
    if !xs.is_empty() {
        out.push(SHIFT_LABEL);
        out.extend_from_slice(&xs[..xs.len() - 1]);
    }
    out
}

fn factor_ids(sentence: &FactoredSentence, stream: usize) -> Result<Vec<u32>> {
    sentence
        .iter()
        .map(|t| {
            t.factors.get(stream).map(|f| f.id()).ok_or_else(|| {
                Error::Shape(format!("token `{}` lacks factor stream {stream}", t.form))
            })
        })
        .collect()
}

pub fn build_batch(pairs: &[FactoredPair], vocab: &Vocab, config: &ModelConfig) -> Result<FactoredBatch> {
    let n_src_streams = config.source_streams().len();
    let n_tgt_streams = config.target_streams().len();
    let mut truncated = 0;
    let mut unknown = 0;

    let mut srcs = Vec::with_capacity(pairs.len());
    let mut tgts = Vec::with_capacity(pairs.len());
    for p in pairs {
        let mut cut = |s: &FactoredSentence| {
            if s.len() > config.max_len {
                truncated += 1;
                s[..config.max_len].to_vec()
            } else {
                s.clone()
            }
        };
        srcs.push(cut(&p.source));
        tgts.push(cut(&p.target));
    }
    let mut lookup = |s: &FactoredSentence| -> Vec<u32> {
        s.iter()
            .map(|t| {
                let id = vocab.id(&t.form);
                if id == UNK {
                    unknown += 1;
                }
                id
            })
            .collect()
    };
    let src_ids: Vec<Vec<u32>> = srcs.iter().map(&mut lookup).collect();
    let tgt_ids: Vec<Vec<u32>> = tgts.iter().map(&mut lookup).collect();

    let b = pairs.len();
    let src_len = srcs.iter().map(|s| s.len() + 1).max().unwrap_or(1);
    let tgt_len = tgts.iter().map(|s| s.len() + 1).max().unwrap_or(1);

    let mut src_words = Array2::from_elem((b, src_len), PAD);
    let mut src_factors = vec![Array2::from_elem((b, src_len), SHIFT_LABEL); n_src_streams];
    let mut tgt_words = Array2::from_elem((b, tgt_len + 1), PAD);
    let mut tgt_factors = vec![Array2::from_elem((b, tgt_len), SHIFT_LABEL); n_tgt_streams];
    let mut tgt_mask = Array2::from_elem((b, tgt_len), false);
    let mut src_lens = Vec::with_capacity(b);
    let mut tgt_lens = Vec::with_capacity(b);

    for row in 0..b {
        let s = &src_ids[row];
        for (i, &id) in s.iter().enumerate() {
            src_words[[row, i]] = id;
        }
        src_words[[row, s.len()]] = EOS;
        src_lens.push(s.len() + 1);
        for (k, m) in src_factors.iter_mut().enumerate() {
            for (i, f) in factor_ids(&srcs[row], k)?.into_iter().enumerate() {
                m[[row, i]] = f;
            }
        }

        let t = &tgt_ids[row];
        tgt_words[[row, 0]] = BOS;
        for (i, &id) in t.iter().enumerate() {
            tgt_words[[row, i + 1]] = id;
        }
        tgt_words[[row, t.len() + 1]] = EOS;
        tgt_lens.push(t.len() + 1);
        for i in 0..=t.len() {
            tgt_mask[[row, i]] = true;
        }
        for (k, m) in tgt_factors.iter_mut().enumerate() {
            // output t carries the factor of output word t − 1
            for (i, f) in factor_ids(&tgts[row], k)?.into_iter().enumerate() {
                m[[row, i + 1]] = f;
            }
        }
    }

    Ok(FactoredBatch {
        src_words,
        src_factors,
        src_lens,
        tgt_words,
        tgt_factors,
        tgt_mask,
        tgt_lens,
        truncated,
        unknown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorize::{factorize_case, CaseFactor, FactorKind, FactorLabel};
    use crate::seq2seq::config::StreamSpec;
    use crate::text::Sentence;

    fn pair(src: &str, tgt: &str) -> FactoredPair {
        FactoredPair {
            source: factorize_case(&Sentence::from_tokenized(src)).unwrap(),
            target: factorize_case(&Sentence::from_tokenized(tgt)).unwrap(),
        }
    }

    fn cfg(factors: bool) -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            source_factors: factors,
            target_factors: factors,
            factor_streams: vec![StreamSpec::of(FactorKind::Case)],
            ..Default::default()
        }
    }

    fn case_id(c: CaseFactor) -> u32 {
        FactorLabel::Case(c).id()
    }

    #[test]
    fn shifted_factor_targets() {
        let vocab = Vocab::from_symbols(["neural", "nets"]);
        let b = build_batch(&[pair("NEURAL nets", "NEURAL nets")], &vocab, &cfg(true)).unwrap();
        let neural = vocab.id("neural");
        let nets = vocab.id("nets");
        assert_eq!(b.output_words(0), [neural, nets, EOS]);
        assert_eq!(
            b.output_factors(0)[0],
            [SHIFT_LABEL, case_id(CaseFactor::Uppercased), case_id(CaseFactor::Lowercased)]
        );
        assert_eq!(b.decoder_input_words(0), [BOS, neural, nets]);
        assert_eq!(
            b.decoder_input_factors(0)[0],
            [SHIFT_LABEL, SHIFT_LABEL, case_id(CaseFactor::Uppercased)]
        );
        assert_eq!(b.source_ids(0), [neural, nets, EOS]);
    }

    #[test]
    fn single_word_and_baseline() {
        let vocab = Vocab::from_symbols(["a"]);
        let b = build_batch(&[pair("a", "A")], &vocab, &cfg(true)).unwrap();
        assert_eq!(b.output_factors(0)[0], [SHIFT_LABEL, case_id(CaseFactor::Capitalized)]);
        let b = build_batch(&[pair("a", "a")], &vocab, &cfg(false)).unwrap();
        assert!(b.tgt_factors.is_empty() && b.src_factors.is_empty());
        assert_eq!(b.output_words(0), [vocab.id("a"), EOS]);
    }

    #[test]
    fn padding_and_truncation() {
        let vocab = Vocab::from_symbols(["a", "b"]);
        let mut c = cfg(false);
        c.max_len = 3;
        let b = build_batch(&[pair("a", "a b a b a"), pair("b", "b")], &vocab, &c).unwrap();
        assert_eq!(b.truncated, 1);
        assert_eq!(b.tgt_lens, [4, 2]);
        assert_eq!(b.tgt_mask.row(1).to_vec(), [true, true, false, false]);
        assert_eq!(b.tgt_words.row(1).to_vec(), [BOS, vocab.id("b"), EOS, PAD, PAD]);
        assert_eq!(b.positions(), 6);
    }

    #[test]
    fn unknown_forms_map_to_unk() {
        let vocab = Vocab::from_symbols(["a"]);
        let b = build_batch(&[pair("zz", "a")], &vocab, &cfg(false)).unwrap();
        assert_eq!(b.source_ids(0), [UNK, EOS]);
        assert_eq!(b.unknown, 1);
    }

    #[test]
    fn missing_factor_stream_is_an_error() {
        let vocab = Vocab::from_symbols(["a"]);
        let mut p = pair("a", "a");
        p.target[0].factors.clear();
        assert!(matches!(build_batch(&[p], &vocab, &cfg(true)), Err(Error::Shape(_))));
    }
}
