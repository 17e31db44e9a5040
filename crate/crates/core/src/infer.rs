//! Greedy and beam decoding with factor recombination, forced-decoding
//! scores, and masculine/feminine pair choice.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::{recombine_case, CaseFactor, FactorKind, FactorLabel, FactoredSentence, GenderFactor, SHIFT_LABEL};
use crate::pipeline::Pipeline;
use crate::seq2seq::tape::log_softmax_rows;
use crate::seq2seq::{build_batch, FactoredPair, FactoredSeq2Seq};
use crate::subword::{bpe_restore, strip_continuation, Vocab, BOS, EOS, PAD, UNK};
use crate::text::{read_lines, Sentence, Side, Token};

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted word ids, without EOS.
    pub words: Vec<u32>,
    /// Per target stream, the label of each emitted word.
    pub factors: Vec<Vec<u32>>,
    /// Sum of chosen-label log-probabilities over positions and streams,
    /// including the EOS position and the shift label at position 0.
    pub log_prob: f64,
    pub word_log_prob: f64,
    pub surface: Sentence,
    pub truncated: bool,
}

fn source_inputs(model: &FactoredSeq2Seq, vocab: &Vocab, source: &FactoredSentence) -> Result<(Vec<u32>, Vec<Vec<u32>>)> {
    let pair = FactoredPair {
        source: source.clone(),
        target: Vec::new(),
    };
    let b = build_batch(&[pair], vocab, &model.config)?;
    Ok((b.source_ids(0), b.source_factor_ids(0)))
}

fn argmax(row: ArrayView1<f64>, skip: &[usize]) -> usize {
    let mut best = None;
    for (i, &x) in row.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Log-softmax of the last decoder position, per stream.
fn last_step(model: &FactoredSeq2Seq, memory: &Array2<f64>, words: &[u32], factors: &[Vec<u32>]) -> Vec<Array2<f64>> {
    model
        .decoder_logits(memory, words, factors)
        .into_iter()
        .map(|l| {
            let last = l.nrows() - 1;
            log_softmax_rows(l.slice(ndarray::s![last..last + 1, ..]))
        })
        .collect()
}

/// Factor labels chosen from the factor heads of one step, with their log-probs.
fn pick_factors(logp: &[Array2<f64>], first_step: bool) -> (Vec<u32>, f64) {
    let mut labels = Vec::with_capacity(logp.len().saturating_sub(1));
    let mut lp = 0.0;
    for l in &logp[1..] {
        let id = if first_step {
            SHIFT_LABEL as usize
        } else {
            argmax(l.row(0), &[SHIFT_LABEL as usize])
        };
        lp += l[[0, id]];
        labels.push(id as u32);
    }
    (labels, lp)
}

#[derive(Clone, Debug)]
struct Partial {
    words: Vec<u32>,
    /// Decoder input factors: shift label, then one label per step.
    inputs: Vec<Vec<u32>>,
    log_prob: f64,
    word_log_prob: f64,
}

impl Partial {
    fn start(streams: usize) -> Self {
        Partial {
            words: vec![BOS],
            inputs: vec![vec![SHIFT_LABEL]; streams],
            log_prob: 0.0,
            word_log_prob: 0.0,
        }
    }

    fn emitted(&self) -> usize {
        self.words.len() - 1
    }

    /// Length-normalized word score; counts the EOS position once finished.
    fn normalized(&self, finished: bool) -> f64 {
        self.word_log_prob / (self.emitted() + usize::from(finished)).max(1) as f64
    }
}

const NEVER_EMIT: [usize; 2] = [PAD as usize, BOS as usize];

/// Reads the factor of the last emitted word from one extra decoder step.
fn close_truncated(model: &FactoredSeq2Seq, memory: &Array2<f64>, p: &mut Partial) {
    let logp = last_step(model, memory, &p.words, &p.inputs);
    let (labels, lp) = pick_factors(&logp, p.emitted() == 0);
    p.log_prob += lp;
    for (inp, l) in p.inputs.iter_mut().zip(labels) {
        inp.push(l);
    }
}

fn finish(model: &FactoredSeq2Seq, vocab: &Vocab, p: Partial, truncated: bool) -> Hypothesis {
    let words: Vec<u32> = p.words[1..].to_vec();
    // inputs[s] = [SHIFT, SHIFT, f(w1), …]; the labels of the words start at index 2
    let factors: Vec<Vec<u32>> = p
        .inputs
        .iter()
        .map(|inp| inp.iter().skip(2).copied().collect())
        .collect();
    let surface = render(model, vocab, &words, &factors);
    Hypothesis {
        words,
        factors,
        log_prob: p.log_prob,
        word_log_prob: p.word_log_prob,
        surface,
        truncated,
    }
}

/// Surface sentence: recombine case on each subword, then join subwords.
pub fn render(model: &FactoredSeq2Seq, vocab: &Vocab, words: &[u32], factors: &[Vec<u32>]) -> Sentence {
    let case_stream = model
        .config
        .target_streams()
        .iter()
        .position(|s| s.kind() == Some(FactorKind::Case));
    let mut subwords: Vec<Token> = Vec::with_capacity(words.len());
    for (i, &w) in words.iter().enumerate() {
        let form = Token::new(vocab.symbol(w)).expect("vocabulary symbols are tokens");
        let case = case_stream
            .and_then(|s| factors.get(s)?.get(i).copied())
            .and_then(|id| FactorLabel::from_id(FactorKind::Case, id));
        subwords.push(match case {
            Some(FactorLabel::Case(c)) => recombine_case(&form, c),
            _ => form,
        });
    }
    // a trailing continuation can only come from truncation; close the word
    if let Some(last) = subwords.last_mut() {
        if let Ok(closed) = Token::new(strip_continuation(last)) {
            *last = closed;
        }
    }
    bpe_restore(&Sentence::new(subwords.clone())).unwrap_or_else(|_| Sentence::new(subwords))
}

/// Argmax word at every step; the factor of word t is read at step t+1 and
/// fed back into the next decoder input.
pub fn greedy_translate(model: &FactoredSeq2Seq, vocab: &Vocab, source: &FactoredSentence, max_len: usize) -> Result<Hypothesis> {
    let (src, src_f) = source_inputs(model, vocab, source)?;
    let memory = model.encode_source(&src, &src_f);
    let streams = model.config.target_streams().len();
    let mut p = Partial::start(streams);
    loop {
        if p.emitted() >= max_len {
            close_truncated(model, &memory, &mut p);
            return Ok(finish(model, vocab, p, true));
        }
        let logp = last_step(model, &memory, &p.words, &p.inputs);
        let w = argmax(logp[0].row(0), &NEVER_EMIT);
        let (labels, flp) = pick_factors(&logp, p.emitted() == 0);
        p.word_log_prob += logp[0][[0, w]];
        p.log_prob += logp[0][[0, w]] + flp;
        for (inp, l) in p.inputs.iter_mut().zip(labels) {
            inp.push(l);
        }
        if w as u32 == EOS {
            return Ok(finish(model, vocab, p, false));
        }
        p.words.push(w as u32);
    }
}

/// Length-normalized beam search over words; each surviving item picks its
/// factor labels greedily.
pub fn beam_translate(
    model: &FactoredSeq2Seq,
    vocab: &Vocab,
    source: &FactoredSentence,
    beam_size: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    if beam_size == 0 {
        return Err(Error::Invalid("beam_size must be at least 1".into()));
    }
    let (src, src_f) = source_inputs(model, vocab, source)?;
    let memory = model.encode_source(&src, &src_f);
    let streams = model.config.target_streams().len();
    let mut alive = vec![Partial::start(streams)];
    let mut done: Vec<Partial> = Vec::new();

    while !alive.is_empty() && done.len() < beam_size {
        if alive[0].emitted() >= max_len {
            break;
        }
        let mut candidates: Vec<(Partial, bool)> = Vec::new();
        for p in &alive {
            let logp = last_step(model, &memory, &p.words, &p.inputs);
            let (labels, flp) = pick_factors(&logp, p.emitted() == 0);
            let row = logp[0].row(0);
            let mut order: Vec<usize> = (0..row.len()).filter(|i| !NEVER_EMIT.contains(i)).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            for &w in order.iter().take(beam_size) {
                let mut c = p.clone();
                c.word_log_prob += row[w];
                c.log_prob += row[w] + flp;
                for (inp, &l) in c.inputs.iter_mut().zip(&labels) {
                    inp.push(l);
                }
                let end = w as u32 == EOS;
                if !end {
                    c.words.push(w as u32);
                }
                candidates.push((c, end));
            }
        }
        candidates.sort_by(|a, b| b.0.word_log_prob.total_cmp(&a.0.word_log_prob));
        alive.clear();
        for (c, end) in candidates.into_iter().take(beam_size - done.len()) {
            if end {
                done.push(c);
            } else {
                alive.push(c);
            }
        }
    }

    let best_done = done
        .into_iter()
        .reduce(|a, b| if b.normalized(true) > a.normalized(true) { b } else { a });
    match best_done {
        Some(p) => Ok(finish(model, vocab, p, false)),
        None => {
            let mut p = alive
                .into_iter()
                .reduce(|a, b| if b.normalized(false) > a.normalized(false) { b } else { a })
                .expect("beam never empty");
            close_truncated(model, &memory, &mut p);
            Ok(finish(model, vocab, p, true))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Word and factor streams.
    Joint,
    WordOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForcedScore {
    pub log_prob: f64,
    /// Per decoder position (target words then EOS).
    pub per_position: Vec<f64>,
    /// Target tokens scored through the UNK id.
    pub unknown: usize,
}

/// Unnormalized log-probability of `target` given `source`.
pub fn forced_score(
    model: &FactoredSeq2Seq,
    vocab: &Vocab,
    source: &FactoredSentence,
    target: &FactoredSentence,
    mode: ScoreMode,
) -> Result<ForcedScore> {
    let pair = FactoredPair {
        source: source.clone(),
        target: target.clone(),
    };
    let batch = build_batch(&[pair], vocab, &model.config)?;
    let unknown = target.iter().filter(|t| vocab.id(&t.form) == UNK).count();
    let logits = model.forward(&batch)?;
    let mut targets = vec![batch.output_words(0)];
    if mode == ScoreMode::Joint {
        targets.extend(batch.output_factors(0));
    }
    let n = batch.tgt_lens[0];
    let mut per_position = vec![0.0; n];
    for (l, tg) in logits.iter().zip(&targets) {
        let lp = log_softmax_rows(l.index_axis(ndarray::Axis(0), 0).slice(ndarray::s![..n, ..]));
        for (t, &id) in tg.iter().enumerate() {
            per_position[t] += lp[[t, id as usize]];
        }
    }
    Ok(ForcedScore {
        log_prob: per_position.iter().sum(),
        per_position,
        unknown,
    })
}

/// One profession with its masculine and feminine target phrases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfessionPair {
    pub english: String,
    pub masculine: String,
    pub feminine: String,
    pub count_masc: usize,
    pub count_fem: usize,
}

/// Pairs with fewer total occurrences are unreliable.
pub const MIN_PAIR_COUNT: usize = 5;

impl ProfessionPair {
    pub fn new(english: &str, masculine: &str, feminine: &str) -> Result<Self> {
        if masculine == feminine {
            return Err(Error::Invalid(format!(
                "masculine and feminine phrases of `{english}` are identical"
            )));
        }
        Ok(ProfessionPair {
            english: english.into(),
            masculine: masculine.into(),
            feminine: feminine.into(),
            count_masc: 0,
            count_fem: 0,
        })
    }

    pub fn total(&self) -> usize {
        self.count_masc + self.count_fem
    }
}

/// TSV `english<TAB>masculine<TAB>feminine`.
pub fn read_pairs(path: &Path) -> Result<Vec<ProfessionPair>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [e, m, f] = cols[..] else {
            return Err(Error::Parse {
                line: i + 1,
                msg: "expected `english<TAB>masculine<TAB>feminine`".into(),
            });
        };
        out.push(ProfessionPair::new(e.trim(), m.trim(), f.trim()).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn count_phrase(sentences: &[Vec<String>], phrase: &[String]) -> usize {
    if phrase.is_empty() {
        return 0;
    }
    sentences
        .iter()
        .map(|s| s.windows(phrase.len()).filter(|w| *w == phrase).count())
        .sum()
}

/// Fills phrase counts from the target side of `targets` (case-insensitive,
/// whole-token matches) and drops pairs below `threshold`.
pub fn count_and_filter(pairs: &[ProfessionPair], targets: &[Sentence], threshold: usize) -> Vec<ProfessionPair> {
    let lowered: Vec<Vec<String>> = targets
        .iter()
        .map(|s| s.iter().map(|t| t.to_lowercase().into_string()).collect())
        .collect();
    let toks = |p: &str| -> Vec<String> {
        crate::text::tokenize(p)
            .iter()
            .map(|t| t.to_lowercase().into_string())
            .collect()
    };
    pairs
        .iter()
        .map(|p| ProfessionPair {
            count_masc: count_phrase(&lowered, &toks(&p.masculine)),
            count_fem: count_phrase(&lowered, &toks(&p.feminine)),
            ..p.clone()
        })
        .filter(|p| p.total() >= threshold)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair: ProfessionPair,
    pub masculine_score: f64,
    pub feminine_score: f64,
    pub choice: GenderFactor,
    /// Masculine minus feminine score.
    pub margin: f64,
    pub tie: bool,
    pub unknown: bool,
}

/// Picks the gender whose phrase scores higher under forced decoding.
/// Exact ties go to masculine and are flagged.
pub fn score_pairs(
    model: &FactoredSeq2Seq,
    vocab: &Vocab,
    pipeline: &Pipeline,
    pairs: &[ProfessionPair],
    mode: ScoreMode,
) -> Result<Vec<PairScore>> {
    pairs
        .iter()
        .map(|p| {
            let src = pipeline.prepare_line(&p.english, Side::Source)?;
            let m = forced_score(model, vocab, &src, &pipeline.prepare_line(&p.masculine, Side::Target)?, mode)?;
            let f = forced_score(model, vocab, &src, &pipeline.prepare_line(&p.feminine, Side::Target)?, mode)?;
            let margin = m.log_prob - f.log_prob;
            Ok(PairScore {
                pair: p.clone(),
                masculine_score: m.log_prob,
                feminine_score: f.log_prob,
                choice: if margin >= 0.0 {
                    GenderFactor::Masculine
                } else {
                    GenderFactor::Feminine
                },
                margin,
                tie: margin == 0.0,
                unknown: m.unknown + f.unknown > 0,
            })
        })
        .collect()
}

pub fn write_pair_scores(path: &Path, scores: &[PairScore], header_comment: Option<&str>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(c) = header_comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(
        w,
        "english\tmasculine\tfeminine\tcount_masc\tcount_fem\ttraining_masculine_ratio\tmasculine_score\tfeminine_score\tchoice\tmargin\ttie\tunknown"
    )?;
    for s in scores {
        let ratio = crate::metrics::training_masculine_ratio(&s.pair).map_or(String::new(), |r| r.to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.pair.english,
            s.pair.masculine,
            s.pair.feminine,
            s.pair.count_masc,
            s.pair.count_fem,
            ratio,
            s.masculine_score,
            s.feminine_score,
            FactorLabel::Gender(s.choice),
            s.margin,
            s.tie,
            s.unknown
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Case factor of every emitted word, if the model predicts case.
pub fn hypothesis_case(model: &FactoredSeq2Seq, h: &Hypothesis) -> Option<Vec<CaseFactor>> {
    let s = model
        .config
        .target_streams()
        .iter()
        .position(|s| s.kind() == Some(FactorKind::Case))?;
    h.factors[s]
        .iter()
        .map(|&id| match FactorLabel::from_id(FactorKind::Case, id) {
            Some(FactorLabel::Case(c)) => Some(c),
            _ => None,
        })
        .collect()
}
