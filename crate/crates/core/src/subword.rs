//! Byte-pair encoding with a case-safe application mode, and the shared
//! symbol vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::deduce_case;
use crate::text::{read_lines, ParallelCorpus, Sentence, Token};

pub const CONTINUATION: &str = "@@";

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Dense symbol table; ids 0..4 are the reserved PAD, BOS, EOS, UNK.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_symbols(std::iter::empty::<String>())
    }
}

impl From<Vec<String>> for Vocab {
    fn from(all: Vec<String>) -> Self {
        let index = all
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocab {
            symbols: all,
            index,
        }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

impl Vocab {
    /// Reserved ids first, then `symbols` in the given order (duplicates dropped).
    pub fn from_symbols<S: AsRef<str>>(symbols: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocab {
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            v.add(r);
        }
        for s in symbols {
            v.add(s.as_ref());
        }
        v
    }

    /// Builds a vocabulary ordered by descending frequency, then symbol.
    pub fn from_counts(counts: &HashMap<String, usize>) -> Self {
        let mut items: Vec<_> = counts.iter().collect();
        items.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        Vocab::from_symbols(items.into_iter().map(|(s, _)| s.as_str()))
    }

    fn add(&mut self, s: &str) {
        if !self.index.contains_key(s) {
            self.index.insert(s.to_string(), self.symbols.len() as u32);
            self.symbols.push(s.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn get(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    /// Id of `symbol`, or UNK.
    pub fn id(&self, symbol: &str) -> u32 {
        self.get(symbol).unwrap_or(UNK)
    }

    pub fn symbol(&self, id: u32) -> &str {
        self.symbols
            .get(id as usize)
            .map_or(RESERVED[UNK as usize], String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, s) in self.symbols.iter().enumerate() {
            writeln!(w, "{s}\t{i}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let mut symbols = Vec::new();
        for (i, line) in read_lines(path)?.iter().enumerate() {
            let (s, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected `symbol<TAB>id`".into(),
            })?;
            if id.parse::<usize>().ok() != Some(i) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("ids must be dense, found `{id}`"),
                });
            }
            symbols.push(s.to_string());
        }
        if symbols.get(..RESERVED.len()).map(|r| r.iter().map(String::as_str).eq(RESERVED)) != Some(true) {
            return Err(Error::Invalid("vocab must start with the reserved symbols".into()));
        }
        Ok(Vocab::from(symbols))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordModel {
    /// Priority order: earlier merges apply first.
    pub merges: Vec<(String, String)>,
    pub vocab: Vocab,
    ranks: HashMap<(String, String), usize>,
}

impl SubwordModel {
    pub fn new(merges: Vec<(String, String)>, vocab: Vocab) -> Self {
        let mut ranks = HashMap::new();
        for (i, (l, r)) in merges.iter().enumerate() {
            ranks.entry((l.to_lowercase(), r.to_lowercase())).or_insert(i);
        }
        SubwordModel {
            merges,
            vocab,
            ranks,
        }
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn write_merges(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (l, r) in &self.merges {
            writeln!(w, "{l} {r}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(merges: &Path, vocab: &Path) -> Result<Self> {
        let mut list = Vec::new();
        for (i, line) in read_lines(merges)?.iter().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    list.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "expected `left right`".into(),
                    })
                }
            }
        }
        Ok(SubwordModel::new(list, Vocab::read_tsv(vocab)?))
    }

    /// Splits one word into subword strings (no continuation markers).
    /// Merges are matched on the lowercased form; the split points are then
    /// transferred to the cased surface.
    pub fn segment_word(&self, word: &str, case_safe: bool) -> Vec<String> {
        let cased: Vec<String> = word.chars().map(String::from).collect();
        let lowered: Vec<String> = cased.iter().map(|c| c.to_lowercase()).collect();
        // a char whose lowercase mapping is not one char breaks alignment;
        // match on the surface instead
        let mut keys = if lowered.iter().all(|c| c.chars().count() == 1) {
            lowered
        } else {
            cased.clone()
        };
        let mut parts = cased;
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..keys.len().saturating_sub(1) {
                let Some(&rank) = self.ranks.get(&(keys[i].clone(), keys[i + 1].clone())) else {
                    continue;
                };
                if best.is_some_and(|(r, _)| r <= rank) {
                    continue;
                }
                if case_safe && !case_compatible(&parts[i], &parts[i + 1]) {
                    continue;
                }
                best = Some((rank, i));
            }
            let Some((_, i)) = best else { break };
            let right = keys.remove(i + 1);
            keys[i].push_str(&right);
            let right = parts.remove(i + 1);
            parts[i].push_str(&right);
        }
        parts
    }
}

/// A merge keeps case information iff the joined unit still has a case class.
fn case_compatible(left: &str, right: &str) -> bool {
    let joined = format!("{left}{right}");
    match Token::new(joined) {
        Ok(t) => deduce_case(&t).is_ok(),
        Err(_) => false,
    }
}

fn pair_counts(words: &[(Vec<String>, usize)]) -> HashMap<(&str, &str), usize> {
    let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
    for (syms, freq) in words {
        for w in syms.windows(2) {
            *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += freq;
        }
    }
    counts
}

/// Learns `num_merges` merges over the joint source+target word counts.
/// Ties between equally frequent pairs go to the lexicographically
/// smallest pair. Stops early once no adjacent pair remains.
pub fn bpe_train(corpus: &ParallelCorpus, num_merges: usize) -> Result<SubwordModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for (s, t) in &corpus.pairs {
        for tok in s.iter().chain(t.iter()) {
            *word_freq.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .iter()
        .map(|(w, &f)| (w.chars().map(String::from).collect(), f))
        .collect();

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let best = {
            let counts = pair_counts(&words);
            counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|((l, r), _)| (l.to_string(), r.to_string()))
        };
        let Some((l, r)) = best else { break };
        let joined = format!("{l}{r}");
        for (syms, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == l && syms[i + 1] == r {
                    syms[i] = joined.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        merges.push((l, r));
    }

    let mut symbol_counts: HashMap<String, usize> = HashMap::new();
    for (syms, f) in &words {
        let n = syms.len();
        for (i, s) in syms.iter().enumerate() {
            let sym = if i + 1 < n {
                format!("{s}{CONTINUATION}")
            } else {
                s.clone()
            };
            *symbol_counts.entry(sym).or_default() += f;
        }
    }
    Ok(SubwordModel::new(merges, Vocab::from_counts(&symbol_counts)))
}

/// Segments every token; non-final subwords carry `@@`.
pub fn bpe_apply(sentence: &Sentence, model: &SubwordModel, case_safe: bool) -> Sentence {
    let mut out = Vec::with_capacity(sentence.len());
    for tok in sentence.iter() {
        out.extend(bpe_apply_word(tok, model, case_safe));
    }
    Sentence::new(out)
}

pub fn bpe_apply_word(word: &Token, model: &SubwordModel, case_safe: bool) -> Vec<Token> {
    let parts = model.segment_word(word, case_safe);
    let n = parts.len();
    parts
        .into_iter()
        .enumerate()
        .map(|(i, mut p)| {
            if i + 1 < n {
                p.push_str(CONTINUATION);
            }
            Token::new_unchecked(p)
        })
        .collect()
}

pub fn is_continuation(subword: &str) -> bool {
    subword.ends_with(CONTINUATION)
}

pub fn strip_continuation(subword: &str) -> &str {
    subword.strip_suffix(CONTINUATION).unwrap_or(subword)
}

/// Groups subword indices into words: each group ends at a non-continuation subword.
pub fn word_spans<S: AsRef<str>>(subwords: &[S]) -> Result<Vec<std::ops::Range<usize>>> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, s) in subwords.iter().enumerate() {
        if !is_continuation(s.as_ref()) {
            spans.push(start..i + 1);
            start = i + 1;
        }
    }
    if start != subwords.len() {
        return Err(Error::DanglingContinuation);
    }
    Ok(spans)
}

pub fn bpe_restore(sentence: &Sentence) -> Result<Sentence> {
    let spans = word_spans(&sentence.tokens)?;
    Ok(spans
        .into_iter()
        .map(|span| {
            let word: String = sentence.tokens[span]
                .iter()
                .map(|t| strip_continuation(t))
                .collect();
            Token::new_unchecked(word)
        })
        .collect())
}
