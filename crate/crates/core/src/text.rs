//! Tokenization, truecasing, case transforms and parallel-corpus I/O.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};

/// A single whitespace-free, non-empty surface form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(Error::Invalid("empty token".into()));
        }
        if surface.chars().any(char::is_whitespace) {
            return Err(Error::Invalid(format!("token `{surface}` contains whitespace")));
        }
        Ok(Token(surface))
    }

    /// Caller guarantees the invariants (non-empty, no whitespace).
    pub(crate) fn new_unchecked(surface: String) -> Self {
        debug_assert!(!surface.is_empty() && !surface.chars().any(char::is_whitespace));
        Token(surface)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn to_lowercase(&self) -> Token {
        Token(self.0.to_lowercase())
    }

    pub fn to_uppercase(&self) -> Token {
        Token(self.0.to_uppercase())
    }
}

impl Deref for Token {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Token {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Token::new(s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence { tokens }
    }

    /// Parses an already tokenized line: tokens are separated by whitespace.
    pub fn from_tokenized(line: &str) -> Self {
        Sentence {
            tokens: line
                .split_whitespace()
                .map(|t| Token::new_unchecked(t.to_string()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t)?;
        }
        Ok(())
    }
}

impl FromIterator<Token> for Sentence {
    fn from_iter<I: IntoIterator<Item = Token>>(iter: I) -> Self {
        Sentence {
            tokens: iter.into_iter().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub name: String,
    pub pairs: Vec<(Sentence, Sentence)>,
}

impl ParallelCorpus {
    pub fn new(name: impl Into<String>) -> Self {
        ParallelCorpus {
            name: name.into(),
            pairs: Vec::new(),
        }
    }

    /// Adds a pair, rejecting empty sides.
    pub fn push(&mut self, source: Sentence, target: Sentence) -> Result<()> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::Invalid(format!(
                "pair {} has an empty side",
                self.pairs.len()
            )));
        }
        self.pairs.push((source, target));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn side(&self, side: Side) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(move |(s, t)| match side {
            Side::Source => s,
            Side::Target => t,
        })
    }

    /// Reads two aligned files, one tokenized sentence per line.
    pub fn read(name: &str, source: &Path, target: &Path) -> Result<Self> {
        let src = read_lines(source)?;
        let tgt = read_lines(target)?;
        if src.len() != tgt.len() {
            return Err(Error::Invalid(format!(
                "source has {} lines but target has {}",
                src.len(),
                tgt.len()
            )));
        }
        let mut corpus = ParallelCorpus::new(name);
        for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
            corpus
                .push(Sentence::from_tokenized(s), Sentence::from_tokenized(t))
                .map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: "empty source or target sentence".into(),
                })?;
        }
        Ok(corpus)
    }

    pub fn write(&self, source: &Path, target: &Path) -> Result<()> {
        write_sentences(source, self.side(Side::Source))?;
        write_sentences(target, self.side(Side::Target))
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    reader.lines().map(|l| l.map_err(Error::from)).collect()
}

pub fn write_sentences<'a>(path: &Path, sentences: impl Iterator<Item = &'a Sentence>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in sentences {
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Splits on whitespace, then peels leading and trailing punctuation off
/// each chunk one character at a time. Interior punctuation stays attached.
pub fn tokenize(line: &str) -> Sentence {
    let mut tokens = Vec::new();
    for chunk in line.split_whitespace() {
        let chars: Vec<(usize, char)> = chunk.char_indices().collect();
        let mut lo = 0;
        while lo < chars.len() && is_punctuation(chars[lo].1) {
            lo += 1;
        }
        let mut hi = chars.len();
        while hi > lo && is_punctuation(chars[hi - 1].1) {
            hi -= 1;
        }
        for &(_, c) in &chars[..lo] {
            tokens.push(Token::new_unchecked(c.to_string()));
        }
        if lo < hi {
            let start = chars[lo].0;
            let end = chars.get(hi).map_or(chunk.len(), |&(i, _)| i);
            tokens.push(Token::new_unchecked(chunk[start..end].to_string()));
        }
        for &(_, c) in &chars[hi..] {
            tokens.push(Token::new_unchecked(c.to_string()));
        }
    }
    Sentence { tokens }
}

pub fn lowercase(sentence: &Sentence) -> Sentence {
    sentence.iter().map(Token::to_lowercase).collect()
}

pub fn uppercase(sentence: &Sentence) -> Sentence {
    sentence.iter().map(Token::to_uppercase).collect()
}

pub const TIE_BREAK_LEXICOGRAPHIC: &str = "lexicographic-codepoint";

/// Maps each lowercased form to its most frequent cased variant.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TruecaseModel {
    variants: BTreeMap<String, String>,
    pub tie_break: String,
}

impl TruecaseModel {
    pub fn get(&self, lowered: &str) -> Option<&str> {
        self.variants.get(lowered).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    /// `(lowercased, variant)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.variants.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Rejects variants that do not lowercase to their key.
    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut variants = BTreeMap::new();
        for (k, v) in entries {
            if v.to_lowercase() != k {
                return Err(Error::Invalid(format!("variant `{v}` does not lowercase to `{k}`")));
            }
            variants.insert(k, v);
        }
        Ok(TruecaseModel {
            variants,
            tie_break: TIE_BREAK_LEXICOGRAPHIC.into(),
        })
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (k, v) in &self.variants {
            writeln!(w, "{k}\t{v}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let mut variants = BTreeMap::new();
        for (i, line) in read_lines(path)?.iter().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected `lowercased<TAB>variant`".into(),
            })?;
            if v.to_lowercase() != k {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("variant `{v}` does not lowercase to `{k}`"),
                });
            }
            variants.insert(k.to_string(), v.to_string());
        }
        Ok(TruecaseModel {
            variants,
            tie_break: TIE_BREAK_LEXICOGRAPHIC.into(),
        })
    }
}

pub fn truecase_train(corpus: &ParallelCorpus, side: Side) -> Result<TruecaseModel> {
    truecase_train_sentences(corpus.side(side))
}

pub fn truecase_train_sentences<'a>(
    sentences: impl Iterator<Item = &'a Sentence>,
) -> Result<TruecaseModel> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for t in s.iter() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut best: BTreeMap<String, (&str, usize)> = BTreeMap::new();
    for (&variant, &n) in &counts {
        let key = variant.to_lowercase();
        match best.get_mut(&key) {
            Some(cur) => {
                if n > cur.1 || (n == cur.1 && variant < cur.0) {
                    *cur = (variant, n);
                }
            }
            None => {
                best.insert(key, (variant, n));
            }
        }
    }
    Ok(TruecaseModel {
        variants: best
            .into_iter()
            .map(|(k, (v, _))| (k, v.to_string()))
            .collect(),
        tie_break: TIE_BREAK_LEXICOGRAPHIC.into(),
    })
}

pub fn truecase_apply(sentence: &Sentence, model: &TruecaseModel) -> Sentence {
    sentence
        .iter()
        .map(|t| match model.get(&t.to_lowercase()) {
            Some(v) => Token::new_unchecked(v.to_string()),
            None => t.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &Sentence) -> Vec<&str> {
        s.iter().map(|t| t.as_str()).collect()
    }

    fn corpus_of(target_lines: &[&str]) -> ParallelCorpus {
        let mut c = ParallelCorpus::new("t");
        for l in target_lines {
            c.push(Sentence::from_tokenized("x"), Sentence::from_tokenized(l))
                .unwrap();
        }
        c
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(words(&tokenize("Hello, world!")), ["Hello", ",", "world", "!"]);
        assert!(tokenize("").is_empty());
        assert_eq!(words(&tokenize("l'air")), ["l'air"]);
        assert_eq!(words(&tokenize("(well-known)...")), ["(", "well-known", ")", ".", ".", "."]);
        assert_eq!(words(&tokenize("  «Ça»  ")), ["«", "Ça", "»"]);
    }

    #[test]
    fn token_rejects_whitespace() {
        assert!(Token::new("a b").is_err());
        assert!(Token::new("").is_err());
        assert!(Token::new("ab").is_ok());
    }

    #[test]
    fn truecase_examples() {
        let c = corpus_of(&["The The The the the the the the"]);
        let m = truecase_train(&c, Side::Target).unwrap();
        assert_eq!(m.get("the"), Some("the"));

        let m = truecase_train(&corpus_of(&["NEURAL"]), Side::Target).unwrap();
        assert_eq!(m.get("neural"), Some("NEURAL"));

        let m = truecase_train(&corpus_of(&["Wi wi Wi wi"]), Side::Target).unwrap();
        assert_eq!(m.get("wi"), Some("Wi"));

        assert!(matches!(
            truecase_train(&ParallelCorpus::new("e"), Side::Source),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn truecase_apply_examples() {
        let m = truecase_train(&corpus_of(&["the"]), Side::Target).unwrap();
        assert_eq!(words(&truecase_apply(&Sentence::from_tokenized("THE"), &m)), ["the"]);
        let empty = TruecaseModel::default();
        assert_eq!(words(&truecase_apply(&Sentence::from_tokenized("zzz"), &empty)), ["zzz"]);
        assert!(truecase_apply(&Sentence::default(), &m).is_empty());
    }

    #[test]
    fn case_mapping_examples() {
        let s = Sentence::from_tokenized("Neural 123 straße");
        assert_eq!(words(&lowercase(&s)), ["neural", "123", "straße"]);
        assert_eq!(words(&uppercase(&s)), ["NEURAL", "123", "STRASSE"]);
    }

    #[test]
    fn truecase_tsv_round_trip() {
        let dir = std::env::temp_dir().join(format!("tc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tc.tsv");
        let m = truecase_train(&corpus_of(&["Paris is in France , the the The"]), Side::Target)
            .unwrap();
        m.write_tsv(&path).unwrap();
        assert_eq!(TruecaseModel::read_tsv(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(line in "[a-zA-Z'.,!?()\\- ]{0,40}") {
            let once = tokenize(&line);
            let twice = tokenize(&once.to_string());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn case_transforms_are_idempotent(line in "\\PC{0,20}") {
            let s = tokenize(&line);
            prop_assert_eq!(lowercase(&lowercase(&s)), lowercase(&s));
            prop_assert_eq!(uppercase(&uppercase(&s)), uppercase(&s));
        }

        #[test]
        fn truecase_preserves_lowercased_form(line in "[a-zA-Z]{1,3}( [a-zA-Z]{1,3}){0,8}") {
            let s = Sentence::from_tokenized(&line);
            let mut c = ParallelCorpus::new("p");
            c.push(s.clone(), s.clone()).unwrap();
            let m = truecase_train(&c, Side::Source).unwrap();
            let out = truecase_apply(&s, &m);
            prop_assert_eq!(lowercase(&out), lowercase(&s));
        }
    }
}
