//! Case and gender factors: deduction from surface tokens, recombination,
//! and the factored corpus file format.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{read_lines, Sentence, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseFactor {
    Uppercased,
    Capitalized,
    Lowercased,
    Undefined,
}

impl CaseFactor {
    pub const ALL: [CaseFactor; 4] = [
        CaseFactor::Uppercased,
        CaseFactor::Capitalized,
        CaseFactor::Lowercased,
        CaseFactor::Undefined,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderFactor {
    Masculine,
    Feminine,
    Unknown,
}

impl GenderFactor {
    pub const ALL: [GenderFactor; 3] = [
        GenderFactor::Masculine,
        GenderFactor::Feminine,
        GenderFactor::Unknown,
    ];
}

/// Which attribute a factor stream carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Case,
    Gender,
}

impl FactorKind {
    /// Number of real labels, not counting the reserved shift label.
    pub fn label_count(self) -> usize {
        match self {
            FactorKind::Case => CaseFactor::ALL.len(),
            FactorKind::Gender => GenderFactor::ALL.len(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Case => "case",
            FactorKind::Gender => "gender",
        }
    }
}

/// A single factor value of either kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FactorLabel {
    Case(CaseFactor),
    Gender(GenderFactor),
}

/// Label id reserved in every stream for the time-shifted first position.
pub const SHIFT_LABEL: u32 = 0;

impl FactorLabel {
    pub fn kind(self) -> FactorKind {
        match self {
            FactorLabel::Case(_) => FactorKind::Case,
            FactorLabel::Gender(_) => FactorKind::Gender,
        }
    }

    /// Dense id within the stream; 0 is [`SHIFT_LABEL`].
    pub fn id(self) -> u32 {
        match self {
            FactorLabel::Case(c) => 1 + CaseFactor::ALL.iter().position(|&x| x == c).unwrap() as u32,
            FactorLabel::Gender(g) => {
                1 + GenderFactor::ALL.iter().position(|&x| x == g).unwrap() as u32
            }
        }
    }

    pub fn from_id(kind: FactorKind, id: u32) -> Option<FactorLabel> {
        let idx = (id as usize).checked_sub(1)?;
        match kind {
            FactorKind::Case => CaseFactor::ALL.get(idx).map(|&c| FactorLabel::Case(c)),
            FactorKind::Gender => GenderFactor::ALL.get(idx).map(|&g| FactorLabel::Gender(g)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FactorLabel::Case(CaseFactor::Uppercased) => "uppercased",
            FactorLabel::Case(CaseFactor::Capitalized) => "capitalized",
            FactorLabel::Case(CaseFactor::Lowercased) => "lowercased",
            FactorLabel::Case(CaseFactor::Undefined) => "undefined",
            FactorLabel::Gender(GenderFactor::Masculine) => "masculine",
            FactorLabel::Gender(GenderFactor::Feminine) => "feminine",
            FactorLabel::Gender(GenderFactor::Unknown) => "unknown",
        }
    }
}

impl fmt::Display for FactorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FactorLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uppercased" => FactorLabel::Case(CaseFactor::Uppercased),
            "capitalized" => FactorLabel::Case(CaseFactor::Capitalized),
            "lowercased" => FactorLabel::Case(CaseFactor::Lowercased),
            "undefined" => FactorLabel::Case(CaseFactor::Undefined),
            "masculine" => FactorLabel::Gender(GenderFactor::Masculine),
            "feminine" => FactorLabel::Gender(GenderFactor::Feminine),
            "unknown" => FactorLabel::Gender(GenderFactor::Unknown),
            other => return Err(Error::Invalid(format!("unknown factor label `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FactoredToken {
    pub form: Token,
    pub factors: Vec<FactorLabel>,
}

pub type FactoredSentence = Vec<FactoredToken>;

fn is_cased(c: char) -> bool {
    c.is_uppercase() || c.is_lowercase()
}

fn capitalize_first_cased(form: &str) -> String {
    let mut out = String::with_capacity(form.len());
    let mut done = false;
    for c in form.chars() {
        if !done && is_cased(c) {
            out.extend(c.to_uppercase());
            done = true;
        } else {
            out.push(c);
        }
    }
    out
}

/// Splits a token into its lowercased form and case class.
///
/// A token with a single cased character that is uppercase ("I", "A.") is
/// `Capitalized`. Tokens whose casing cannot be rebuilt from the lowercased
/// form by [`recombine_case`] (e.g. "WiFi") are rejected.
pub fn deduce_case(token: &Token) -> Result<(Token, CaseFactor)> {
    let mut upper = 0usize;
    let mut lower = 0usize;
    let mut first_upper = None;
    for c in token.chars().filter(|&c| is_cased(c)) {
        if first_upper.is_none() {
            first_upper = Some(c.is_uppercase());
        }
        if c.is_uppercase() {
            upper += 1;
        } else {
            lower += 1;
        }
    }
    let factor = match (upper, lower, first_upper) {
        (0, 0, _) => CaseFactor::Undefined,
        (0, _, _) => CaseFactor::Lowercased,
        (1, _, Some(true)) => CaseFactor::Capitalized,
        (_, 0, _) => CaseFactor::Uppercased,
        _ => return Err(Error::MixedCase(token.to_string())),
    };
    let form = token.to_lowercase();
    if recombine_case(&form, factor) != *token {
        return Err(Error::MixedCase(token.to_string()));
    }
    Ok((form, factor))
}

pub fn recombine_case(form: &Token, factor: CaseFactor) -> Token {
    match factor {
        CaseFactor::Uppercased => form.to_uppercase(),
        CaseFactor::Capitalized => Token::new_unchecked(capitalize_first_cased(form)),
        CaseFactor::Lowercased | CaseFactor::Undefined => form.clone(),
    }
}

/// Case scheme: forms lowercased, one case factor per token.
pub fn factorize_case(sentence: &Sentence) -> Result<FactoredSentence> {
    sentence
        .iter()
        .map(|t| {
            let (form, f) = deduce_case(t)?;
            Ok(FactoredToken {
                form,
                factors: vec![FactorLabel::Case(f)],
            })
        })
        .collect()
}

/// Word forms to masculine/feminine; absence means unknown.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenderLexicon {
    entries: HashMap<String, GenderFactor>,
}

impl GenderLexicon {
    pub fn insert(&mut self, form: &str, gender: GenderFactor) -> Result<()> {
        if gender == GenderFactor::Unknown {
            return Err(Error::Invalid(format!(
                "lexicon entry `{form}` must be masculine or feminine"
            )));
        }
        self.entries.insert(form.to_lowercase(), gender);
        Ok(())
    }

    pub fn lookup(&self, form: &str) -> GenderFactor {
        self.entries
            .get(&form.to_lowercase())
            .copied()
            .unwrap_or(GenderFactor::Unknown)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by form.
    pub fn entries(&self) -> Vec<(&str, GenderFactor)> {
        let mut rows: Vec<_> = self.entries.iter().map(|(k, &g)| (k.as_str(), g)).collect();
        rows.sort();
        rows
    }

    /// TSV `form<TAB>masculine|feminine`.
    pub fn read_tsv(path: &Path) -> Result<Self> {
        let mut lex = GenderLexicon::default();
        for (i, line) in read_lines(path)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            let (form, g) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `form<TAB>gender`".into()))?;
            let gender = match g.trim() {
                "masculine" => GenderFactor::Masculine,
                "feminine" => GenderFactor::Feminine,
                other => return Err(parse_err(format!("bad gender `{other}`"))),
            };
            lex.insert(form, gender)?;
        }
        Ok(lex)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<_> = self.entries.iter().collect();
        rows.sort();
        let mut w = BufWriter::new(File::create(path)?);
        for (form, g) in rows {
            let name = FactorLabel::Gender(*g);
            writeln!(w, "{form}\t{name}")?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn annotate_gender(sentence: &Sentence, lexicon: &GenderLexicon) -> FactoredSentence {
    sentence
        .iter()
        .map(|t| FactoredToken {
            form: t.clone(),
            factors: vec![FactorLabel::Gender(lexicon.lookup(t))],
        })
        .collect()
}

pub fn broadcast_factors(word_factor: GenderFactor, subwords: &[Token]) -> Result<Vec<GenderFactor>> {
    if subwords.is_empty() {
        return Err(Error::EmptySubwords);
    }
    Ok(vec![word_factor; subwords.len()])
}

fn escape_form(form: &str) -> String {
    let mut out = String::with_capacity(form.len());
    for c in form.chars() {
        if c == '|' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

/// Splits a `form|f1|f2` field on unescaped bars, unescaping the form.
fn split_field(field: &str) -> Result<(String, Vec<&str>)> {
    let mut form = String::new();
    let mut chars = field.char_indices();
    let mut rest = None;
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some((_, n)) => form.push(n),
                None => return Err(Error::Invalid(format!("dangling escape in `{field}`"))),
            },
            '|' => {
                rest = Some(&field[i + 1..]);
                break;
            }
            _ => form.push(c),
        }
    }
    let labels = match rest {
        Some(r) => r.split('|').collect(),
        None => Vec::new(),
    };
    Ok((form, labels))
}

pub fn format_factored(sentence: &[FactoredToken]) -> String {
    let mut out = String::new();
    for (i, tok) in sentence.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&escape_form(&tok.form));
        for f in &tok.factors {
            out.push('|');
            out.push_str(f.as_str());
        }
    }
    out
}

pub fn parse_factored(line: &str) -> Result<FactoredSentence> {
    line.split_whitespace()
        .map(|field| {
            let (form, labels) = split_field(field)?;
            Ok(FactoredToken {
                form: Token::new(form)?,
                factors: labels
                    .into_iter()
                    .map(str::parse)
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect()
}

pub fn write_factored(path: &Path, sentences: &[FactoredSentence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in sentences {
        writeln!(w, "{}", format_factored(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_factored(path: &Path) -> Result<Vec<FactoredSentence>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            parse_factored(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
