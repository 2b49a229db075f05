//! Raw Bangla text to pronounceable normalized text, and character-id
//! encoding for the model.
//!
//! Normalization is a single left-to-right pass over the raw characters:
//! abbreviations and symbols are expanded from the lexicons, digit runs are
//! read out as number words, a small set of punctuation marks is kept in a
//! canonical form, and everything else outside the Bangla block is dropped.
//! Every non-identity rewrite leaves a [`Provenance`] record pointing at
//! the raw character span it came from.

mod lexicon;
mod numbers;
mod vocab;

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

pub use lexicon::parse_lexicon;
pub use numbers::{number_to_words, to_bangla_digits};
pub use vocab::{build_vocabulary, decode, encode, Vocabulary, EOS_ID, PAD_ID};

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("lexicon line {line}: {reason}")]
    MalformedLexicon { line: usize, reason: String },
    #[error("lexicon key {0:?} appears twice")]
    DuplicateKey(String),
    #[error("expansion of {key:?} is not closed: {reason}")]
    OpenExpansion { key: String, reason: String },
    #[error("lexicon is missing an entry for {0:?}")]
    MissingLexiconEntry(String),
    #[error("{0:?} is not an integer")]
    MalformedNumber(String),
    #[error("{0} is outside the readable range 0..=99,999,999")]
    NumberOutOfRange(String),
    #[error("character {ch:?} at offset {offset} is not in the vocabulary")]
    UnknownCharacter { ch: char, offset: usize },
    #[error("vocabulary file line {line}: {reason}")]
    MalformedVocabulary { line: usize, reason: String },
    #[error("unknown id {0}")]
    UnknownId(usize),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TextError {
    fn from(e: std::io::Error) -> Self {
        TextError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TextError>;

const BUNDLED_NUMBERS: &str = include_str!("../../data/lexicon/numbers.tsv");
const BUNDLED_ABBREVIATIONS: &str = include_str!("../../data/lexicon/abbreviations.tsv");
const BUNDLED_SYMBOLS: &str = include_str!("../../data/lexicon/symbols.tsv");

/// Retained punctuation marks and the variants folded onto them.
#[derive(Debug, Clone, PartialEq)]
pub struct PunctuationPolicy {
    retained: Vec<char>,
    variants: BTreeMap<char, char>,
}

impl Default for PunctuationPolicy {
    fn default() -> Self {
        let variants = [
            ('|', '।'),
            ('\u{0965}', '।'),
            ('，', ','),
            ('？', '?'),
            ('！', '!'),
            ('–', '-'),
            ('—', '-'),
        ];
        Self {
            retained: vec!['।', ',', '?', '!', '-'],
            variants: variants.into_iter().collect(),
        }
    }
}

impl PunctuationPolicy {
    pub fn new(retained: Vec<char>, variants: BTreeMap<char, char>) -> Self {
        Self { retained, variants }
    }

    pub fn canonical(&self, c: char) -> Option<char> {
        if self.retained.contains(&c) {
            Some(c)
        } else {
            self.variants.get(&c).copied().filter(|t| self.retained.contains(t))
        }
    }

    pub fn retained(&self) -> &[char] {
        &self.retained
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationRules {
    /// Number strings (in Bangla digits) to word forms. Keys 0..=99 plus
    /// the unit keys 100, 1000, 100000 and 10000000.
    pub digit_lexicon: BTreeMap<String, String>,
    /// Whole-token abbreviations.
    pub abbreviation_lexicon: BTreeMap<String, String>,
    /// Symbols expanded wherever they occur.
    pub symbol_lexicon: BTreeMap<String, String>,
    pub punctuation: PunctuationPolicy,
    /// Word read between the integer and fractional parts of a decimal.
    pub decimal_word: String,
}

impl NormalizationRules {
    /// Lexicons shipped in `data/lexicon`.
    pub fn bundled() -> Self {
        Self::from_sources(BUNDLED_NUMBERS, BUNDLED_ABBREVIATIONS, BUNDLED_SYMBOLS).expect("bundled lexicons are valid")
    }

    pub fn from_sources(numbers: &str, abbreviations: &str, symbols: &str) -> Result<Self> {
        let rules = Self {
            digit_lexicon: parse_lexicon(numbers)?,
            abbreviation_lexicon: parse_lexicon(abbreviations)?,
            symbol_lexicon: parse_lexicon(symbols)?,
            punctuation: PunctuationPolicy::default(),
            decimal_word: "দশমিক".to_string(),
        };
        rules.validate()?;
        Ok(rules)
    }

    /// Loads `numbers.tsv`, `abbreviations.tsv` and `symbols.tsv` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        Self::from_sources(
            &read("numbers.tsv")?,
            &read("abbreviations.tsv")?,
            &read("symbols.tsv")?,
        )
    }

    /// Checks the closure property: no expansion contains a digit, an
    /// abbreviation token or a symbol key, and the ten digits and four
    /// units are present.
    pub fn validate(&self) -> Result<()> {
        for d in 0..10u32 {
            let key = to_bangla_digits(&d.to_string());
            if !self.digit_lexicon.contains_key(&key) {
                return Err(TextError::MissingLexiconEntry(key));
            }
        }
        for unit in numbers::UNITS {
            let key = to_bangla_digits(&unit.to_string());
            if !self.digit_lexicon.contains_key(&key) {
                return Err(TextError::MissingLexiconEntry(key));
            }
        }
        for key in self.digit_lexicon.keys() {
            if key.is_empty() || !key.chars().all(is_bangla_digit) {
                return Err(TextError::MalformedLexicon {
                    line: 0,
                    reason: format!("number key {key:?} must be Bangla digits"),
                });
            }
        }
        let decimal_key = "decimal".to_string();
        let expansions = self
            .digit_lexicon
            .iter()
            .chain(&self.abbreviation_lexicon)
            .chain(&self.symbol_lexicon)
            .chain(std::iter::once((&decimal_key, &self.decimal_word)));
        for (key, value) in expansions {
            let open = |reason: String| TextError::OpenExpansion {
                key: key.clone(),
                reason,
            };
            if value.chars().any(|c| c.is_ascii_digit() || is_bangla_digit(c)) {
                return Err(open("contains a digit".into()));
            }
            if let Some(tok) = value
                .split_whitespace()
                .find(|t| self.abbreviation_lexicon.contains_key(*t))
            {
                return Err(open(format!("contains abbreviation {tok:?}")));
            }
            if let Some(sym) = self.symbol_lexicon.keys().find(|s| value.contains(s.as_str())) {
                return Err(open(format!("contains symbol {sym:?}")));
            }
            if let Some(c) = value.chars().find(|&c| !is_bangla_letter(c) && !c.is_whitespace()) {
                return Err(open(format!("contains {c:?}, which normalization would drop")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    Abbreviation(String),
    Symbol(String),
    Number,
    DigitByDigit,
    Punctuation(char),
    Dropped(char),
}

/// One rewrite: `span` is a char range into the raw input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub span: Range<usize>,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    pub text: String,
    pub provenance: Vec<Provenance>,
}

impl NormalizedText {
    /// Wraps text that is already normalized.
    pub fn from_normalized(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            provenance: Vec::new(),
        }
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

pub fn is_bangla_digit(c: char) -> bool {
    ('\u{09E6}'..='\u{09EF}').contains(&c)
}

/// Bangla block minus its digits, plus the joiners used in conjuncts.
pub fn is_bangla_letter(c: char) -> bool {
    (('\u{0980}'..='\u{09FF}').contains(&c) && !is_bangla_digit(c)) || c == '\u{200C}' || c == '\u{200D}'
}

fn is_digit(c: char) -> bool {
    c.is_ascii_digit() || is_bangla_digit(c)
}

struct Pass<'a> {
    rules: &'a NormalizationRules,
    raw: Vec<char>,
    out: String,
    /// Set after an expansion; a separating space is owed to the next word.
    pending_space: bool,
    provenance: Vec<Provenance>,
}

impl<'a> Pass<'a> {
    fn at_token_start(&self) -> bool {
        self.pending_space || self.out.chars().last().is_none_or(char::is_whitespace)
    }

    fn starts_with(&self, i: usize, key: &str) -> bool {
        key.chars().enumerate().all(|(n, k)| self.raw.get(i + n) == Some(&k))
    }

    fn symbol_at(&self, i: usize) -> Option<(&'a str, &'a str)> {
        self.rules
            .symbol_lexicon
            .iter()
            .filter(|(k, _)| self.starts_with(i, k))
            .max_by_key(|(k, _)| k.chars().count())
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Characters that survive normalization in some form.
    fn is_kept(&self, i: usize) -> bool {
        let c = self.raw[i];
        c.is_whitespace()
            || is_bangla_letter(c)
            || is_digit(c)
            || self.rules.punctuation.canonical(c).is_some()
            || self.symbol_at(i).is_some()
    }

    /// Word boundary after position `end`, looking past characters that
    /// will be dropped.
    fn boundary_at(&self, end: usize) -> bool {
        let mut j = end;
        while j < self.raw.len() && !self.is_kept(j) {
            j += 1;
        }
        j == self.raw.len()
            || self.raw[j].is_whitespace()
            || is_digit(self.raw[j])
            || self.rules.punctuation.canonical(self.raw[j]).is_some()
            || self.symbol_at(j).is_some()
    }

    fn abbreviation_at(&self, i: usize) -> Option<(&'a str, &'a str)> {
        if !self.at_token_start() {
            return None;
        }
        self.rules
            .abbreviation_lexicon
            .iter()
            .filter(|(k, _)| self.starts_with(i, k) && self.boundary_at(i + k.chars().count()))
            .max_by_key(|(k, _)| k.chars().count())
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn emit_words(&mut self, words: &str) {
        self.out.push(' ');
        self.out.push_str(words);
        self.pending_space = true;
    }

    fn emit_letter(&mut self, c: char) {
        if std::mem::take(&mut self.pending_space) {
            self.out.push(' ');
        }
        self.out.push(c);
    }

    fn record(&mut self, span: Range<usize>, rule: Rule) {
        self.provenance.push(Provenance { span, rule });
    }

    /// Consumes a digit run starting at `i` and returns the index after it.
    fn number(&mut self, i: usize) -> usize {
        let raw = &self.raw;
        let digit_at = |j: usize| raw.get(j).copied().is_some_and(is_digit);
        let mut j = i;
        let mut integer = String::new();
        while j < raw.len() {
            if digit_at(j) {
                integer.push(raw[j]);
                j += 1;
            } else if raw[j] == ',' && digit_at(j + 1) && !integer.is_empty() {
                j += 1;
            } else {
                break;
            }
        }
        let mut fraction = String::new();
        if j + 1 < raw.len() && raw[j] == '.' && digit_at(j + 1) {
            j += 1;
            while digit_at(j) {
                fraction.push(raw[j]);
                j += 1;
            }
        }
        let integer = to_bangla_digits(&integer);
        let leading_zero = integer.chars().count() > 1 && integer.starts_with('০');
        let whole = if leading_zero {
            Err(TextError::MalformedNumber(integer.clone()))
        } else {
            number_to_words(&integer, self.rules)
        };
        let (mut words, rule) = match whole {
            Ok(w) => (w, Rule::Number),
            Err(_) => (self.digit_by_digit(&integer), Rule::DigitByDigit),
        };
        if !fraction.is_empty() {
            words.push(' ');
            words.push_str(&self.rules.decimal_word);
            words.push(' ');
            words.push_str(&self.digit_by_digit(&to_bangla_digits(&fraction)));
        }
        self.emit_words(&words);
        self.record(i..j, rule);
        j
    }

    fn digit_by_digit(&self, digits: &str) -> String {
        digits
            .chars()
            .map(|d| self.rules.digit_lexicon[&d.to_string()].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn run(mut self) -> NormalizedText {
        let mut i = 0;
        while i < self.raw.len() {
            let c = self.raw[i];
            if let Some((key, value)) = self.abbreviation_at(i) {
                let n = key.chars().count();
                self.emit_words(value);
                self.record(i..i + n, Rule::Abbreviation(key.to_string()));
                i += n;
            } else if let Some((key, value)) = self.symbol_at(i) {
                let n = key.chars().count();
                self.emit_words(value);
                self.record(i..i + n, Rule::Symbol(key.to_string()));
                i += n;
            } else if is_digit(c) {
                i = self.number(i);
            } else if c.is_whitespace() {
                self.pending_space = false;
                self.out.push(' ');
                i += 1;
            } else if is_bangla_letter(c) {
                self.emit_letter(c);
                i += 1;
            } else if let Some(p) = self.rules.punctuation.canonical(c) {
                self.pending_space = false;
                self.out.push(p);
                if p != c {
                    self.record(i..i + 1, Rule::Punctuation(p));
                }
                i += 1;
            } else {
                self.record(i..i + 1, Rule::Dropped(c));
                i += 1;
            }
        }
        NormalizedText {
            text: self.out.split_whitespace().collect::<Vec<_>>().join(" "),
            provenance: self.provenance,
        }
    }
}

/// Rewrites `raw` into its pronounceable form. Never fails: characters
/// that cannot be handled are dropped and recorded.
pub fn normalize(raw: &str, rules: &NormalizationRules) -> NormalizedText {
    Pass {
        rules,
        raw: raw.chars().collect(),
        out: String::with_capacity(raw.len() * 2),
        pending_space: false,
        provenance: Vec::new(),
    }
    .run()
}
