use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::{NormalizedText, Result, TextError};

pub const PAD_ID: usize = 0;
pub const EOS_ID: usize = 1;
const RESERVED: usize = 2;

/// Bijective character <-> id table. Ids 0 and 1 are padding and
/// end-of-sequence; characters follow in code-point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    ids: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let ids = chars.iter().enumerate().map(|(i, &c)| (c, i + RESERVED)).collect();
        Self { chars, ids }
    }

    /// Number of ids including the reserved entries.
    pub fn len(&self) -> usize {
        self.chars.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.ids.get(&c).copied()
    }

    pub fn char(&self, id: usize) -> Option<char> {
        id.checked_sub(RESERVED).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// One character per line; line `n` (0-based) holds id `n + 2`.
    pub fn to_file_string(&self) -> String {
        self.chars.iter().fold(String::new(), |mut s, c| {
            let _ = writeln!(s, "{c}");
            s
        })
    }

    pub fn parse(source: &str) -> Result<Self> {
        let mut chars = Vec::new();
        for (i, line) in source.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (None, None) if i + 1 == source.split('\n').count() => break,
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(TextError::MalformedVocabulary {
                        line: i + 1,
                        reason: format!("expected exactly one character, got {line:?}"),
                    })
                }
            }
        }
        let vocab = Self::from_chars(chars.iter().copied());
        if vocab.chars != chars {
            return Err(TextError::MalformedVocabulary {
                line: 0,
                reason: "characters must be unique and in code-point order".into(),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Sorted, deduplicated character set of the corpus.
pub fn build_vocabulary<'a>(corpus: impl IntoIterator<Item = &'a NormalizedText>) -> Vocabulary {
    Vocabulary::from_chars(corpus.into_iter().flat_map(|t| t.text.chars()))
}

/// Character ids followed by [`EOS_ID`].
pub fn encode(text: &NormalizedText, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let mut ids = Vec::with_capacity(text.text.len() + 1);
    for (offset, ch) in text.text.chars().enumerate() {
        ids.push(vocab.id(ch).ok_or(TextError::UnknownCharacter { ch, offset })?);
    }
    ids.push(EOS_ID);
    Ok(ids)
}

/// Inverse of [`encode`]; stops at the first EOS and skips padding.
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        match id {
            EOS_ID => break,
            PAD_ID => continue,
            _ => out.push(vocab.char(id).ok_or(TextError::UnknownId(id))?),
        }
    }
    Ok(out)
}
