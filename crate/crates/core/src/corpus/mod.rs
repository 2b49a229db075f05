//! Corpus ingestion: metadata parsing, length filtering, dataset
//! statistics and the on-disk feature cache.

mod cache;
pub mod toy;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::signal::SignalError;
use crate::textnorm::{encode, normalize, NormalizationRules, NormalizedText, TextError, Vocabulary};

pub use cache::{
    cache_entry_path, load_features, prepare_corpus, prepare_features, prepare_utterance, read_cache_entry,
    write_cache_entry, FeatureEntry, TRIM_FRAME_MS, TRIM_THRESHOLD_DB,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("metadata line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    Empty,
    #[error("statistics invariant violated: {0}")]
    Invariant(String),
    #[error("{id}: sample rate {found} Hz does not match configured {expected} Hz")]
    SampleRateMismatch { id: String, expected: u32, found: u32 },
    #[error("{0}: no audio left after silence trimming")]
    SilentAudio(String),
    #[error("{0}: no audio file attached")]
    MissingAudio(String),
    #[error("cache record: {0}")]
    BadCache(String),
    #[error("cache fingerprint {found:#018x} does not match config {expected:#018x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Utterances with `MIN_WORDS..=MAX_WORDS` words survive filtering.
pub const MIN_WORDS: usize = 4;
pub const MAX_WORDS: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub raw_text: String,
    pub normalized_text: NormalizedText,
    /// Filled by [`assign_ids`]; empty until a vocabulary exists.
    pub char_ids: Vec<usize>,
    pub audio_path: Option<PathBuf>,
    /// Seconds; present only when the audio file could be probed.
    pub duration: Option<f64>,
    pub word_count: usize,
}

impl Utterance {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, normalized_text: NormalizedText) -> Self {
        let word_count = normalized_text.word_count();
        Self {
            id: id.into(),
            raw_text: raw_text.into(),
            normalized_text,
            char_ids: Vec::new(),
            audio_path: None,
            duration: None,
            word_count,
        }
    }
}

/// Parses `id|raw_text|normalized_text` lines. The normalized field is
/// optional and generated with `rules` when absent or empty. Audio is
/// looked up as `<wav_dir>/<id>.wav`.
pub fn parse_metadata(source: &str, rules: &NormalizationRules, wav_dir: Option<&Path>) -> Result<Vec<Utterance>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| CorpusError::MalformedLine {
            line: i + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split('|').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(malformed("expected id|raw_text[|normalized_text]"));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(malformed("empty id"));
        }
        if id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(malformed("id must not contain path separators"));
        }
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
        let raw = fields[1];
        let normalized = match fields.get(2).map(|s| s.trim()) {
            Some(n) if !n.is_empty() => {
                NormalizedText::from_normalized(n.split_whitespace().collect::<Vec<_>>().join(" "))
            }
            _ => normalize(raw, rules),
        };
        let mut utt = Utterance::new(id, raw, normalized);
        if let Some(dir) = wav_dir {
            let path = dir.join(format!("{id}.wav"));
            if path.exists() {
                let (rate, frames) = crate::signal::wav::probe_wav(&path)?;
                utt.duration = Some(frames as f64 / rate as f64);
                utt.audio_path = Some(path);
            }
        }
        out.push(utt);
    }
    Ok(out)
}

pub fn load_metadata(path: &Path, rules: &NormalizationRules, wav_dir: Option<&Path>) -> Result<Vec<Utterance>> {
    parse_metadata(&std::fs::read_to_string(path)?, rules, wav_dir)
}

/// Encodes every utterance's normalized text with `vocab`.
pub fn assign_ids(utts: &mut [Utterance], vocab: &Vocabulary) -> Result<()> {
    for u in utts {
        u.char_ids = encode(&u.normalized_text, vocab)?;
    }
    Ok(())
}

/// Keeps utterances with 4 to 11 words, in order.
pub fn filter_by_length(utts: &[Utterance]) -> Vec<Utterance> {
    utts.iter()
        .filter(|u| (MIN_WORDS..=MAX_WORDS).contains(&u.word_count))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub total_sentences: usize,
    pub total_words: usize,
    pub total_unique_words: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub avg_words: f64,
    /// Seconds.
    pub total_duration: f64,
    pub avg_duration: f64,
}

impl CorpusStats {
    /// Derives the averages from totals and checks the invariants.
    pub fn from_totals(
        total_sentences: usize,
        total_words: usize,
        total_unique_words: usize,
        min_words: usize,
        max_words: usize,
        total_duration: f64,
    ) -> Result<Self> {
        if total_sentences == 0 {
            return Err(CorpusError::Empty);
        }
        let stats = Self {
            total_sentences,
            total_words,
            total_unique_words,
            min_words,
            max_words,
            avg_words: total_words as f64 / total_sentences as f64,
            total_duration,
            avg_duration: total_duration / total_sentences as f64,
        };
        stats.check()?;
        Ok(stats)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.total_sentences as f64;
        if (self.avg_words - self.total_words as f64 / n).abs() > 1e-12 * self.avg_words.max(1.0) {
            return Err(CorpusError::Invariant(
                "avg_words != total_words / total_sentences".into(),
            ));
        }
        if (self.avg_duration - self.total_duration / n).abs() > 1e-12 * self.avg_duration.max(1.0) {
            return Err(CorpusError::Invariant(
                "avg_duration != total_duration / total_sentences".into(),
            ));
        }
        if !(self.min_words as f64 <= self.avg_words && self.avg_words <= self.max_words as f64) {
            return Err(CorpusError::Invariant(format!(
                "avg_words {} outside [{}, {}]",
                self.avg_words, self.min_words, self.max_words
            )));
        }
        if self.total_unique_words > self.total_words {
            return Err(CorpusError::Invariant("more unique words than words".into()));
        }
        Ok(())
    }

    /// `key,value` lines.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\ntotal_sentences,{}\ntotal_words,{}\ntotal_unique_words,{}\nmin_words,{}\nmax_words,{}\navg_words,{:.2}\ntotal_duration_s,{:.2}\ntotal_duration_hms,{}\navg_duration_s,{:.2}\n",
            self.total_sentences,
            self.total_words,
            self.total_unique_words,
            self.min_words,
            self.max_words,
            crate::util::round_half_up(self.avg_words, 2),
            self.total_duration,
            format_hms(self.total_duration),
            crate::util::round_half_up(self.avg_duration, 2),
        )
    }
}

/// Table-style statistics over normalized text. Unique words are
/// case-sensitive; missing durations count as zero.
pub fn compute_stats(utts: &[Utterance]) -> Result<CorpusStats> {
    let mut unique: HashMap<&str, ()> = HashMap::new();
    let mut total_words = 0;
    let mut min_words = usize::MAX;
    let mut max_words = 0;
    let mut total_duration = 0.0;
    for u in utts {
        let words: Vec<&str> = u.normalized_text.text.split_whitespace().collect();
        total_words += words.len();
        min_words = min_words.min(words.len());
        max_words = max_words.max(words.len());
        for w in words {
            unique.insert(w, ());
        }
        total_duration += u.duration.unwrap_or(0.0);
    }
    CorpusStats::from_totals(
        utts.len(),
        total_words,
        unique.len(),
        min_words,
        max_words,
        total_duration,
    )
}

/// `H:MM:SS` to seconds.
pub fn parse_hms(s: &str) -> Option<f64> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let h: u64 = parts[0].parse().ok()?;
    let m: u64 = parts[1].parse().ok()?;
    let sec: f64 = parts[2].parse().ok()?;
    if m >= 60 || !(0.0..60.0).contains(&sec) {
        return None;
    }
    Some((h * 3600 + m * 60) as f64 + sec)
}

pub fn format_hms(secs: f64) -> String {
    let total = secs.round() as u64;
    format!("{}:{:02}:{:02}", total / 3600, total / 60 % 60, total % 60)
}
