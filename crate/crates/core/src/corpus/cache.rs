use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rayon::prelude::*;

use super::{CorpusError, Result, Utterance};
use crate::signal::{
    self, linear_to_mel, magnitude, normalize_magnitude, preemphasis, stft, trim_silence, AudioBuffer, SignalConfig,
};
use crate::util::{self, Payload};

const MAGIC: &[u8; 4] = b"BTTC";
const VERSION: u32 = 1;

/// Leading/trailing frames quieter than this (dBFS) are trimmed.
pub const TRIM_THRESHOLD_DB: f64 = -40.0;
pub const TRIM_FRAME_MS: f64 = 10.0;

/// Model targets for one utterance, both in normalized dB scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEntry {
    pub id: String,
    pub fingerprint: u64,
    /// frames x mel_bands
    pub mel: Array2<f64>,
    /// frames x (fft_size / 2 + 1)
    pub linear: Array2<f64>,
}

impl FeatureEntry {
    pub fn frames(&self) -> usize {
        self.mel.nrows()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        util::write_u32(w, VERSION)?;
        util::write_str(w, &self.id)?;
        util::write_u64(w, self.fingerprint)?;
        util::write_tensor(w, &self.mel, Payload::F32)?;
        util::write_tensor(w, &self.linear, Payload::F32)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |e: std::io::Error| CorpusError::BadCache(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(CorpusError::BadCache("bad magic".into()));
        }
        let version = util::read_u32(r).map_err(bad)?;
        if version != VERSION {
            return Err(CorpusError::BadCache(format!("unsupported version {version}")));
        }
        let id = util::read_str(r).map_err(bad)?;
        let fingerprint = util::read_u64(r).map_err(bad)?;
        let mel = util::read_tensor(r, Payload::F32).map_err(bad)?;
        let linear = util::read_tensor(r, Payload::F32).map_err(bad)?;
        if mel.nrows() != linear.nrows() {
            return Err(CorpusError::BadCache("mel and linear frame counts differ".into()));
        }
        Ok(Self {
            id,
            fingerprint,
            mel,
            linear,
        })
    }
}

pub fn write_cache_entry(path: &Path, entry: &FeatureEntry) -> Result<()> {
    let tmp = path.with_extension("bttc.tmp");
    std::fs::write(&tmp, entry.to_bytes())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a record and checks it against `cfg`.
pub fn read_cache_entry(path: &Path, cfg: &SignalConfig) -> Result<FeatureEntry> {
    let bytes = std::fs::read(path)?;
    let entry = FeatureEntry::read_from(&mut bytes.as_slice())?;
    if entry.fingerprint != cfg.fingerprint() {
        return Err(CorpusError::FingerprintMismatch {
            expected: cfg.fingerprint(),
            found: entry.fingerprint,
        });
    }
    if entry.mel.ncols() != cfg.mel_bands || entry.linear.ncols() != cfg.bins() {
        return Err(CorpusError::BadCache("tensor widths do not match config".into()));
    }
    Ok(entry)
}

/// trim -> pre-emphasis -> STFT -> magnitude -> normalized dB targets,
/// zero-padded to a multiple of `reduction`. Values are rounded to `f32`
/// so the in-memory entry equals what the cache file stores.
pub fn prepare_features(id: &str, audio: &AudioBuffer, cfg: &SignalConfig, reduction: usize) -> Result<FeatureEntry> {
    cfg.validate()?;
    if audio.sample_rate() != cfg.sample_rate {
        return Err(CorpusError::SampleRateMismatch {
            id: id.to_string(),
            expected: cfg.sample_rate,
            found: audio.sample_rate(),
        });
    }
    if audio.is_empty() {
        return Err(CorpusError::SilentAudio(id.to_string()));
    }
    let trimmed = trim_silence(audio, TRIM_THRESHOLD_DB, TRIM_FRAME_MS)?;
    if trimmed.is_empty() {
        return Err(CorpusError::SilentAudio(id.to_string()));
    }
    let emphasized = preemphasis(&trimmed, cfg.preemphasis_coeff)?;
    let mag = magnitude(&stft(&emphasized, cfg)?);
    let mel = linear_to_mel(&mag)?;
    let to_target = |m: &Array2<f64>| -> Array2<f64> {
        let frames = m.nrows().div_ceil(reduction) * reduction;
        let mut out = Array2::zeros((frames, m.ncols()));
        out.slice_mut(s![..m.nrows(), ..])
            .assign(&m.mapv(|a| normalize_magnitude(a, cfg) as f32 as f64));
        out
    };
    Ok(FeatureEntry {
        id: id.to_string(),
        fingerprint: cfg.fingerprint(),
        mel: to_target(&mel.data),
        linear: to_target(&mag.data),
    })
}

pub fn prepare_utterance(utt: &Utterance, cfg: &SignalConfig, reduction: usize) -> Result<FeatureEntry> {
    let path = utt
        .audio_path
        .as_ref()
        .ok_or_else(|| CorpusError::MissingAudio(utt.id.clone()))?;
    let audio = signal::wav::read_wav(path)?;
    prepare_features(&utt.id, &audio, cfg, reduction)
}

/// Prepares every utterance in parallel and writes `<out_dir>/<id>.bttc`.
/// Ids are unique, so each worker owns its own output file.
pub fn prepare_corpus(
    utts: &[Utterance],
    cfg: &SignalConfig,
    reduction: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    utts.par_iter()
        .map(|u| {
            let entry = prepare_utterance(u, cfg, reduction)?;
            let path = cache_entry_path(out_dir, &u.id);
            write_cache_entry(&path, &entry)?;
            Ok(path)
        })
        .collect()
}

pub fn cache_entry_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.bttc"))
}

/// Features for every utterance, read from `cache_dir` when given and
/// computed from the attached audio otherwise. Order follows `utts`.
pub fn load_features(
    utts: &[Utterance],
    cfg: &SignalConfig,
    reduction: usize,
    cache_dir: Option<&Path>,
) -> Result<Vec<FeatureEntry>> {
    utts.par_iter()
        .map(|u| match cache_dir {
            Some(dir) => read_cache_entry(&cache_entry_path(dir, &u.id), cfg),
            None => prepare_utterance(u, cfg, reduction),
        })
        .collect()
}
