//! Deterministic DSP kernels: framing, STFT/ISTFT, mel projection,
//! pre-emphasis, silence trimming and Griffin-Lim phase reconstruction.
//!
//! Everything here runs in `f64`. Audio enters and leaves the crate as
//! 16-bit PCM through [`wav`].

mod griffin_lim;
mod mel;
mod stft;
pub mod wav;

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

pub use griffin_lim::{griffin_lim, spectral_convergence, GriffinLimOutput};
pub use mel::{hz_to_mel, linear_to_mel, mel_filterbank, mel_to_hz};
pub use stft::{frame_count, hann_window, istft, magnitude, stft};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("audio buffer is empty")]
    EmptyAudio,
    #[error("invalid signal config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("window sum vanishes at output sample {index}; hop/window pair is not overlap-add invertible")]
    NonCola { index: usize },
    #[error("expected a {expected} spectrogram, got {found}")]
    ScaleMismatch { expected: Scale, found: Scale },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pre-emphasis coefficient {0} outside [0, 1)")]
    InvalidCoefficient(f64),
    #[error("target spectrogram has zero norm")]
    ZeroTarget,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis and synthesis parameters shared by every spectral operation.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub mel_bands: usize,
    pub preemphasis_coeff: f64,
    pub sample_rate: u32,
    pub griffin_lim_iters: usize,
    pub ref_level_db: f64,
    pub min_level_db: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            win_length: 2048,
            hop_length: 512,
            mel_bands: 80,
            preemphasis_coeff: 0.97,
            sample_rate: 48_000,
            griffin_lim_iters: 60,
            ref_level_db: 20.0,
            min_level_db: -100.0,
        }
    }
}

impl SignalConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(SignalError::InvalidConfig { field, reason });
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return bad("fft_size", format!("{} is not a power of two >= 2", self.fft_size));
        }
        if self.win_length == 0 || self.win_length > self.fft_size {
            return bad(
                "win_length",
                format!("{} must be in 1..={}", self.win_length, self.fft_size),
            );
        }
        if self.hop_length == 0 || self.hop_length > self.win_length {
            return bad(
                "hop_length",
                format!("{} must be in 1..={}", self.hop_length, self.win_length),
            );
        }
        // periodic Hann overlap-adds to a constant for hop = win / R, R >= 2
        if !self.win_length.is_multiple_of(self.hop_length) || self.win_length / self.hop_length < 2 {
            return bad(
                "hop_length",
                format!(
                    "{} must divide win_length {} at least twice for constant overlap-add",
                    self.hop_length, self.win_length
                ),
            );
        }
        if self.mel_bands == 0 || self.mel_bands >= self.bins() {
            return bad("mel_bands", format!("{} must be in 1..{}", self.mel_bands, self.bins()));
        }
        if !(0.0..1.0).contains(&self.preemphasis_coeff) {
            return bad(
                "preemphasis_coeff",
                format!("{} outside [0, 1)", self.preemphasis_coeff),
            );
        }
        if self.sample_rate == 0 {
            return bad("sample_rate", "must be positive".into());
        }
        if self.griffin_lim_iters == 0 {
            return bad("griffin_lim_iters", "must be at least 1".into());
        }
        if !self.min_level_db.is_finite() || self.min_level_db >= 0.0 {
            return bad("min_level_db", format!("{} must be negative", self.min_level_db));
        }
        if !self.ref_level_db.is_finite() {
            return bad("ref_level_db", "must be finite".into());
        }
        Ok(())
    }

    /// Stable 64-bit hash of every field that shapes the features.
    pub fn fingerprint(&self) -> u64 {
        crate::util::fingerprint(&format!(
            "signal:fft={};win={};hop={};mel={};pre={:e};sr={};ref={:e};min={:e}",
            self.fft_size,
            self.win_length,
            self.hop_length,
            self.mel_bands,
            self.preemphasis_coeff,
            self.sample_rate,
            self.ref_level_db,
            self.min_level_db
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Mel,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scale::Linear => f.write_str("linear"),
            Scale::Mel => f.write_str("mel"),
        }
    }
}

/// Frames x bins complex STFT.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub data: Array2<Complex64>,
    pub config: SignalConfig,
    /// Unpadded length of the analysed signal, used to size the inverse.
    pub signal_len: usize,
}

/// Frames x bins nonnegative magnitudes, linear or mel scaled.
#[derive(Debug, Clone)]
pub struct MagnitudeSpectrogram {
    pub data: Array2<f64>,
    pub scale: Scale,
    pub config: SignalConfig,
}

impl MagnitudeSpectrogram {
    pub fn new(data: Array2<f64>, scale: Scale, config: SignalConfig) -> Result<Self> {
        let expected = match scale {
            Scale::Linear => config.bins(),
            Scale::Mel => config.mel_bands,
        };
        if data.ncols() != expected {
            return Err(SignalError::ShapeMismatch(format!(
                "{scale} spectrogram needs {expected} bins, got {}",
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SignalError::ShapeMismatch(
                "magnitudes must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { data, scale, config })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    /// Writes one CSV row per frame.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(&self.data, path)
    }
}

pub(crate) fn write_matrix_csv(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// `y[n] = x[n] - coeff * x[n-1]`.
pub fn preemphasis(audio: &AudioBuffer, coeff: f64) -> Result<AudioBuffer> {
    check_coeff(coeff)?;
    let x = audio.samples();
    let y = (0..x.len())
        .map(|n| if n == 0 { x[0] } else { x[n] - coeff * x[n - 1] })
        .collect();
    AudioBuffer::new(y, audio.sample_rate())
}

/// Exact IIR inverse of [`preemphasis`].
pub fn inverse_preemphasis(audio: &AudioBuffer, coeff: f64) -> Result<AudioBuffer> {
    check_coeff(coeff)?;
    let mut prev = 0.0;
    let y = audio
        .samples()
        .iter()
        .map(|&v| {
            prev = v + coeff * prev;
            prev
        })
        .collect();
    AudioBuffer::new(y, audio.sample_rate())
}

fn check_coeff(coeff: f64) -> Result<()> {
    if (0.0..1.0).contains(&coeff) {
        Ok(())
    } else {
        Err(SignalError::InvalidCoefficient(coeff))
    }
}

/// Drops leading and trailing frames whose RMS level is below
/// `threshold_db` dBFS. The result is always a contiguous slice of the
/// input; an all-silent input yields an empty buffer.
pub fn trim_silence(audio: &AudioBuffer, threshold_db: f64, frame_ms: f64) -> Result<AudioBuffer> {
    if audio.is_empty() {
        return Err(SignalError::EmptyAudio);
    }
    let (start, end) = silence_bounds(audio.samples(), audio.sample_rate(), threshold_db, frame_ms);
    AudioBuffer::new(audio.samples()[start..end].to_vec(), audio.sample_rate())
}

/// Sample range kept by [`trim_silence`].
pub fn silence_bounds(samples: &[f64], sample_rate: u32, threshold_db: f64, frame_ms: f64) -> (usize, usize) {
    let frame = ((frame_ms * sample_rate as f64 / 1000.0).round() as usize).max(1);
    let loud: Vec<bool> = samples
        .chunks(frame)
        .map(|c| {
            let rms = (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt();
            rms > 0.0 && 20.0 * rms.log10() >= threshold_db
        })
        .collect();
    match (loud.iter().position(|&l| l), loud.iter().rposition(|&l| l)) {
        (Some(first), Some(last)) => (first * frame, ((last + 1) * frame).min(samples.len())),
        _ => (0, 0),
    }
}

/// Amplitude to decibels, floored at `min_level_db`.
pub fn amp_to_db(amp: f64, min_level_db: f64) -> f64 {
    let floor = 10f64.powf(min_level_db / 20.0);
    20.0 * amp.max(floor).log10()
}

pub fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Magnitude to the `[0, 1]` model target scale.
pub fn normalize_magnitude(amp: f64, cfg: &SignalConfig) -> f64 {
    let db = amp_to_db(amp, cfg.min_level_db) - cfg.ref_level_db;
    ((db - cfg.min_level_db) / -cfg.min_level_db).clamp(0.0, 1.0)
}

/// Inverse of [`normalize_magnitude`] on the unclipped range.
pub fn denormalize_magnitude(value: f64, cfg: &SignalConfig) -> f64 {
    let db = value.clamp(0.0, 1.0) * -cfg.min_level_db + cfg.min_level_db + cfg.ref_level_db;
    db_to_amp(db)
}
