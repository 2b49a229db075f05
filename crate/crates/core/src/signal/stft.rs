use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AudioBuffer, ComplexSpectrogram, MagnitudeSpectrogram, Result, Scale, SignalConfig, SignalError};

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of frames produced from a padded signal of `padded_len` samples.
pub fn frame_count(padded_len: usize, win_length: usize, hop_length: usize) -> usize {
    if padded_len < win_length {
        0
    } else {
        1 + (padded_len - win_length) / hop_length
    }
}

/// Reflect padding that keeps mirroring for signals shorter than the pad.
pub(crate) fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    let period = 2 * (n - 1);
    let at = |i: isize| -> f64 {
        if n == 1 {
            return x[0];
        }
        let mut j = i.rem_euclid(period);
        if j >= n {
            j = period - j;
        }
        x[j as usize]
    };
    (-(pad as isize)..n + pad as isize).map(at).collect()
}

/// FFT plans and window for one configuration.
pub(crate) struct Plan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    fft_size: usize,
    hop: usize,
}

impl Plan {
    pub(crate) fn new(cfg: &SignalConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            window: hann_window(cfg.win_length),
            fft_size: cfg.fft_size,
            hop: cfg.hop_length,
        }
    }

    fn win(&self) -> usize {
        self.window.len()
    }

    /// Uncentered analysis of an already padded signal.
    pub(crate) fn analyze(&self, padded: &[f64]) -> Array2<Complex64> {
        let frames = frame_count(padded.len(), self.win(), self.hop);
        let bins = self.fft_size / 2 + 1;
        let mut out = Array2::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        for t in 0..frames {
            let seg = &padded[t * self.hop..t * self.hop + self.win()];
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (b, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&self.window)) {
                b.re = s * w;
            }
            self.forward.process(&mut buf);
            for (o, b) in out.row_mut(t).iter_mut().zip(&buf) {
                *o = *b;
            }
        }
        out
    }

    /// Least-squares overlap-add inverse of [`Plan::analyze`]. Returns the
    /// padded-domain signal of `(frames - 1) * hop + win` samples.
    pub(crate) fn synthesize(&self, spec: &Array2<Complex64>) -> Result<Vec<f64>> {
        let frames = spec.nrows();
        if frames == 0 {
            return Ok(Vec::new());
        }
        let len = (frames - 1) * self.hop + self.win();
        let mut out = vec![0.0; len];
        let mut wsum = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        let half = self.fft_size / 2;
        for t in 0..frames {
            let row = spec.row(t);
            for k in 0..=half {
                buf[k] = row[k];
            }
            for k in half + 1..self.fft_size {
                buf[k] = row[self.fft_size - k].conj();
            }
            self.inverse.process(&mut buf);
            let scale = 1.0 / self.fft_size as f64;
            let base = t * self.hop;
            for (i, w) in self.window.iter().enumerate() {
                out[base + i] += buf[i].re * scale * w;
                wsum[base + i] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&wsum) {
            if *w > 1e-12 {
                *o /= w;
            } else {
                *o = 0.0;
            }
        }
        Ok(out)
    }

    pub(crate) fn window_sum_ok(&self, frames: usize, range: std::ops::Range<usize>) -> Result<()> {
        let mut wsum = vec![0.0; (frames.max(1) - 1) * self.hop + self.win()];
        for t in 0..frames {
            for (i, w) in self.window.iter().enumerate() {
                wsum[t * self.hop + i] += w * w;
            }
        }
        for i in range {
            if wsum.get(i).copied().unwrap_or(0.0) <= 1e-12 {
                return Err(SignalError::NonCola { index: i });
            }
        }
        Ok(())
    }
}

/// Centered STFT with reflect padding of `win_length / 2` on both ends and
/// a Hann window per frame.
pub fn stft(audio: &AudioBuffer, cfg: &SignalConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if audio.is_empty() {
        return Err(SignalError::EmptyAudio);
    }
    let plan = Plan::new(cfg);
    let padded = reflect_pad(audio.samples(), cfg.win_length / 2);
    Ok(ComplexSpectrogram {
        data: plan.analyze(&padded),
        config: cfg.clone(),
        signal_len: audio.len(),
    })
}

/// Overlap-add inverse with window-sum normalization, cropped back to
/// `spec.signal_len` samples.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioBuffer> {
    let cfg = &spec.config;
    cfg.validate()?;
    if spec.data.ncols() != cfg.bins() {
        return Err(SignalError::ShapeMismatch(format!(
            "spectrogram has {} bins, config expects {}",
            spec.data.ncols(),
            cfg.bins()
        )));
    }
    let plan = Plan::new(cfg);
    let pad = cfg.win_length / 2;
    let frames = spec.data.nrows();
    let available = if frames == 0 {
        0
    } else {
        ((frames - 1) * cfg.hop_length + cfg.win_length).saturating_sub(pad)
    };
    let keep = spec.signal_len.min(available);
    plan.window_sum_ok(frames, pad..pad + keep)?;
    let padded = plan.synthesize(&spec.data)?;
    let mut samples: Vec<f64> = padded.into_iter().skip(pad).take(keep).collect();
    samples.resize(spec.signal_len, 0.0);
    AudioBuffer::new(samples, cfg.sample_rate)
}

/// Elementwise modulus.
pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        data: spec.data.mapv(|c| c.norm()),
        scale: Scale::Linear,
        config: spec.config.clone(),
    }
}
