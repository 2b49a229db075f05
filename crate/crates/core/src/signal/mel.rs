use ndarray::Array2;

use super::{MagnitudeSpectrogram, Result, Scale, SignalConfig, SignalError};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `mel_bands x bins` triangular filterbank spanning `[0, sample_rate / 2]`.
///
/// Filters peak at 1 and neighbours cross at 0.5, so the weights landing
/// on any one FFT bin add up to at most 1.
pub fn mel_filterbank(cfg: &SignalConfig) -> Array2<f64> {
    let bins = cfg.bins();
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..cfg.mel_bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.mel_bands + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut fb = Array2::zeros((cfg.mel_bands, bins));
    for m in 0..cfg.mel_bands {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = bin_hz(k);
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Projects a linear magnitude spectrogram onto the mel filterbank.
pub fn linear_to_mel(mag: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
    if mag.scale != Scale::Linear {
        return Err(SignalError::ScaleMismatch {
            expected: Scale::Linear,
            found: mag.scale,
        });
    }
    let fb = mel_filterbank(&mag.config);
    Ok(MagnitudeSpectrogram {
        data: mag.data.dot(&fb.t()),
        scale: Scale::Mel,
        config: mag.config.clone(),
    })
}
