use ndarray::{Array2, Zip};
use num_complex::Complex64;

use super::stft::Plan;
use super::{AudioBuffer, MagnitudeSpectrogram, Result, Scale, SignalConfig, SignalError};

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub audio: AudioBuffer,
    /// Spectral convergence after each iteration, `convergence[k - 1] = C_k`.
    pub convergence: Vec<f64>,
}

/// Recovers a waveform from a linear magnitude spectrogram.
///
/// Starts from zero phase and alternates overlap-add inversion with
/// re-analysis for `cfg.griffin_lim_iters` rounds. Iteration happens on the
/// padded signal so that every projection is an exact least-squares step;
/// the centering pad is stripped from the returned audio, which is
/// `(frames - 1) * hop_length` samples long.
pub fn griffin_lim(mag: &MagnitudeSpectrogram, cfg: &SignalConfig) -> Result<GriffinLimOutput> {
    cfg.validate()?;
    if mag.scale != Scale::Linear {
        return Err(SignalError::ScaleMismatch {
            expected: Scale::Linear,
            found: mag.scale,
        });
    }
    if mag.data.ncols() != cfg.bins() {
        return Err(SignalError::ShapeMismatch(format!(
            "magnitude has {} bins, config expects {}",
            mag.data.ncols(),
            cfg.bins()
        )));
    }
    let frames = mag.data.nrows();
    let pad = cfg.win_length / 2;
    let out_len = frames.saturating_sub(1) * cfg.hop_length;
    let plan = Plan::new(cfg);
    plan.window_sum_ok(frames, pad..pad + out_len)?;

    let target_norm = frobenius(&mag.data);
    let mut estimate: Array2<Complex64> = mag.data.mapv(|m| Complex64::new(m, 0.0));
    let mut signal = Vec::new();
    let mut convergence = Vec::with_capacity(cfg.griffin_lim_iters);
    for _ in 0..cfg.griffin_lim_iters {
        signal = plan.synthesize(&estimate)?;
        let rebuilt = plan.analyze(&signal);
        let mut err = 0.0;
        Zip::from(&mut estimate)
            .and(&rebuilt)
            .and(&mag.data)
            .for_each(|e, r, &m| {
                let n = r.norm();
                err += (n - m) * (n - m);
                *e = if n > 1e-12 { r * (m / n) } else { Complex64::new(m, 0.0) };
            });
        convergence.push(if target_norm > 0.0 {
            err.sqrt() / target_norm
        } else {
            0.0
        });
    }
    let samples: Vec<f64> = signal.into_iter().skip(pad).take(out_len).collect();
    Ok(GriffinLimOutput {
        audio: AudioBuffer::new(samples, cfg.sample_rate)?,
        convergence,
    })
}

/// `||estimate - target||_F / ||target||_F`.
pub fn spectral_convergence(estimate: &MagnitudeSpectrogram, target: &MagnitudeSpectrogram) -> Result<f64> {
    if estimate.data.dim() != target.data.dim() {
        return Err(SignalError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            estimate.data.dim(),
            target.data.dim()
        )));
    }
    let norm = frobenius(&target.data);
    if norm == 0.0 {
        return Err(SignalError::ZeroTarget);
    }
    Ok(frobenius(&(&estimate.data - &target.data)) / norm)
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
