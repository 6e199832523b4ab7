//! Frame-level F0 extraction by normalized autocorrelation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::F0Sequence;
use crate::signal::{reflect_index, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    pub frame_length: usize,
    pub frame_shift: usize,
    /// Frames quieter than this RMS are unvoiced.
    pub energy_threshold: f64,
    /// Minimum normalized autocorrelation at the chosen lag.
    pub periodicity_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            fmin: 65.0,
            fmax: 500.0,
            frame_length: 640,
            frame_shift: 160,
            energy_threshold: 1e-3,
            periodicity_threshold: 0.5,
        }
    }
}

impl PitchConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.fmin > 0.0 && self.fmin < self.fmax && self.fmax < sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "pitch range [{}, {}] is not inside (0, Nyquist)",
                self.fmin, self.fmax
            )));
        }
        let max_lag = (sample_rate as f64 / self.fmin).ceil() as usize;
        if self.frame_shift == 0 || self.frame_length < 2 * max_lag {
            return Err(Error::Config(format!(
                "pitch frame of {} samples cannot hold two periods at {} Hz",
                self.frame_length, self.fmin
            )));
        }
        Ok(())
    }
}

/// One F0 value per `frame_shift` samples, frames centered like the STFT.
pub fn extract_f0(wave: &Waveform, cfg: &PitchConfig) -> Result<F0Sequence> {
    cfg.validate(wave.sample_rate)?;
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let sr = wave.sample_rate as f64;
    let min_lag = (sr / cfg.fmax).floor() as usize;
    let max_lag = (sr / cfg.fmin).ceil() as usize;
    let frames = wave.len().div_ceil(cfg.frame_shift);
    let half = (cfg.frame_length / 2) as isize;
    let mut frame = vec![0.0; cfg.frame_length];
    let mut out = Vec::with_capacity(frames);
    for m in 0..frames {
        let start = (m * cfg.frame_shift) as isize - half;
        for (n, v) in frame.iter_mut().enumerate() {
            *v = wave.samples[reflect_index(start + n as isize, wave.len())];
        }
        let mean = frame.iter().sum::<f64>() / frame.len() as f64;
        frame.iter_mut().for_each(|v| *v -= mean);
        let rms = (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt();
        out.push(if rms < cfg.energy_threshold {
            0.0
        } else {
            frame_f0(&frame, min_lag, max_lag, cfg.periodicity_threshold).map_or(0.0, |lag| sr / lag)
        });
    }
    F0Sequence::new(out)
}

fn correlation(x: &[f64], lag: usize) -> f64 {
    let (a, b) = (&x[..x.len() - lag], &x[lag..]);
    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let ea: f64 = a.iter().map(|v| v * v).sum();
    let eb: f64 = b.iter().map(|v| v * v).sum();
    if ea <= 0.0 || eb <= 0.0 {
        0.0
    } else {
        dot / (ea * eb).sqrt()
    }
}

/// Fractional period in samples, or `None` when the frame is aperiodic.
fn frame_f0(x: &[f64], min_lag: usize, max_lag: usize, threshold: f64) -> Option<f64> {
    let lo = min_lag.saturating_sub(1).max(1);
    let r: Vec<f64> = (lo..=max_lag + 1).map(|l| correlation(x, l)).collect();
    let peaks: Vec<usize> = (1..r.len() - 1)
        .filter(|&i| r[i] >= r[i - 1] && r[i] > r[i + 1] && lo + i >= min_lag && lo + i <= max_lag)
        .collect();
    let best = peaks.iter().map(|&i| r[i]).fold(f64::NEG_INFINITY, f64::max);
    if !(best >= threshold) {
        return None;
    }
    // The shortest strong period guards against picking a multiple.
    let i = *peaks.iter().find(|&&i| r[i] >= 0.85 * best)?;
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
    Some((lo + i) as f64 + offset.clamp(-0.5, 0.5))
}
