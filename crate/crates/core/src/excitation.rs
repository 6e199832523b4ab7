//! Full-harmonic excitation built from a frame-level F0 contour.
//!
//! Voiced samples carry every harmonic of the running F0 that fits below
//! Nyquist plus a little Gaussian noise; unvoiced samples carry Gaussian noise
//! with standard deviation 1/3. Harmonic phase is accumulated over the whole
//! utterance, so it stays continuous (frozen) through unvoiced gaps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{stft, SpectralPair, StftConfig, Waveform};

/// Frame-level F0 in Hz; 0 marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Sequence {
    values: Vec<f64>,
}

impl F0Sequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("F0 value {v} is not a finite non-negative frequency")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voiced(&self) -> impl Iterator<Item = bool> + '_ {
        self.values.iter().map(|&v| v > 0.0)
    }

    /// Every voiced value must lie below Nyquist.
    pub fn check_band(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        match self.values.iter().find(|&&v| v >= nyquist) {
            Some(v) => Err(Error::InvalidInput(format!("F0 {v} Hz is not below Nyquist {nyquist} Hz"))),
            None => Ok(()),
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            values: self.values[start..start + len].to_vec(),
        }
    }
}

/// Sample-level F0, constant across each frame's span.
#[derive(Debug, Clone, PartialEq)]
pub struct PointF0 {
    values: Vec<f64>,
}

impl PointF0 {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    /// Total harmonic amplitude; each of the K harmonics gets `alpha / sqrt(K)`.
    pub alpha: f64,
    /// Standard deviation of the noise added to voiced samples.
    pub sigma: f64,
    pub sample_rate: u32,
    pub rng_seed: u64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            sigma: 0.003,
            sample_rate: 16000,
            rng_seed: 0,
        }
    }
}

impl ExcitationConfig {
    /// `sigma = 0` is allowed and disables voiced noise; unvoiced samples are
    /// unaffected because their scale does not depend on sigma.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!(
                "excitation needs alpha > 0 and sigma >= 0 (got {}, {})",
                self.alpha, self.sigma
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// Repeats each frame's F0 `frame_shift` times.
pub fn upsample_f0(f: &F0Sequence, frame_shift: usize) -> PointF0 {
    PointF0 {
        values: f
            .values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, frame_shift))
            .collect(),
    }
}

/// Harmonics needed for the lowest voiced F0 to cover the band up to Nyquist.
pub fn harmonic_count(values: &[f64], sample_rate: u32) -> Result<usize> {
    let min_voiced = values
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_voiced.is_finite() {
        return Err(Error::AllUnvoiced);
    }
    Ok((sample_rate as f64 / 2.0 / min_voiced).floor() as usize)
}

pub fn produce_excitation(f_pl: &PointF0, cfg: &ExcitationConfig) -> Result<Waveform> {
    cfg.validate()?;
    let sr = cfg.sample_rate as f64;
    let nyquist = sr / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let k_total = match harmonic_count(&f_pl.values, cfg.sample_rate) {
        Ok(k) => k,
        Err(Error::AllUnvoiced) => 0,
        Err(e) => return Err(e),
    };
    let amp = if k_total > 0 {
        cfg.alpha / (k_total as f64).sqrt()
    } else {
        0.0
    };

    // Running phase of the fundamental in cycles, kept in [0, 1).
    let mut cycles = 0.0f64;
    let mut out = Vec::with_capacity(f_pl.len());
    for &f in &f_pl.values {
        let z: f64 = StandardNormal.sample(&mut rng);
        cycles += f / sr;
        cycles -= cycles.floor();
        if f > 0.0 {
            let k_here = k_total.min((nyquist / f).floor() as usize);
            let phi = 2.0 * std::f64::consts::PI * cycles;
            out.push(amp * harmonic_sum(phi, k_here) + cfg.sigma * z);
        } else {
            // n_t / (3σ) with n_t = σ z
            out.push(z / 3.0);
        }
    }
    Waveform::new(out, cfg.sample_rate)
}

/// `Σ_{k=1..count} sin(k φ)` via the Chebyshev recurrence.
fn harmonic_sum(phi: f64, count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let two_cos = 2.0 * phi.cos();
    let (mut prev, mut cur) = (0.0, phi.sin());
    let mut sum = cur;
    for _ in 1..count {
        let next = two_cos * cur - prev;
        prev = cur;
        cur = next;
        sum += cur;
    }
    sum
}

pub fn excitation_spectra(e: &Waveform, cfg: &StftConfig) -> Result<SpectralPair> {
    stft(e, cfg)
}
