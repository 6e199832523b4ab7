//! Frame-aligned training records: waveform, F0 contour and log-mel.

use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::excitation::F0Sequence;
use crate::pitch::{extract_f0, PitchConfig};
use crate::signal::{mel_spectrogram, MelConfig, StftConfig, Waveform};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub name: String,
    /// Exactly `frames * frame_shift` samples.
    pub wave: Waveform,
    pub f0: F0Sequence,
    /// `frames × mels` log-mel.
    pub mel: Tensor,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    pub fn check(&self, stft: &StftConfig, mel: &MelConfig) -> Result<()> {
        let frames = self.f0.len();
        if self.wave.len() != frames * stft.frame_shift || self.mel.shape() != [frames, mel.num_mels] {
            return Err(Error::Shape(format!(
                "utterance `{}`: {} samples, {} F0 frames and mel {:?} are not aligned",
                self.name,
                self.wave.len(),
                frames,
                self.mel.shape()
            )));
        }
        if self.wave.sample_rate != stft.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: stft.sample_rate,
                actual: self.wave.sample_rate,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Container::new(serde_json::json!({
            "kind": "features",
            "name": self.name,
            "sample_rate": self.wave.sample_rate,
        }));
        c.insert("wave", Tensor::new(vec![self.wave.len()], self.wave.samples.clone())?);
        c.insert("f0", Tensor::new(vec![self.f0.len()], self.f0.values().to_vec())?);
        c.insert("mel", self.mel.clone());
        c.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut c = Container::read(path)?;
        if c.meta["kind"] != "features" {
            return Err(Error::Corrupt("not a feature file".into()));
        }
        let name = c.meta["name"]
            .as_str()
            .ok_or_else(|| Error::Corrupt("feature name missing".into()))?
            .to_string();
        let rate = c.meta["sample_rate"]
            .as_u64()
            .ok_or_else(|| Error::Corrupt("sample rate missing".into()))? as u32;
        Ok(Self {
            name,
            wave: Waveform::new(c.take("wave")?.into_data(), rate)?,
            f0: F0Sequence::new(c.take("f0")?.into_data())?,
            mel: c.take("mel")?,
        })
    }
}

/// Trims the waveform to whole frames and computes its features. An imported
/// contour must have exactly one value per frame.
pub fn prepare_utterance(
    name: &str,
    wave: &Waveform,
    stft: &StftConfig,
    mel: &MelConfig,
    pitch: &PitchConfig,
    imported_f0: Option<F0Sequence>,
) -> Result<Utterance> {
    let wave = wave.trimmed_to_multiple(stft.frame_shift);
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let mel_values = mel_spectrogram(&wave, stft, mel)?.values;
    let frames = mel_values.shape()[0];
    let f0 = match imported_f0 {
        Some(f0) if f0.len() != frames => {
            return Err(Error::Shape(format!(
                "`{name}`: imported F0 has {} frames, audio has {frames}",
                f0.len()
            )))
        }
        Some(f0) => f0,
        None => extract_f0(&wave, pitch)?,
    };
    f0.check_band(stft.sample_rate)?;
    let utt = Utterance {
        name: name.to_string(),
        wave,
        f0,
        mel: mel_values,
    };
    utt.check(stft, mel)?;
    Ok(utt)
}

/// Speech-like test signal: a band-limited pulse train following `f0`
/// (one value per frame, 0 for noise frames) through three formant
/// resonators.
pub fn synthetic_voice(f0: &[f64], formants: [f64; 3], frame_shift: usize, sample_rate: u32, seed: u64) -> Result<Waveform> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let sr = sample_rate as f64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut phase = 0.0f64;
    let mut source = Vec::with_capacity(f0.len() * frame_shift);
    for &f in f0 {
        for _ in 0..frame_shift {
            let z: f64 = StandardNormal.sample(&mut rng);
            if f > 0.0 {
                phase = (phase + f / sr).fract();
                let harmonics = (sr / 2.0 / f).floor() as usize;
                let theta = 2.0 * std::f64::consts::PI * phase;
                let pulse: f64 = (1..=harmonics).map(|k| (k as f64 * theta).cos() / k as f64).sum();
                source.push(0.05 * pulse + 0.002 * z);
            } else {
                source.push(0.03 * z);
            }
        }
    }
    let mut y = source;
    for (i, &fc) in formants.iter().enumerate() {
        // Two-pole resonator; overall level is set by the peak normalization below.
        let bw = 80.0 + 40.0 * i as f64;
        let r = (-std::f64::consts::PI * bw / sr).exp();
        let (a1, a2) = (2.0 * r * (2.0 * std::f64::consts::PI * fc / sr).cos(), -r * r);
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let out = (1.0 - r) * *v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = out;
            *v = out;
        }
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        y.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Waveform::new(y, sample_rate)
}
