//! Hinge adversarial losses, feature matching, mel reconstruction loss and
//! the composite generator/discriminator objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_mrd: f64,
    pub lambda_mel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mrd: 1.0,
            lambda_mel: 45.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mrd >= 0.0 && self.lambda_mel >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `mean(max(0, 1 − D(x̂)))`.
pub fn adv_loss_generator(fake_score: &[f64]) -> f64 {
    mean(fake_score.iter().map(|s| (1.0 - s).max(0.0)))
}

/// `mean(max(0, 1 − D(x))) + mean(max(0, 1 + D(x̂)))`.
pub fn adv_loss_discriminator(real_score: &[f64], fake_score: &[f64]) -> f64 {
    mean(real_score.iter().map(|s| (1.0 - s).max(0.0))) + mean(fake_score.iter().map(|s| (1.0 + s).max(0.0)))
}

/// Sum over layers of the mean absolute difference between paired activations.
pub fn feature_matching(real: &[Tensor], fake: &[Tensor]) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::Shape(format!(
            "{} real feature layers vs {} fake",
            real.len(),
            fake.len()
        )));
    }
    real.iter().zip(fake).try_fold(0.0, |acc, (r, f)| {
        if r.shape() != f.shape() {
            return Err(Error::Shape(format!(
                "feature shapes {:?} and {:?} differ",
                r.shape(),
                f.shape()
            )));
        }
        Ok(acc + mean(r.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs())))
    })
}

/// `‖M̂ − M‖₁ / (F·M)`.
pub fn mel_loss(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    if predicted.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "mel shapes {:?} and {:?} differ",
            predicted.shape(),
            target.shape()
        )));
    }
    Ok(mean(predicted.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs())))
}

/// Adversarial and feature-matching terms of one sub-discriminator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubLoss {
    pub adv: f64,
    pub fm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTerms {
    pub mpd: Vec<SubLoss>,
    pub mrd: Vec<SubLoss>,
    pub mel: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorTerms {
    pub mpd: Vec<f64>,
    pub mrd: Vec<f64>,
}

/// `Σ_MPD (adv + fm) + λ_MRD Σ_MRD (adv + fm) + λ_mel · mel`.
pub fn generator_objective(terms: &GeneratorTerms, w: &LossWeights) -> f64 {
    let sum = |subs: &[SubLoss]| subs.iter().map(|s| s.adv + s.fm).sum::<f64>();
    sum(&terms.mpd) + w.lambda_mrd * sum(&terms.mrd) + w.lambda_mel * terms.mel
}

/// `Σ_MPD adv + λ_MRD Σ_MRD adv`.
pub fn discriminator_objective(terms: &DiscriminatorTerms, w: &LossWeights) -> f64 {
    terms.mpd.iter().sum::<f64>() + w.lambda_mrd * terms.mrd.iter().sum::<f64>()
}
