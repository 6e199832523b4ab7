//! Project-wide configuration tree.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::discriminator::{MpdConfig, MrdConfig};
use crate::error::{Error, Result};
use crate::excitation::ExcitationConfig;
use crate::f0_predictor::F0PredictorConfig;
use crate::filter::FilterConfig;
use crate::losses::LossWeights;
use crate::pitch::PitchConfig;
use crate::signal::{MelConfig, StftConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub wav_dir: PathBuf,
    pub feature_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
    /// Directory of `<utterance>.f0` sidecar files replacing the built-in extractor.
    pub f0_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            wav_dir: "data/wavs".into(),
            feature_dir: "data/features".into(),
            checkpoint_dir: "ckpt".into(),
            log_path: "train_log.csv".into(),
            f0_dir: None,
        }
    }
}

/// Architecture and feature settings a checkpoint is tied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub excitation: ExcitationConfig,
    pub filter: FilterConfig,
    pub mpd: MpdConfig,
    pub mrd: MrdConfig,
    pub f0_predictor: F0PredictorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            mel: MelConfig::default(),
            excitation: ExcitationConfig::default(),
            filter: FilterConfig::default(),
            mpd: MpdConfig::default(),
            mrd: MrdConfig::default(),
            f0_predictor: F0PredictorConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.mel.validate(self.stft.sample_rate)?;
        self.excitation.validate()?;
        self.filter.validate()?;
        self.mpd.validate()?;
        self.mrd.validate()?;
        self.f0_predictor.validate()?;
        if self.excitation.sample_rate != self.stft.sample_rate {
            return Err(Error::Config(format!(
                "excitation.sample_rate {} differs from stft.sample_rate {}",
                self.excitation.sample_rate, self.stft.sample_rate
            )));
        }
        if self.filter.spec_bins != self.stft.num_bins() {
            return Err(Error::Config(format!(
                "filter.spec_bins {} must equal fft_size/2+1 = {}",
                self.filter.spec_bins,
                self.stft.num_bins()
            )));
        }
        if self.filter.mel_bins != self.mel.num_mels || self.f0_predictor.mel_bins != self.mel.num_mels {
            return Err(Error::Config(format!(
                "filter.mel_bins {} and f0_predictor.mel_bins {} must equal mel.num_mels {}",
                self.filter.mel_bins, self.f0_predictor.mel_bins, self.mel.num_mels
            )));
        }
        for r in crate::discriminator::MrdConfig::resolutions(&self.stft) {
            r.validate()?;
        }
        Ok(())
    }

    /// Small model that trains at interactive speed on one CPU core.
    pub fn desk() -> Self {
        Self {
            filter: FilterConfig {
                num_blocks: 2,
                hidden_dim: 32,
                ..Default::default()
            },
            mpd: MpdConfig {
                channels: vec![4, 8, 16, 16, 16],
                ..Default::default()
            },
            mrd: MrdConfig {
                channels: 4,
                ..Default::default()
            },
            f0_predictor: F0PredictorConfig {
                conv_channels: 16,
                vuv_hidden: 16,
                contour_hidden: 16,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub pitch: PitchConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl ProjectConfig {
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.pitch.validate(self.model.stft.sample_rate)?;
        self.train.validate()?;
        if self.pitch.frame_shift != self.model.stft.frame_shift {
            return Err(Error::Config(format!(
                "pitch.frame_shift {} must equal stft.frame_shift {}",
                self.pitch.frame_shift, self.model.stft.frame_shift
            )));
        }
        let min_samples = 2 * self.model.stft.frame_length;
        if self.train.segment_frames * self.model.stft.frame_shift < min_samples {
            return Err(Error::Config(format!(
                "train.segment_frames {} is shorter than the {min_samples}-sample discriminator minimum",
                self.train.segment_frames
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
