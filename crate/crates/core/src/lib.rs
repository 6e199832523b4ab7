//! Neural vocoder that shapes a full-harmonic excitation into speech in the
//! STFT domain, with the critics, losses, training loop, F0 tools and
//! metrics around it.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod container;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod excitation;
pub mod f0_predictor;
pub mod filter;
pub mod losses;
pub mod params;
pub mod pitch;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod vocoder;

pub use checkpoint::{latest_checkpoint, load_state, save_checkpoint, save_state};
pub use config::{DataConfig, ModelConfig, ProjectConfig};
pub use data::{prepare_utterance, Utterance};
pub use discriminator::{Discriminators, MpdConfig, MrdConfig, SubResult};
pub use error::{Error, Result};
pub use eval::{f0_rmse_cents, las_rmse, mcd, plot_spectrogram, rtf, vuv_error, MetricReport, UtteranceMetrics};
pub use excitation::{harmonic_count, produce_excitation, upsample_f0, ExcitationConfig, F0Sequence, PointF0};
pub use f0_predictor::{combine_f0, F0Predictor, F0PredictorConfig};
pub use filter::{FilterConfig, NeuralFilter};
pub use losses::{
    adv_loss_discriminator, adv_loss_generator, discriminator_objective, feature_matching, generator_objective,
    mel_loss, DiscriminatorTerms, GeneratorTerms, LossWeights, SubLoss,
};
pub use params::ParamStore;
pub use pitch::{extract_f0, PitchConfig};
pub use signal::{
    istft, mel_spectrogram, read_wav, stft, write_wav, MelConfig, MelSpectrogram, SpectralPair, StftConfig, Waveform,
};
pub use tensor::Tensor;
pub use train::{ablation_excitation, AblationMode, AdamW, StepReport, TrainConfig, TrainState, Trainer};
pub use vocoder::Vocoder;
