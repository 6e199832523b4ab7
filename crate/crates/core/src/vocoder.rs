//! End-to-end generator: excitation producer, neural filter and ISTFT.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::excitation::{produce_excitation, upsample_f0, ExcitationConfig, F0Sequence};
use crate::filter::{FilterConfig, FilterOutput, NeuralFilter};
use crate::params::{ParamLayout, ParamStore};
use crate::signal::{mel_filterbank, stft, MelConfig, SpectralPair, StftConfig, StftKernel, Waveform};
use crate::tensor::Tensor;

/// Graph handles of one generator pass.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    pub filter: FilterOutput,
    /// Generated waveform, `frames * frame_shift` samples.
    pub wave: Var,
    /// Log-mel of the generated waveform.
    pub mel: Var,
}

#[derive(Debug, Clone)]
pub struct Vocoder {
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub excitation: ExcitationConfig,
    pub filter: NeuralFilter,
    kernel: Arc<StftKernel>,
    /// Mel filterbank transposed to `bins × mels`.
    filterbank_t: Tensor,
}

impl Vocoder {
    pub fn new(stft: StftConfig, mel: MelConfig, excitation: ExcitationConfig, filter: FilterConfig) -> Result<Self> {
        stft.validate()?;
        mel.validate(stft.sample_rate)?;
        excitation.validate()?;
        if excitation.sample_rate != stft.sample_rate {
            return Err(Error::Config(format!(
                "excitation rate {} differs from STFT rate {}",
                excitation.sample_rate, stft.sample_rate
            )));
        }
        if filter.spec_bins != stft.num_bins() || filter.mel_bins != mel.num_mels {
            return Err(Error::Config(format!(
                "filter expects {} bins / {} mels, features have {} / {}",
                filter.spec_bins,
                filter.mel_bins,
                stft.num_bins(),
                mel.num_mels
            )));
        }
        let filterbank_t = mel_filterbank(&stft, &mel).transpose()?;
        Ok(Self {
            kernel: Arc::new(StftKernel::new(&stft)),
            stft,
            mel,
            excitation,
            filter: NeuralFilter::new(filter)?,
            filterbank_t,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        self.filter.cfg.layout()
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamStore {
        self.layout().init(rng)
    }

    /// Excitation waveform for a frame-level contour, `len * frame_shift` samples.
    pub fn excitation_for(&self, f0: &F0Sequence, seed: u64) -> Result<Waveform> {
        f0.check_band(self.stft.sample_rate)?;
        let cfg = ExcitationConfig {
            rng_seed: seed,
            ..self.excitation.clone()
        };
        produce_excitation(&upsample_f0(f0, self.stft.frame_shift), &cfg)
    }

    pub fn analyze(&self, wave: &Waveform) -> Result<SpectralPair> {
        stft(wave, &self.stft)
    }

    /// Differentiable log-mel of a 1-D waveform node.
    pub fn build_mel(&self, g: &mut Graph, wave: Var) -> Var {
        let amp = g.stft_magnitude(wave, self.kernel.clone());
        let fb = g.constant(self.filterbank_t.clone());
        let energy = g.matmul(amp, fb);
        g.log_clamp(energy, self.mel.log_floor)
    }

    /// Records the generator on `g` for fixed excitation spectra and conditioning mel.
    pub fn build(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        trainable: bool,
        excitation: &SpectralPair,
        mel: &Tensor,
    ) -> GeneratorOutput {
        let amp = g.constant(excitation.amplitude.clone());
        let phase = g.constant(excitation.phase.clone());
        let m = g.constant(mel.clone());
        let filter = self.filter.build(g, store, trainable, amp, phase, m);
        let wave = g.istft(filter.amplitude, filter.phase, self.kernel.clone());
        let mel = self.build_mel(g, wave);
        GeneratorOutput { filter, wave, mel }
    }

    fn check(&self, excitation: &SpectralPair, mel: &Tensor, params: &ParamStore) -> Result<()> {
        self.filter.check_inputs(&excitation.amplitude, &excitation.phase, mel)?;
        self.layout().check(params)?;
        params.check_finite()
    }

    /// Waveform from a precomputed excitation waveform and its mel frames.
    pub fn synthesize_from_excitation(&self, excitation: &Waveform, mel: &Tensor, params: &ParamStore) -> Result<Waveform> {
        let spectra = self.analyze(excitation)?;
        self.check(&spectra, mel, params)?;
        let mut g = Graph::new();
        let out = self.build(&mut g, params, false, &spectra, mel);
        Waveform::new(g.value(out.wave).data().to_vec(), self.stft.sample_rate)
    }

    /// Waveform of `F * frame_shift` samples from `F` F0 values and `F × M` log-mel frames.
    pub fn synthesize(&self, f0: &F0Sequence, mel: &Tensor, params: &ParamStore, seed: u64) -> Result<Waveform> {
        let (frames, _) = mel.dims2()?;
        if frames != f0.len() {
            return Err(Error::Shape(format!("{} F0 frames vs {frames} mel frames", f0.len())));
        }
        if frames == 0 {
            return Err(Error::EmptyWaveform);
        }
        let excitation = self.excitation_for(f0, seed)?;
        self.synthesize_from_excitation(&excitation, mel, params)
    }
}
