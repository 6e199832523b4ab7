//! Alternating adversarial training of the neural filter against the
//! period and resolution critics, plus the F0 predictor on the same batches.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::config::ProjectConfig;
use crate::data::Utterance;
use crate::discriminator::{Discriminators, SubOutput};
use crate::error::{Error, Result};
use crate::excitation::F0Sequence;
use crate::f0_predictor::F0Predictor;
use crate::losses::{mel_loss, DiscriminatorTerms, GeneratorTerms, SubLoss};
use crate::params::ParamStore;
use crate::signal::{mel_spectrogram, SpectralPair, Waveform};
use crate::tensor::Tensor;
use crate::vocoder::Vocoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Harmonic-plus-noise excitation from the F0 contour.
    FullExcitation,
    /// Gaussian noise at the RMS of the excitation it replaces.
    NoiseOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub lr_decay_per_epoch: f64,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub ablation_mode: AblationMode,
    pub checkpoint_interval: u64,
    pub train_f0_predictor: bool,
    pub f0_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            lr_decay_per_epoch: 0.999,
            batch_size: 16,
            segment_frames: 64,
            max_steps: 1_000_000,
            seed: 0,
            ablation_mode: AblationMode::FullExcitation,
            checkpoint_interval: 10_000,
            train_f0_predictor: true,
            f0_learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1,
            segment_frames: 16,
            max_steps: 2000,
            checkpoint_interval: 500,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.f0_learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && self.adam_eps > 0.0
            && self.lr_decay_per_epoch > 0.0
            && self.lr_decay_per_epoch <= 1.0
            && self.batch_size > 0
            && self.segment_frames > 0
            && self.checkpoint_interval > 0;
        if !ok {
            return Err(Error::Config("training hyperparameters out of range".into()));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamW {
    pub fn new(params: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros = |p: &ParamStore| {
            let mut s = ParamStore::new();
            for (name, t) in p.iter() {
                s.insert(name.clone(), Tensor::zeros(t.shape()));
            }
            s
        };
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2_sqrt = (1.0 - self.beta2.powi(self.t as i32)).sqrt();
        let (b1, b2) = (self.beta1, self.beta2);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let m = self.m.get_mut(name)?;
            let v = self.v.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient of `{name}` has shape {:?}", g.shape())));
            }
            let decay = 1.0 - lr * self.weight_decay;
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *p *= decay;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr / bc1 * *m / (v.sqrt() / bc2_sqrt + self.eps);
            }
        }
        Ok(())
    }
}

/// `lr₀ · decay^epoch` for the epoch containing 0-based `step`.
pub fn learning_rate_at(base: f64, decay: f64, step: u64, steps_per_epoch: u64) -> f64 {
    base * decay.powi((step / steps_per_epoch.max(1)) as i32)
}

/// Excitation waveform for a full utterance under the chosen ablation.
pub fn ablation_excitation(mode: AblationMode, vocoder: &Vocoder, f0: &F0Sequence, seed: u64) -> Result<Waveform> {
    let e = vocoder.excitation_for(f0, seed)?;
    match mode {
        AblationMode::FullExcitation => Ok(e),
        AblationMode::NoiseOnly => {
            let rms = e.rms();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let noise = (0..e.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    rms * z
                })
                .collect();
            Waveform::new(noise, e.sample_rate)
        }
    }
}

/// Per-step stream: `(seed, step)` fixes every random draw of the step, so
/// resuming needs no saved generator state.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Excitation seed used when scoring utterance `index` outside training.
pub fn eval_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - index as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed steps.
    pub step: u64,
    pub gen: ParamStore,
    pub disc: ParamStore,
    pub f0: ParamStore,
    pub opt_gen: AdamW,
    pub opt_disc: AdamW,
    pub opt_f0: AdamW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// 1-based index of the finished step.
    pub step: u64,
    pub lr: f64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub mel_loss: f64,
    pub generator: GeneratorTerms,
    pub discriminator: DiscriminatorTerms,
    pub f0_loss: Option<f64>,
}

impl StepReport {
    pub const CSV_HEADER: &'static str =
        "step,lr,loss_g,loss_d,mel_loss,adv_mpd_g,adv_mrd_g,fm_mpd,fm_mrd,adv_mpd_d,adv_mrd_d,f0_loss";

    pub fn csv_row(&self) -> String {
        let g = &self.generator;
        let sum = |s: &[SubLoss], f: fn(&SubLoss) -> f64| s.iter().map(f).sum::<f64>();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.lr,
            self.loss_g,
            self.loss_d,
            self.mel_loss,
            sum(&g.mpd, |s| s.adv),
            sum(&g.mrd, |s| s.adv),
            sum(&g.mpd, |s| s.fm),
            sum(&g.mrd, |s| s.fm),
            self.discriminator.mpd.iter().sum::<f64>(),
            self.discriminator.mrd.iter().sum::<f64>(),
            self.f0_loss.map_or(String::new(), |v| v.to_string())
        )
    }
}

/// One cropped training example.
#[derive(Debug, Clone)]
pub struct Segment {
    pub excitation: SpectralPair,
    pub mel_cond: Tensor,
    pub mel_target: Tensor,
    pub real: Tensor,
    pub f0: F0Sequence,
}

fn accumulate(acc: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>, weight: f64) {
    for (name, g) in grads {
        let g = g.map(|v| v * weight);
        match acc.get_mut(&name) {
            Some(a) => a.add_assign(&g),
            None => {
                acc.insert(name, g);
            }
        }
    }
}

fn non_finite(step: u64, what: &str, value: f64) -> Error {
    Error::NonFinite(format!("{what} at step {step} ({value})"))
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: ProjectConfig,
    pub vocoder: Vocoder,
    pub discs: Discriminators,
    pub predictor: F0Predictor,
    pub state: TrainState,
    corpus: Vec<Utterance>,
}

impl Trainer {
    /// Fresh parameters drawn from `cfg.train.seed`.
    pub fn new(cfg: ProjectConfig, corpus: Vec<Utterance>) -> Result<Self> {
        let (vocoder, discs, predictor) = Self::models(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let gen = vocoder.init(&mut rng);
        let disc = discs.init(&mut rng);
        let f0 = predictor.init(&mut rng);
        let state = TrainState {
            step: 0,
            opt_gen: AdamW::new(&gen, &cfg.train),
            opt_disc: AdamW::new(&disc, &cfg.train),
            opt_f0: AdamW::new(&f0, &cfg.train),
            gen,
            disc,
            f0,
        };
        Self::from_state(cfg, corpus, state)
    }

    pub fn from_state(cfg: ProjectConfig, corpus: Vec<Utterance>, state: TrainState) -> Result<Self> {
        let (vocoder, discs, predictor) = Self::models(&cfg)?;
        vocoder.layout().check(&state.gen)?;
        discs.layout().check(&state.disc)?;
        predictor.cfg.layout().check(&state.f0)?;
        if corpus.is_empty() {
            return Err(Error::InvalidInput("training corpus is empty".into()));
        }
        let min_frames = discs.min_input_len().div_ceil(cfg.model.stft.frame_shift);
        for u in &corpus {
            u.check(&cfg.model.stft, &cfg.model.mel)?;
            if u.frames() < min_frames {
                return Err(Error::InvalidInput(format!(
                    "utterance `{}` has {} frames; training needs at least {min_frames}",
                    u.name,
                    u.frames()
                )));
            }
        }
        Ok(Self {
            cfg,
            vocoder,
            discs,
            predictor,
            state,
            corpus,
        })
    }

    fn models(cfg: &ProjectConfig) -> Result<(Vocoder, Discriminators, F0Predictor)> {
        cfg.validate()?;
        let m = &cfg.model;
        Ok((
            Vocoder::new(m.stft.clone(), m.mel.clone(), m.excitation.clone(), m.filter.clone())?,
            Discriminators::new(m.mpd.clone(), m.mrd.clone(), &m.stft)?,
            F0Predictor::new(m.f0_predictor.clone())?,
        ))
    }

    pub fn corpus(&self) -> &[Utterance] {
        &self.corpus
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.corpus.len().div_ceil(self.cfg.train.batch_size) as u64
    }

    /// Rate used by 0-based step `step`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        learning_rate_at(
            self.cfg.train.learning_rate,
            self.cfg.train.lr_decay_per_epoch,
            step,
            self.steps_per_epoch(),
        )
    }

    /// Draws one cropped example.
    pub fn sample_segment(&self, rng: &mut ChaCha8Rng) -> Result<Segment> {
        let utt = &self.corpus[rng.random_range(0..self.corpus.len())];
        let frames = self.cfg.train.segment_frames.min(utt.frames());
        let start = rng.random_range(0..=utt.frames() - frames);
        let seed = rng.next_u64();
        let shift = self.cfg.model.stft.frame_shift;
        let span = start * shift..(start + frames) * shift;
        let full = ablation_excitation(self.cfg.train.ablation_mode, &self.vocoder, &utt.f0, seed)?;
        let excitation = Waveform::new(full.samples[span.clone()].to_vec(), full.sample_rate)?;
        let real = Waveform::new(utt.wave.samples[span].to_vec(), utt.wave.sample_rate)?;
        let mel_target = mel_spectrogram(&real, &self.cfg.model.stft, &self.cfg.model.mel)?.values;
        let mels = self.cfg.model.mel.num_mels;
        let mel_cond = Tensor::new(
            vec![frames, mels],
            utt.mel.data()[start * mels..(start + frames) * mels].to_vec(),
        )?;
        Ok(Segment {
            excitation: self.vocoder.analyze(&excitation)?,
            mel_cond,
            mel_target,
            real: Tensor::new(vec![real.len()], real.samples)?,
            f0: utt.f0.slice(start, frames),
        })
    }

    fn adversarial_pairs(&self, g: &mut Graph, disc: &ParamStore, trainable: bool, real: Var, fake: Var) -> [(Vec<SubOutput>, Vec<SubOutput>); 2] {
        let mpd = (
            self.discs.build_mpd(g, disc, trainable, real),
            self.discs.build_mpd(g, disc, trainable, fake),
        );
        let mrd = (
            self.discs.build_mrd(g, disc, trainable, real),
            self.discs.build_mrd(g, disc, trainable, fake),
        );
        [mpd, mrd]
    }

    /// Discriminator objective on one segment with the generator frozen;
    /// returns the loss, its terms and the critic gradients.
    pub fn discriminator_loss(
        &self,
        gen: &ParamStore,
        disc: &ParamStore,
        seg: &Segment,
        with_grad: bool,
    ) -> (f64, DiscriminatorTerms, BTreeMap<String, Tensor>) {
        let mut g = Graph::new();
        let out = self.vocoder.build(&mut g, gen, false, &seg.excitation, &seg.mel_cond);
        let real = g.constant(seg.real.clone());
        let mut terms = DiscriminatorTerms::default();
        let mut parts = Vec::new();
        for (family, (r, f)) in self.adversarial_pairs(&mut g, disc, with_grad, real, out.wave).into_iter().enumerate() {
            let mut subs = Vec::new();
            for (r, f) in r.iter().zip(&f) {
                let lr = g.hinge_mean(r.score, 1.0);
                let lf = g.hinge_mean(f.score, -1.0);
                let s = g.add(lr, lf);
                subs.push(s);
                let v = g.scalar(s);
                if family == 0 {
                    terms.mpd.push(v);
                } else {
                    terms.mrd.push(v);
                }
            }
            let s = g.add_all(&subs);
            parts.push(if family == 0 { s } else { g.scale(s, self.cfg.loss.lambda_mrd) });
        }
        let loss = g.add_all(&parts);
        let grads = if with_grad { g.backward(loss).params(disc) } else { BTreeMap::new() };
        (g.scalar(loss), terms, grads)
    }

    /// Generator objective on one segment with the critics frozen.
    pub fn generator_loss(
        &self,
        gen: &ParamStore,
        disc: &ParamStore,
        seg: &Segment,
        with_grad: bool,
    ) -> (f64, GeneratorTerms, BTreeMap<String, Tensor>) {
        let mut g = Graph::new();
        let out = self.vocoder.build(&mut g, gen, with_grad, &seg.excitation, &seg.mel_cond);
        let real = g.constant(seg.real.clone());
        let mut terms = GeneratorTerms::default();
        let mut parts = Vec::new();
        for (family, (r, f)) in self.adversarial_pairs(&mut g, disc, false, real, out.wave).into_iter().enumerate() {
            let mut subs = Vec::new();
            for (r, f) in r.iter().zip(&f) {
                let adv = g.hinge_mean(f.score, 1.0);
                let fms: Vec<Var> = r.features.iter().zip(&f.features).map(|(&a, &b)| g.l1_mean(a, b)).collect();
                let fm = g.add_all(&fms);
                let sub = SubLoss {
                    adv: g.scalar(adv),
                    fm: g.scalar(fm),
                };
                if family == 0 {
                    terms.mpd.push(sub);
                } else {
                    terms.mrd.push(sub);
                }
                subs.push(g.add(adv, fm));
            }
            let s = g.add_all(&subs);
            parts.push(if family == 0 { s } else { g.scale(s, self.cfg.loss.lambda_mrd) });
        }
        let target = g.constant(seg.mel_target.clone());
        let mel = g.l1_mean(out.mel, target);
        terms.mel = g.scalar(mel);
        let weighted = g.scale(mel, self.cfg.loss.lambda_mel);
        parts.push(weighted);
        let loss = g.add_all(&parts);
        let grads = if with_grad { g.backward(loss).params(gen) } else { BTreeMap::new() };
        (g.scalar(loss), terms, grads)
    }

    fn f0_loss(&self, params: &ParamStore, seg: &Segment) -> (f64, BTreeMap<String, Tensor>) {
        let mut g = Graph::new();
        let m = g.constant(seg.mel_cond.clone());
        let out = self.predictor.build(&mut g, params, true, m);
        let loss = self.predictor.build_loss(&mut g, &out, &seg.f0);
        let grads = g.backward(loss).params(params);
        (g.scalar(loss), grads)
    }

    /// One critic update followed by one generator update (and one predictor
    /// update). State is left untouched if any loss turns non-finite.
    pub fn step(&mut self) -> Result<StepReport> {
        let index = self.state.step;
        let mut rng = step_rng(self.cfg.train.seed, index);
        let batch = (0..self.cfg.train.batch_size)
            .map(|_| self.sample_segment(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let lr = self.learning_rate(index);
        let w = 1.0 / batch.len() as f64;

        let mut disc_terms = DiscriminatorTerms::default();
        let mut loss_d = 0.0;
        let mut grads = BTreeMap::new();
        for seg in &batch {
            let (l, t, g) = self.discriminator_loss(&self.state.gen, &self.state.disc, seg, true);
            loss_d += w * l;
            merge_d(&mut disc_terms, &t, w);
            accumulate(&mut grads, g, w);
        }
        if !loss_d.is_finite() {
            return Err(non_finite(index + 1, "discriminator loss", loss_d));
        }
        let mut disc = self.state.disc.clone();
        let mut opt_disc = self.state.opt_disc.clone();
        opt_disc.step(&mut disc, &grads, lr)?;

        let mut gen_terms = GeneratorTerms::default();
        let mut loss_g = 0.0;
        let mut grads = BTreeMap::new();
        for seg in &batch {
            let (l, t, g) = self.generator_loss(&self.state.gen, &disc, seg, true);
            loss_g += w * l;
            merge_g(&mut gen_terms, &t, w);
            accumulate(&mut grads, g, w);
        }
        if !loss_g.is_finite() {
            return Err(non_finite(index + 1, "generator loss", loss_g));
        }
        let mut gen = self.state.gen.clone();
        let mut opt_gen = self.state.opt_gen.clone();
        opt_gen.step(&mut gen, &grads, lr)?;

        let mut f0 = self.state.f0.clone();
        let mut opt_f0 = self.state.opt_f0.clone();
        let f0_loss = if self.cfg.train.train_f0_predictor {
            let f0_lr = learning_rate_at(
                self.cfg.train.f0_learning_rate,
                self.cfg.train.lr_decay_per_epoch,
                index,
                self.steps_per_epoch(),
            );
            let mut loss = 0.0;
            let mut grads = BTreeMap::new();
            for seg in &batch {
                let (l, g) = self.f0_loss(&self.state.f0, seg);
                loss += w * l;
                accumulate(&mut grads, g, w);
            }
            if !loss.is_finite() {
                return Err(non_finite(index + 1, "F0 predictor loss", loss));
            }
            opt_f0.step(&mut f0, &grads, f0_lr)?;
            Some(loss)
        } else {
            None
        };
        for store in [&gen, &disc, &f0] {
            store
                .check_finite()
                .map_err(|e| Error::NonFinite(format!("update at step {}: {e}", index + 1)))?;
        }

        self.state = TrainState {
            step: index + 1,
            gen,
            disc,
            f0,
            opt_gen,
            opt_disc,
            opt_f0,
        };
        Ok(StepReport {
            step: index + 1,
            lr,
            loss_g,
            loss_d,
            mel_loss: gen_terms.mel,
            generator: gen_terms,
            discriminator: disc_terms,
            f0_loss,
        })
    }

    /// Mean mel loss of full-utterance resynthesis over the corpus, with
    /// fixed excitation seeds.
    pub fn evaluate_mel_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for (i, utt) in self.corpus.iter().enumerate() {
            let seed = eval_seed(self.cfg.train.seed, i);
            let e = ablation_excitation(self.cfg.train.ablation_mode, &self.vocoder, &utt.f0, seed)?;
            let wave = self.vocoder.synthesize_from_excitation(&e, &utt.mel, &self.state.gen)?;
            let mel = mel_spectrogram(&wave, &self.cfg.model.stft, &self.cfg.model.mel)?.values;
            total += mel_loss(&mel, &utt.mel)?;
        }
        Ok(total / self.corpus.len() as f64)
    }
}

fn merge_d(acc: &mut DiscriminatorTerms, t: &DiscriminatorTerms, w: f64) {
    acc.mpd.resize(t.mpd.len(), 0.0);
    acc.mrd.resize(t.mrd.len(), 0.0);
    acc.mpd.iter_mut().zip(&t.mpd).for_each(|(a, v)| *a += w * v);
    acc.mrd.iter_mut().zip(&t.mrd).for_each(|(a, v)| *a += w * v);
}

fn merge_g(acc: &mut GeneratorTerms, t: &GeneratorTerms, w: f64) {
    for (a, s) in [(&mut acc.mpd, &t.mpd), (&mut acc.mrd, &t.mrd)] {
        a.resize(s.len(), SubLoss::default());
        for (a, s) in a.iter_mut().zip(s) {
            a.adv += w * s.adv;
            a.fm += w * s.fm;
        }
    }
    acc.mel += w * t.mel;
}
