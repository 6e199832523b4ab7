//! Short-time Fourier analysis/synthesis, log-mel features and WAV I/O.
//!
//! Framing is centered: the signal is reflect-padded by half a frame on each
//! side and frame `m` is centered on sample `m * frame_shift`, so a signal of
//! `T` samples yields `ceil(T / frame_shift)` frames. Frames shorter than the
//! FFT are zero-padded at the end.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn inverse_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann window.
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_length: 640,
            frame_shift: 160,
            fft_size: 1024,
            sample_rate: 16000,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => (0..self.frame_length)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.frame_length as f64).cos())
                .collect(),
        }
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        len.div_ceil(self.frame_shift)
    }

    /// Same window and rate with every length scaled by `num / den`.
    pub fn scaled(&self, num: usize, den: usize) -> Self {
        Self {
            frame_length: self.frame_length * num / den,
            frame_shift: self.frame_shift * num / den,
            fft_size: self.fft_size * num / den,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_shift == 0 || self.frame_length == 0 {
            return Err(Error::Config("frame length and shift must be positive".into()));
        }
        if self.frame_length % self.frame_shift != 0 {
            return Err(Error::Config(format!(
                "frame shift {} does not divide frame length {}",
                self.frame_shift, self.frame_length
            )));
        }
        if self.fft_size < self.frame_length {
            return Err(Error::Config(format!(
                "fft size {} is smaller than frame length {}",
                self.fft_size, self.frame_length
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        // Constant overlap-add of the analysis window at this shift.
        let w = self.window();
        let sums: Vec<f64> = (0..self.frame_shift)
            .map(|phase| w.iter().skip(phase).step_by(self.frame_shift).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        if mean <= 0.0 || sums.iter().any(|s| (s - mean).abs() > 1e-9 * mean) {
            return Err(Error::Config(format!(
                "window of length {} is not overlap-add constant at shift {}",
                self.frame_length, self.frame_shift
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Drops trailing samples so the length is a multiple of `shift`.
    pub fn trimmed_to_multiple(&self, shift: usize) -> Self {
        let keep = self.samples.len() / shift * shift;
        Self {
            samples: self.samples[..keep].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Paired amplitude and phase spectra, both `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPair {
    pub amplitude: Tensor,
    pub phase: Tensor,
}

impl SpectralPair {
    pub fn new(amplitude: Tensor, phase: Tensor) -> Result<Self> {
        if amplitude.shape() != phase.shape() || amplitude.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "amplitude {:?} and phase {:?} must be matrices of one shape",
                amplitude.shape(),
                phase.shape()
            )));
        }
        Ok(Self { amplitude, phase })
    }

    pub fn frames(&self) -> usize {
        self.amplitude.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.amplitude.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub num_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            num_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if self.num_mels == 0 {
            return Err(Error::Config("num_mels must be at least 1".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "mel band [{}, {}] must satisfy 0 <= fmin < fmax <= {nyquist}",
                self.fmin, self.fmax
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Log-mel energies, `frames × num_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Tensor,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `num_mels × num_bins`, unit peak height.
pub fn mel_filterbank(stft: &StftConfig, mel: &MelConfig) -> Tensor {
    let bins = stft.num_bins();
    let (lo, hi) = (hz_to_mel(mel.fmin), hz_to_mel(mel.fmax));
    let edges: Vec<f64> = (0..mel.num_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel.num_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * stft.sample_rate as f64 / stft.fft_size as f64;
    let mut fb = Tensor::zeros(&[mel.num_mels, bins]);
    let data = fb.data_mut();
    for m in 0..mel.num_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = bin_hz(k);
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            data[m * bins + k] = up.min(down).max(0.0);
        }
    }
    fb
}

/// numpy-style `reflect` index (edge sample not repeated), bouncing for
/// offsets longer than the signal.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

fn check_input(wave: &Waveform, cfg: &StftConfig) -> Result<()> {
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: cfg.sample_rate,
            actual: wave.sample_rate,
        });
    }
    Ok(())
}

/// Analysis engine shared by the plain transforms and their differentiable
/// counterparts.
pub(crate) struct StftKernel {
    cfg: StftConfig,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftKernel").field("cfg", &self.cfg).finish()
    }
}

impl StftKernel {
    pub(crate) fn new(cfg: &StftConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            window: cfg.window(),
            fwd: forward_fft(cfg.fft_size),
            inv: inverse_fft(cfg.fft_size),
        }
    }

    fn half(&self) -> isize {
        (self.cfg.frame_length / 2) as isize
    }

    /// Complex spectra of every frame, `frames × bins` row-major.
    pub(crate) fn analyze(&self, x: &[f64]) -> (usize, Vec<Complex64>) {
        let (wl, ws, nfft, bins) = (
            self.cfg.frame_length,
            self.cfg.frame_shift,
            self.cfg.fft_size,
            self.cfg.num_bins(),
        );
        let frames = self.cfg.frames_for(x.len());
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for m in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            let start = (m * ws) as isize - self.half();
            for n in 0..wl {
                let s = x[reflect_index(start + n as isize, x.len())];
                buf[n] = Complex64::new(s * self.window[n], 0.0);
            }
            self.fwd.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        (frames, out)
    }

    /// Gradient of a loss w.r.t. the input samples, given the gradient w.r.t.
    /// the real and imaginary parts of [`Self::analyze`]'s output.
    pub(crate) fn analyze_adjoint(&self, len: usize, grad: &[Complex64]) -> Vec<f64> {
        let (wl, ws, nfft, bins) = (
            self.cfg.frame_length,
            self.cfg.frame_shift,
            self.cfg.fft_size,
            self.cfg.num_bins(),
        );
        let frames = grad.len() / bins;
        let mut dx = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for m in 0..frames {
            // re_k = Σ u_n cos θ, im_k = -Σ u_n sin θ, so
            // du_n = Re Σ_k (g_re + i g_im) e^{+iθ}.
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            buf[..bins].copy_from_slice(&grad[m * bins..(m + 1) * bins]);
            self.inv.process(&mut buf);
            let start = (m * ws) as isize - self.half();
            for n in 0..wl {
                dx[reflect_index(start + n as isize, len)] += buf[n].re * self.window[n];
            }
        }
        dx
    }

    /// Inverse transform with squared-window overlap-add normalization.
    /// `spec` is `frames × bins` row-major; output has `frames * shift` samples.
    pub(crate) fn synthesize(&self, frames: usize, spec: &[Complex64]) -> Result<Vec<f64>> {
        let wsum = self.window_sums(frames)?;
        let (wl, ws, nfft, bins) = (
            self.cfg.frame_length,
            self.cfg.frame_shift,
            self.cfg.fft_size,
            self.cfg.num_bins(),
        );
        let half = self.half() as usize;
        let mut acc = vec![0.0; self.buffer_len(frames)];
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for m in 0..frames {
            self.hermitian(&spec[m * bins..(m + 1) * bins], &mut buf);
            self.inv.process(&mut buf);
            for n in 0..wl {
                acc[m * ws + n] += buf[n].re / nfft as f64 * self.window[n];
            }
        }
        Ok((0..frames * ws).map(|t| acc[t + half] / wsum[t]).collect())
    }

    /// Adjoint of [`Self::synthesize`]: gradient w.r.t. real/imag parts of
    /// each bin given the gradient w.r.t. the output samples.
    pub(crate) fn synthesize_adjoint(&self, frames: usize, grad: &[f64]) -> Result<Vec<Complex64>> {
        let wsum = self.window_sums(frames)?;
        let (wl, ws, nfft, bins) = (
            self.cfg.frame_length,
            self.cfg.frame_shift,
            self.cfg.fft_size,
            self.cfg.num_bins(),
        );
        let half = self.half() as usize;
        let mut gacc = vec![0.0; self.buffer_len(frames)];
        for (t, g) in grad.iter().enumerate() {
            gacc[t + half] = g / wsum[t];
        }
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for m in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for n in 0..wl {
                buf[n] = Complex64::new(gacc[m * ws + n] * self.window[n] / nfft as f64, 0.0);
            }
            self.fwd.process(&mut buf);
            for (k, g) in buf[..bins].iter().enumerate() {
                // Interior bins appear twice in the Hermitian completion; the
                // imaginary parts of DC and Nyquist are discarded.
                let edge = k == 0 || (nfft % 2 == 0 && k == bins - 1);
                out.push(if edge {
                    Complex64::new(g.re, 0.0)
                } else {
                    Complex64::new(2.0 * g.re, 2.0 * g.im)
                });
            }
        }
        Ok(out)
    }

    fn buffer_len(&self, frames: usize) -> usize {
        let (wl, ws) = (self.cfg.frame_length, self.cfg.frame_shift);
        ((frames.max(1) - 1) * ws + wl).max(frames * ws + wl / 2)
    }

    /// Squared-window overlap sums at each output sample.
    fn window_sums(&self, frames: usize) -> Result<Vec<f64>> {
        let (wl, ws) = (self.cfg.frame_length, self.cfg.frame_shift);
        let half = self.half() as usize;
        let mut acc = vec![0.0; self.buffer_len(frames)];
        for m in 0..frames {
            for n in 0..wl {
                acc[m * ws + n] += self.window[n] * self.window[n];
            }
        }
        let out: Vec<f64> = (0..frames * ws).map(|t| acc[t + half]).collect();
        if let Some(t) = out.iter().position(|&s| s < 1e-10) {
            return Err(Error::ZeroWindowSum(t));
        }
        Ok(out)
    }

    fn hermitian(&self, half_spec: &[Complex64], buf: &mut [Complex64]) {
        let nfft = self.cfg.fft_size;
        let bins = half_spec.len();
        buf[..bins].copy_from_slice(half_spec);
        for k in 1..nfft - bins + 1 {
            buf[nfft - k] = half_spec[k].conj();
        }
    }
}

/// Phase of a complex value in (−π, π], zero where the magnitude vanishes.
pub(crate) fn wrapped_phase(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let p = c.im.atan2(c.re);
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<SpectralPair> {
    check_input(wave, cfg)?;
    let kernel = StftKernel::new(cfg);
    let (frames, spec) = kernel.analyze(&wave.samples);
    let bins = cfg.num_bins();
    let amplitude = spec.iter().map(|c| c.norm()).collect();
    let phase = spec.iter().map(|&c| wrapped_phase(c)).collect();
    SpectralPair::new(
        Tensor::new(vec![frames, bins], amplitude)?,
        Tensor::new(vec![frames, bins], phase)?,
    )
}

pub fn istft(spec: &SpectralPair, cfg: &StftConfig) -> Result<Waveform> {
    let bins = cfg.num_bins();
    if spec.amplitude.shape().len() != 2 || spec.bins() != bins {
        return Err(Error::Shape(format!(
            "spectrum has shape {:?}, config expects {bins} bins",
            spec.amplitude.shape()
        )));
    }
    let complex: Vec<Complex64> = spec
        .amplitude
        .data()
        .iter()
        .zip(spec.phase.data())
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    let samples = StftKernel::new(cfg).synthesize(spec.frames(), &complex)?;
    Waveform::new(samples, cfg.sample_rate)
}

/// Linear amplitude spectrogram, `frames × bins`.
pub fn amplitude_spectrogram(wave: &Waveform, cfg: &StftConfig) -> Result<Tensor> {
    Ok(stft(wave, cfg)?.amplitude)
}

pub fn mel_from_amplitude(amplitude: &Tensor, filterbank: &Tensor, log_floor: f64) -> Result<Tensor> {
    let (frames, bins) = amplitude.dims2()?;
    let (mels, fb_bins) = filterbank.dims2()?;
    if bins != fb_bins {
        return Err(Error::Shape(format!(
            "amplitude has {bins} bins, filterbank has {fb_bins}"
        )));
    }
    let mut out = vec![0.0; frames * mels];
    crate::tensor::gemm(
        frames,
        bins,
        mels,
        amplitude.data(),
        false,
        filterbank.data(),
        true,
        &mut out,
        0.0,
    );
    out.iter_mut().for_each(|v| *v = v.max(log_floor).ln());
    Tensor::new(vec![frames, mels], out)
}

pub fn mel_spectrogram(wave: &Waveform, cfg: &StftConfig, mel: &MelConfig) -> Result<MelSpectrogram> {
    let amplitude = amplitude_spectrogram(wave, cfg)?;
    let fb = mel_filterbank(cfg, mel);
    Ok(MelSpectrogram {
        values: mel_from_amplitude(&amplitude, &fb, mel.log_floor)?,
    })
}

/// Reads 16-bit PCM mono audio, rejecting any other rate than `expected_rate`.
pub fn read_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::ChannelCount(spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Encoding(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::SampleRateMismatch {
            expected: expected_rate,
            actual: spec.sample_rate,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono; samples are clipped to [-1, 1).
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    for &s in &wave.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000).unwrap()
    }

    fn interior_rel_err(a: &[f64], b: &[f64], skip: usize) -> f64 {
        let n = a.len().min(b.len());
        let (mut num, mut den) = (0.0, 0.0);
        for i in skip..n - skip {
            num += (a[i] - b[i]).powi(2);
            den += b[i].powi(2);
        }
        (num / den).sqrt()
    }

    #[test]
    fn zero_waveform_gives_zero_spectra() {
        let wave = Waveform::new(vec![0.0; 1600], 16000).unwrap();
        let spec = stft(&wave, &StftConfig::default()).unwrap();
        assert_eq!(spec.amplitude.shape(), &[10, 513]);
        assert!(spec.amplitude.data().iter().all(|&a| a == 0.0));
        assert!(spec.phase.data().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn sine_peaks_at_analytic_bin() {
        let cfg = StftConfig::default();
        let samples = (0..4800)
            .map(|t| (2.0 * PI * 1000.0 * t as f64 / 16000.0).sin() * 0.5)
            .collect();
        let spec = stft(&Waveform::new(samples, 16000).unwrap(), &cfg).unwrap();
        // Frames whose window lies wholly inside the signal; the first frame
        // sees the reflected sine and peaks two bins low.
        for f in 2..spec.frames() - 2 {
            let row = spec.amplitude.row(f);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, 64);
        }
    }

    #[test]
    fn round_trip_recovers_signal() {
        let cfg = StftConfig::default();
        let wave = random_wave(3200, 1);
        let back = istft(&stft(&wave, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(back.len(), 3200);
        assert!(interior_rel_err(&back.samples, &wave.samples, 320) < 1e-6);
    }

    #[test]
    fn istft_of_zeros_is_silent() {
        let cfg = StftConfig::default();
        let spec = SpectralPair::new(Tensor::zeros(&[10, 513]), Tensor::zeros(&[10, 513])).unwrap();
        let out = istft(&spec, &cfg).unwrap();
        assert_eq!(out.len(), 1600);
        assert!(out.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn istft_is_linear_in_amplitude() {
        let cfg = StftConfig::default();
        let wave = random_wave(1600, 2);
        let spec = stft(&wave, &cfg).unwrap();
        let doubled = SpectralPair::new(spec.amplitude.map(|a| 2.0 * a), spec.phase.clone()).unwrap();
        let a = istft(&spec, &cfg).unwrap();
        let b = istft(&doubled, &cfg).unwrap();
        let twice: Vec<f64> = a.samples.iter().map(|s| 2.0 * s).collect();
        assert!(interior_rel_err(&b.samples, &twice, 320) < 1e-12);
    }

    #[test]
    fn istft_rejects_wrong_bin_count() {
        let spec = SpectralPair::new(Tensor::zeros(&[4, 100]), Tensor::zeros(&[4, 100])).unwrap();
        assert!(matches!(
            istft(&spec, &StftConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn stft_rejects_empty_and_mismatched_rate() {
        let cfg = StftConfig::default();
        assert!(matches!(
            stft(&Waveform::new(vec![], 16000).unwrap(), &cfg),
            Err(Error::EmptyWaveform)
        ));
        assert!(matches!(
            stft(&Waveform::new(vec![0.0; 10], 22050).unwrap(), &cfg),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn non_cola_configs_are_rejected() {
        let cfg = StftConfig {
            frame_shift: 640,
            ..StftConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(StftConfig::default().validate().is_ok());
        let no_divide = StftConfig {
            frame_shift: 150,
            ..StftConfig::default()
        };
        assert!(no_divide.validate().is_err());
    }

    #[test]
    fn mel_of_silence_sits_on_floor() {
        let cfg = StftConfig::default();
        let mel = MelConfig::default();
        let wave = Waveform::new(vec![0.0; 1600], 16000).unwrap();
        let m = mel_spectrogram(&wave, &cfg, &mel).unwrap();
        assert_eq!(m.values.shape(), &[10, 80]);
        let floor = mel.log_floor.ln();
        assert!(m.values.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn mel_shifts_by_log_two_when_doubled() {
        let cfg = StftConfig::default();
        let mel = MelConfig::default();
        let wave = random_wave(1600, 3);
        let loud = Waveform::new(wave.samples.iter().map(|s| 2.0 * s).collect(), 16000).unwrap();
        let a = mel_spectrogram(&wave, &cfg, &mel).unwrap();
        let b = mel_spectrogram(&loud, &cfg, &mel).unwrap();
        let floor = mel.log_floor.ln();
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            if *x > floor {
                assert!((y - x - 2f64.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reflect_index_bounces() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-4, 5), 4);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-6, 5), 2);
        assert_eq!(reflect_index(3, 1), 0);
    }

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wave = random_wave(4000, 4);
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path, 16000).unwrap();
        let err = wave
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 2f64.powi(-15));
    }

    #[test]
    fn wav_rejects_stereo_and_wrong_rate() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..20 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo, 16000), Err(Error::ChannelCount(2))));

        let other = dir.path().join("r.wav");
        write_wav(&other, &Waveform::new(vec![0.0; 100], 22050).unwrap()).unwrap();
        assert!(matches!(
            read_wav(&other, 16000),
            Err(Error::SampleRateMismatch { actual: 22050, .. })
        ));
        assert!(matches!(
            read_wav(dir.path().join("missing.wav"), 16000),
            Err(Error::Io { .. })
        ));
    }
}
