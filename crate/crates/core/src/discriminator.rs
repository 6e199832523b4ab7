//! Multi-period and multi-resolution waveform critics.
//!
//! Every sub-discriminator returns its score map and the list of
//! intermediate activations used by the feature-matching loss; the score map
//! is the last entry of that list.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamLayout, ParamStore};
use crate::signal::{reflect_index, StftConfig, StftKernel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpdConfig {
    pub periods: Vec<usize>,
    /// Output channels of each stage; its length is the stage count.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub leaky_slope: f64,
}

impl Default for MpdConfig {
    fn default() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            channels: vec![32, 128, 512, 1024, 1024],
            kernel_size: 5,
            stride: 3,
            leaky_slope: 0.1,
        }
    }
}

impl MpdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() || self.periods.contains(&0) {
            return Err(Error::Config("MPD periods must be positive".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("MPD needs at least one stage of positive width".into()));
        }
        if self.kernel_size % 2 == 0 || self.stride == 0 {
            return Err(Error::Config("MPD kernel must be odd and stride positive".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    fn stage_stride(&self, stage: usize) -> usize {
        // The last stage keeps resolution.
        if stage + 1 < self.stages() {
            self.stride
        } else {
            1
        }
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        for (i, _) in self.periods.iter().enumerate() {
            let mut input = 1;
            for (s, &ch) in self.channels.iter().enumerate() {
                l.conv2d(&format!("mpd.sub{i}.conv{s}"), input, ch, (self.kernel_size, 1));
                input = ch;
            }
            l.conv2d(&format!("mpd.sub{i}.post"), input, 1, (3, 1));
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrdConfig {
    pub channels: usize,
    pub num_blocks: usize,
    pub leaky_slope: f64,
}

impl Default for MrdConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            num_blocks: 6,
            leaky_slope: 0.1,
        }
    }
}

impl MrdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.num_blocks < 2 {
            return Err(Error::Config("MRD needs positive width and at least two blocks".into()));
        }
        Ok(())
    }

    /// Half, base and double resolution of the analysis STFT.
    pub fn resolutions(base: &StftConfig) -> [StftConfig; 3] {
        [base.scaled(1, 2), base.clone(), base.scaled(2, 1)]
    }

    /// Kernel, stride and padding of block `j` over (frames, bins).
    fn block_geometry(&self, j: usize) -> ((usize, usize), (usize, usize), (usize, usize)) {
        let last = j + 1 == self.num_blocks;
        let kernel = if last { (3, 3) } else { (3, 9) };
        let stride = if j > 0 && !last { (1, 2) } else { (1, 1) };
        (kernel, stride, (kernel.0 / 2, kernel.1 / 2))
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        for r in 0..3 {
            let mut input = 1;
            for j in 0..self.num_blocks {
                let (kernel, _, _) = self.block_geometry(j);
                l.conv2d(&format!("mrd.sub{r}.conv{j}"), input, self.channels, kernel);
                input = self.channels;
            }
            l.conv2d(&format!("mrd.sub{r}.post"), input, 1, (3, 3));
        }
        l
    }
}

/// Graph handles of one sub-discriminator's output.
#[derive(Debug, Clone)]
pub struct SubOutput {
    pub score: Var,
    pub features: Vec<Var>,
}

/// Plain-tensor result of one sub-discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct SubResult {
    pub score: Tensor,
    pub features: Vec<Tensor>,
}

/// Flat gather index folding `len` samples into `ceil(len/period) × period`
/// rows, reflect-padding the tail.
pub fn period_index(len: usize, period: usize) -> Vec<usize> {
    let rows = len.div_ceil(period);
    (0..rows * period)
        .map(|i| if i < len { i } else { reflect_index(i as isize, len) })
        .collect()
}

/// Folds a waveform into a `ceil(T/period) × period` map.
pub fn period_reshape(x: &[f64], period: usize) -> Result<Tensor> {
    if period == 0 {
        return Err(Error::InvalidInput("period must be at least 1".into()));
    }
    if x.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let data = period_index(x.len(), period).into_iter().map(|i| x[i]).collect();
    Tensor::new(vec![x.len().div_ceil(period), period], data)
}

fn conv(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    trainable: bool,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Var {
    let w = g.param(store, &format!("{prefix}.weight"), trainable);
    let b = g.param(store, &format!("{prefix}.bias"), trainable);
    g.conv2d(x, w, b, stride, padding)
}

#[derive(Debug, Clone)]
pub struct Discriminators {
    pub mpd: MpdConfig,
    pub mrd: MrdConfig,
    resolutions: [StftConfig; 3],
    kernels: Vec<Arc<StftKernel>>,
}

impl Discriminators {
    pub fn new(mpd: MpdConfig, mrd: MrdConfig, base: &StftConfig) -> Result<Self> {
        mpd.validate()?;
        mrd.validate()?;
        let resolutions = MrdConfig::resolutions(base);
        for r in &resolutions {
            r.validate()?;
        }
        let kernels = resolutions.iter().map(|r| Arc::new(StftKernel::new(r))).collect();
        Ok(Self {
            mpd,
            mrd,
            resolutions,
            kernels,
        })
    }

    pub fn resolutions(&self) -> &[StftConfig; 3] {
        &self.resolutions
    }

    /// Shortest waveform the critics accept.
    pub fn min_input_len(&self) -> usize {
        self.resolutions[2].frame_length
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = self.mpd.layout();
        l.extend(self.mrd.layout());
        l
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamStore {
        self.layout().init(rng)
    }

    /// Records every sub-MPD on the 1-D waveform node `x`.
    pub fn build_mpd(&self, g: &mut Graph, store: &ParamStore, trainable: bool, x: Var) -> Vec<SubOutput> {
        let len = g.value(x).len();
        let slope = self.mpd.leaky_slope;
        let pad = self.mpd.kernel_size / 2;
        self.mpd
            .periods
            .iter()
            .enumerate()
            .map(|(i, &period)| {
                let index = Arc::new(period_index(len, period));
                let rows = len.div_ceil(period);
                let mut h = g.gather(x, index, vec![1, rows, period]);
                let mut features = Vec::with_capacity(self.mpd.stages() + 1);
                for s in 0..self.mpd.stages() {
                    let stride = (self.mpd.stage_stride(s), 1);
                    h = conv(g, store, &format!("mpd.sub{i}.conv{s}"), h, trainable, stride, (pad, 0));
                    h = g.leaky_relu(h, slope);
                    features.push(h);
                }
                let score = conv(g, store, &format!("mpd.sub{i}.post"), h, trainable, (1, 1), (1, 0));
                features.push(score);
                SubOutput { score, features }
            })
            .collect()
    }

    /// Records every sub-MRD on the 1-D waveform node `x`.
    pub fn build_mrd(&self, g: &mut Graph, store: &ParamStore, trainable: bool, x: Var) -> Vec<SubOutput> {
        let slope = self.mrd.leaky_slope;
        (0..3)
            .map(|r| {
                let mag = g.stft_magnitude(x, self.kernels[r].clone());
                let (frames, bins) = g.value(mag).dims2().unwrap();
                let mut h = g.reshape(mag, vec![1, frames, bins]);
                let mut features = Vec::with_capacity(self.mrd.num_blocks + 1);
                for j in 0..self.mrd.num_blocks {
                    let (_, stride, pad) = self.mrd.block_geometry(j);
                    h = conv(g, store, &format!("mrd.sub{r}.conv{j}"), h, trainable, stride, pad);
                    h = g.leaky_relu(h, slope);
                    features.push(h);
                }
                let score = conv(g, store, &format!("mrd.sub{r}.post"), h, trainable, (1, 1), (1, 1));
                features.push(score);
                SubOutput { score, features }
            })
            .collect()
    }

    fn check_waveform(&self, x: &[f64], params: &ParamStore, layout: ParamLayout) -> Result<()> {
        if x.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("discriminator input".into()));
        }
        layout.check(params)
    }

    fn collect(g: &Graph, outs: Vec<SubOutput>) -> Vec<SubResult> {
        outs.into_iter()
            .map(|o| SubResult {
                score: g.value(o.score).clone(),
                features: o.features.iter().map(|&f| g.value(f).clone()).collect(),
            })
            .collect()
    }

    pub fn mpd_forward(&self, x: &[f64], params: &ParamStore) -> Result<Vec<SubResult>> {
        self.check_waveform(x, params, self.mpd.layout())?;
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![x.len()], x.to_vec())?);
        let outs = self.build_mpd(&mut g, params, false, xv);
        Ok(Self::collect(&g, outs))
    }

    pub fn mrd_forward(&self, x: &[f64], params: &ParamStore) -> Result<Vec<SubResult>> {
        self.check_waveform(x, params, self.mrd.layout())?;
        if x.len() < self.min_input_len() {
            return Err(Error::InvalidInput(format!(
                "MRD input of {} samples is shorter than {}",
                x.len(),
                self.min_input_len()
            )));
        }
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![x.len()], x.to_vec())?);
        let outs = self.build_mrd(&mut g, params, false, xv);
        Ok(Self::collect(&g, outs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Discriminators {
        let mpd = MpdConfig {
            channels: vec![2, 4, 4, 4, 4],
            ..Default::default()
        };
        let mrd = MrdConfig {
            channels: 2,
            ..Default::default()
        };
        Discriminators::new(mpd, mrd, &StftConfig::default()).unwrap()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn period_reshape_folds_rows() {
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        let m = period_reshape(&x, 2).unwrap();
        assert_eq!(m.shape(), &[4, 2]);
        assert_eq!(m.data(), x.as_slice());
        let m = period_reshape(&x[..7], 2).unwrap();
        assert_eq!(m.shape(), &[4, 2]);
        // reflect pad repeats x[5] after x[6]
        assert_eq!(m.data()[7], 5.0);
        let col = period_reshape(&x, 1).unwrap();
        assert_eq!(col.shape(), &[8, 1]);
        assert!(period_reshape(&x, 0).is_err());
    }

    #[test]
    fn mpd_structure() {
        let d = small();
        let params = d.init(&mut ChaCha8Rng::seed_from_u64(0));
        let out = d.mpd_forward(&noise(3200, 1), &params).unwrap();
        assert_eq!(out.len(), 5);
        for sub in &out {
            assert_eq!(sub.features.len(), 6);
            assert_eq!(sub.features.last().unwrap(), &sub.score);
        }
    }

    #[test]
    fn mpd_zero_input_zero_bias_gives_zero_scores() {
        let d = small();
        let params = d.init(&mut ChaCha8Rng::seed_from_u64(0));
        for sub in d.mpd_forward(&vec![0.0; 1000], &params).unwrap() {
            assert!(sub.score.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mpd_longer_input_keeps_channel_structure() {
        let d = small();
        let params = d.init(&mut ChaCha8Rng::seed_from_u64(0));
        let a = d.mpd_forward(&noise(1600, 2), &params).unwrap();
        let b = d.mpd_forward(&noise(3200, 2), &params).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            let (ca, ha, wa) = sa.score.dims3().unwrap();
            let (cb, hb, wb) = sb.score.dims3().unwrap();
            assert_eq!((ca, wa), (cb, wb));
            assert!(hb > ha);
        }
    }

    #[test]
    fn mrd_structure_and_bins() {
        let d = small();
        let bins: Vec<usize> = d.resolutions().iter().map(StftConfig::num_bins).collect();
        assert_eq!(bins, vec![257, 513, 1025]);
        let params = d.init(&mut ChaCha8Rng::seed_from_u64(0));
        let x = noise(2560, 3);
        let out = d.mrd_forward(&x, &params).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out, d.mrd_forward(&x, &params).unwrap());
        assert!(d.mrd_forward(&noise(1000, 3), &params).is_err());
    }

    #[test]
    fn rejects_missing_params() {
        let d = small();
        assert!(matches!(
            d.mpd_forward(&noise(100, 4), &ParamStore::new()),
            Err(Error::MissingParam(_))
        ));
    }
}
