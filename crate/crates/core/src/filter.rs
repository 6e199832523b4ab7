//! Spectral-transformed neural filter: maps excitation amplitude/phase
//! spectra to speech amplitude/phase spectra, conditioned on log-mel frames,
//! through a stack of ConvNeXt-v2 blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamLayout, ParamStore};
use crate::tensor::Tensor;

pub const GRN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub num_blocks: usize,
    pub hidden_dim: usize,
    pub kernel_size: usize,
    pub ffn_ratio: usize,
    pub spec_bins: usize,
    pub mel_bins: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            num_blocks: 8,
            hidden_dim: 512,
            kernel_size: 7,
            ffn_ratio: 3,
            spec_bins: 513,
            mel_bins: 80,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if self.ffn_ratio < 1 || self.hidden_dim == 0 || self.spec_bins == 0 || self.mel_bins == 0 {
            return Err(Error::Config("filter dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Frames on either side of an output frame that can influence it.
    pub fn receptive_radius(&self) -> usize {
        self.num_blocks * (self.kernel_size / 2)
    }

    /// Parameter layout under the `filter.` prefix.
    pub fn layout(&self) -> ParamLayout {
        let (h, n, m) = (self.hidden_dim, self.spec_bins, self.mel_bins);
        let wide = h * self.ffn_ratio;
        let mut l = ParamLayout::new();
        l.linear("filter.reduce", 2 * n, h);
        l.linear("filter.expand", m, h);
        for b in 0..self.num_blocks {
            let p = format!("filter.block{b}");
            l.push(format!("{p}.dwconv.weight"), &[h, self.kernel_size], Init::Normal(0.02));
            l.push(format!("{p}.dwconv.bias"), &[h], Init::Zeros);
            l.layer_norm(&format!("{p}.norm"), h);
            l.linear(&format!("{p}.pw1"), h, wide);
            // Zero GRN calibration starts every block close to identity.
            l.push(format!("{p}.grn.gamma"), &[wide], Init::Zeros);
            l.push(format!("{p}.grn.beta"), &[wide], Init::Zeros);
            l.linear(&format!("{p}.pw2"), wide, h);
        }
        l.layer_norm("filter.out_norm", h);
        l.linear("filter.head", h, 2 * n);
        l
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamStore {
        self.layout().init(rng)
    }
}

fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, trainable: bool) -> Var {
    let w = g.param(store, &format!("{prefix}.weight"), trainable);
    let b = g.param(store, &format!("{prefix}.bias"), trainable);
    g.linear(x, w, b)
}

fn layer_norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, trainable: bool) -> Var {
    let gamma = g.param(store, &format!("{prefix}.gamma"), trainable);
    let beta = g.param(store, &format!("{prefix}.beta"), trainable);
    g.layer_norm(x, gamma, beta)
}

/// One ConvNeXt-v2 block on `frames × hidden` features: depthwise conv,
/// layer norm, expansion, GELU, GRN, projection, residual add.
pub fn convnext_v2_block(g: &mut Graph, store: &ParamStore, prefix: &str, h: Var, trainable: bool) -> Var {
    let w = g.param(store, &format!("{prefix}.dwconv.weight"), trainable);
    let b = g.param(store, &format!("{prefix}.dwconv.bias"), trainable);
    let y = g.depthwise_conv1d(h, w, b);
    let y = layer_norm(g, store, &format!("{prefix}.norm"), y, trainable);
    let y = linear(g, store, &format!("{prefix}.pw1"), y, trainable);
    let y = g.gelu(y);
    let gamma = g.param(store, &format!("{prefix}.grn.gamma"), trainable);
    let beta = g.param(store, &format!("{prefix}.grn.beta"), trainable);
    let y = g.grn(y, gamma, beta, GRN_EPS);
    let y = linear(g, store, &format!("{prefix}.pw2"), y, trainable);
    g.add(h, y)
}

/// Global response normalization outside a graph.
pub fn grn(h: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (_, c) = h.dims2()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("GRN over {c} channels needs {c}-vectors")));
    }
    let mut g = Graph::new();
    let (hv, gv, bv) = (g.constant(h.clone()), g.constant(gamma.clone()), g.constant(beta.clone()));
    let out = g.grn(hv, gv, bv, GRN_EPS);
    Ok(g.value(out).clone())
}

/// Graph handles of the predicted spectra.
#[derive(Debug, Clone, Copy)]
pub struct FilterOutput {
    pub amplitude: Var,
    pub phase: Var,
    /// Pre-activation log amplitude.
    pub log_amplitude: Var,
}

#[derive(Debug, Clone)]
pub struct NeuralFilter {
    pub cfg: FilterConfig,
}

impl NeuralFilter {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    /// Records the filter on `g`. Inputs are `frames × bins` spectra and
    /// `frames × mels` conditioning.
    pub fn build(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        trainable: bool,
        amp: Var,
        phase: Var,
        mel: Var,
    ) -> FilterOutput {
        let n = self.cfg.spec_bins;
        let x = g.concat_cols(&[amp, phase]);
        let x = linear(g, store, "filter.reduce", x, trainable);
        let c = linear(g, store, "filter.expand", mel, trainable);
        let mut h = g.add(x, c);
        for b in 0..self.cfg.num_blocks {
            h = convnext_v2_block(g, store, &format!("filter.block{b}"), h, trainable);
        }
        let h = layer_norm(g, store, "filter.out_norm", h, trainable);
        let out = linear(g, store, "filter.head", h, trainable);
        let log_amplitude = g.slice_cols(out, 0, n);
        let amplitude = g.exp(log_amplitude);
        let z = g.slice_cols(out, n, n);
        let sin = g.sin(z);
        let cos = g.cos(z);
        let phase = g.atan2(sin, cos);
        FilterOutput {
            amplitude,
            phase,
            log_amplitude,
        }
    }

    pub fn check_inputs(&self, amp: &Tensor, phase: &Tensor, mel: &Tensor) -> Result<()> {
        let (frames, bins) = amp.dims2()?;
        if phase.shape() != amp.shape() || bins != self.cfg.spec_bins {
            return Err(Error::Shape(format!(
                "excitation spectra {:?}/{:?} do not match {} bins",
                amp.shape(),
                phase.shape(),
                self.cfg.spec_bins
            )));
        }
        let (mframes, mels) = mel.dims2()?;
        if mframes != frames || mels != self.cfg.mel_bins {
            return Err(Error::Shape(format!(
                "mel {:?} does not match {frames} frames × {} mels",
                mel.shape(),
                self.cfg.mel_bins
            )));
        }
        for (name, t) in [("excitation amplitude", amp), ("excitation phase", phase), ("mel", mel)] {
            if !t.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    /// Predicted `(amplitude, phase)` spectra, both `frames × bins`.
    pub fn forward(&self, amp: &Tensor, phase: &Tensor, mel: &Tensor, params: &ParamStore) -> Result<(Tensor, Tensor)> {
        self.check_inputs(amp, phase, mel)?;
        self.cfg.layout().check(params)?;
        params.check_finite()?;
        let mut g = Graph::new();
        let (a, p, m) = (g.constant(amp.clone()), g.constant(phase.clone()), g.constant(mel.clone()));
        let out = self.build(&mut g, params, false, a, p, m);
        Ok((g.value(out.amplitude).clone(), g.value(out.phase).clone()))
    }
}
