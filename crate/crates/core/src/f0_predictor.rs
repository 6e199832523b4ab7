//! F0 and voicing prediction from log-mel frames: three parallel 1-D
//! convolutions of different widths, concatenated, feeding a sigmoid V/UV
//! head and a ReLU contour head.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::excitation::F0Sequence;
use crate::params::{Init, ParamLayout, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct F0PredictorConfig {
    pub kernel_sizes: [usize; 3],
    pub conv_channels: usize,
    pub vuv_hidden: usize,
    pub contour_hidden: usize,
    pub mel_bins: usize,
    /// Hz per unit of the contour head's output.
    pub contour_scale_hz: f64,
    pub threshold: f64,
}

impl Default for F0PredictorConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: [3, 5, 7],
            conv_channels: 128,
            vuv_hidden: 128,
            contour_hidden: 128,
            mel_bins: 80,
            contour_scale_hz: 100.0,
            threshold: 0.5,
        }
    }
}

impl F0PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.kernel_sizes;
        if a % 2 == 0 || b % 2 == 0 || c % 2 == 0 || a == b || b == c || a == c {
            return Err(Error::Config(format!(
                "F0 predictor kernels {:?} must be three distinct odd sizes",
                self.kernel_sizes
            )));
        }
        if self.conv_channels == 0 || self.vuv_hidden == 0 || self.contour_hidden == 0 || self.mel_bins == 0 {
            return Err(Error::Config("F0 predictor widths must be positive".into()));
        }
        if !(self.contour_scale_hz > 0.0) || !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("contour scale must be positive and threshold in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        for (i, &k) in self.kernel_sizes.iter().enumerate() {
            l.conv2d(&format!("f0.conv{i}"), self.mel_bins, self.conv_channels, (k, 1));
        }
        let wide = 3 * self.conv_channels;
        l.linear("f0.vuv.fc", wide, self.vuv_hidden);
        l.linear("f0.vuv.out", self.vuv_hidden, 1);
        l.linear("f0.contour.fc", wide, self.contour_hidden);
        l.push("f0.contour.out.weight", &[self.contour_hidden, 1], Init::Normal(0.02));
        // Starts the contour near 150 Hz so the ReLU is live.
        l.push("f0.contour.out.bias", &[1], Init::Const(150.0 / self.contour_scale_hz));
        l
    }
}

/// Graph handles of one predictor pass, each `frames × 1`.
#[derive(Debug, Clone, Copy)]
pub struct F0Output {
    pub vuv_logit: Var,
    pub vuv_prob: Var,
    pub contour: Var,
}

/// Per-frame predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Prediction {
    pub contour: Vec<f64>,
    pub vuv_prob: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct F0Predictor {
    pub cfg: F0PredictorConfig,
}

fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, trainable: bool) -> Var {
    let w = g.param(store, &format!("{prefix}.weight"), trainable);
    let b = g.param(store, &format!("{prefix}.bias"), trainable);
    g.linear(x, w, b)
}

impl F0Predictor {
    pub fn new(cfg: F0PredictorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamStore {
        self.cfg.layout().init(rng)
    }

    /// Records the predictor on a `frames × mels` node.
    pub fn build(&self, g: &mut Graph, store: &ParamStore, trainable: bool, mel: Var) -> F0Output {
        let (frames, mels) = g.value(mel).dims2().expect("mel matrix");
        let t = g.transpose(mel);
        let x = g.reshape(t, vec![mels, frames, 1]);
        let c = self.cfg.conv_channels;
        let branches: Vec<Var> = self
            .cfg
            .kernel_sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let w = g.param(store, &format!("f0.conv{i}.weight"), trainable);
                let b = g.param(store, &format!("f0.conv{i}.bias"), trainable);
                let y = g.conv2d(x, w, b, (1, 1), (k / 2, 0));
                let y = g.relu(y);
                let y = g.reshape(y, vec![c, frames]);
                g.transpose(y)
            })
            .collect();
        let h = g.concat_cols(&branches);

        let v = linear(g, store, "f0.vuv.fc", h, trainable);
        let v = g.relu(v);
        let vuv_logit = linear(g, store, "f0.vuv.out", v, trainable);
        let vuv_prob = g.sigmoid(vuv_logit);

        let z = linear(g, store, "f0.contour.fc", h, trainable);
        let z = g.relu(z);
        let z = linear(g, store, "f0.contour.out", z, trainable);
        let z = g.relu(z);
        let contour = g.scale(z, self.cfg.contour_scale_hz);
        F0Output {
            vuv_logit,
            vuv_prob,
            contour,
        }
    }

    fn check(&self, mel: &Tensor, params: &ParamStore) -> Result<()> {
        let (_, mels) = mel.dims2()?;
        if mels != self.cfg.mel_bins {
            return Err(Error::Shape(format!("mel has {mels} bins, predictor expects {}", self.cfg.mel_bins)));
        }
        if !mel.is_finite() {
            return Err(Error::NonFinite("mel".into()));
        }
        self.cfg.layout().check(params)?;
        params.check_finite()
    }

    pub fn predict(&self, mel: &Tensor, params: &ParamStore) -> Result<F0Prediction> {
        self.check(mel, params)?;
        let mut g = Graph::new();
        let m = g.constant(mel.clone());
        let out = self.build(&mut g, params, false, m);
        Ok(F0Prediction {
            contour: g.value(out.contour).data().to_vec(),
            vuv_prob: g.value(out.vuv_prob).data().to_vec(),
        })
    }

    /// Predicted contour gated by the configured threshold.
    pub fn predict_f0(&self, mel: &Tensor, params: &ParamStore) -> Result<F0Sequence> {
        let p = self.predict(mel, params)?;
        combine_f0(&p.contour, &p.vuv_prob, self.cfg.threshold)
    }

    /// Training loss on `g`: mean |ln f̂ − ln f| over voiced target frames plus
    /// V/UV binary cross-entropy.
    pub fn build_loss(&self, g: &mut Graph, out: &F0Output, target: &F0Sequence) -> Var {
        let flags: Vec<f64> = target.voiced().map(|v| if v { 1.0 } else { 0.0 }).collect();
        let bce = g.bce_with_logits(out.vuv_logit, Arc::new(flags));
        let voiced: Vec<usize> = target
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| i)
            .collect();
        if voiced.is_empty() {
            return bce;
        }
        let n = voiced.len();
        let log_target = Tensor::new(
            vec![n],
            voiced.iter().map(|&i| target.values()[i].ln()).collect(),
        )
        .expect("length matches");
        let picked = g.gather(out.contour, Arc::new(voiced), vec![n]);
        let log_pred = g.log_clamp(picked, 1.0);
        let t = g.constant(log_target);
        let mae = g.l1_mean(log_pred, t);
        g.add(mae, bce)
    }

    pub fn loss(&self, mel: &Tensor, target: &F0Sequence, params: &ParamStore) -> Result<f64> {
        self.check(mel, params)?;
        if mel.shape()[0] != target.len() {
            return Err(Error::Shape(format!("{} mel frames vs {} F0 frames", mel.shape()[0], target.len())));
        }
        let mut g = Graph::new();
        let m = g.constant(mel.clone());
        let out = self.build(&mut g, params, false, m);
        let l = self.build_loss(&mut g, &out, target);
        Ok(g.scalar(l))
    }
}

/// `contour_t` where `vuv_prob_t ≥ threshold`, else 0.
pub fn combine_f0(contour: &[f64], vuv_prob: &[f64], threshold: f64) -> Result<F0Sequence> {
    if contour.len() != vuv_prob.len() {
        return Err(Error::Shape(format!(
            "{} contour frames vs {} V/UV frames",
            contour.len(),
            vuv_prob.len()
        )));
    }
    F0Sequence::new(
        contour
            .iter()
            .zip(vuv_prob)
            .map(|(&c, &p)| if p >= threshold { c.max(0.0) } else { 0.0 })
            .collect(),
    )
}

/// Text export: one `<f0_hz> <vuv>` line per frame.
pub fn format_f0(f0: &F0Sequence) -> String {
    f0.values()
        .iter()
        .map(|&v| format!("{v} {}\n", u8::from(v > 0.0)))
        .collect()
}

/// Parses one F0 value per line; only the first column is read.
pub fn parse_f0(text: &str) -> Result<F0Sequence> {
    let values = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let field = l.split_whitespace().next().unwrap_or_default();
            field
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad F0 value `{field}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    F0Sequence::new(values)
}
