//! Objective metrics and spectrogram rendering.

use std::f64::consts::{LN_10, PI, SQRT_2};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::F0Sequence;
use crate::signal::{amplitude_spectrogram, mel_spectrogram, MelConfig, StftConfig, Waveform};
use crate::tensor::Tensor;

pub const LAS_FLOOR: f64 = 1e-5;
pub const MCD_ORDER: usize = 24;

fn trimmed<'a>(a: &'a Waveform, b: &'a Waveform) -> Result<(Waveform, Waveform)> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(Error::EmptyWaveform);
    }
    Ok((
        Waveform::new(a.samples[..n].to_vec(), a.sample_rate)?,
        Waveform::new(b.samples[..n].to_vec(), b.sample_rate)?,
    ))
}

/// RMSE in dB between `20·log10(max(A, floor))` of two amplitude spectrograms.
pub fn las_rmse_spectra(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(Error::Shape(format!("spectra {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let db = |v: f64| 20.0 * v.max(LAS_FLOOR).log10();
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (db(x) - db(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    Ok(mse.sqrt())
}

/// LAS-RMSE of two waveforms, trimmed to the shorter one.
pub fn las_rmse(x_hat: &Waveform, x: &Waveform, cfg: &StftConfig) -> Result<f64> {
    let (a, b) = trimmed(x_hat, x)?;
    las_rmse_spectra(&amplitude_spectrogram(&a, cfg)?, &amplitude_spectrogram(&b, cfg)?)
}

/// Orthonormal DCT-II of each row, keeping coefficients `1..=order`.
pub fn mel_cepstrum(log_mel: &Tensor, order: usize) -> Result<Tensor> {
    let (frames, m) = log_mel.dims2()?;
    if order >= m {
        return Err(Error::InvalidInput(format!("cepstral order {order} needs more than {m} mel bands")));
    }
    let mut out = Vec::with_capacity(frames * order);
    for f in 0..frames {
        let row = log_mel.row(f);
        for k in 1..=order {
            let s: f64 = row
                .iter()
                .enumerate()
                .map(|(n, &v)| v * (PI * k as f64 * (2 * n + 1) as f64 / (2 * m) as f64).cos())
                .sum();
            out.push(s * (2.0 / m as f64).sqrt());
        }
    }
    Tensor::new(vec![frames, order], out)
}

/// `(10·√2 / ln 10)` times the mean per-frame Euclidean cepstral distance.
pub fn mcd_from_cepstra(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (frames, _) = a.dims2()?;
    if a.shape() != b.shape() || frames == 0 {
        return Err(Error::Shape(format!("cepstra {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let mean_dist = (0..frames)
        .map(|f| {
            a.row(f)
                .iter()
                .zip(b.row(f))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / frames as f64;
    Ok(10.0 * SQRT_2 / LN_10 * mean_dist)
}

pub fn mcd(x_hat: &Waveform, x: &Waveform, cfg: &StftConfig, mel: &MelConfig) -> Result<f64> {
    let (a, b) = trimmed(x_hat, x)?;
    let ca = mel_cepstrum(&mel_spectrogram(&a, cfg, mel)?.values, MCD_ORDER)?;
    let cb = mel_cepstrum(&mel_spectrogram(&b, cfg, mel)?.values, MCD_ORDER)?;
    mcd_from_cepstra(&ca, &cb)
}

/// RMSE of `1200·log2(f̂/f)` over frames voiced in both; `None` when there are none.
pub fn f0_rmse_cents(f_hat: &F0Sequence, f: &F0Sequence) -> Result<Option<f64>> {
    if f_hat.len() != f.len() {
        return Err(Error::Shape(format!("{} vs {} F0 frames", f_hat.len(), f.len())));
    }
    let errs: Vec<f64> = f_hat
        .values()
        .iter()
        .zip(f.values())
        .filter(|(&a, &b)| a > 0.0 && b > 0.0)
        .map(|(&a, &b)| 1200.0 * (a / b).log2())
        .collect();
    if errs.is_empty() {
        return Ok(None);
    }
    Ok(Some((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()))
}

/// Percentage of frames whose voicing decisions disagree.
pub fn vuv_error(f_hat: &F0Sequence, f: &F0Sequence) -> Result<f64> {
    if f_hat.len() != f.len() || f.is_empty() {
        return Err(Error::Shape(format!("{} vs {} F0 frames", f_hat.len(), f.len())));
    }
    let wrong = f_hat.voiced().zip(f.voiced()).filter(|(a, b)| a != b).count();
    Ok(100.0 * wrong as f64 / f.len() as f64)
}

pub fn rtf(generation_secs: f64, audio_secs: f64) -> Result<f64> {
    if !(audio_secs > 0.0) || !(generation_secs >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "real-time factor needs positive audio duration (got {audio_secs} s)"
        )));
    }
    Ok(generation_secs / audio_secs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub name: String,
    pub las_rmse_db: f64,
    pub mcd_db: f64,
    pub f0_rmse_cents: Option<f64>,
    pub vuv_error_pct: f64,
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub las_rmse_db: f64,
    pub mcd_db: f64,
    pub f0_rmse_cents: Option<f64>,
    pub vuv_error_pct: f64,
    /// Total generation time over total audio duration.
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub utterances: Vec<UtteranceMetrics>,
    pub mean: MetricMeans,
    /// Metrics this implementation does not compute.
    pub external: Vec<String>,
}

impl MetricReport {
    pub fn new(utterances: Vec<UtteranceMetrics>, generation_secs: f64, audio_secs: f64) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::InvalidInput("no utterances to evaluate".into()));
        }
        let n = utterances.len() as f64;
        let avg = |f: fn(&UtteranceMetrics) -> f64| utterances.iter().map(f).sum::<f64>() / n;
        let cents: Vec<f64> = utterances.iter().filter_map(|u| u.f0_rmse_cents).collect();
        let mean = MetricMeans {
            las_rmse_db: avg(|u| u.las_rmse_db),
            mcd_db: avg(|u| u.mcd_db),
            f0_rmse_cents: (!cents.is_empty()).then(|| cents.iter().sum::<f64>() / cents.len() as f64),
            vuv_error_pct: avg(|u| u.vuv_error_pct),
            rtf: rtf(generation_secs, audio_secs)?,
        };
        Ok(Self {
            utterances,
            mean,
            external: vec!["pesq".into(), "visqol".into()],
        })
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("name,las_rmse_db,mcd_db,f0_rmse_cents,vuv_error_pct,rtf\n");
        for u in &self.utterances {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                u.name,
                u.las_rmse_db,
                u.mcd_db,
                opt(u.f0_rmse_cents),
                u.vuv_error_pct,
                u.rtf
            ));
        }
        let m = &self.mean;
        s.push_str(&format!(
            "mean,{},{},{},{},{}\n",
            m.las_rmse_db,
            m.mcd_db,
            opt(m.f0_rmse_cents),
            m.vuv_error_pct,
            m.rtf
        ));
        s
    }
}

fn colormap(t: f64) -> [u8; 3] {
    // Dark blue through magenta and orange to pale yellow.
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.2],
        [0.35, 0.0, 0.5],
        [0.75, 0.15, 0.4],
        [0.98, 0.55, 0.1],
        [1.0, 1.0, 0.75],
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let w = x - i as f64;
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        *out = ((STOPS[i][c] * (1.0 - w) + STOPS[i + 1][c] * w) * 255.0).round() as u8;
    }
    rgb
}

/// Renders a `frames × bins` amplitude spectrogram as a log-amplitude
/// heatmap: one pixel per frame and bin, low frequencies at the bottom,
/// 80 dB of dynamic range below the peak.
pub fn render_spectrogram(amplitude: &Tensor) -> Result<image::RgbImage> {
    let (frames, bins) = amplitude.dims2()?;
    if frames == 0 || bins == 0 {
        return Err(Error::EmptyWaveform);
    }
    let db: Vec<f64> = amplitude.data().iter().map(|&a| 20.0 * a.max(LAS_FLOOR).log10()).collect();
    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut img = image::RgbImage::new(frames as u32, bins as u32);
    for f in 0..frames {
        for k in 0..bins {
            let t = (db[f * bins + k] - (top - 80.0)) / 80.0;
            img.put_pixel(f as u32, (bins - 1 - k) as u32, image::Rgb(colormap(t)));
        }
    }
    Ok(img)
}

pub fn plot_spectrogram(amplitude: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    render_spectrogram(amplitude)?.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[f64]) -> F0Sequence {
        F0Sequence::new(v.to_vec()).unwrap()
    }

    #[test]
    fn las_rmse_scale_gives_twenty_db() {
        let a = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 1.0, 2.0, 0.5]).unwrap();
        assert_eq!(las_rmse_spectra(&a, &a).unwrap(), 0.0);
        let scaled = a.map(|v| 10.0 * v);
        assert!((las_rmse_spectra(&scaled, &a).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn mcd_of_constant_offset() {
        let a = Tensor::zeros(&[4, 24]);
        let b = Tensor::full(&[4, 24], 0.5);
        let d = (24.0f64 * 0.25).sqrt();
        assert!((mcd_from_cepstra(&a, &b).unwrap() - 10.0 * SQRT_2 / LN_10 * d).abs() < 1e-12);
        assert_eq!(mcd_from_cepstra(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn dct_is_orthonormal() {
        // A constant log-mel has no energy above the 0th coefficient.
        let c = mel_cepstrum(&Tensor::full(&[1, 80], 2.0), 24).unwrap();
        assert!(c.data().iter().all(|v| v.abs() < 1e-12));
        assert!(mel_cepstrum(&Tensor::zeros(&[1, 10]), 24).is_err());
    }

    #[test]
    fn f0_and_vuv_cases() {
        let f = seq(&[100.0, 0.0, 200.0, 150.0]);
        assert_eq!(f0_rmse_cents(&f, &f).unwrap(), Some(0.0));
        let doubled = seq(&[200.0, 0.0, 400.0, 300.0]);
        assert_eq!(f0_rmse_cents(&doubled, &f).unwrap(), Some(1200.0));
        assert_eq!(f0_rmse_cents(&seq(&[0.0, 100.0, 0.0, 0.0]), &f).unwrap(), None);

        assert_eq!(vuv_error(&f, &f).unwrap(), 0.0);
        assert_eq!(vuv_error(&seq(&[0.0, 100.0, 0.0, 0.0]), &f).unwrap(), 100.0);
        assert_eq!(vuv_error(&seq(&[100.0, 0.0, 200.0, 0.0]), &f).unwrap(), 25.0);
    }

    #[test]
    fn rtf_cases() {
        assert_eq!(rtf(1.0, 10.0).unwrap(), 0.1);
        assert_eq!(rtf(3.0, 3.0).unwrap(), 1.0);
        assert!(rtf(1.0, 0.0).is_err());
    }

    #[test]
    fn report_rejects_empty_set() {
        assert!(MetricReport::new(Vec::new(), 1.0, 1.0).is_err());
    }
}
