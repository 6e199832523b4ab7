#![allow(dead_code)]

use spectravoc_core::data::synthetic_voice;
use spectravoc_core::{prepare_utterance, F0Sequence, ProjectConfig, Utterance};

/// A gliding contour with an unvoiced gap in the middle.
pub fn contour(frames: usize, base: f64, seed: u64) -> Vec<f64> {
    let gap = frames / 2..frames / 2 + frames / 8;
    (0..frames)
        .map(|i| {
            if gap.contains(&i) {
                0.0
            } else {
                let t = i as f64 / frames as f64;
                base * (1.0 + 0.15 * (2.0 * std::f64::consts::PI * (t + seed as f64 * 0.1)).sin())
            }
        })
        .collect()
}

pub const FORMANTS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
];

/// Utterance of `frames` frames whose features come from the known contour.
pub fn utterance(cfg: &ProjectConfig, name: &str, frames: usize, base: f64, seed: u64) -> Utterance {
    let stft = &cfg.model.stft;
    let f0 = contour(frames, base, seed);
    let formants = FORMANTS[seed as usize % FORMANTS.len()];
    let wave = synthetic_voice(&f0, formants, stft.frame_shift, stft.sample_rate, seed).unwrap();
    prepare_utterance(
        name,
        &wave,
        stft,
        &cfg.model.mel,
        &cfg.pitch,
        Some(F0Sequence::new(f0).unwrap()),
    )
    .unwrap()
}

pub fn corpus(cfg: &ProjectConfig, count: usize, frames: usize) -> Vec<Utterance> {
    (0..count)
        .map(|i| utterance(cfg, &format!("utt{i}"), frames, 100.0 + 25.0 * i as f64, i as u64))
        .collect()
}
