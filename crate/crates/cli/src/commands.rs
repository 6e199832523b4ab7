use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use spectravoc_core::f0_predictor::parse_f0;
use spectravoc_core::signal::amplitude_spectrogram;
use spectravoc_core::{
    extract_f0, f0_rmse_cents, las_rmse, latest_checkpoint, load_state, mcd, plot_spectrogram, prepare_utterance,
    read_wav, rtf, save_checkpoint, vuv_error, write_wav, Error, F0Predictor, F0Sequence, MetricReport, ProjectConfig,
    Result, StepReport, TrainState, Trainer, Utterance, UtteranceMetrics, Vocoder,
};

pub const FEATURE_EXT: &str = "feat";
pub const F0_EXT: &str = "f0";

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_f0_file(path: &Path) -> Result<F0Sequence> {
    parse_f0(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Imported contour for `name`, if an F0 directory is configured. A missing
/// sidecar is an error only when `required`.
fn sidecar_f0(cfg: &ProjectConfig, name: &str, required: bool) -> Result<Option<F0Sequence>> {
    let Some(dir) = &cfg.data.f0_dir else {
        return Ok(None);
    };
    let path = dir.join(format!("{name}.{F0_EXT}"));
    if !path.is_file() {
        if required {
            return Err(Error::InvalidInput(format!("F0 sidecar {} not found", path.display())));
        }
        return Ok(None);
    }
    read_f0_file(&path).map(Some)
}

fn utterance_from_wav(cfg: &ProjectConfig, path: &Path, require_sidecar: bool) -> Result<Utterance> {
    let name = stem(path);
    let m = &cfg.model;
    let wave = read_wav(path, m.stft.sample_rate)?;
    let f0 = sidecar_f0(cfg, &name, require_sidecar)?;
    prepare_utterance(&name, &wave, &m.stft, &m.mel, &cfg.pitch, f0)
}

pub fn prepare(cfg: &ProjectConfig, wav_dir: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<()> {
    let wav_dir = wav_dir.unwrap_or_else(|| cfg.data.wav_dir.clone());
    let out_dir = out_dir.unwrap_or_else(|| cfg.data.feature_dir.clone());
    let wavs = files_with_ext(&wav_dir, "wav")?;
    if wavs.is_empty() {
        return Err(Error::InvalidInput(format!("no .wav files in {}", wav_dir.display())));
    }
    create_dir(&out_dir)?;
    for path in &wavs {
        let utt = utterance_from_wav(cfg, path, true)?;
        utt.save(out_dir.join(format!("{}.{FEATURE_EXT}", utt.name)))?;
        let voiced = utt.f0.voiced().filter(|&v| v).count();
        println!(
            "{}",
            serde_json::json!({ "utterance": utt.name, "frames": utt.frames(), "voiced_frames": voiced })
        );
    }
    Ok(())
}

fn load_features(dir: &Path) -> Result<Vec<Utterance>> {
    let files = files_with_ext(dir, FEATURE_EXT)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .{FEATURE_EXT} files in {}; run `prepare` first",
            dir.display()
        )));
    }
    files.iter().map(Utterance::load).collect()
}

/// Keeps the header and the rows of steps up to `step`, so a resumed run does
/// not duplicate rows written after the checkpoint it resumes from.
fn open_log(path: &Path, step: u64) -> Result<fs::File> {
    let kept: Vec<String> = match fs::read_to_string(path) {
        Ok(text) => text
            .lines()
            .skip(1)
            .filter(|row| {
                row.split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s <= step)
            })
            .map(str::to_string)
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("{}\n", StepReport::CSV_HEADER);
    for row in kept {
        text.push_str(&row);
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(file)
}

fn checkpoint(cfg: &ProjectConfig, state: &TrainState) -> Result<PathBuf> {
    let file = save_checkpoint(&cfg.data.checkpoint_dir, cfg, state)?;
    println!("{}", serde_json::json!({ "step": state.step, "checkpoint": file }));
    Ok(file)
}

pub fn train(cfg: ProjectConfig, max_steps: Option<u64>, fresh: bool) -> Result<()> {
    let corpus = load_features(&cfg.data.feature_dir)?;
    let latest = if fresh {
        None
    } else {
        latest_checkpoint(&cfg.data.checkpoint_dir)?
    };
    let mut trainer = match latest {
        Some(file) => Trainer::resume(cfg.clone(), corpus, file)?,
        None => Trainer::new(cfg.clone(), corpus)?,
    };
    let target = max_steps.unwrap_or(cfg.train.max_steps);
    let log_path = &cfg.data.log_path;
    let mut log = open_log(log_path, trainer.state.step)?;
    let mut saved = None;
    while trainer.state.step < target {
        let report = trainer.step()?;
        writeln!(log, "{}", report.csv_row()).map_err(|e| Error::io(log_path, e))?;
        if report.step % cfg.train.checkpoint_interval == 0 {
            checkpoint(&cfg, &trainer.state)?;
            saved = Some(report.step);
        }
    }
    if saved != Some(trainer.state.step) {
        checkpoint(&cfg, &trainer.state)?;
    }
    Ok(())
}

/// Model half of a checkpoint: its configuration and trained parameters.
struct Model {
    cfg: ProjectConfig,
    state: TrainState,
    vocoder: Vocoder,
}

impl Model {
    fn load(path: &Path) -> Result<Self> {
        let (cfg, state) = load_state(path)?;
        let m = &cfg.model;
        let vocoder = Vocoder::new(m.stft.clone(), m.mel.clone(), m.excitation.clone(), m.filter.clone())?;
        Ok(Self { cfg, state, vocoder })
    }

    fn f0_for(&self, utt: &Utterance, source: &str) -> Result<F0Sequence> {
        let f0 = match source {
            "natural" => utt.f0.clone(),
            "predicted" => {
                F0Predictor::new(self.cfg.model.f0_predictor.clone())?.predict_f0(&utt.mel, &self.state.f0)?
            }
            path => read_f0_file(Path::new(path))?,
        };
        if f0.len() != utt.frames() {
            return Err(Error::Shape(format!(
                "F0 has {} frames, `{}` has {}",
                f0.len(),
                utt.name,
                utt.frames()
            )));
        }
        Ok(f0)
    }

    fn synthesize(&self, utt: &Utterance, f0: &F0Sequence, seed: u64) -> Result<spectravoc_core::Waveform> {
        self.vocoder.synthesize(f0, &utt.mel, &self.state.gen, seed)
    }
}

pub fn synth(cfg: &ProjectConfig, checkpoint: &Path, input: &Path, out: &Path, f0: &str) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let is_wav = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    let utt = if is_wav {
        utterance_from_wav(&model.cfg, input, false)?
    } else {
        Utterance::load(input)?
    };
    utt.check(&model.cfg.model.stft, &model.cfg.model.mel)?;
    let f0 = model.f0_for(&utt, f0)?;
    let wave = model.synthesize(&utt, &f0, cfg.train.seed)?;
    write_wav(out, &wave)?;
    println!(
        "{}",
        serde_json::json!({ "utterance": utt.name, "samples": wave.len(), "out": out })
    );
    Ok(())
}

pub fn eval(cfg: &ProjectConfig, checkpoint: &Path, test_dir: &Path, out_dir: &Path, f0: &str) -> Result<()> {
    if f0 != "natural" && f0 != "predicted" {
        return Err(Error::InvalidInput(format!("eval takes --f0 natural or predicted, not `{f0}`")));
    }
    let model = Model::load(checkpoint)?;
    let m = &model.cfg.model;
    let wavs = files_with_ext(test_dir, "wav")?;
    create_dir(out_dir)?;
    let mut rows = Vec::new();
    let (mut gen_secs, mut audio_secs) = (0.0, 0.0);
    for path in &wavs {
        let utt = utterance_from_wav(&model.cfg, path, false)?;
        let f0_in = model.f0_for(&utt, f0)?;
        let start = Instant::now();
        let wave = model.synthesize(&utt, &f0_in, cfg.train.seed)?;
        let secs = start.elapsed().as_secs_f64();
        gen_secs += secs;
        audio_secs += wave.duration_secs();
        write_wav(out_dir.join(format!("{}.wav", utt.name)), &wave)?;
        let f0_out = extract_f0(&wave, &model.cfg.pitch)?;
        rows.push(UtteranceMetrics {
            las_rmse_db: las_rmse(&wave, &utt.wave, &m.stft)?,
            mcd_db: mcd(&wave, &utt.wave, &m.stft, &m.mel)?,
            f0_rmse_cents: f0_rmse_cents(&f0_out, &utt.f0)?,
            vuv_error_pct: vuv_error(&f0_out, &utt.f0)?,
            rtf: rtf(secs, wave.duration_secs())?,
            name: utt.name,
        });
    }
    let report = MetricReport::new(rows, gen_secs, audio_secs)?;
    let csv = out_dir.join("metrics.csv");
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let json = out_dir.join("metrics.json");
    fs::write(&json, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&json, e))?;
    println!("{}", serde_json::to_string(&report.mean)?);
    Ok(())
}

fn vocoder(cfg: &ProjectConfig) -> Result<Vocoder> {
    let m = &cfg.model;
    Vocoder::new(m.stft.clone(), m.mel.clone(), m.excitation.clone(), m.filter.clone())
}

pub fn excite(cfg: &ProjectConfig, f0: &Path, out: &Path, plot: Option<&Path>) -> Result<()> {
    let f0 = read_f0_file(f0)?;
    let e = vocoder(cfg)?.excitation_for(&f0, cfg.train.seed)?;
    write_wav(out, &e)?;
    if let Some(png) = plot {
        plot_spectrogram(&amplitude_spectrogram(&e, &cfg.model.stft)?, png)?;
    }
    println!("{}", serde_json::json!({ "samples": e.len(), "out": out }));
    Ok(())
}

pub fn plot(cfg: &ProjectConfig, input: &Path, out: &Path) -> Result<()> {
    let wave = read_wav(input, cfg.model.stft.sample_rate)?;
    plot_spectrogram(&amplitude_spectrogram(&wave, &cfg.model.stft)?, out)
}
