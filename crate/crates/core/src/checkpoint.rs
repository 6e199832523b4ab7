//! Training-state persistence: `<root>/step_<n>/state.ckpt` plus a `latest`
//! pointer file naming the newest step directory.

use std::path::{Path, PathBuf};

use crate::config::ProjectConfig;
use crate::container::Container;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::train::{AdamW, TrainState, Trainer};

pub const STATE_FILE: &str = "state.ckpt";
pub const LATEST_FILE: &str = "latest";

fn put(c: &mut Container, prefix: &str, store: &ParamStore) {
    for (name, t) in store.iter() {
        c.insert(format!("{prefix}/{name}"), t.clone());
    }
}

fn take(c: &mut Container, prefix: &str) -> ParamStore {
    let head = format!("{prefix}/");
    let names: Vec<String> = c.tensors.keys().filter(|k| k.starts_with(&head)).cloned().collect();
    let mut store = ParamStore::new();
    for name in names {
        let t = c.tensors.remove(&name).expect("listed above");
        store.insert(&name[head.len()..], t);
    }
    store
}

pub fn state_to_container(cfg: &ProjectConfig, state: &TrainState) -> Result<Container> {
    let mut c = Container::new(serde_json::json!({
        "kind": "train_state",
        "step": state.step,
        "config": serde_json::to_value(cfg)?,
        "adam_steps": {
            "gen": state.opt_gen.t,
            "disc": state.opt_disc.t,
            "f0": state.opt_f0.t,
        },
    }));
    for (prefix, store) in [("gen", &state.gen), ("disc", &state.disc), ("f0", &state.f0)] {
        put(&mut c, prefix, store);
    }
    for (prefix, opt) in [("gen", &state.opt_gen), ("disc", &state.opt_disc), ("f0", &state.opt_f0)] {
        put(&mut c, &format!("adam.{prefix}.m"), &opt.m);
        put(&mut c, &format!("adam.{prefix}.v"), &opt.v);
    }
    Ok(c)
}

pub fn state_from_container(mut c: Container) -> Result<(ProjectConfig, TrainState)> {
    if c.meta["kind"] != "train_state" {
        return Err(Error::Corrupt("not a training checkpoint".into()));
    }
    let cfg: ProjectConfig =
        serde_json::from_value(c.meta["config"].clone()).map_err(|e| Error::Corrupt(format!("config: {e}")))?;
    let field = |v: &serde_json::Value, what: &str| {
        v.as_u64()
            .ok_or_else(|| Error::Corrupt(format!("`{what}` missing from header")))
    };
    let step = field(&c.meta["step"], "step")?;
    let adam = c.meta["adam_steps"].clone();
    let mut opt = |prefix: &str| -> Result<AdamW> {
        let m = take(&mut c, &format!("adam.{prefix}.m"));
        let v = take(&mut c, &format!("adam.{prefix}.v"));
        Ok(AdamW {
            beta1: cfg.train.beta1,
            beta2: cfg.train.beta2,
            eps: cfg.train.adam_eps,
            weight_decay: cfg.train.weight_decay,
            t: field(&adam[prefix], prefix)?,
            m,
            v,
        })
    };
    let (opt_gen, opt_disc, opt_f0) = (opt("gen")?, opt("disc")?, opt("f0")?);
    let state = TrainState {
        step,
        gen: take(&mut c, "gen"),
        disc: take(&mut c, "disc"),
        f0: take(&mut c, "f0"),
        opt_gen,
        opt_disc,
        opt_f0,
    };
    if let Some(extra) = c.tensors.keys().next() {
        return Err(Error::Corrupt(format!("unexpected tensor `{extra}`")));
    }
    for (params, opt) in [(&state.gen, &state.opt_gen), (&state.disc, &state.opt_disc), (&state.f0, &state.opt_f0)] {
        let names: Vec<_> = params.names().collect();
        if names != opt.m.names().collect::<Vec<_>>() || names != opt.v.names().collect::<Vec<_>>() {
            return Err(Error::Corrupt("optimizer moments do not match parameters".into()));
        }
    }
    Ok((cfg, state))
}

pub fn save_state(path: impl AsRef<Path>, cfg: &ProjectConfig, state: &TrainState) -> Result<()> {
    state_to_container(cfg, state)?.write(path)
}

/// Reads a checkpoint given either its file or a checkpoint root holding `latest`.
pub fn load_state(path: impl AsRef<Path>) -> Result<(ProjectConfig, TrainState)> {
    let path = path.as_ref();
    let file = if path.is_dir() {
        latest_checkpoint(path)?.ok_or_else(|| Error::InvalidInput(format!("{} holds no checkpoint", path.display())))?
    } else {
        path.to_path_buf()
    };
    state_from_container(Container::read(file)?)
}

/// Writes `<root>/step_<n>/state.ckpt` and repoints `latest`.
pub fn save_checkpoint(root: impl AsRef<Path>, cfg: &ProjectConfig, state: &TrainState) -> Result<PathBuf> {
    let root = root.as_ref();
    let name = format!("step_{}", state.step);
    let dir = root.join(&name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let file = dir.join(STATE_FILE);
    save_state(&file, cfg, state)?;
    let latest = root.join(LATEST_FILE);
    std::fs::write(&latest, format!("{name}\n")).map_err(|e| Error::io(&latest, e))?;
    Ok(file)
}

pub fn latest_checkpoint(root: impl AsRef<Path>) -> Result<Option<PathBuf>> {
    let latest = root.as_ref().join(LATEST_FILE);
    match std::fs::read_to_string(&latest) {
        Ok(name) => {
            let file = root.as_ref().join(name.trim()).join(STATE_FILE);
            if file.is_file() {
                Ok(Some(file))
            } else {
                Err(Error::Corrupt(format!("`latest` points at missing {}", file.display())))
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(latest, e)),
    }
}

impl Trainer {
    /// Continues from a saved state. The model section of `cfg` must match
    /// the checkpoint's; training settings come from `cfg`.
    pub fn resume(cfg: ProjectConfig, corpus: Vec<Utterance>, path: impl AsRef<Path>) -> Result<Self> {
        let (saved, state) = load_state(path)?;
        check_model_match(&saved, &cfg)?;
        Self::from_state(cfg, corpus, state)
    }
}

pub fn check_model_match(saved: &ProjectConfig, current: &ProjectConfig) -> Result<()> {
    let (a, b) = (&saved.model, &current.model);
    let sections = [
        ("stft", a.stft == b.stft),
        ("mel", a.mel == b.mel),
        ("excitation", a.excitation == b.excitation),
        ("filter", a.filter == b.filter),
        ("mpd", a.mpd == b.mpd),
        ("mrd", a.mrd == b.mrd),
        ("f0_predictor", a.f0_predictor == b.f0_predictor),
    ];
    match sections.iter().find(|(_, same)| !same) {
        Some((name, _)) => Err(Error::Config(format!(
            "checkpoint was trained with a different `{name}` configuration"
        ))),
        None => Ok(()),
    }
}
