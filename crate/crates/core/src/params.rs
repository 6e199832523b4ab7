//! Named parameter storage shared by every trainable model.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameter path → array. Paths are dotted (`filter.block0.dwconv.weight`)
/// and iterate in sorted order, which keeps serialization deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Names under `prefix` (e.g. `"mpd."`).
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.tensors.keys().filter(move |k| k.starts_with(prefix))
    }

    /// Merges `other` into `self`, overwriting duplicates.
    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    /// Sub-store of entries under `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.tensors.iter().find(|(_, t)| !t.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite(format!("parameter `{name}`"))),
            None => Ok(()),
        }
    }
}

/// Normal(0, std²) truncated to ±2 std by resampling.
pub fn trunc_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches element count")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Truncated normal with the given standard deviation.
    Normal(f64),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Declarative parameter layout of a model; drives both initialization and
/// shape validation of loaded parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
    }

    /// Dense layer `input → output`: `<prefix>.weight` (`input × output`) and `<prefix>.bias`.
    pub fn linear(&mut self, prefix: &str, input: usize, output: usize) {
        self.push(format!("{prefix}.weight"), &[input, output], Init::Normal(0.02));
        self.push(format!("{prefix}.bias"), &[output], Init::Zeros);
    }

    pub fn layer_norm(&mut self, prefix: &str, width: usize) {
        self.push(format!("{prefix}.gamma"), &[width], Init::Ones);
        self.push(format!("{prefix}.beta"), &[width], Init::Zeros);
    }

    /// 2-D convolution (`output × input × kh × kw`) with fan-in scaled init.
    pub fn conv2d(&mut self, prefix: &str, input: usize, output: usize, kernel: (usize, usize)) {
        let fan_in = (input * kernel.0 * kernel.1) as f64;
        self.push(
            format!("{prefix}.weight"),
            &[output, input, kernel.0, kernel.1],
            Init::Normal((2.0 / fan_in).sqrt() * 0.5),
        );
        self.push(format!("{prefix}.bias"), &[output], Init::Zeros);
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn extend(&mut self, other: ParamLayout) {
        self.specs.extend(other.specs);
    }

    /// Draws fresh parameters in declaration order.
    pub fn init(&self, rng: &mut impl Rng) -> ParamStore {
        let mut store = ParamStore::new();
        for spec in &self.specs {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, 1.0),
                Init::Const(v) => Tensor::full(&spec.shape, v),
                Init::Normal(std) => trunc_normal(&spec.shape, std, rng),
            };
            store.insert(spec.name.clone(), t);
        }
        store
    }

    /// Every declared parameter must be present with its declared shape.
    pub fn check(&self, store: &ParamStore) -> Result<()> {
        for spec in &self.specs {
            let t = store.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}
