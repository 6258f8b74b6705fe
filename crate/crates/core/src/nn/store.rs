use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{LayerKind, Network};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};

/// Standard deviation of the Normal(0, σ) weight initialization.
pub const INIT_STD: f64 = 0.02;
/// Running-statistics momentum: `running = m·running + (1 − m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Stage1Generator,
    Stage1Discriminator,
    Stage2Generator,
    Stage2Discriminator,
    Unet,
}

impl NetworkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Stage1Generator => "stage1-generator",
            NetworkKind::Stage1Discriminator => "stage1-discriminator",
            NetworkKind::Stage2Generator => "stage2-generator",
            NetworkKind::Stage2Discriminator => "stage2-discriminator",
            NetworkKind::Unet => "unet",
        }
    }
}

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStat {
    pub layer: String,
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Named, ordered trainable tensors of one network plus its batch-norm
/// running statistics and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    kind: NetworkKind,
    seed: u64,
    params: IndexMap<String, Tensor>,
    buffers: IndexMap<String, Tensor>,
    meta: BTreeMap<String, serde_json::Value>,
}

impl ParameterStore {
    pub fn new(kind: NetworkKind, seed: u64) -> Self {
        ParameterStore {
            kind,
            seed,
            params: IndexMap::new(),
            buffers: IndexMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, t.with_requires_grad(true));
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate buffer name {name}")));
        }
        self.buffers.insert(name, t);
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn meta(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: serde_json::Value) {
        self.meta.insert(key.into(), value);
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite) && self.buffers.values().all(Tensor::is_finite)
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Copies gradients from `graph` into the stored tensors. Parameters the
    /// loss did not reach receive a zero gradient.
    pub fn absorb_grads(&mut self, graph: &Graph, vars: &IndexMap<String, Var>) -> Result<()> {
        for (name, t) in self.params.iter_mut() {
            let v = vars
                .get(name)
                .ok_or_else(|| Error::Contract(format!("parameter {name} was not bound")))?;
            match graph.grad(*v) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }

    /// Folds observed batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStat]) -> Result<()> {
        for s in stats {
            let n = s.count as f64;
            let unbiased = if s.count > 1 { n / (n - 1.0) } else { 1.0 };
            let rm = self
                .buffers
                .get_mut(&format!("{}.running_mean", s.layer))
                .ok_or_else(|| Error::Contract(format!("no running stats for {}", s.layer)))?;
            for (r, m) in rm.data_mut().iter_mut().zip(&s.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            let rv = self
                .buffers
                .get_mut(&format!("{}.running_var", s.layer))
                .ok_or_else(|| Error::Contract(format!("no running stats for {}", s.layer)))?;
            for (r, v) in rv.data_mut().iter_mut().zip(&s.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbiased;
            }
        }
        Ok(())
    }
}

/// Initializes every parameter of `net`: weights ~ Normal(0, 0.02),
/// biases 0, batch-norm scale 1 and shift 0. Each tensor draws from its own
/// stream keyed by `(seed, name)`.
pub fn init_params(net: &Network, seed: u64) -> Result<ParameterStore> {
    init_params_with_std(net, seed, INIT_STD)
}

pub fn init_params_with_std(net: &Network, seed: u64, std: f64) -> Result<ParameterStore> {
    net.infer_shapes()?;
    let mut store = ParameterStore::new(net.kind, seed);
    let normal = |name: &str, shape: &[usize]| -> Result<Tensor> {
        let n = shape.iter().product();
        let mut r = rng::rng_for(seed, name);
        let data = rng::normal_vec(&mut r, n).into_iter().map(|v| v * std).collect();
        Tensor::new(shape, data)
    };
    for layer in &net.layers {
        let name = &layer.name;
        match &layer.kind {
            LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let w = format!("{name}.weight");
                store.insert_param(&w, normal(&w, &[*out_ch, *in_ch, *kernel, *kernel])?)?;
                store.insert_param(format!("{name}.bias"), Tensor::zeros(&[*out_ch]))?;
            }
            LayerKind::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let w = format!("{name}.weight");
                store.insert_param(&w, normal(&w, &[*in_ch, *out_ch, *kernel, *kernel])?)?;
                store.insert_param(format!("{name}.bias"), Tensor::zeros(&[*out_ch]))?;
            }
            LayerKind::FlattenLinear {
                in_features,
                out_features,
                ..
            } => {
                let w = format!("{name}.weight");
                store.insert_param(&w, normal(&w, &[*out_features, *in_features])?)?;
                store.insert_param(format!("{name}.bias"), Tensor::zeros(&[*out_features]))?;
            }
            LayerKind::BatchNorm { channels } => {
                store.insert_param(format!("{name}.gamma"), Tensor::full(&[*channels], 1.0))?;
                store.insert_param(format!("{name}.beta"), Tensor::zeros(&[*channels]))?;
                store.insert_buffer(format!("{name}.running_mean"), Tensor::zeros(&[*channels]))?;
                store.insert_buffer(format!("{name}.running_var"), Tensor::full(&[*channels], 1.0))?;
            }
            LayerKind::Activation(_) | LayerKind::ConcatSkip { .. } | LayerKind::Dropout { .. } => {}
        }
    }
    Ok(store)
}
