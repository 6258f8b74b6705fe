//! Adam, minibatch sampling and the training drivers shared by the GAN
//! stages and the segmenter.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, Mode, ParameterStore};
use crate::rng;
use crate::tensor::{Graph, Var};

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub d_steps_per_g_step: usize,
    /// Weight of the L1 reconstruction term (Stage-II only).
    pub lambda_l1: f64,
    pub image_size: usize,
    pub noise_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 10,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            d_steps_per_g_step: 1,
            lambda_l1: 100.0,
            image_size: 32,
            noise_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.batch_size > dataset_len {
            return Err(Error::Config(format!(
                "batch_size {} exceeds dataset size {dataset_len}",
                self.batch_size
            )));
        }
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "image_size {} must be a power of two >= 16",
                self.image_size
            )));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::Config("d_steps_per_g_step must be at least 1".into()));
        }
        if self.lambda_l1 < 0.0 {
            return Err(Error::Config("lambda_l1 must be non-negative".into()));
        }
        if self.noise_dim == 0 {
            return Err(Error::Config("noise_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParameterStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = |_: ()| -> IndexMap<String, Vec<f64>> {
            store
                .params()
                .map(|(n, t)| (n.to_string(), vec![0.0; t.numel()]))
                .collect()
        };
        AdamState {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn from_config(store: &ParameterStore, cfg: &TrainConfig) -> Self {
        Self::new(store, cfg.lr, cfg.beta1, cfg.beta2)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }
}

/// One Adam update from the gradients stored on `params`; gradients are
/// cleared afterwards.
pub fn adam_step(params: &mut ParameterStore, state: &mut AdamState) -> Result<()> {
    if let Some((name, _)) = params.params().find(|(_, t)| t.grad().is_none()) {
        return Err(Error::Contract(format!("parameter {name} has no gradient")));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (name, p) in params.params_mut() {
        let (Some(m), Some(v)) = (state.m.get_mut(name), state.v.get_mut(name)) else {
            return Err(Error::Contract(format!("no optimizer state for {name}")));
        };
        let g = p.grad().expect("checked above").to_vec();
        for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
        p.clear_grad();
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("adam_step".into()));
    }
    Ok(())
}

/// Index batches for one epoch: a seeded permutation of `0..len`, chunked,
/// with the trailing partial chunk dropped.
pub fn minibatches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if batch_size > len {
        return Err(Error::Config(format!(
            "batch_size {batch_size} exceeds dataset size {len}"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    let mut r = rng::rng_from_seed(rng::derive_index(rng::derive_seed(seed, "minibatch"), epoch as u64));
    idx.shuffle(&mut r);
    Ok(idx
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialEpoch {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Per-epoch mean losses of an adversarial run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversarialHistory {
    pub epochs: Vec<AdversarialEpoch>,
}

impl AdversarialHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,d_loss,g_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.d_loss, e.g_loss));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedEpoch {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SupervisedHistory {
    pub epochs: Vec<SupervisedEpoch>,
}

impl SupervisedHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{}\n", e.epoch, e.loss));
        }
        s
    }
}

/// Builds a scalar loss on one batch. Arguments: graph, generator binding,
/// discriminator binding, batch indices, step RNG.
pub trait AdversarialLoss:
    FnMut(&mut Graph, &mut Bound<'_>, &mut Bound<'_>, &[usize], &mut ChaCha8Rng) -> Result<Var>
{
}

impl<F> AdversarialLoss for F where
    F: FnMut(&mut Graph, &mut Bound<'_>, &mut Bound<'_>, &[usize], &mut ChaCha8Rng) -> Result<Var>
{
}

/// Called after every epoch with the epoch index and the generator.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &ParameterStore) -> Result<()>;

fn step_rng(seed: u64, phase: &str, epoch: usize, batch: usize, k: usize) -> ChaCha8Rng {
    let s = rng::derive_seed(seed, phase);
    let s = rng::derive_index(s, epoch as u64);
    let s = rng::derive_index(s, batch as u64);
    rng::rng_from_seed(rng::derive_index(s, k as u64))
}

fn check_loss(g: &Graph, loss: Var, epoch: usize, batch: usize, what: &str) -> Result<f64> {
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::Divergence {
            epoch,
            batch,
            msg: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

fn divergence(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(op) => Error::Divergence {
            epoch,
            batch,
            msg: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Alternating GAN training: per batch, `d_steps_per_g_step` discriminator
/// updates followed by one generator update. The generator's leaves are
/// constants during discriminator steps and vice versa.
pub fn train_adversarial(
    gen: &mut ParameterStore,
    disc: &mut ParameterStore,
    mut d_loss_fn: impl AdversarialLoss,
    mut g_loss_fn: impl AdversarialLoss,
    data_len: usize,
    cfg: &TrainConfig,
    mut hook: Option<EpochHook<'_>>,
) -> Result<AdversarialHistory> {
    let mut history = AdversarialHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    cfg.validate(data_len)?;
    let mut g_opt = AdamState::from_config(gen, cfg);
    let mut d_opt = AdamState::from_config(disc, cfg);
    for epoch in 0..cfg.epochs {
        let batches = minibatches(data_len, cfg.batch_size, cfg.seed, epoch)?;
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        for (bi, batch) in batches.iter().enumerate() {
            for k in 0..cfg.d_steps_per_g_step {
                let mut graph = Graph::new();
                let mut r = step_rng(cfg.seed, "d-step", epoch, bi, k);
                let mut gb = Bound::new(&mut graph, gen, Mode::Train, false);
                let mut db = Bound::new(&mut graph, disc, Mode::Train, true);
                let loss = d_loss_fn(&mut graph, &mut gb, &mut db, batch, &mut r)
                    .map_err(|e| divergence(e, epoch, bi))?;
                let value = check_loss(&graph, loss, epoch, bi, "discriminator loss")?;
                graph.backward(loss)?;
                let out = db.finish();
                drop(gb);
                disc.absorb_grads(&graph, &out.vars)?;
                adam_step(disc, &mut d_opt).map_err(|e| divergence(e, epoch, bi))?;
                disc.apply_batch_stats(&out.observed)?;
                d_sum += value / cfg.d_steps_per_g_step as f64;
            }
            let mut graph = Graph::new();
            let mut r = step_rng(cfg.seed, "g-step", epoch, bi, 0);
            let mut gb = Bound::new(&mut graph, gen, Mode::Train, true);
            let mut db = Bound::new(&mut graph, disc, Mode::Train, false);
            let loss = g_loss_fn(&mut graph, &mut gb, &mut db, batch, &mut r)
                .map_err(|e| divergence(e, epoch, bi))?;
            let value = check_loss(&graph, loss, epoch, bi, "generator loss")?;
            graph.backward(loss)?;
            let out = gb.finish();
            drop(db);
            gen.absorb_grads(&graph, &out.vars)?;
            adam_step(gen, &mut g_opt).map_err(|e| divergence(e, epoch, bi))?;
            gen.apply_batch_stats(&out.observed)?;
            g_sum += value;
        }
        let n = batches.len() as f64;
        history.epochs.push(AdversarialEpoch {
            epoch,
            d_loss: d_sum / n,
            g_loss: g_sum / n,
        });
        if let Some(h) = hook.as_mut() {
            h(epoch, gen)?;
        }
    }
    Ok(history)
}

/// Plain minibatch Adam on a single network.
pub fn train_supervised(
    params: &mut ParameterStore,
    mut loss_fn: impl FnMut(&mut Graph, &mut Bound<'_>, &[usize], &mut ChaCha8Rng) -> Result<Var>,
    data_len: usize,
    cfg: &TrainConfig,
) -> Result<SupervisedHistory> {
    let mut history = SupervisedHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    cfg.validate(data_len)?;
    let mut opt = AdamState::from_config(params, cfg);
    for epoch in 0..cfg.epochs {
        let batches = minibatches(data_len, cfg.batch_size, cfg.seed, epoch)?;
        let mut sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let mut graph = Graph::new();
            let mut r = step_rng(cfg.seed, "step", epoch, bi, 0);
            let mut b = Bound::new(&mut graph, params, Mode::Train, true);
            let loss = loss_fn(&mut graph, &mut b, batch, &mut r).map_err(|e| divergence(e, epoch, bi))?;
            sum += check_loss(&graph, loss, epoch, bi, "loss")?;
            graph.backward(loss)?;
            let out = b.finish();
            params.absorb_grads(&graph, &out.vars)?;
            adam_step(params, &mut opt).map_err(|e| divergence(e, epoch, bi))?;
            params.apply_batch_stats(&out.observed)?;
        }
        history.epochs.push(SupervisedEpoch {
            epoch,
            loss: sum / batches.len() as f64,
        });
    }
    Ok(history)
}
