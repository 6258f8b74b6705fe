use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, BatchStat, LayerKind, Network, ParameterStore, BN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics and reports them.
    Train,
    /// Batch norm uses the stored running statistics.
    Eval,
}

/// A parameter store bound into one graph for one forward pass.
pub struct Bound<'s> {
    store: &'s ParameterStore,
    vars: IndexMap<String, Var>,
    mode: Mode,
    observed: Vec<BatchStat>,
    dropout: Option<ChaCha8Rng>,
}

/// What a finished forward pass leaves behind.
pub struct BoundOutcome {
    pub vars: IndexMap<String, Var>,
    pub observed: Vec<BatchStat>,
}

impl<'s> Bound<'s> {
    /// Records every parameter as a leaf; `trainable` decides whether the
    /// leaves take part in differentiation.
    pub fn new(graph: &mut Graph, store: &'s ParameterStore, mode: Mode, trainable: bool) -> Self {
        let vars = store
            .params()
            .map(|(name, t)| {
                let v = if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (name.to_string(), v)
            })
            .collect();
        Bound {
            store,
            vars,
            mode,
            observed: Vec::new(),
            dropout: None,
        }
    }

    /// Binds already-recorded vars, in store parameter order.
    pub fn from_vars(store: &'s ParameterStore, vars: &[Var], mode: Mode) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} vars for {} parameters",
                vars.len(),
                store.len()
            )));
        }
        let vars = store
            .params()
            .zip(vars)
            .map(|((name, _), v)| (name.to_string(), *v))
            .collect();
        Ok(Bound {
            store,
            vars,
            mode,
            observed: Vec::new(),
            dropout: None,
        })
    }

    /// Enables dropout layers, drawing masks from `rng`.
    pub fn with_dropout(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout = Some(rng);
        self
    }

    pub fn set_dropout(&mut self, rng: ChaCha8Rng) {
        self.dropout = Some(rng);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }

    pub fn finish(self) -> BoundOutcome {
        BoundOutcome {
            vars: self.vars,
            observed: self.observed,
        }
    }
}

/// Runs `net` on `x` (`[B, ...input]`).
pub fn forward(net: &Network, g: &mut Graph, p: &mut Bound<'_>, x: Var) -> Result<Var> {
    let mut acts = vec![x];
    let mut cur = x;
    for layer in &net.layers {
        let name = layer.name.as_str();
        cur = match &layer.kind {
            LayerKind::Conv {
                stride, padding, ..
            } => {
                let (w, b) = (p.var(&format!("{name}.weight"))?, p.var(&format!("{name}.bias"))?);
                g.conv2d(cur, w, b, *stride, *padding)?
            }
            LayerKind::ConvTranspose {
                stride, padding, ..
            } => {
                let (w, b) = (p.var(&format!("{name}.weight"))?, p.var(&format!("{name}.bias"))?);
                g.conv_transpose2d(cur, w, b, *stride, *padding)?
            }
            LayerKind::BatchNorm { .. } => batch_norm(g, p, name, cur)?,
            LayerKind::Activation(a) => activation(g, cur, *a)?,
            LayerKind::ConcatSkip { with } => {
                let other = *acts.get(*with).ok_or_else(|| Error::InvalidSpec {
                    layer: acts.len() - 1,
                    name: name.to_string(),
                    msg: format!("skip source {with} not available"),
                })?;
                g.concat_channels(cur, other)?
            }
            LayerKind::FlattenLinear {
                out_features,
                reshape,
                ..
            } => {
                let shape = g.shape(cur).to_vec();
                let bsz = shape[0];
                let flat = g.reshape(cur, &[bsz, shape[1..].iter().product()])?;
                let (w, b) = (p.var(&format!("{name}.weight"))?, p.var(&format!("{name}.bias"))?);
                let y = g.linear(flat, w, b)?;
                match reshape {
                    Some(s) => {
                        let mut full = vec![bsz];
                        full.extend_from_slice(s);
                        g.reshape(y, &full)?
                    }
                    None => {
                        debug_assert_eq!(g.shape(y)[1], *out_features);
                        y
                    }
                }
            }
            LayerKind::Dropout { p: rate } => match p.dropout.as_mut() {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 - rate;
                    let n = g.value(cur).numel();
                    let mask = (0..n)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    g.mul_const(cur, mask)?
                }
                _ => cur,
            },
        };
        acts.push(cur);
    }
    Ok(cur)
}

pub fn activation(g: &mut Graph, x: Var, a: Activation) -> Result<Var> {
    match a {
        Activation::LeakyRelu { alpha } => g.leaky_relu(x, alpha),
        Activation::Relu => g.leaky_relu(x, 0.0),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::Tanh => g.tanh(x),
        Activation::TanhUnit => {
            let t = g.tanh(x)?;
            let t = g.add_scalar(t, 1.0)?;
            g.scale(t, 0.5)
        }
    }
}

fn batch_norm(g: &mut Graph, p: &mut Bound<'_>, name: &str, x: Var) -> Result<Var> {
    let gamma = p.var(&format!("{name}.gamma"))?;
    let beta = p.var(&format!("{name}.beta"))?;
    match p.mode {
        Mode::Train => {
            let shape = g.shape(x);
            let count = shape[0] * shape[2..].iter().product::<usize>();
            let (y, mean, var) = g.batch_norm(x, gamma, beta, BN_EPS, None)?;
            p.observed.push(BatchStat {
                layer: name.to_string(),
                mean,
                var,
                count,
            });
            Ok(y)
        }
        Mode::Eval => {
            let rm = p.store.buffer(&format!("{name}.running_mean"));
            let rv = p.store.buffer(&format!("{name}.running_var"));
            let (Some(rm), Some(rv)) = (rm, rv) else {
                return Err(Error::Contract(format!("no running stats for {name}")));
            };
            let (y, _, _) = g.batch_norm(x, gamma, beta, BN_EPS, Some((rm.data(), rv.data())))?;
            Ok(y)
        }
    }
}
