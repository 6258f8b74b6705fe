use serde::{Deserialize, Serialize};

use super::NetworkKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Relu,
    Sigmoid,
    Tanh,
    /// `(tanh(x) + 1) / 2`, mapping onto `[0, 1]`.
    TanhUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Activation(Activation),
    /// Concatenates the running activation with activation `with`
    /// (0 is the network input, `k + 1` the output of layer `k`).
    ConcatSkip {
        with: usize,
    },
    /// Flattens the per-sample activation and applies a dense layer,
    /// optionally reshaping the result.
    FlattenLinear {
        in_features: usize,
        out_features: usize,
        reshape: Option<Vec<usize>>,
    },
    /// Inverted dropout; identity when the forward pass has no dropout source.
    Dropout {
        p: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }

    pub fn is_fully_connected(&self) -> bool {
        matches!(self.kind, LayerKind::FlattenLinear { .. })
    }
}

/// A feed-forward layer chain with optional skip concatenations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub kind: NetworkKind,
    /// Per-sample input shape (without the batch axis).
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Network {
    pub fn new(kind: NetworkKind, input: Vec<usize>) -> Self {
        Network {
            kind,
            input,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: LayerKind) -> &mut Self {
        self.layers.push(LayerSpec::new(name, kind));
        self
    }

    /// Index usable by [`LayerKind::ConcatSkip`] for the most recent layer.
    pub fn last_activation(&self) -> usize {
        self.layers.len()
    }

    pub fn has_fully_connected(&self) -> bool {
        self.layers.iter().any(LayerSpec::is_fully_connected)
    }

    /// Shapes of every activation for the declared input.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        self.infer_shapes_for(&self.input)
    }

    /// Shapes of every activation (input first) for a given per-sample input.
    pub fn infer_shapes_for(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut acts = vec![input.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = acts.last().expect("non-empty");
            let bad = |msg: String| Error::InvalidSpec {
                layer: i,
                name: layer.name.clone(),
                msg,
            };
            let next = match &layer.kind {
                LayerKind::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = spatial(cur).ok_or_else(|| bad(format!("expects [C,H,W], got {cur:?}")))?;
                    if c != *in_ch {
                        return Err(bad(format!("expects {in_ch} channels, got {c}")));
                    }
                    if *stride == 0 || h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                        return Err(bad(format!("kernel {kernel} does not fit {h}x{w}")));
                    }
                    vec![
                        *out_ch,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ]
                }
                LayerKind::ConvTranspose {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = spatial(cur).ok_or_else(|| bad(format!("expects [C,H,W], got {cur:?}")))?;
                    if c != *in_ch {
                        return Err(bad(format!("expects {in_ch} channels, got {c}")));
                    }
                    let grow = |n: usize| (n as isize - 1) * *stride as isize + *kernel as isize - 2 * *padding as isize;
                    let (ho, wo) = (grow(h), grow(w));
                    if *stride == 0 || ho <= 0 || wo <= 0 {
                        return Err(bad("empty output".into()));
                    }
                    vec![*out_ch, ho as usize, wo as usize]
                }
                LayerKind::BatchNorm { channels } => {
                    if cur.first() != Some(channels) {
                        return Err(bad(format!("expects {channels} channels, got {cur:?}")));
                    }
                    cur.clone()
                }
                LayerKind::Activation(_) => cur.clone(),
                LayerKind::Dropout { p } => {
                    if !(0.0..1.0).contains(p) {
                        return Err(bad(format!("dropout probability {p} outside [0, 1)")));
                    }
                    cur.clone()
                }
                LayerKind::ConcatSkip { with } => {
                    let other = acts
                        .get(*with)
                        .ok_or_else(|| bad(format!("skip source {with} is not an earlier activation")))?;
                    let (Some(a), Some(b)) = (spatial(cur), spatial(other)) else {
                        return Err(bad("skip concat needs [C,H,W] activations".into()));
                    };
                    if a[1..] != b[1..] {
                        return Err(bad(format!("spatial mismatch {cur:?} vs {other:?}")));
                    }
                    vec![a[0] + b[0], a[1], a[2]]
                }
                LayerKind::FlattenLinear {
                    in_features,
                    out_features,
                    reshape,
                } => {
                    let n: usize = cur.iter().product();
                    if n != *in_features {
                        return Err(bad(format!("expects {in_features} features, got {n}")));
                    }
                    match reshape {
                        Some(s) if s.iter().product::<usize>() != *out_features => {
                            return Err(bad(format!("cannot reshape {out_features} to {s:?}")));
                        }
                        Some(s) => s.clone(),
                        None => vec![*out_features],
                    }
                }
            };
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.infer_shapes()?.pop().expect("non-empty"))
    }
}

fn spatial(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}
