//! U-net segmenter: a strided-conv encoder, a transposed-conv decoder with
//! skip concatenations, and a per-pixel sigmoid. No dense layers, so any
//! input whose sides are multiples of `2^depth` is accepted.

use serde::{Deserialize, Serialize};

use crate::data::{PairedSample, SegmentationMask};
use crate::error::{Error, Result};
use crate::nn::{forward, init_params, Activation, Bound, LayerKind, Mode, Network, NetworkKind, ParameterStore};
use crate::optim::{train_supervised, SupervisedHistory, TrainConfig};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var, PROB_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetSpec {
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for UnetSpec {
    fn default() -> Self {
        UnetSpec {
            depth: 3,
            base_channels: 16,
        }
    }
}

impl UnetSpec {
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }
}

fn leaky() -> LayerKind {
    LayerKind::Activation(Activation::LeakyRelu { alpha: 0.2 })
}

/// Builds the network for `[3, size, size]` inputs; `size` only fixes the
/// declared input used for the static shape check.
pub fn unet_net(spec: &UnetSpec, size: usize) -> Result<Network> {
    if spec.depth == 0 || spec.base_channels == 0 {
        return Err(Error::Config("u-net depth and base_channels must be positive".into()));
    }
    if size % spec.multiple() != 0 {
        return Err(Error::InvalidShape(format!(
            "image size {size} must be a multiple of {}",
            spec.multiple()
        )));
    }
    let b = spec.base_channels;
    let mut net = Network::new(NetworkKind::Unet, vec![3, size, size]);
    net.push(
        "stem",
        LayerKind::Conv {
            in_ch: 3,
            out_ch: b,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
    )
    .push("stem_bn", LayerKind::BatchNorm { channels: b })
    .push("stem_act", leaky());
    let mut skips = vec![net.last_activation()];
    let mut widths = vec![b];
    for i in 1..=spec.depth {
        let (cin, cout) = (widths[i - 1], b << i);
        net.push(
            format!("down{i}"),
            LayerKind::Conv {
                in_ch: cin,
                out_ch: cout,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
        )
        .push(format!("down{i}_bn"), LayerKind::BatchNorm { channels: cout })
        .push(format!("down{i}_act"), leaky());
        skips.push(net.last_activation());
        widths.push(cout);
    }
    let mut ch = widths[spec.depth];
    for i in (0..spec.depth).rev() {
        let out = widths[i];
        net.push(
            format!("up{i}"),
            LayerKind::ConvTranspose {
                in_ch: ch,
                out_ch: out,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
        )
        .push(format!("up{i}_bn"), LayerKind::BatchNorm { channels: out })
        .push(format!("up{i}_act"), LayerKind::Activation(Activation::Relu))
        .push(format!("up{i}_skip"), LayerKind::ConcatSkip { with: skips[i] });
        ch = 2 * out;
    }
    net.push(
        "head",
        LayerKind::Conv {
            in_ch: ch,
            out_ch: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
        },
    )
    .push("head_act", LayerKind::Activation(Activation::Sigmoid));
    net.infer_shapes()?;
    Ok(net)
}

/// `[B, 3, H, W]` photos to `[B, 1, H, W]` foreground probabilities.
pub fn unet_forward(g: &mut Graph, net: &Network, p: &mut Bound<'_>, photo: Var) -> Result<Var> {
    let s = g.shape(photo).to_vec();
    let depth = net
        .layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Conv { stride: 2, .. }))
        .count();
    let m = 1usize << depth;
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::InvalidShape(format!("u-net expects [B, 3, H, W], got {s:?}")));
    }
    if s[2] % m != 0 || s[3] % m != 0 || s[2] == 0 || s[3] == 0 {
        return Err(Error::InvalidShape(format!(
            "u-net input {}x{} must have sides that are multiples of {m}",
            s[2], s[3]
        )));
    }
    forward(net, g, p, photo)
}

/// Mean per-pixel binary cross-entropy against a `{0, 1}` target.
pub fn seg_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    if g.shape(pred) != target.shape() {
        return Err(Error::InvalidShape(format!(
            "prediction {:?} vs target {:?}",
            g.shape(pred),
            target.shape()
        )));
    }
    if target.data().iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Contract("seg_loss target must be binary".into()));
    }
    let p = g.clamp(pred, PROB_EPS, 1.0 - PROB_EPS)?;
    let lp = g.log(p)?;
    let neg = g.scale(p, -1.0)?;
    let q = g.add_scalar(neg, 1.0)?;
    let lq = g.log(q)?;
    let t = target.data().to_vec();
    let one_minus: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
    let a = g.mul_const(lp, t)?;
    let b = g.mul_const(lq, one_minus)?;
    let s = g.add(a, b)?;
    let m = g.mean(s, None)?;
    g.scale(m, -1.0)
}

const SPEC_META: &str = "unet_spec";

#[derive(Clone, Debug)]
pub struct UnetModel {
    pub spec: UnetSpec,
    pub net: Network,
    pub params: ParameterStore,
}

impl UnetModel {
    pub fn init(spec: &UnetSpec, size: usize, seed: u64) -> Result<Self> {
        let net = unet_net(spec, size)?;
        let mut params = init_params(&net, rng::derive_seed(seed, "unet"))?;
        params.set_meta(SPEC_META, serde_json::to_value(spec)?);
        params.set_meta("image_size", size.into());
        Ok(UnetModel {
            spec: spec.clone(),
            net,
            params,
        })
    }

    pub fn from_store(params: ParameterStore) -> Result<Self> {
        if params.kind() != NetworkKind::Unet {
            return Err(Error::Config(format!(
                "expected a unet checkpoint, got {}",
                params.kind().as_str()
            )));
        }
        let meta = params.meta();
        let spec: UnetSpec = serde_json::from_value(
            meta.get(SPEC_META)
                .cloned()
                .ok_or_else(|| Error::Config("checkpoint lacks its u-net spec".into()))?,
        )?;
        let size = meta
            .get("image_size")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Config("checkpoint lacks image_size".into()))? as usize;
        let net = unet_net(&spec, size)?;
        Ok(UnetModel { spec, net, params })
    }

    /// Foreground probabilities `[1, H, W]` for one `[3, H, W]` photo.
    pub fn predict(&self, photo: &Tensor) -> Result<Tensor> {
        let s = photo.shape();
        if s.len() != 3 {
            return Err(Error::InvalidShape(format!("photo must be [3, H, W], got {s:?}")));
        }
        let mut g = Graph::new();
        let x = g.constant(photo.clone().reshape(&[1, s[0], s[1], s[2]])?);
        let mut p = Bound::new(&mut g, &self.params, Mode::Eval, false);
        let y = unet_forward(&mut g, &self.net, &mut p, x)?;
        g.value(y).batch_item(0)
    }
}

/// Thresholded prediction: foreground where the clamped probability is at
/// least `threshold`, so 0 gives all foreground and 1 all background.
pub fn segment(photo: &Tensor, model: &UnetModel, threshold: f64) -> Result<SegmentationMask> {
    let prob = model.predict(photo)?;
    let (h, w) = (prob.shape()[1], prob.shape()[2]);
    let bits: Vec<bool> = prob
        .data()
        .iter()
        .map(|&p| p.clamp(PROB_EPS, 1.0 - PROB_EPS) >= threshold)
        .collect();
    SegmentationMask::from_bits(h, w, &bits)
}

/// Trains on photo → binarized mask.
pub fn train_unet(
    pairs: &[PairedSample],
    spec: &UnetSpec,
    train: &TrainConfig,
) -> Result<(UnetModel, SupervisedHistory)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Contract("train_unet needs at least one pair".into()))?;
    let size = first.mask.height();
    let mut model = UnetModel::init(spec, size, train.seed)?;
    let targets: Vec<Tensor> = pairs.iter().map(|p| p.mask.binarized().into_tensor()).collect();
    let net = model.net.clone();
    let history = train_supervised(
        &mut model.params,
        |g, b, idx, _r| {
            let x = Tensor::stack(&idx.iter().map(|&i| &pairs[i].photo).collect::<Vec<_>>())?;
            let t = Tensor::stack(&idx.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;
            let x = g.constant(x);
            let y = unet_forward(g, &net, b, x)?;
            seg_loss(g, y, &t)
        },
        pairs.len(),
        train,
    )?;
    Ok((model, history))
}
