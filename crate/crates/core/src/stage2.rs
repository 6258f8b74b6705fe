//! Stage-II: a conditional GAN translating a mask into a photo. The
//! generator is an encoder-decoder with skip concatenations; the
//! discriminator sees photo and mask stacked along channels.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PairedSample, SegmentationMask};
use crate::error::{Error, Result};
use crate::nn::{
    concat_skip, forward, init_params, mean_log_prob, Activation, Bound, LayerKind, Mode, Network,
    NetworkKind, ParameterStore,
};
use crate::optim::{train_adversarial, AdversarialHistory, EpochHook, TrainConfig};
use crate::rng;
use crate::stage1::{conv_discriminator_net, disc_forward, DiscHead, LEAK};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub image_size: usize,
    /// Channels of the first encoder level; doubled per level up to 8×.
    pub gen_channels: usize,
    pub disc_channels: usize,
    /// Dropout rate in the inner decoder blocks; 0 disables it.
    pub dropout: f64,
    /// Keep dropout on when translating, as the generator's noise source.
    /// Off makes the generator a pure function of the mask.
    pub inference_dropout: bool,
    pub head: DiscHead,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            image_size: 32,
            gen_channels: 16,
            disc_channels: 16,
            dropout: 0.1,
            inference_dropout: true,
            head: DiscHead::Linear,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "image_size {} must be a power of two >= 8",
                self.image_size
            )));
        }
        if self.gen_channels == 0 || self.disc_channels == 0 {
            return Err(Error::Config("stage-II widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

fn conv(in_ch: usize, out_ch: usize) -> LayerKind {
    LayerKind::Conv {
        in_ch,
        out_ch,
        kernel: 4,
        stride: 2,
        padding: 1,
    }
}

fn up(in_ch: usize, out_ch: usize) -> LayerKind {
    LayerKind::ConvTranspose {
        in_ch,
        out_ch,
        kernel: 4,
        stride: 2,
        padding: 1,
    }
}

/// Encoder `[conv(4, 2, 1) → batch_norm → leaky_relu]` down to 4×4; decoder
/// `[conv_transpose → batch_norm → relu → dropout → concat_skip]` mirrored
/// back to full size, where the input mask itself is the last skip; a 3×3
/// convolution and the `(tanh + 1) / 2` head produce the photo.
pub fn generator_net(cfg: &Stage2Config) -> Result<Network> {
    cfg.validate()?;
    let s = cfg.image_size;
    let levels = s.trailing_zeros() as usize - 2;
    let width = |i: usize| (cfg.gen_channels << i).min(cfg.gen_channels * 8);
    let mut net = Network::new(NetworkKind::Stage2Generator, vec![1, s, s]);
    let mut skips = Vec::with_capacity(levels);
    let mut ch = 1;
    for i in 0..levels {
        net.push(format!("enc{i}"), conv(ch, width(i)));
        if i > 0 {
            net.push(format!("enc{i}_bn"), LayerKind::BatchNorm { channels: width(i) });
        }
        net.push(
            format!("enc{i}_act"),
            LayerKind::Activation(Activation::LeakyRelu { alpha: LEAK }),
        );
        skips.push(net.last_activation());
        ch = width(i);
    }
    for i in (0..levels - 1).rev() {
        let out = width(i);
        net.push(format!("dec{i}"), up(ch, out))
            .push(format!("dec{i}_bn"), LayerKind::BatchNorm { channels: out })
            .push(format!("dec{i}_act"), LayerKind::Activation(Activation::Relu));
        if cfg.dropout > 0.0 {
            net.push(format!("dec{i}_drop"), LayerKind::Dropout { p: cfg.dropout });
        }
        net.push(format!("dec{i}_skip"), LayerKind::ConcatSkip { with: skips[i] });
        ch = 2 * out;
    }
    let out = cfg.gen_channels;
    net.push("full", up(ch, out))
        .push("full_bn", LayerKind::BatchNorm { channels: out })
        .push("full_act", LayerKind::Activation(Activation::Relu))
        .push("full_skip", LayerKind::ConcatSkip { with: 0 })
        .push(
            "out",
            LayerKind::Conv {
                in_ch: out + 1,
                out_ch: 3,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
        )
        .push("out_act", LayerKind::Activation(Activation::TanhUnit));
    net.infer_shapes()?;
    Ok(net)
}

pub fn discriminator_net(cfg: &Stage2Config) -> Result<Network> {
    cfg.validate()?;
    conv_discriminator_net(
        NetworkKind::Stage2Discriminator,
        4,
        cfg.image_size,
        cfg.disc_channels,
        cfg.head,
    )
}

/// `[B, 1, S, S]` mask to `[B, 3, S, S]` photo.
pub fn g2_forward(g: &mut Graph, net: &Network, p: &mut Bound<'_>, mask: Var) -> Result<Var> {
    let ms = g.shape(mask);
    if ms.len() != 4 || ms[1..] != net.input[..] {
        return Err(Error::InvalidShape(format!(
            "generator expects [B, {:?}], got {:?}",
            net.input, ms
        )));
    }
    forward(net, g, p, mask)
}

/// Probability that `photo` is a real rendering of `mask`, per sample.
pub fn d2_forward(g: &mut Graph, net: &Network, p: &mut Bound<'_>, photo: Var, mask: Var) -> Result<Var> {
    let pair = concat_skip(g, photo, mask)?;
    disc_forward(g, net, p, pair)
}

/// `-mean(log d_real) - mean(log(1 - d_fake))`.
pub fn cgan_d_loss(g: &mut Graph, d_real_pair: Var, d_fake_pair: Var) -> Result<Var> {
    crate::stage1::d1_loss(g, d_real_pair, d_fake_pair)
}

/// `-mean(log d_fake) + lambda_l1 · mean|fake - real|`.
pub fn cgan_g_loss(g: &mut Graph, d_fake_pair: Var, fake: Var, real: Var, lambda_l1: f64) -> Result<Var> {
    if !(lambda_l1 >= 0.0) {
        return Err(Error::Config(format!("lambda_l1 {lambda_l1} must be non-negative")));
    }
    if g.value(d_fake_pair).numel() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let adv = mean_log_prob(g, d_fake_pair, false)?;
    let adv = g.scale(adv, -1.0)?;
    if lambda_l1 == 0.0 {
        return Ok(adv);
    }
    let diff = g.sub(fake, real)?;
    let abs = g.abs(diff)?;
    let l1 = g.mean(abs, None)?;
    let l1 = g.scale(l1, lambda_l1)?;
    g.add(adv, l1)
}

#[derive(Clone, Copy, Debug)]
pub struct CganLosses {
    pub d_loss: Var,
    pub g_loss: Var,
}

pub fn cgan_losses(
    g: &mut Graph,
    d_real_pair: Var,
    d_fake_pair: Var,
    fake: Var,
    real: Var,
    lambda_l1: f64,
) -> Result<CganLosses> {
    let g_loss = cgan_g_loss(g, d_fake_pair, fake, real, lambda_l1)?;
    let d_loss = cgan_d_loss(g, d_real_pair, d_fake_pair)?;
    Ok(CganLosses { d_loss, g_loss })
}

const CONFIG_META: &str = "stage2_config";

#[derive(Clone, Debug)]
pub struct Stage2Model {
    pub config: Stage2Config,
    pub gen_net: Network,
    pub disc_net: Network,
    pub gen: ParameterStore,
    pub disc: ParameterStore,
}

impl Stage2Model {
    pub fn init(config: &Stage2Config, seed: u64) -> Result<Self> {
        let gen_net = generator_net(config)?;
        let disc_net = discriminator_net(config)?;
        let mut gen = init_params(&gen_net, rng::derive_seed(seed, "g2"))?;
        let disc = init_params(&disc_net, rng::derive_seed(seed, "d2"))?;
        gen.set_meta(CONFIG_META, serde_json::to_value(config)?);
        Ok(Stage2Model {
            config: config.clone(),
            gen_net,
            disc_net,
            gen,
            disc,
        })
    }

    pub fn translator(&self) -> Translator {
        Translator {
            config: self.config.clone(),
            net: self.gen_net.clone(),
            params: self.gen.clone(),
        }
    }
}

/// The generator half, enough for translation.
#[derive(Clone, Debug)]
pub struct Translator {
    pub config: Stage2Config,
    pub net: Network,
    pub params: ParameterStore,
}

impl Translator {
    pub fn from_store(params: ParameterStore) -> Result<Self> {
        if params.kind() != NetworkKind::Stage2Generator {
            return Err(Error::Config(format!(
                "expected a stage2-generator checkpoint, got {}",
                params.kind().as_str()
            )));
        }
        let config: Stage2Config = serde_json::from_value(
            params
                .meta()
                .get(CONFIG_META)
                .cloned()
                .ok_or_else(|| Error::Config("checkpoint lacks its stage-II config".into()))?,
        )?;
        let net = generator_net(&config)?;
        Ok(Translator { config, net, params })
    }

    /// Translates one mask in eval mode. `noise_seed` drives inference
    /// dropout and is ignored when it is disabled.
    pub fn translate(&self, mask: &SegmentationMask, noise_seed: u64) -> Result<Tensor> {
        let s = self.config.image_size;
        if mask.height() != s || mask.width() != s {
            return Err(Error::InvalidShape(format!(
                "mask {}x{} does not match image_size {s}",
                mask.height(),
                mask.width()
            )));
        }
        let mut g = Graph::new();
        let m = g.constant(mask.tensor().clone().reshape(&[1, 1, s, s])?);
        let mut p = Bound::new(&mut g, &self.params, Mode::Eval, false);
        if self.config.inference_dropout && self.config.dropout > 0.0 {
            p.set_dropout(rng::rng_from_seed(noise_seed));
        }
        let y = g2_forward(&mut g, &self.net, &mut p, m)?;
        g.value(y).batch_item(0)
    }
}

/// One synthetic pair per mask, ids `syn-0000`, `syn-0001`, ...
pub fn translate_dataset(masks: &[SegmentationMask], translator: &Translator, seed: u64) -> Result<Vec<PairedSample>> {
    masks
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let photo = translator.translate(m, rng::derive_index(seed, i as u64))?;
            PairedSample::new(format!("syn-{i:04}"), m.clone(), photo)
        })
        .collect()
}

fn stack_masks(pairs: &[PairedSample], idx: &[usize]) -> Result<Tensor> {
    Tensor::stack(&idx.iter().map(|&i| pairs[i].mask.tensor()).collect::<Vec<_>>())
}

fn stack_photos(pairs: &[PairedSample], idx: &[usize]) -> Result<Tensor> {
    Tensor::stack(&idx.iter().map(|&i| &pairs[i].photo).collect::<Vec<_>>())
}

/// Adversarial plus L1 training on real mask/photo pairs.
pub fn train_stage2(
    pairs: &[PairedSample],
    config: &Stage2Config,
    train: &TrainConfig,
    hook: Option<EpochHook<'_>>,
) -> Result<(Stage2Model, AdversarialHistory)> {
    config.validate()?;
    if train.lambda_l1 < 0.0 {
        return Err(Error::Config("lambda_l1 must be non-negative".into()));
    }
    let s = config.image_size;
    if let Some(bad) = pairs.iter().find(|p| p.mask.height() != s || p.mask.width() != s) {
        return Err(Error::InvalidShape(format!(
            "pair {} is not {s}x{s}",
            bad.id
        )));
    }
    let mut model = Stage2Model::init(config, train.seed)?;
    let (gen_net, disc_net) = (model.gen_net.clone(), model.disc_net.clone());
    let lambda = train.lambda_l1;
    let d_step = |g: &mut Graph, gb: &mut Bound<'_>, db: &mut Bound<'_>, idx: &[usize], r: &mut ChaCha8Rng| {
        let mask = g.constant(stack_masks(pairs, idx)?);
        let photo = g.constant(stack_photos(pairs, idx)?);
        gb.set_dropout(r.clone());
        let fake = g2_forward(g, &gen_net, gb, mask)?;
        let detached = g.value(fake).clone();
        let fake = g.constant(detached);
        let dr = d2_forward(g, &disc_net, db, photo, mask)?;
        let df = d2_forward(g, &disc_net, db, fake, mask)?;
        cgan_d_loss(g, dr, df)
    };
    let g_step = |g: &mut Graph, gb: &mut Bound<'_>, db: &mut Bound<'_>, idx: &[usize], r: &mut ChaCha8Rng| {
        let mask = g.constant(stack_masks(pairs, idx)?);
        let photo = g.constant(stack_photos(pairs, idx)?);
        gb.set_dropout(r.clone());
        let fake = g2_forward(g, &gen_net, gb, mask)?;
        let df = d2_forward(g, &disc_net, db, fake, mask)?;
        cgan_g_loss(g, df, fake, photo, lambda)
    };
    let history = train_adversarial(
        &mut model.gen,
        &mut model.disc,
        d_step,
        g_step,
        pairs.len(),
        train,
        hook,
    )?;
    Ok((model, history))
}
