//! Stage-I: a DCGAN-style generator mapping noise to segmentation masks, its
//! discriminator, and the adversarial losses.

use serde::{Deserialize, Serialize};

use crate::data::SegmentationMask;
use crate::error::{Error, Result};
use crate::nn::{
    forward, init_params, mean_log_prob, Activation, Bound, LayerKind, Mode, Network,
    NetworkKind, ParameterStore,
};
use crate::optim::{train_adversarial, AdversarialHistory, EpochHook, TrainConfig};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};

pub const LEAK: f64 = 0.2;

/// How the generator maps its last feature map onto `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    /// `(tanh + 1) / 2`.
    #[default]
    Tanh,
    Sigmoid,
}

impl OutputHead {
    fn activation(self) -> Activation {
        match self {
            OutputHead::Tanh => Activation::TanhUnit,
            OutputHead::Sigmoid => Activation::Sigmoid,
        }
    }
}

/// Discriminator head applied to the final 4×4 feature map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscHead {
    /// Flatten, dense layer to one logit.
    #[default]
    Linear,
    /// A 4×4 valid convolution to one logit.
    Conv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenLoss {
    /// `-mean(log D(G(z)))`.
    #[default]
    NonSaturating,
    /// `mean(log(1 - D(G(z))))`.
    Saturating,
}

/// Architecture of a noise-to-image GAN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub image_size: usize,
    pub noise_dim: usize,
    /// 1 for masks; 3 when the same GAN is trained directly on photos.
    pub channels: usize,
    /// Channels of the 4×4 projection; halved at every doubling.
    pub gen_channels: usize,
    /// Channels of the first discriminator block; doubled at every halving.
    pub disc_channels: usize,
    pub output: OutputHead,
    pub head: DiscHead,
    pub gen_loss: GenLoss,
    /// Standard deviation of Gaussian noise added to every discriminator
    /// input during training; 0 disables it.
    pub instance_noise: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            image_size: 32,
            noise_dim: 64,
            channels: 1,
            gen_channels: 64,
            disc_channels: 16,
            output: OutputHead::Tanh,
            head: DiscHead::Linear,
            gen_loss: GenLoss::NonSaturating,
            instance_noise: 0.0,
        }
    }
}

/// Number of doublings from 4 to `size`.
fn doublings(size: usize) -> Result<usize> {
    if size < 8 || !size.is_power_of_two() {
        return Err(Error::Config(format!(
            "image_size {size} is not reachable by doublings from 4"
        )));
    }
    Ok(size.trailing_zeros() as usize - 2)
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        doublings(self.image_size)?;
        if !(self.instance_noise >= 0.0) {
            return Err(Error::Config("instance_noise must be non-negative".into()));
        }
        if self.noise_dim == 0 || self.channels == 0 || self.gen_channels == 0 || self.disc_channels == 0 {
            return Err(Error::Config("stage-I widths must be positive".into()));
        }
        Ok(())
    }
}

fn leaky() -> LayerKind {
    LayerKind::Activation(Activation::LeakyRelu { alpha: LEAK })
}

/// Linear projection to 4×4, then `[conv_transpose(4, 2, 1) → batch_norm →
/// leaky_relu]` up to half the image size, then a final transposed
/// convolution to `channels` and the output head.
pub fn generator_net(cfg: &Stage1Config) -> Result<Network> {
    cfg.validate()?;
    let n = doublings(cfg.image_size)?;
    let mut net = Network::new(NetworkKind::Stage1Generator, vec![cfg.noise_dim]);
    let mut ch = cfg.gen_channels;
    net.push(
        "project",
        LayerKind::FlattenLinear {
            in_features: cfg.noise_dim,
            out_features: ch * 16,
            reshape: Some(vec![ch, 4, 4]),
        },
    )
    .push("project_bn", LayerKind::BatchNorm { channels: ch })
    .push("project_act", leaky());
    for i in 0..n - 1 {
        let out = (ch / 2).max(1);
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
        .push(format!("up{i}_act"), leaky());
        ch = out;
    }
    net.push(
        "out",
        LayerKind::ConvTranspose {
            in_ch: ch,
            out_ch: cfg.channels,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
    )
    .push("out_act", LayerKind::Activation(cfg.output.activation()));
    net.infer_shapes()?;
    Ok(net)
}

/// `[conv(4, 2, 1) → batch_norm → leaky_relu]` down to 4×4 (no batch norm on
/// the first block), then the head and a sigmoid. Shared with the Stage-II
/// discriminator, which sees four input channels.
pub fn conv_discriminator_net(
    kind: NetworkKind,
    in_channels: usize,
    image_size: usize,
    base: usize,
    head: DiscHead,
) -> Result<Network> {
    let n = doublings(image_size)?;
    let mut net = Network::new(kind, vec![in_channels, image_size, image_size]);
    let mut ch = in_channels;
    for i in 0..n {
        let out = base << i;
        net.push(
            format!("down{i}"),
            LayerKind::Conv {
                in_ch: ch,
                out_ch: out,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
        );
        if i > 0 {
            net.push(format!("down{i}_bn"), LayerKind::BatchNorm { channels: out });
        }
        net.push(format!("down{i}_act"), leaky());
        ch = out;
    }
    match head {
        DiscHead::Linear => net.push(
            "head",
            LayerKind::FlattenLinear {
                in_features: ch * 16,
                out_features: 1,
                reshape: None,
            },
        ),
        DiscHead::Conv => net.push(
            "head",
            LayerKind::Conv {
                in_ch: ch,
                out_ch: 1,
                kernel: 4,
                stride: 1,
                padding: 0,
            },
        ),
    };
    net.push("head_act", LayerKind::Activation(Activation::Sigmoid));
    net.infer_shapes()?;
    Ok(net)
}

pub fn discriminator_net(cfg: &Stage1Config) -> Result<Network> {
    cfg.validate()?;
    conv_discriminator_net(
        NetworkKind::Stage1Discriminator,
        cfg.channels,
        cfg.image_size,
        cfg.disc_channels,
        cfg.head,
    )
}

/// Generator forward: `z` is `[B, noise_dim]`, the result `[B, C, S, S]`.
pub fn g1_forward(g: &mut Graph, net: &Network, p: &mut Bound<'_>, z: Var) -> Result<Var> {
    let zs = g.shape(z);
    if zs.len() != 2 || zs[1] != net.input[0] {
        return Err(Error::InvalidShape(format!(
            "noise {:?} does not match noise_dim {}",
            zs, net.input[0]
        )));
    }
    forward(net, g, p, z)
}

/// Any downsampling discriminator forward; returns `[B]` probabilities.
pub fn disc_forward(g: &mut Graph, net: &Network, p: &mut Bound<'_>, x: Var) -> Result<Var> {
    let xs = g.shape(x);
    if xs.len() != 4 || xs[1..] != net.input[..] {
        return Err(Error::InvalidShape(format!(
            "discriminator expects [B, {:?}], got {:?}",
            net.input, xs
        )));
    }
    let b = xs[0];
    let y = forward(net, g, p, x)?;
    g.reshape(y, &[b])
}

pub fn d1_forward(g: &mut Graph, net: &Network, p: &mut Bound<'_>, x: Var) -> Result<Var> {
    disc_forward(g, net, p, x)
}

/// `-mean(log d_real) - mean(log(1 - d_fake))`.
pub fn d1_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    if g.shape(d_real) != g.shape(d_fake) {
        return Err(Error::Contract(format!(
            "d_real {:?} and d_fake {:?} differ in length",
            g.shape(d_real),
            g.shape(d_fake)
        )));
    }
    if g.value(d_real).numel() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let real = mean_log_prob(g, d_real, false)?;
    let fake = mean_log_prob(g, d_fake, true)?;
    let s = g.add(real, fake)?;
    g.scale(s, -1.0)
}

pub fn g1_loss(g: &mut Graph, d_fake: Var, kind: GenLoss) -> Result<Var> {
    if g.value(d_fake).numel() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    match kind {
        GenLoss::NonSaturating => {
            let l = mean_log_prob(g, d_fake, false)?;
            g.scale(l, -1.0)
        }
        GenLoss::Saturating => mean_log_prob(g, d_fake, true),
    }
}

/// `[count, noise_dim]` standard normal noise; row `i` depends only on
/// `(seed, i)`.
pub fn noise(seed: u64, start: usize, count: usize, noise_dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(count * noise_dim);
    for i in start..start + count {
        let mut r = rng::rng_from_seed(rng::derive_index(seed, i as u64));
        data.extend(rng::normal_vec(&mut r, noise_dim));
    }
    Tensor::new(&[count, noise_dim], data).expect("sized")
}

/// Adds `N(0, std²)` noise drawn from `r` to a discriminator input.
pub fn with_instance_noise(g: &mut Graph, x: Var, std: f64, r: &mut rand_chacha::ChaCha8Rng) -> Result<Var> {
    if std == 0.0 {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let n = shape.iter().product();
    let eps = rng::normal_vec(r, n).into_iter().map(|v| v * std).collect();
    let eps = g.constant(Tensor::new(&shape, eps)?);
    g.add(x, eps)
}

/// A trained or freshly initialised generator/discriminator pair.
#[derive(Clone, Debug)]
pub struct Stage1Model {
    pub config: Stage1Config,
    pub gen_net: Network,
    pub disc_net: Network,
    pub gen: ParameterStore,
    pub disc: ParameterStore,
}

const CONFIG_META: &str = "stage1_config";

impl Stage1Model {
    pub fn init(config: &Stage1Config, seed: u64) -> Result<Self> {
        let gen_net = generator_net(config)?;
        let disc_net = discriminator_net(config)?;
        let mut gen = init_params(&gen_net, rng::derive_seed(seed, "g1"))?;
        let disc = init_params(&disc_net, rng::derive_seed(seed, "d1"))?;
        gen.set_meta(CONFIG_META, serde_json::to_value(config)?);
        Ok(Stage1Model {
            config: config.clone(),
            gen_net,
            disc_net,
            gen,
            disc,
        })
    }
}

/// The generator half, enough for sampling.
#[derive(Clone, Debug)]
pub struct MaskSampler {
    pub config: Stage1Config,
    pub net: Network,
    pub params: ParameterStore,
}

impl MaskSampler {
    /// Rebuilds the architecture recorded in a generator checkpoint.
    pub fn from_store(params: ParameterStore) -> Result<Self> {
        if params.kind() != NetworkKind::Stage1Generator {
            return Err(Error::Config(format!(
                "expected a stage1-generator checkpoint, got {}",
                params.kind().as_str()
            )));
        }
        let config: Stage1Config = serde_json::from_value(
            params
                .meta()
                .get(CONFIG_META)
                .cloned()
                .ok_or_else(|| Error::Config("checkpoint lacks its stage-I config".into()))?,
        )?;
        let net = generator_net(&config)?;
        Ok(MaskSampler { config, net, params })
    }

    /// Generates `count` images in eval mode, in chunks of `chunk`.
    pub fn sample_images(&self, count: usize, seed: u64) -> Result<Vec<Tensor>> {
        const CHUNK: usize = 32;
        let mut out = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let n = CHUNK.min(count - start);
            let mut g = Graph::new();
            let z = g.constant(noise(seed, start, n, self.config.noise_dim));
            let mut p = Bound::new(&mut g, &self.params, Mode::Eval, false);
            let y = g1_forward(&mut g, &self.net, &mut p, z)?;
            let y = g.value(y);
            for i in 0..n {
                out.push(y.batch_item(i)?);
            }
            start += n;
        }
        Ok(out)
    }

    pub fn sample_masks(&self, count: usize, seed: u64) -> Result<Vec<SegmentationMask>> {
        if self.config.channels != 1 {
            return Err(Error::Config("this generator does not produce masks".into()));
        }
        self.sample_images(count, seed)?
            .into_iter()
            .map(SegmentationMask::new)
            .collect()
    }
}

impl From<&Stage1Model> for MaskSampler {
    fn from(m: &Stage1Model) -> Self {
        MaskSampler {
            config: m.config.clone(),
            net: m.gen_net.clone(),
            params: m.gen.clone(),
        }
    }
}

/// Soft masks from fresh noise; `count` may exceed the training set size.
pub fn sample_masks(sampler: &MaskSampler, count: usize, seed: u64) -> Result<Vec<SegmentationMask>> {
    sampler.sample_masks(count, seed)
}

/// Trains the GAN on `[C, S, S]` images (masks or, for the single-GAN
/// baseline, photos).
pub fn train_stage1(
    images: &[Tensor],
    config: &Stage1Config,
    train: &TrainConfig,
    hook: Option<EpochHook<'_>>,
) -> Result<(Stage1Model, AdversarialHistory)> {
    config.validate()?;
    let want = [config.channels, config.image_size, config.image_size];
    if let Some(bad) = images.iter().find(|t| t.shape() != want) {
        return Err(Error::InvalidShape(format!(
            "training image {:?} does not match {:?}",
            bad.shape(),
            want
        )));
    }
    let mut model = Stage1Model::init(config, train.seed)?;
    let real_batch = |idx: &[usize]| -> Result<Tensor> {
        Tensor::stack(&idx.iter().map(|&i| &images[i]).collect::<Vec<_>>())
    };
    let noise_batch = |n: usize, r: &mut rand_chacha::ChaCha8Rng| {
        Tensor::new(&[n, config.noise_dim], rng::normal_vec(r, n * config.noise_dim)).expect("sized")
    };
    let (gen_net, disc_net) = (model.gen_net.clone(), model.disc_net.clone());
    let gen_loss = config.gen_loss;
    let sigma = config.instance_noise;
    let d_step = |g: &mut Graph, gb: &mut Bound<'_>, db: &mut Bound<'_>, idx: &[usize], r: &mut rand_chacha::ChaCha8Rng| {
        let real = g.constant(real_batch(idx)?);
        let z = g.constant(noise_batch(idx.len(), r));
        let fake = g1_forward(g, &gen_net, gb, z)?;
        let detached = g.value(fake).clone();
        let fake = g.constant(detached);
        let real = with_instance_noise(g, real, sigma, r)?;
        let fake = with_instance_noise(g, fake, sigma, r)?;
        let dr = disc_forward(g, &disc_net, db, real)?;
        let df = disc_forward(g, &disc_net, db, fake)?;
        d1_loss(g, dr, df)
    };
    let g_step = |g: &mut Graph, gb: &mut Bound<'_>, db: &mut Bound<'_>, idx: &[usize], r: &mut rand_chacha::ChaCha8Rng| {
        let z = g.constant(noise_batch(idx.len(), r));
        let fake = g1_forward(g, &gen_net, gb, z)?;
        let fake = with_instance_noise(g, fake, sigma, r)?;
        let df = disc_forward(g, &disc_net, db, fake)?;
        g1_loss(g, df, gen_loss)
    };
    let history = train_adversarial(
        &mut model.gen,
        &mut model.disc,
        d_step,
        g_step,
        images.len(),
        train,
        hook,
    )?;
    Ok((model, history))
}
