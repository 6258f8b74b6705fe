mod common;

use std::f64::consts::LN_2;

use common::rand_unit;
use geomsynth::nn::{init_params, Bound, Mode};
use geomsynth::optim::{adam_step, AdamState};
use geomsynth::stage1::{
    self, d1_forward, d1_loss, g1_forward, g1_loss, noise, sample_masks, train_stage1, GenLoss, MaskSampler,
    Stage1Config, Stage1Model,
};
use geomsynth::optim::TrainConfig;
use geomsynth::{Error, Graph, Tensor};

fn loss_of(d_real: &[f64], d_fake: &[f64]) -> geomsynth::Result<f64> {
    let mut g = Graph::new();
    let r = g.constant(Tensor::new(&[d_real.len()], d_real.to_vec())?);
    let f = g.constant(Tensor::new(&[d_fake.len()], d_fake.to_vec())?);
    let l = d1_loss(&mut g, r, f)?;
    g.value(l).item()
}

fn gen_loss_of(d_fake: &[f64], kind: GenLoss) -> geomsynth::Result<f64> {
    let mut g = Graph::new();
    let f = g.constant(Tensor::new(&[d_fake.len()], d_fake.to_vec())?);
    let l = g1_loss(&mut g, f, kind)?;
    g.value(l).item()
}

/// Cross-entropy written out with plain floats.
fn d_oracle(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let m = d_real.len() as f64;
    -(d_real.iter().map(|p| p.ln()).sum::<f64>() + d_fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>()) / m
}

#[test]
fn discriminator_loss_examples() {
    assert!((loss_of(&[0.5; 4], &[0.5; 4]).unwrap() - 2.0 * LN_2).abs() < 1e-12);
    let perfect = loss_of(&[1.0 - 1e-7], &[1e-7]).unwrap();
    assert!((perfect - 2e-7).abs() < 1e-12, "{perfect}");
    // Saturated inputs are clamped instead of producing infinities.
    assert!((loss_of(&[1.0], &[0.0]).unwrap() - perfect).abs() < 1e-15);

    let (r, f) = ([0.9, 0.8], [0.2, 0.3]);
    let v = loss_of(&r, &f).unwrap();
    assert!((v - d_oracle(&r, &f)).abs() < 1e-12);
    assert!((v - 0.45416).abs() < 1e-5, "{v}");

    assert!(matches!(loss_of(&[0.5, 0.5], &[0.5]), Err(Error::Contract(_))));
    assert!(matches!(loss_of(&[], &[]), Err(Error::Contract(_))));
}

#[test]
fn generator_loss_examples() {
    assert!((gen_loss_of(&[0.5], GenLoss::NonSaturating).unwrap() - LN_2).abs() < 1e-12);
    assert!((gen_loss_of(&[0.5], GenLoss::Saturating).unwrap() + LN_2).abs() < 1e-12);
    let v = gen_loss_of(&[0.25, 0.75], GenLoss::NonSaturating).unwrap();
    assert!((v - -(0.25f64.ln() + 0.75f64.ln()) / 2.0).abs() < 1e-12);
    assert!((v - 0.8370).abs() < 1e-4);
    assert!(matches!(gen_loss_of(&[], GenLoss::NonSaturating), Err(Error::Contract(_))));

    // Saturating form is non-positive and decreasing in d_fake.
    let vals: Vec<f64> = [0.1, 0.4, 0.7, 0.9]
        .iter()
        .map(|&p| gen_loss_of(&[p], GenLoss::Saturating).unwrap())
        .collect();
    assert!(vals.iter().all(|&v| v <= 0.0));
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
}

fn forward_g1(model: &Stage1Model, z: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let mut p = Bound::new(&mut g, &model.gen, Mode::Train, false);
    let y = g1_forward(&mut g, &model.gen_net, &mut p, zv).unwrap();
    g.value(y).clone()
}

#[test]
fn generator_contract() {
    let cfg = Stage1Config::default();
    let model = Stage1Model::init(&cfg, 0).unwrap();
    let z = noise(1, 0, 2, 64);
    let y = forward_g1(&model, &z);
    assert_eq!(y.shape(), &[2, 1, 32, 32]);
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(y, forward_g1(&model, &z));

    let mut g = Graph::new();
    let bad = g.constant(noise(1, 0, 2, 63));
    let mut p = Bound::new(&mut g, &model.gen, Mode::Train, false);
    assert!(matches!(g1_forward(&mut g, &model.gen_net, &mut p, bad), Err(Error::InvalidShape(_))));

    for size in [4, 24, 48] {
        let c = Stage1Config {
            image_size: size,
            ..Stage1Config::default()
        };
        assert!(matches!(stage1::generator_net(&c), Err(Error::Config(_))), "{size}");
    }
}

#[test]
fn untrained_generator_output_is_mid_gray() {
    let cfg = Stage1Config::default();
    let net = stage1::generator_net(&cfg).unwrap();
    for seed in 0..100 {
        let store = init_params(&net, seed).unwrap();
        let mut g = Graph::new();
        let z = g.constant(noise(seed, 0, 2, cfg.noise_dim));
        let mut p = Bound::new(&mut g, &store, Mode::Train, false);
        let y = g1_forward(&mut g, &net, &mut p, z).unwrap();
        let m = g.value(y).mean();
        assert!(m > 0.2 && m < 0.8, "seed {seed}: mean {m}");
    }
}

#[test]
fn discriminator_contract() {
    let model = Stage1Model::init(&Stage1Config::default(), 3).unwrap();
    let x = rand_unit(4, &[5, 1, 32, 32]);
    let run = || {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut p = Bound::new(&mut g, &model.disc, Mode::Train, false);
        let y = d1_forward(&mut g, &model.disc_net, &mut p, xv).unwrap();
        g.value(y).clone()
    };
    let y = run();
    assert_eq!(y.shape(), &[5]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(y, run());

    let mut g = Graph::new();
    let bad = g.constant(rand_unit(4, &[5, 1, 16, 16]));
    let mut p = Bound::new(&mut g, &model.disc, Mode::Train, false);
    assert!(matches!(d1_forward(&mut g, &model.disc_net, &mut p, bad), Err(Error::InvalidShape(_))));
}

#[test]
fn one_discriminator_step_does_not_increase_its_loss() {
    let cfg = Stage1Config {
        image_size: 16,
        noise_dim: 8,
        gen_channels: 8,
        disc_channels: 4,
        ..Stage1Config::default()
    };
    let mut model = Stage1Model::init(&cfg, 5).unwrap();
    let real = rand_unit(6, &[8, 1, 16, 16]);
    let mut g = Graph::new();
    let z = g.constant(noise(7, 0, 8, 8));
    let mut pg = Bound::new(&mut g, &model.gen, Mode::Train, false);
    let fake = g1_forward(&mut g, &model.gen_net, &mut pg, z).unwrap();
    let fake = g.value(fake).clone();

    let loss = |disc: &geomsynth::nn::ParameterStore, grads: bool| {
        let mut g = Graph::new();
        let mut p = Bound::new(&mut g, disc, Mode::Train, grads);
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let dr = d1_forward(&mut g, &model.disc_net, &mut p, r).unwrap();
        let df = d1_forward(&mut g, &model.disc_net, &mut p, f).unwrap();
        let l = d1_loss(&mut g, dr, df).unwrap();
        let v = g.value(l).item().unwrap();
        if grads {
            g.backward(l).unwrap();
        }
        (v, g, p.finish())
    };
    let (before, graph, out) = loss(&model.disc, true);
    model.disc.absorb_grads(&graph, &out.vars).unwrap();
    let mut opt = AdamState::new(&model.disc, 1e-4, 0.5, 0.999);
    adam_step(&mut model.disc, &mut opt).unwrap();
    let (after, _, _) = loss(&model.disc, false);
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn sampling_contract() {
    let cfg = Stage1Config {
        image_size: 16,
        noise_dim: 8,
        gen_channels: 8,
        disc_channels: 4,
        ..Stage1Config::default()
    };
    let train = TrainConfig {
        batch_size: 16,
        epochs: 2,
        image_size: 16,
        noise_dim: 8,
        seed: 1,
        ..TrainConfig::default()
    };
    let images: Vec<Tensor> = (0..64).map(|i| rand_unit(100 + i, &[1, 16, 16])).collect();
    let (model, history) = train_stage1(&images, &cfg, &train, None).unwrap();
    assert_eq!(history.epochs.len(), 2);
    let sampler = MaskSampler::from(&model);
    assert!(sample_masks(&sampler, 0, 3).unwrap().is_empty());
    let masks = sample_masks(&sampler, 100, 3).unwrap();
    assert_eq!(masks.len(), 100);
    assert_eq!(masks, sample_masks(&sampler, 100, 3).unwrap());
    assert_ne!(masks, sample_masks(&sampler, 100, 4).unwrap());
    // Row i of the noise depends only on (seed, i), so chunking is invisible.
    assert_eq!(masks[40], sample_masks(&sampler, 41, 3).unwrap()[40]);

    let (again, h2) = train_stage1(&images, &cfg, &train, None).unwrap();
    assert_eq!(history, h2);
    assert_eq!(model.gen, again.gen);
}
