//! Finite-difference suites over every primitive and the composed losses.

use geomsynth::nn::{init_params_with_std, Bound, Mode, ParameterStore};
use geomsynth::rng::rng_from_seed;
use geomsynth::segmenter::{seg_loss, unet_forward, unet_net, UnetSpec};
use geomsynth::stage1::{self, d1_forward, d1_loss, g1_forward, g1_loss, GenLoss, Stage1Config};
use geomsynth::stage2::{self, cgan_d_loss, cgan_g_loss, d2_forward, g2_forward, Stage2Config};
use geomsynth::tensor::{grad_check, GradCheckReport};
use geomsynth::{Graph, Result, Tensor, Var};

use super::{rand_tensor, rand_unit};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

type Check = (&'static str, GradCheckReport);

fn check<F>(name: &'static str, f: F, params: &[Tensor]) -> Check
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    (name, grad_check(f, params, H, TOL).expect(name))
}

/// Weighted sum so that every output element gets a distinct upstream gradient.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(rand_tensor(seed, g.shape(y)));
    let p = g.mul(y, w)?;
    g.sum(p)
}

pub fn primitive_checks() -> Vec<Check> {
    let a = rand_tensor(1, &[2, 3, 4]);
    let b = rand_tensor(2, &[2, 3, 4]);
    let pos = rand_unit(3, &[2, 3, 4]).data().iter().map(|v| v + 0.5).collect();
    let pos = Tensor::new(&[2, 3, 4], pos).unwrap();
    let x4 = rand_tensor(4, &[2, 3, 5, 5]);
    vec![
        check("add", |g, v| { let y = g.add(v[0], v[1])?; probe(g, y, 10) }, &[a.clone(), b.clone()]),
        check("sub", |g, v| { let y = g.sub(v[0], v[1])?; probe(g, y, 11) }, &[a.clone(), b.clone()]),
        check("mul", |g, v| { let y = g.mul(v[0], v[1])?; probe(g, y, 12) }, &[a.clone(), b.clone()]),
        check("scale", |g, v| { let y = g.scale(v[0], -1.7)?; probe(g, y, 13) }, &[a.clone()]),
        check("add_scalar", |g, v| { let y = g.add_scalar(v[0], 0.3)?; probe(g, y, 14) }, &[a.clone()]),
        check("leaky_relu", |g, v| { let y = g.leaky_relu(v[0], 0.2)?; probe(g, y, 15) }, &[a.clone()]),
        check("sigmoid", |g, v| { let y = g.sigmoid(v[0])?; probe(g, y, 16) }, &[a.clone()]),
        check("tanh", |g, v| { let y = g.tanh(v[0])?; probe(g, y, 17) }, &[a.clone()]),
        check("log", |g, v| { let y = g.log(v[0])?; probe(g, y, 18) }, &[pos]),
        check("abs", |g, v| { let y = g.abs(v[0])?; probe(g, y, 19) }, &[a.clone()]),
        check("clamp", |g, v| { let y = g.clamp(v[0], -0.5, 0.5)?; probe(g, y, 20) }, &[a.clone()]),
        check(
            "mul_const",
            |g, v| {
                let y = g.mul_const(v[0], rand_tensor(21, &[24]).into_data())?;
                probe(g, y, 22)
            },
            &[a.clone()],
        ),
        check("sum", |g, v| g.sum(v[0]), &[a.clone()]),
        check("mean_all", |g, v| g.mean(v[0], None), &[a.clone()]),
        check("mean_axes", |g, v| { let y = g.mean(v[0], Some(&[0, 2]))?; probe(g, y, 23) }, &[a.clone()]),
        check("reshape", |g, v| { let y = g.reshape(v[0], &[6, 4])?; probe(g, y, 24) }, &[a]),
        check(
            "concat_channels",
            |g, v| { let y = g.concat_channels(v[0], v[1])?; probe(g, y, 25) },
            &[rand_tensor(26, &[2, 2, 4, 4]), rand_tensor(27, &[2, 3, 4, 4])],
        ),
        check(
            "conv2d",
            |g, v| { let y = g.conv2d(v[0], v[1], v[2], 2, 1)?; probe(g, y, 28) },
            &[x4.clone(), rand_tensor(29, &[4, 3, 3, 3]), rand_tensor(30, &[4])],
        ),
        check(
            "conv_transpose2d",
            |g, v| { let y = g.conv_transpose2d(v[0], v[1], v[2], 2, 1)?; probe(g, y, 31) },
            &[x4.clone(), rand_tensor(32, &[3, 2, 4, 4]), rand_tensor(33, &[2])],
        ),
        check(
            "linear",
            |g, v| { let y = g.linear(v[0], v[1], v[2])?; probe(g, y, 34) },
            &[rand_tensor(35, &[3, 5]), rand_tensor(36, &[4, 5]), rand_tensor(37, &[4])],
        ),
        check(
            "batch_norm_train",
            |g, v| { let (y, _, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, None)?; probe(g, y, 38) },
            &[rand_tensor(39, &[2, 3, 4, 4]), rand_tensor(40, &[3]), rand_tensor(41, &[3])],
        ),
        check(
            "batch_norm_eval",
            |g, v| {
                let (m, var) = ([0.1, -0.2, 0.3], [0.5, 1.5, 0.9]);
                let (y, _, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, Some((&m, &var)))?;
                probe(g, y, 42)
            },
            &[rand_tensor(43, &[2, 3, 4, 4]), rand_tensor(44, &[3]), rand_tensor(45, &[3])],
        ),
        check(
            "conv2d∘leaky_relu∘conv_transpose2d",
            |g, v| {
                let up = g.conv_transpose2d(v[0], v[1], v[2], 2, 1)?;
                let a = g.leaky_relu(up, 0.2)?;
                let y = g.conv2d(a, v[3], v[4], 2, 1)?;
                g.mean(y, None)
            },
            &[
                rand_tensor(46, &[1, 1, 4, 4]),
                rand_tensor(47, &[1, 2, 4, 4]),
                rand_tensor(48, &[2]),
                rand_tensor(49, &[1, 2, 4, 4]),
                rand_tensor(50, &[1]),
            ],
        ),
    ]
}

/// Concatenates the parameters of several stores in store order.
fn flatten(stores: &[&ParameterStore]) -> Vec<Tensor> {
    stores
        .iter()
        .flat_map(|s| s.params().map(|(_, t)| t.clone()))
        .collect()
}

fn stage1_setup() -> (Stage1Config, geomsynth::nn::Network, geomsynth::nn::Network, ParameterStore, ParameterStore) {
    let cfg = Stage1Config {
        image_size: 16,
        noise_dim: 4,
        gen_channels: 4,
        disc_channels: 2,
        ..Stage1Config::default()
    };
    let gn = stage1::generator_net(&cfg).unwrap();
    let dn = stage1::discriminator_net(&cfg).unwrap();
    let gs = init_params_with_std(&gn, 1, 0.3).unwrap();
    let ds = init_params_with_std(&dn, 2, 0.3).unwrap();
    (cfg, gn, dn, gs, ds)
}

pub fn composed_checks() -> Vec<Check> {
    let mut out = Vec::new();

    let (cfg, gn, dn, gs, ds) = stage1_setup();
    let z = stage1::noise(3, 0, 2, cfg.noise_dim);
    let real = rand_unit(4, &[2, 1, 16, 16]);
    let ng = gs.len();
    let fwd = |g: &mut Graph, v: &[Var]| -> Result<(Var, Var)> {
        let mut pg = Bound::from_vars(&gs, &v[..ng], Mode::Train)?;
        let zv = g.constant(z.clone());
        let fake = g1_forward(g, &gn, &mut pg, zv)?;
        let rv = g.constant(real.clone());
        let mut pd = Bound::from_vars(&ds, &v[ng..], Mode::Train)?;
        let dr = d1_forward(g, &dn, &mut pd, rv)?;
        let df = d1_forward(g, &dn, &mut pd, fake)?;
        Ok((dr, df))
    };
    let params = flatten(&[&gs, &ds]);
    out.push(check(
        "d1_loss∘d1∘g1",
        |g, v| {
            let (dr, df) = fwd(g, v)?;
            d1_loss(g, dr, df)
        },
        &params,
    ));
    out.push(check(
        "g1_loss∘d1∘g1",
        |g, v| {
            let (_, df) = fwd(g, v)?;
            g1_loss(g, df, GenLoss::NonSaturating)
        },
        &params,
    ));

    let cfg2 = Stage2Config {
        image_size: 16,
        gen_channels: 2,
        disc_channels: 2,
        ..Stage2Config::default()
    };
    let g2n = stage2::generator_net(&cfg2).unwrap();
    let d2n = stage2::discriminator_net(&cfg2).unwrap();
    let g2s = init_params_with_std(&g2n, 5, 0.3).unwrap();
    let d2s = init_params_with_std(&d2n, 6, 0.3).unwrap();
    let mask = rand_unit(7, &[2, 1, 16, 16]);
    let photo = rand_unit(8, &[2, 3, 16, 16]);
    let ng2 = g2s.len();
    let fwd2 = |g: &mut Graph, v: &[Var]| -> Result<(Var, Var, Var)> {
        // Dropout masks are redrawn from the same seed on every evaluation.
        let mut pg = Bound::from_vars(&g2s, &v[..ng2], Mode::Train)?.with_dropout(rng_from_seed(9));
        let mv = g.constant(mask.clone());
        let fake = g2_forward(g, &g2n, &mut pg, mv)?;
        let pv = g.constant(photo.clone());
        let mut pd = Bound::from_vars(&d2s, &v[ng2..], Mode::Train)?;
        let dr = d2_forward(g, &d2n, &mut pd, pv, mv)?;
        let df = d2_forward(g, &d2n, &mut pd, fake, mv)?;
        Ok((dr, df, fake))
    };
    let params2 = flatten(&[&g2s, &d2s]);
    out.push(check(
        "cgan d_loss∘d2∘g2",
        |g, v| {
            let (dr, df, _) = fwd2(g, v)?;
            cgan_d_loss(g, dr, df)
        },
        &params2,
    ));
    out.push(check(
        "cgan g_loss∘d2∘g2",
        |g, v| {
            let (_, df, fake) = fwd2(g, v)?;
            let rv = g.constant(photo.clone());
            cgan_g_loss(g, df, fake, rv, 100.0)
        },
        &params2,
    ));

    let spec = UnetSpec {
        depth: 2,
        base_channels: 2,
    };
    let un = unet_net(&spec, 16).unwrap();
    let us = init_params_with_std(&un, 10, 0.3).unwrap();
    let target = Tensor::from_fn(&[2, 1, 16, 16], |i| ((i * 7 + i / 5) % 3 == 0) as u8 as f64);
    out.push(check(
        "seg_loss∘unet",
        |g, v| {
            let mut p = Bound::from_vars(&us, v, Mode::Train)?;
            let x = g.constant(photo.clone());
            let pred = unet_forward(g, &un, &mut p, x)?;
            seg_loss(g, pred, &target)
        },
        &flatten(&[&us]),
    ));
    out
}
