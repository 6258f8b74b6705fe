//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod grads;

use geomsynth::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

pub fn rand_unit(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_range(0.0..1.0))
}

/// Direct sliding-window convolution.
pub fn naive_conv2d(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (bs, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; bs * cout * ho * wo];
    let xd = x.data();
    let kd = k.data();
    for n in 0..bs {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += xd[((n * cin + ci) * h + iy as usize) * w + ix as usize]
                                    * kd[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((n * cout + co) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    Tensor::new(&[bs, cout, ho, wo], out).unwrap()
}

/// Scatter form of the transposed convolution; kernel is `[Cin, Cout, Kh, Kw]`.
pub fn naive_conv_transpose2d(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (bs, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (k.shape()[1], k.shape()[2], k.shape()[3]);
    let ho = (h - 1) * stride + kh - 2 * pad;
    let wo = (w - 1) * stride + kw - 2 * pad;
    let mut out = vec![0.0; bs * cout * ho * wo];
    for n in 0..bs {
        for co in 0..cout {
            for i in 0..ho * wo {
                out[(n * cout + co) * ho * wo + i] = b.data()[co];
            }
        }
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x.data()[((n * cin + ci) * h + iy) * w + ix];
                    for co in 0..cout {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                out[((n * cout + co) * ho + oy as usize) * wo + ox as usize] +=
                                    v * k.data()[((ci * cout + co) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[bs, cout, ho, wo], out).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A pipeline small enough to run end to end in a few seconds.
pub fn tiny_config_toml(workdir: &std::path::Path, image_size: usize) -> String {
    format!(
        r#"workdir = "{}"
seed = 3
mode = "single-baseline"

[data]
image_size = {image_size}
count = 16

[stage1]
noise_dim = 8
gen_channels = 8
disc_channels = 4

[stage1.optim]
epochs = 2
batch_size = 4

[stage2]
gen_channels = 4
disc_channels = 4

[stage2.optim]
epochs = 2
batch_size = 4

[unet]
depth = 2
base_channels = 4

[unet.optim]
epochs = 2
batch_size = 4
lr = 1e-3
beta1 = 0.9

[synthesize]
count = 8
audit_count = 10

[baseline]
gen_channels = 8
disc_channels = 4
"#,
        workdir.display()
    )
}
