//! Procedural stand-ins for paired medical datasets.
//!
//! `vessel-tree` masks are branching random walks rendered onto a warm
//! fundus-like background; `cell-blob` masks are single perturbed ellipses on
//! a textured background. Every sample is a pure function of
//! `(config, seed, index)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{count_components, PairedSample, SegmentationMask};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyFamily {
    VesselTree,
    CellBlob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyGenConfig {
    pub family: ToyFamily,
    pub image_size: usize,
    pub count: usize,
    pub seed: u64,
    /// Standard deviation of the additive per-pixel photo noise.
    pub noise: f64,
}

impl Default for ToyGenConfig {
    fn default() -> Self {
        ToyGenConfig {
            family: ToyFamily::VesselTree,
            image_size: 32,
            count: 64,
            seed: 0,
            noise: 0.02,
        }
    }
}

impl ToyGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("toy count must be at least 1".into()));
        }
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "toy image_size {} must be a power of two >= 8",
                self.image_size
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("toy noise must be non-negative".into()));
        }
        Ok(())
    }
}

const MIN_FRACTION: f64 = 0.02;
const MAX_FRACTION: f64 = 0.30;

struct Canvas {
    size: usize,
    bits: Vec<bool>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas {
            size,
            bits: vec![false; size * size],
        }
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.size as f64 && y < self.size as f64
    }

    /// Marks the pixel containing `(x, y)` and every pixel whose centre lies
    /// within `r`.
    fn stamp(&mut self, x: f64, y: f64, r: f64) {
        let s = self.size as isize;
        let (cx, cy) = (x.floor() as isize, y.floor() as isize);
        if cx >= 0 && cy >= 0 && cx < s && cy < s {
            self.bits[cy as usize * self.size + cx as usize] = true;
        }
        let reach = r.ceil() as isize + 1;
        for py in cy - reach..=cy + reach {
            for px in cx - reach..=cx + reach {
                if px < 0 || py < 0 || px >= s || py >= s {
                    continue;
                }
                let (dx, dy) = (px as f64 + 0.5 - x, py as f64 + 0.5 - y);
                if dx * dx + dy * dy <= r * r {
                    self.bits[py as usize * self.size + px as usize] = true;
                }
            }
        }
    }

    fn fraction(&self) -> f64 {
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }
}

struct Walk {
    x: f64,
    y: f64,
    heading: f64,
    level: usize,
    steps: usize,
}

fn vessel_attempt(size: usize, r: &mut ChaCha8Rng) -> Canvas {
    let s = size as f64;
    let mut canvas = Canvas::new(size);
    let levels = r.gen_range(2..=4usize);
    let trunk_radius = (s / 32.0 * 1.1).max(0.8);
    let (x, y) = (r.gen_range(0.2 * s..0.8 * s), r.gen_range(0.2 * s..0.8 * s));
    let mut stack = vec![Walk {
        x,
        y,
        heading: r.gen_range(0.0..2.0 * PI),
        level: 0,
        steps: r.gen_range((0.6 * s) as usize..=(0.9 * s) as usize),
    }];
    while let Some(mut w) = stack.pop() {
        let radius = (trunk_radius * 0.6f64.powi(w.level as i32)).max(0.35);
        let mut drift = 0.0;
        for _ in 0..w.steps {
            if !canvas.inside(w.x, w.y) {
                break;
            }
            canvas.stamp(w.x, w.y, radius);
            if w.level + 1 < levels && r.gen::<f64>() < 0.07 {
                let side = if r.gen::<bool>() { 1.0 } else { -1.0 };
                stack.push(Walk {
                    x: w.x,
                    y: w.y,
                    heading: w.heading + side * r.gen_range(0.5..1.1),
                    level: w.level + 1,
                    steps: ((w.steps as f64) * r.gen_range(0.45..0.7)) as usize,
                });
            }
            drift = 0.7 * drift + r.gen_range(-0.18..0.18);
            w.heading += drift;
            w.x += w.heading.cos();
            w.y += w.heading.sin();
        }
    }
    canvas
}

fn vessel_mask(size: usize, seed: u64, index: usize) -> Result<SegmentationMask> {
    let base = rng::derive_index(rng::derive_seed(seed, "vessel-mask"), index as u64);
    for attempt in 0..1000u64 {
        let mut r = rng::rng_from_seed(rng::derive_index(base, attempt));
        let c = vessel_attempt(size, &mut r);
        let f = c.fraction();
        if (MIN_FRACTION..=MAX_FRACTION).contains(&f) && count_components(size, size, &c.bits) == 1 {
            return SegmentationMask::from_bits(size, size, &c.bits);
        }
    }
    Err(Error::Config(format!(
        "could not draw a valid vessel mask at size {size}"
    )))
}

/// Binary vessel-tree masks: a seeded random walk from a root point with
/// 2 to 4 recursive branch levels and stroke width shrinking with depth.
/// Every mask is one 8-connected component covering 2 to 30% of the image.
pub fn gen_toy_vessel_masks(cfg: &ToyGenConfig) -> Result<Vec<SegmentationMask>> {
    cfg.validate()?;
    if cfg.family != ToyFamily::VesselTree {
        return Err(Error::Config("gen_toy_vessel_masks needs family vessel-tree".into()));
    }
    (0..cfg.count)
        .map(|i| vessel_mask(cfg.image_size, cfg.seed, i))
        .collect()
}

/// Fundus-like photo for a (binary or soft) vessel mask: radial warm
/// background, a bright disc at a seeded position, vessels darkened in
/// proportion to the mask value, and Gaussian noise of amplitude `noise`.
/// Each photo pixel depends only on the mask value at the same pixel.
pub fn render_toy_photo(mask: &SegmentationMask, noise: f64, seed: u64) -> Result<Tensor> {
    let (h, w) = (mask.height(), mask.width());
    let mut r = rng::rng_for(seed, "vessel-photo");
    let disc_x = r.gen_range(0.25..0.75) * w as f64;
    let disc_y = r.gen_range(0.25..0.75) * h as f64;
    let disc_sigma = w.min(h) as f64 / 10.0;
    let noise_vals = rng::normal_vec(&mut r, 3 * h * w);
    let base = [0.86, 0.46, 0.24];
    let disc = [0.14, 0.2, 0.16];
    let plane = h * w;
    let m = mask.values();
    let mut data = vec![0.0; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let nx = (x as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            let ny = (y as f64 + 0.5) / h as f64 * 2.0 - 1.0;
            let vignette = (1.0 - 0.3 * (nx * nx + ny * ny)).max(0.3);
            let (dx, dy) = (x as f64 + 0.5 - disc_x, y as f64 + 0.5 - disc_y);
            let bright = (-(dx * dx + dy * dy) / (2.0 * disc_sigma * disc_sigma)).exp();
            let darken = 1.0 - 0.6 * m[i];
            for c in 0..3 {
                let v = (base[c] * vignette + disc[c] * bright) * darken + noise * noise_vals[c * plane + i];
                data[c * plane + i] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[3, h, w], data)
}

fn cell_attempt(size: usize, r: &mut ChaCha8Rng) -> Vec<bool> {
    let s = size as f64;
    let (cx, cy) = (r.gen_range(0.25 * s..0.75 * s), r.gen_range(0.25 * s..0.75 * s));
    let r0 = r.gen_range(0.12 * s..0.2 * s);
    let ecc = r.gen_range(0.0..0.45);
    let rot = r.gen_range(0.0..PI);
    let harmonics: Vec<(f64, f64)> = (2..=4)
        .map(|_| (r.gen_range(0.0..0.08), r.gen_range(0.0..2.0 * PI)))
        .collect();
    let (a, b) = (r0 * (1.0 + ecc), r0 * (1.0 - 0.6 * ecc));
    let mut bits = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let theta = dy.atan2(dx);
            let t = theta - rot;
            let ellipse = a * b / ((b * t.cos()).powi(2) + (a * t.sin()).powi(2)).sqrt();
            let wobble: f64 = harmonics
                .iter()
                .enumerate()
                .map(|(k, (amp, ph))| amp * ((k as f64 + 2.0) * theta + ph).cos())
                .sum();
            bits[y * size + x] = (dx * dx + dy * dy).sqrt() <= ellipse * (1.0 + wobble);
        }
    }
    bits
}

/// Textured background with a brighter, mottled cell body.
pub fn render_toy_cell_photo(mask: &SegmentationMask, noise: f64, seed: u64) -> Result<Tensor> {
    let (h, w) = (mask.height(), mask.width());
    let mut r = rng::rng_for(seed, "cell-photo");
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (r.gen_range(0.2..0.7), r.gen_range(0.2..0.7), r.gen_range(0.0..2.0 * PI)))
        .collect();
    let noise_vals = rng::normal_vec(&mut r, 3 * h * w);
    let bg = [0.30, 0.36, 0.32];
    let cell = [0.78, 0.74, 0.62];
    let plane = h * w;
    let m = mask.values();
    let mut data = vec![0.0; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let texture: f64 = waves
                .iter()
                .map(|(fx, fy, ph)| (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum::<f64>()
                / 3.0;
            for c in 0..3 {
                let back = bg[c] + 0.06 * texture;
                let body = cell[c] - 0.08 * texture;
                let v = back * (1.0 - m[i]) + body * m[i] + noise * noise_vals[c * plane + i];
                data[c * plane + i] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Paired cell-blob dataset; `cfg.count` of 35 mirrors a small microscopy
/// corpus.
pub fn gen_toy_cell_dataset(cfg: &ToyGenConfig) -> Result<Vec<PairedSample>> {
    cfg.validate()?;
    if cfg.family != ToyFamily::CellBlob {
        return Err(Error::Config("gen_toy_cell_dataset needs family cell-blob".into()));
    }
    let size = cfg.image_size;
    (0..cfg.count)
        .map(|i| {
            let base = rng::derive_index(rng::derive_seed(cfg.seed, "cell-mask"), i as u64);
            for attempt in 0..1000u64 {
                let mut r = rng::rng_from_seed(rng::derive_index(base, attempt));
                let bits = cell_attempt(size, &mut r);
                if bits.iter().any(|&b| b) && count_components(size, size, &bits) == 1 {
                    let mask = SegmentationMask::from_bits(size, size, &bits)?;
                    let photo_seed = rng::derive_index(rng::derive_seed(cfg.seed, "cell-photo"), i as u64);
                    let photo = render_toy_cell_photo(&mask, cfg.noise, photo_seed)?;
                    return PairedSample::new(format!("cell-{i:04}"), mask, photo);
                }
            }
            Err(Error::Config("could not draw a connected cell mask".into()))
        })
        .collect()
}

/// Paired dataset for either family.
pub fn gen_toy_dataset(cfg: &ToyGenConfig) -> Result<Vec<PairedSample>> {
    match cfg.family {
        ToyFamily::CellBlob => gen_toy_cell_dataset(cfg),
        ToyFamily::VesselTree => {
            let masks = gen_toy_vessel_masks(cfg)?;
            masks
                .into_iter()
                .enumerate()
                .map(|(i, mask)| {
                    let seed = rng::derive_index(rng::derive_seed(cfg.seed, "vessel-photo"), i as u64);
                    let photo = render_toy_photo(&mask, cfg.noise, seed)?;
                    PairedSample::new(format!("vessel-{i:04}"), mask, photo)
                })
                .collect()
        }
    }
}
