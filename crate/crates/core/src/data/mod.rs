//! Image IO, dataset manifests and splits, and the procedural toy datasets.

mod image_io;
mod manifest;
mod toy;

pub use image_io::{load_image, quantize, save_image};
pub use manifest::{split_dataset, DatasetKind, DatasetManifest, ManifestRecord, Provenance, Split, MANIFEST_SCHEMA_VERSION};
pub use toy::{
    gen_toy_cell_dataset, gen_toy_dataset, gen_toy_vessel_masks, render_toy_cell_photo,
    render_toy_photo, ToyFamily, ToyGenConfig,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel mask `[1, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMask(Tensor);

impl SegmentationMask {
    pub fn new(t: Tensor) -> Result<Self> {
        let t = match t.shape().len() {
            2 => {
                let s = t.shape().to_vec();
                t.reshape(&[1, s[0], s[1]])?
            }
            _ => t,
        };
        if t.shape().len() != 3 || t.shape()[0] != 1 {
            return Err(Error::InvalidShape(format!(
                "mask must be [1, H, W], got {:?}",
                t.shape()
            )));
        }
        if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("mask values must lie in [0, 1]".into()));
        }
        Ok(SegmentationMask(t))
    }

    pub fn from_bits(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(Tensor::new(&[1, height, width], data)?)
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    /// Foreground where the value is at least 0.5.
    pub fn bits(&self) -> Vec<bool> {
        self.0.data().iter().map(|&v| v >= 0.5).collect()
    }

    pub fn binarized(&self) -> SegmentationMask {
        let data = self.0.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
        SegmentationMask(Tensor::new(self.0.shape(), data).expect("same shape"))
    }

    /// Binarized, keeping only the largest connected component.
    pub fn largest_component(&self) -> SegmentationMask {
        let bits = largest_component(self.height(), self.width(), &self.bits());
        SegmentationMask::from_bits(self.height(), self.width(), &bits).expect("same shape")
    }

    pub fn is_binary(&self) -> bool {
        self.0.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.bits().iter().filter(|&&b| b).count() as f64 / self.0.numel() as f64
    }
}

/// A mask together with the photo it segments.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub mask: SegmentationMask,
    /// `[3, H, W]` in `[0, 1]`.
    pub photo: Tensor,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, mask: SegmentationMask, photo: Tensor) -> Result<Self> {
        let ps = photo.shape();
        if ps.len() != 3 || ps[0] != 3 || ps[1] != mask.height() || ps[2] != mask.width() {
            return Err(Error::InvalidShape(format!(
                "photo {:?} does not match mask {}x{}",
                ps,
                mask.height(),
                mask.width()
            )));
        }
        Ok(PairedSample {
            id: id.into(),
            mask,
            photo,
        })
    }
}

/// Number of 8-connected foreground components.
pub fn count_components(height: usize, width: usize, bits: &[bool]) -> usize {
    let mut seen = vec![false; bits.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / width) as isize, (i % width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

/// Keeps only the largest 8-connected foreground component (ties go to the
/// component met first in row-major order).
pub fn largest_component(height: usize, width: usize, bits: &[bool]) -> Vec<bool> {
    let mut label = vec![0usize; bits.len()];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || label[start] != 0 {
            continue;
        }
        let id = sizes.len();
        sizes.push(0);
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            sizes[id] += 1;
            let (y, x) = ((i / width) as isize, (i % width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if bits[j] && label[j] == 0 {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
    }
    let best = (1..sizes.len()).fold(0, |b, i| if b == 0 || sizes[i] > sizes[b] { i } else { b });
    label.iter().map(|&l| best != 0 && l == best).collect()
}

/// Grayscale luma `0.299 R + 0.587 G + 0.114 B` of a `[3, H, W]` image;
/// single-channel input is returned unchanged.
pub fn to_grayscale(img: &Tensor) -> Result<Vec<f64>> {
    match img.shape() {
        [1, _, _] | [_, _] => Ok(img.data().to_vec()),
        [3, h, w] => {
            let plane = h * w;
            let d = img.data();
            Ok((0..plane)
                .map(|i| 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i])
                .collect())
        }
        s => Err(Error::InvalidShape(format!("cannot convert {s:?} to grayscale"))),
    }
}
