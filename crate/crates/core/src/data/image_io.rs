use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps `[0, 1]` onto 0..=255 by round-half-up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Loads an 8-bit grayscale or RGB PNG/PGM/PPM as `[C, H, W]` scaled by 1/255.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            Tensor::new(&[1, h, w], buf.into_raw().into_iter().map(|p| f64::from(p) / 255.0).collect())
        }
        DynamicImage::ImageRgb8(buf) => {
            let raw = buf.into_raw();
            let plane = h * w;
            let mut data = vec![0.0; 3 * plane];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = f64::from(px[c]) / 255.0;
                }
            }
            Tensor::new(&[3, h, w], data)
        }
        other => Err(Error::Format(format!(
            "{}: only 8-bit grayscale or RGB is supported, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Writes a `[1, H, W]`, `[H, W]` or `[3, H, W]` tensor. The container is
/// chosen from the extension: `.png`, `.pgm` (grayscale) or `.ppm` (RGB).
pub fn save_image(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (channels, h, w) = match *t.shape() {
        [h, w] => (1, h, w),
        [c @ (1 | 3), h, w] => (c, h, w),
        ref s => return Err(Error::InvalidShape(format!("cannot save image of shape {s:?}"))),
    };
    if !t.is_finite() {
        return Err(Error::NonFinite("save_image".into()));
    }
    let plane = h * w;
    let d = t.data();
    let bytes: Vec<u8> = if channels == 1 {
        d.iter().map(|&v| quantize(v)).collect()
    } else {
        (0..plane)
            .flat_map(|i| (0..3).map(move |c| quantize(d[c * plane + i])))
            .collect()
    };
    let color = if channels == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    let encoded = match ext.as_str() {
        "png" => PngEncoder::new(out).write_image(&bytes, w as u32, h as u32, color),
        "pgm" | "ppm" | "pnm" => {
            let sub = if channels == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(out)
                .with_subtype(sub)
                .write_image(&bytes, w as u32, h as u32, color)
        }
        other => return Err(Error::Format(format!("unsupported image extension '{other}'"))),
    };
    encoded.map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
