//! Generates both toy families, prints a few masks as ASCII art and writes
//! PNGs to a temporary directory.
//!
//! cargo run --release --example toy_datasets

use geomsynth::data::{gen_toy_dataset, save_image, ToyFamily, ToyGenConfig};

fn ascii(mask: &geomsynth::data::SegmentationMask) -> String {
    let w = mask.width();
    mask.bits()
        .chunks(w)
        .map(|row| row.iter().map(|&b| if b { '#' } else { '.' }).collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}

fn main() -> geomsynth::Result<()> {
    let out = std::env::temp_dir().join("geomsynth-toy");
    std::fs::create_dir_all(&out).map_err(|e| geomsynth::Error::Config(e.to_string()))?;
    for family in [ToyFamily::VesselTree, ToyFamily::CellBlob] {
        let cfg = ToyGenConfig {
            family,
            count: if family == ToyFamily::CellBlob { 35 } else { 64 },
            seed: 7,
            ..ToyGenConfig::default()
        };
        let pairs = gen_toy_dataset(&cfg)?;
        let fractions: Vec<f64> = pairs.iter().map(|p| p.mask.foreground_fraction()).collect();
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        println!("{family:?}: {} pairs, mean foreground fraction {mean:.3}", pairs.len());
        for p in pairs.iter().take(2) {
            println!("{}\n", ascii(&p.mask));
        }
        for p in pairs.iter().take(8) {
            save_image(p.mask.tensor(), out.join(format!("{}-mask.png", p.id)))?;
            save_image(&p.photo, out.join(format!("{}-photo.png", p.id)))?;
        }
    }
    println!("images written to {}", out.display());
    Ok(())
}
