//! Trains the noise-to-mask GAN on toy vessel masks at 16×16 and prints a
//! few samples next to their nearest training mask.
//!
//! cargo run --release --example stage1_masks -- [epochs]

use geomsynth::data::{count_components, gen_toy_vessel_masks, SegmentationMask, ToyGenConfig};
use geomsynth::metrics::nearest_training_mask;
use geomsynth::optim::TrainConfig;
use geomsynth::stage1::{train_stage1, MaskSampler, Stage1Config};

fn ascii(m: &SegmentationMask) -> Vec<String> {
    m.bits()
        .chunks(m.width())
        .map(|r| r.iter().map(|&b| if b { '#' } else { '.' }).collect())
        .collect()
}

fn main() -> geomsynth::Result<()> {
    let epochs = std::env::args().nth(1).map_or(150, |s| s.parse().expect("epochs"));
    let size = 16;
    let masks = gen_toy_vessel_masks(&ToyGenConfig {
        image_size: size,
        count: 64,
        seed: 1,
        ..ToyGenConfig::default()
    })?;
    let images: Vec<_> = masks.iter().map(|m| m.tensor().clone()).collect();
    let cfg = Stage1Config {
        image_size: size,
        noise_dim: 32,
        gen_channels: 32,
        disc_channels: 8,
        ..Stage1Config::default()
    };
    let train = TrainConfig {
        epochs,
        batch_size: 16,
        image_size: size,
        noise_dim: 32,
        seed: 2,
        ..TrainConfig::default()
    };
    let (model, history) = train_stage1(&images, &cfg, &train, None)?;
    for e in history.epochs.iter().step_by((epochs / 5).max(1)) {
        println!("epoch {:4}  d_loss {:.4}  g_loss {:.4}", e.epoch, e.d_loss, e.g_loss);
    }

    let samples = MaskSampler::from(&model).sample_masks(3, 42)?;
    for s in &samples {
        let near = nearest_training_mask(s, &masks)?;
        let bits = s.bits();
        println!(
            "\nsample: {} component(s), foreground {:.3}; nearest training mask #{} at distance {:.4}",
            count_components(size, size, &bits),
            s.foreground_fraction(),
            near.index,
            near.distance
        );
        for (a, b) in ascii(&s.binarized()).iter().zip(ascii(&masks[near.index])) {
            println!("{a}   {b}");
        }
    }
    Ok(())
}
