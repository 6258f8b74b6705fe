//! Trains the mask-to-photo GAN on toy vessel pairs and reports how close
//! translated held-out masks come to the rendered photos.
//!
//! cargo run --release --example stage2_translate -- [epochs]

use geomsynth::data::{gen_toy_dataset, save_image, ToyGenConfig};
use geomsynth::optim::TrainConfig;
use geomsynth::stage2::{train_stage2, translate_dataset, Stage2Config};

fn main() -> geomsynth::Result<()> {
    let epochs = std::env::args().nth(1).map_or(60, |s| s.parse().expect("epochs"));
    let size = 16;
    let toy = |seed, count| {
        gen_toy_dataset(&ToyGenConfig {
            image_size: size,
            count,
            seed,
            noise: 0.0,
            ..ToyGenConfig::default()
        })
    };
    let (train_pairs, held_out) = (toy(1, 48)?, toy(2, 8)?);
    let cfg = Stage2Config {
        image_size: size,
        gen_channels: 8,
        disc_channels: 8,
        ..Stage2Config::default()
    };
    let train = TrainConfig {
        epochs,
        batch_size: 8,
        image_size: size,
        seed: 3,
        ..TrainConfig::default()
    };
    let (model, history) = train_stage2(&train_pairs, &cfg, &train, None)?;
    let last = history.epochs.last().expect("at least one epoch");
    println!("after {epochs} epochs: d_loss {:.4}, g_loss {:.4}", last.d_loss, last.g_loss);

    let masks: Vec<_> = held_out.iter().map(|p| p.mask.clone()).collect();
    let translated = translate_dataset(&masks, &model.translator(), 7)?;
    let out = std::env::temp_dir().join("geomsynth-stage2");
    for (fake, real) in translated.iter().zip(&held_out) {
        let mae = fake
            .photo
            .data()
            .iter()
            .zip(real.photo.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / fake.photo.numel() as f64;
        println!("{} -> {}: mean absolute error {mae:.4}", real.id, fake.id);
        save_image(&fake.photo, out.join(format!("{}-translated.png", real.id)))?;
        save_image(&real.photo, out.join(format!("{}-rendered.png", real.id)))?;
    }
    println!("photos written to {}", out.display());
    Ok(())
}
