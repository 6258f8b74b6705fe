//! Trains a U-net on toy vessel pairs and scores it on a held-out set.
//!
//! cargo run --release --example segment_unet -- [epochs]

use geomsynth::data::{gen_toy_dataset, ToyGenConfig};
use geomsynth::metrics::evaluate_segmenter;
use geomsynth::optim::TrainConfig;
use geomsynth::segmenter::{segment, train_unet, UnetSpec};

fn main() -> geomsynth::Result<()> {
    let epochs = std::env::args().nth(1).map_or(40, |s| s.parse().expect("epochs"));
    let size = 16;
    let toy = |seed, count| {
        gen_toy_dataset(&ToyGenConfig {
            image_size: size,
            count,
            seed,
            ..ToyGenConfig::default()
        })
    };
    let (train_pairs, test) = (toy(1, 40)?, toy(2, 20)?);
    let spec = UnetSpec {
        depth: 2,
        base_channels: 8,
    };
    let train = TrainConfig {
        epochs,
        batch_size: 8,
        image_size: size,
        lr: 1e-3,
        beta1: 0.9,
        seed: 4,
        ..TrainConfig::default()
    };
    let (model, history) = train_unet(&train_pairs, &spec, &train)?;
    for e in history.epochs.iter().step_by((epochs / 5).max(1)) {
        println!("epoch {:3}  loss {:.4}", e.epoch, e.loss);
    }
    let scores = evaluate_segmenter(&model, &test)?;
    println!(
        "held-out: pooled F1 {:.4} (precision {:.4}, recall {:.4}), mean per-image F1 {:.4}",
        scores.pooled.f1, scores.pooled.precision, scores.pooled.recall, scores.mean_per_image
    );
    let m = segment(&test[0].photo, &model, 0.5)?;
    println!("{}: predicted foreground {:.3}, true {:.3}", test[0].id, m.foreground_fraction(), test[0].mask.foreground_fraction());
    Ok(())
}
