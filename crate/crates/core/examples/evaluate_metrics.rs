//! The evaluation metrics on hand-made inputs: F1, histogram KL, the
//! real-split control and the memorization audit.
//!
//! cargo run --release --example evaluate_metrics

use geomsynth::data::{gen_toy_dataset, gen_toy_vessel_masks, ToyFamily, ToyGenConfig};
use geomsynth::metrics::{dataset_report, f1_score, grayscale_histogram, kl_divergence, memorization_audit};

fn main() -> geomsynth::Result<()> {
    let vessels = |seed, count| ToyGenConfig {
        count,
        seed,
        ..ToyGenConfig::default()
    };
    let masks = gen_toy_vessel_masks(&vessels(1, 2))?;
    let s = f1_score(&masks[0], &masks[1])?;
    println!("two unrelated vessel masks: F1 {:.4} (precision {:.4}, recall {:.4})", s.f1, s.precision, s.recall);
    println!("a mask against itself: F1 {:.4}", f1_score(&masks[0], &masks[0])?.f1);

    let real: Vec<_> = gen_toy_dataset(&vessels(2, 64))?.into_iter().map(|p| p.photo).collect();
    let cells: Vec<_> = gen_toy_dataset(&ToyGenConfig {
        family: ToyFamily::CellBlob,
        ..vessels(3, 35)
    })?
    .into_iter()
    .map(|p| p.photo)
    .collect();
    let (hv, hc) = (grayscale_histogram(&real, 256)?, grayscale_histogram(&cells, 256)?);
    println!("KL(cells | vessels) {:.4}, KL(vessels | cells) {:.4}", kl_divergence(&hc, &hv)?, kl_divergence(&hv, &hc)?);

    let report = dataset_report(&real, &cells, 0)?;
    print!("\n{}", report.to_text());

    let training = gen_toy_vessel_masks(&vessels(4, 32))?;
    let mut generated = gen_toy_vessel_masks(&vessels(5, 20))?;
    generated.push(training[0].clone());
    let audit = memorization_audit(&generated, &training)?;
    println!(
        "\naudit of 20 fresh masks plus one copy: {} exact copies, min distance {:.4}, KS {:.3}",
        audit.exact_copies, audit.min_distance, audit.ks_foreground_fraction
    );
    Ok(())
}
