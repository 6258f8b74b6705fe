//! Compares the two-stage pipeline with one GAN trained straight on photos,
//! at equal generator step budgets, on a small vessel config.
//!
//! cargo run --release --example single_gan_baseline -- [workdir]

use geomsynth::pipeline::{run_all, PipelineConfig, PipelineMode};

fn main() -> geomsynth::Result<()> {
    let workdir = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("geomsynth-baseline"), Into::into);
    let mut cfg = PipelineConfig {
        workdir,
        mode: PipelineMode::SingleBaseline,
        ..PipelineConfig::default()
    };
    cfg.data.image_size = 16;
    cfg.data.count = 64;
    cfg.stage1.noise_dim = 32;
    cfg.stage1.gen_channels = 32;
    cfg.stage1.disc_channels = 8;
    cfg.stage1.optim.epochs = 60;
    cfg.stage2.gen_channels = 8;
    cfg.stage2.disc_channels = 8;
    cfg.stage2.optim.epochs = 30;
    cfg.unet.depth = 2;
    cfg.unet.base_channels = 8;
    cfg.unet.optim.epochs = 20;
    cfg.unet.optim.batch_size = 8;
    cfg.baseline.gen_channels = 32;
    cfg.baseline.disc_channels = 8;
    cfg.synthesize.soft_masks = false;

    let out = run_all(&cfg, true)?;
    let baseline = out.baseline.expect("single-baseline mode runs the baseline");
    println!("dual pipeline   KL(synthetic|real) {:.5}", out.report.kl_syn_vs_real);
    println!("single GAN      KL(synthetic|real) {:.5}", baseline.kl_syn_vs_real);
    println!("real-vs-real    KL(half A|half B)  {:.5}", out.report.kl_real_split);
    Ok(())
}
