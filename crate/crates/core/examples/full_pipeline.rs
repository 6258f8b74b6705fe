//! Runs every pipeline step from one config file and prints the report.
//!
//! cargo run --release --example full_pipeline -- configs/toy_vessels.toml [workdir]

use geomsynth::pipeline::{run_all, PipelineConfig};

fn main() -> geomsynth::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "configs/toy_vessels.toml".into());
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(w) = args.next() {
        cfg.workdir = w.into();
    }
    let t = std::time::Instant::now();
    let out = run_all(&cfg, true)?;
    println!("{}", out.report.to_text());
    if let Some(b) = out.baseline {
        println!("single-GAN KL(synthetic|real): {:.6}", b.kl_syn_vs_real);
    }
    println!("config {} finished in {:.1?}", cfg.hash(), t.elapsed());
    Ok(())
}
