//! Command-line front end over `geomsynth::pipeline`.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 training divergence,
//! 3 IO error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geomsynth::pipeline::{self, EvaluateInputs, PipelineConfig};
use geomsynth::rng::derive_seed;
use geomsynth::{Error, Result};

#[derive(Parser)]
#[command(name = "geomsynth", version, about = "Two-stage synthetic segmentation datasets")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `workdir`.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy dataset and its manifests.
    GenToy {
        #[arg(long)]
        force: bool,
        /// Overrides `data.count`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the noise-to-mask GAN on a masks-only manifest.
    TrainStage1 {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides `stage1.optim.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the mask-to-photo GAN on a paired manifest.
    TrainStage2 {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides `stage2.optim.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train a U-net on a paired manifest.
    TrainUnet {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Checkpoint name suffix, e.g. `real` or `synthetic`.
        #[arg(long, default_value = "real")]
        label: String,
        /// Overrides `unet.optim.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample masks and translate them into a synthetic paired dataset.
    Synthesize {
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[arg(long)]
        stage2: Option<PathBuf>,
        /// Overrides `synthesize.count`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score both U-nets and compare pixel histograms.
    Evaluate {
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<PathBuf>,
        #[arg(long)]
        unet_synthetic: Option<PathBuf>,
        #[arg(long)]
        unet_real: Option<PathBuf>,
        /// Stage-I generator for the memorization audit.
        #[arg(long)]
        stage1: Option<PathBuf>,
        /// Skip the memorization audit.
        #[arg(long)]
        no_audit: bool,
    },
    /// Train a single GAN directly on photos and report its histogram KL.
    BaselineSingleGan {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run every step of the pipeline in order.
    RunAll {
        #[arg(long)]
        force: bool,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = &c.workdir {
        cfg.workdir = w.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::GenToy { force, count } => {
            if let Some(n) = count {
                cfg.data.count = n;
            }
            let m = pipeline::gen_toy(&cfg, force)?;
            println!("wrote {} pairs to {}", m.len(), cfg.real_manifest().display());
        }
        Command::TrainStage1 { manifest, epochs } => {
            if let Some(e) = epochs {
                cfg.stage1.optim.epochs = e;
            }
            let m = manifest.unwrap_or_else(|| cfg.real_masks_manifest());
            let s = pipeline::cmd_train_stage1(&cfg, &m)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::TrainStage2 { manifest, epochs } => {
            if let Some(e) = epochs {
                cfg.stage2.optim.epochs = e;
            }
            let m = manifest.unwrap_or_else(|| cfg.real_manifest());
            let s = pipeline::cmd_train_stage2(&cfg, &m)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::TrainUnet {
            manifest,
            label,
            epochs,
        } => {
            if let Some(e) = epochs {
                cfg.unet.optim.epochs = e;
            }
            let m = manifest.unwrap_or_else(|| cfg.real_manifest());
            let s = pipeline::cmd_train_unet(&cfg, &m, &label)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Synthesize { stage1, stage2, count } => {
            if let Some(n) = count {
                cfg.synthesize.count = n;
            }
            let s1 = stage1.unwrap_or_else(|| cfg.checkpoint("stage1_generator"));
            let s2 = stage2.unwrap_or_else(|| cfg.checkpoint("stage2_generator"));
            let seed = derive_seed(cfg.seed, "synthesize");
            let m = pipeline::cmd_synthesize(&cfg, &s1, &s2, cfg.synthesize.count, seed)?;
            println!("wrote {} pairs to {}", m.len(), cfg.synthetic_manifest().display());
        }
        Command::Evaluate {
            real,
            synthetic,
            unet_synthetic,
            unet_real,
            stage1,
            no_audit,
        } => {
            let d = EvaluateInputs::defaults(&cfg);
            let inputs = EvaluateInputs {
                real: real.unwrap_or(d.real),
                synthetic: synthetic.unwrap_or(d.synthetic),
                unet_synthetic: unet_synthetic.unwrap_or(d.unet_synthetic),
                unet_real: unet_real.unwrap_or(d.unet_real),
                stage1: if no_audit { None } else { stage1.or(d.stage1) },
            };
            let r = pipeline::cmd_evaluate(&cfg, &inputs)?;
            print!("{}", r.to_text());
        }
        Command::BaselineSingleGan { manifest } => {
            let m = manifest.unwrap_or_else(|| cfg.real_manifest());
            let r = pipeline::cmd_baseline_single_gan(&cfg, &m)?;
            print!("{}", r.to_text());
        }
        Command::RunAll { force } => {
            let out = pipeline::run_all(&cfg, force)?;
            print!("{}", out.report.to_text());
            if let Some(b) = out.baseline {
                println!("single-GAN KL(synthetic|real): {:.6}", b.kl_syn_vs_real);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
