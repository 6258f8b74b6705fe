mod common;

use std::path::Path;
use std::process::{Command, Output};

fn geomsynth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geomsynth"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn setup(dir: &Path, name: &str, size: usize) -> String {
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, common::tiny_config_toml(&dir.join(name), size)).unwrap();
    path.display().to_string()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = geomsynth(dir.path(), &["--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in [
        "gen-toy",
        "train-stage1",
        "train-stage2",
        "train-unet",
        "synthesize",
        "evaluate",
        "baseline-single-gan",
    ] {
        assert!(text.contains(sub), "missing {sub} in help");
    }
    assert_eq!(code(&geomsynth(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&geomsynth(dir.path(), &["gen-toy", "--bogus"])), 1);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[data]\nimage_size = 24\n").unwrap();
    assert_eq!(code(&geomsynth(dir.path(), &["-c", bad.to_str().unwrap(), "gen-toy"])), 1);
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(code(&geomsynth(dir.path(), &["-c", bad.to_str().unwrap(), "gen-toy"])), 1);
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&geomsynth(dir.path(), &["-c", missing.to_str().unwrap(), "gen-toy"])), 3);
}

#[test]
fn every_subcommand_runs_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "run", 16);
    let work = dir.path().join("run");
    let step = |args: &[&str]| {
        let mut all = vec!["-c", cfg.as_str()];
        all.extend_from_slice(args);
        let o = geomsynth(dir.path(), &all);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    step(&["gen-toy"]);
    // A second generation would clobber the data.
    let again = geomsynth(dir.path(), &["-c", &cfg, "gen-toy"]);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    step(&["gen-toy", "--force"]);

    // Stage-I wants masks only.
    let paired = work.join("real/manifest.jsonl");
    let wrong = geomsynth(dir.path(), &["-c", &cfg, "train-stage1", "--manifest", paired.to_str().unwrap()]);
    assert_eq!(code(&wrong), 1);
    let absent = geomsynth(dir.path(), &["-c", &cfg, "train-stage1", "--manifest", "missing.jsonl"]);
    assert_eq!(code(&absent), 3);

    let s1 = step(&["train-stage1"]);
    assert!(s1.contains("\"epochs\": 2"));
    step(&["train-stage2"]);
    step(&["synthesize"]);
    step(&["train-unet", "--label", "real"]);
    step(&["train-unet", "--label", "synthetic", "--manifest", work.join("synthetic/manifest.jsonl").to_str().unwrap()]);
    let report = step(&["evaluate"]);
    assert!(report.contains("KL(synthetic|real)"));
    step(&["baseline-single-gan"]);
    for f in [
        "checkpoints/stage1_generator.ckpt",
        "checkpoints/stage2_generator.ckpt",
        "checkpoints/unet_real.ckpt",
        "checkpoints/unet_synthetic.ckpt",
        "reports/report.json",
        "reports/histogram_real.csv",
        "baseline/report.json",
        "synthetic/manifest.jsonl",
    ] {
        assert!(work.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_dir(work.join("synthetic/photos")).unwrap().count(), 8);
}

#[test]
fn mismatched_checkpoints_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let small = setup(dir.path(), "small", 16);
    let large = setup(dir.path(), "large", 32);
    for cfg in [&small, &large] {
        for cmd in ["gen-toy", "train-stage1", "train-stage2"] {
            assert_eq!(code(&geomsynth(dir.path(), &["-c", cfg, cmd])), 0, "{cfg} {cmd}");
        }
    }
    let s1 = dir.path().join("small/checkpoints/stage1_generator.ckpt");
    let s2 = dir.path().join("large/checkpoints/stage2_generator.ckpt");
    let o = geomsynth(
        dir.path(),
        &["-c", &large, "synthesize", "--stage1", s1.to_str().unwrap(), "--stage2", s2.to_str().unwrap()],
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("16x16"));

    // Garbage in place of a checkpoint.
    let corrupt = dir.path().join("junk.ckpt");
    std::fs::write(&corrupt, b"definitely not a checkpoint").unwrap();
    let o = geomsynth(
        dir.path(),
        &["-c", &large, "synthesize", "--stage1", corrupt.to_str().unwrap(), "--stage2", s2.to_str().unwrap()],
    );
    assert_eq!(code(&o), 3);
}
