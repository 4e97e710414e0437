use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hoverlab::harness::{ExperimentConfig, Variant};

fn hoverlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoverlab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_tiny(dir: &Path, variant: Variant) -> PathBuf {
    let mut cfg = ExperimentConfig::desk(variant);
    cfg.total_timesteps = 512;
    cfg.checkpoint_interval = 512;
    cfg.ppo.horizon = 256;
    cfg.ppo.epochs = 1;
    cfg.evaluation.episodes = 2;
    cfg.output_dir = dir.join("runs/{variant}/seed{seed}");
    let path = dir.join(format!("{variant}.toml"));
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = hoverlab(&[], Path::new("."));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn compare_needs_two_directories() {
    let out = hoverlab(&["compare", "only_one"], Path::new("."));
    assert!(!out.status.success());
}

#[test]
fn schedule_preview_of_desk_config() {
    let cfg = configs().join("desk_recom_l2.toml");
    let out = hoverlab(&["schedule-preview", "--config", cfg.to_str().unwrap()], Path::new("."));
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("200000 timesteps"), "{text}");
    assert!(text.contains("1.50 m/s"));
}

#[test]
fn bad_config_reports_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "variant = \"standard\"\ntotal_timesteps = 100\noutput_dir = \"runs\"\nl2_lambda = 0.1\n").unwrap();
    let out = hoverlab(&["train", "--config", path.to_str().unwrap(), "-q"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("l2_lambda"));
}

#[test]
fn train_eval_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut run_dirs = Vec::new();
    for variant in [Variant::Standard, Variant::L2] {
        let cfg = write_tiny(dir.path(), variant);
        let out = hoverlab(&["train", "--config", cfg.to_str().unwrap(), "--deterministic", "-q"], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        run_dirs.push(dir.path().join(format!("runs/{variant}/seed0")));
    }

    let ck = run_dirs[0].join("checkpoints/latest.json");
    let out = hoverlab(&["eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("success"));
    assert!(run_dirs[0].join("eval.json").exists());

    let merged = dir.path().join("merged.csv");
    let out = hoverlab(
        &[
            "compare",
            run_dirs[0].to_str().unwrap(),
            run_dirs[1].to_str().unwrap(),
            "--out",
            merged.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gap standard - l2"));
    assert!(merged.exists());
}

#[test]
fn parse_errors_name_the_missing_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.toml");
    std::fs::write(&path, "variant = \"l2\"\n").unwrap();
    let out = hoverlab(&["schedule-preview", "--config", path.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("total_timesteps"));
}
