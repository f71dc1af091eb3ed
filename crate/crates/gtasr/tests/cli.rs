//! End-to-end checks of the command surface: exit codes, help text,
//! file outputs and byte determinism of the report bundle.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn gtasr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtasr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny-run overrides shared by the training-based tests.
fn tiny_overrides(dir: &Path, extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "train",
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "train.iters_stage1=2",
        "--set",
        "train.iters_stage2=2",
        "--set",
        "train.sync_period=1",
        "--set",
        "train.batch_size=2",
        "--set",
        "model.width=4",
        "--set",
        "model.depth=1",
        "--set",
        "data.size=16",
        "--set",
        "data.scale=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn run_tiny_stage1(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let args = tiny_overrides(dir, extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = gtasr(&refs);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    dir.join("stage1.ckpt")
}

#[test]
fn help_exits_zero_and_documents_the_surface() {
    let top = gtasr(&["--help"]);
    assert_eq!(code(&top), 0);
    let text = stdout(&top);
    for sub in ["gen-data", "train", "sample", "analyze", "verify", "report"] {
        assert!(text.contains(sub), "--help must list {sub}");
    }
    assert!(text.contains("GTASR_THREADS"));

    let train_help = gtasr(&["train", "--help"]);
    assert_eq!(code(&train_help), 0);
    let text = stdout(&train_help);
    assert!(text.contains("loss_ct"), "train --help documents CSV columns");
    assert!(text.contains("--set"));

    let analyze_help = gtasr(&["analyze", "--help"]);
    assert_eq!(code(&analyze_help), 0);
    let text = stdout(&analyze_help);
    assert!(text.contains("t,psnr"));
    assert!(text.contains("structural_mae"));

    let gen_help = gtasr(&["gen-data", "--help"]);
    assert_eq!(code(&gen_help), 0);
    assert!(stdout(&gen_help).contains("P5"));
}

#[test]
fn usage_errors_exit_two() {
    let unknown = gtasr(&["frobnicate"]);
    assert_eq!(code(&unknown), 2);

    let bad_stage = gtasr(&["train", "--stage", "3"]);
    assert_eq!(code(&bad_stage), 2);
    assert!(stderr(&bad_stage).to_lowercase().contains("3"));

    let bad_flag = gtasr(&["verify", "--no-such-flag"]);
    assert_eq!(code(&bad_flag), 2);
}

#[test]
fn sample_with_missing_checkpoint_exits_one_naming_the_path() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let input = dir.path().join("in.pgm");
    let output = dir.path().join("out.pgm");
    let out = gtasr(&[
        "sample",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("nope.ckpt"),
        "must name the missing path, got: {}",
        stderr(&out)
    );
}

#[test]
fn verify_passes_clean_and_fails_when_sabotaged() {
    let dir = tempdir().unwrap();
    let report = dir.path().join("report.txt");
    let out = gtasr(&["verify", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
    assert!(stdout(&out).contains("drift_cancellation_matched"));

    let sabotaged = gtasr(&["verify", "--corrupt-sobel"]);
    assert_eq!(code(&sabotaged), 1);
    assert!(stdout(&sabotaged).contains("FAIL"));
}

#[test]
fn gen_data_writes_pairs_and_manifest() {
    let dir = tempdir().unwrap();
    let out = gtasr(&[
        "gen-data",
        "--out",
        dir.path().to_str().unwrap(),
        "--count",
        "2",
        "--set",
        "data.size=16",
        "--set",
        "data.scale=2",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    for name in ["hr_000000.pgm", "lr_000000.pgm", "hr_000001.pgm", "lr_000001.pgm"] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
}

#[test]
fn train_then_sample_then_analyze_round_trip() {
    let root = tempdir().unwrap();
    let run = root.path().join("run");
    let ckpt = run_tiny_stage1(&run, &[]);
    assert!(ckpt.exists());

    // sample an LR observation produced by gen-data
    let data_dir = root.path().join("data");
    let out = gtasr(&[
        "gen-data",
        "--out",
        data_dir.to_str().unwrap(),
        "--count",
        "1",
        "--set",
        "data.size=16",
        "--set",
        "data.scale=2",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let restored = root.path().join("restored.pgm");
    let out = gtasr(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        data_dir.join("lr_000000.pgm").to_str().unwrap(),
        "--output",
        restored.to_str().unwrap(),
        "--steps",
        "2",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(restored.exists());

    // consistency probe CSV
    let probe_csv = root.path().join("probe.csv");
    let consistency = |path: &Path| {
        let out = gtasr(&[
            "analyze",
            "--probe",
            "consistency",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            path.to_str().unwrap(),
            "--set",
            "data.size=16",
            "--set",
            "data.scale=2",
            "--set",
            "model.width=4",
            "--set",
            "model.depth=1",
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    };
    consistency(&probe_csv);
    let text = std::fs::read_to_string(&probe_csv).unwrap();
    assert!(text.starts_with("t,psnr\n"));
    assert_eq!(text.lines().count(), 6);

    // byte determinism of a repeated probe
    let probe_csv2 = root.path().join("probe2.csv");
    consistency(&probe_csv2);
    assert_eq!(
        std::fs::read(&probe_csv).unwrap(),
        std::fs::read(&probe_csv2).unwrap()
    );

    // decoupling probe CSV
    let scatter = root.path().join("scatter.csv");
    let out = gtasr(&[
        "analyze",
        "--probe",
        "decoupling",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        scatter.to_str().unwrap(),
        "--count",
        "3",
        "--set",
        "data.size=16",
        "--set",
        "data.scale=2",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&scatter).unwrap();
    assert!(text.starts_with("instance,t_prime,pixel_mae,structural_mae\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn report_aggregates_runs_and_pairs_ablations() {
    let root = tempdir().unwrap();
    let empty = gtasr(&["report", root.path().to_str().unwrap()]);
    assert_eq!(code(&empty), 1);

    run_tiny_stage1(&root.path().join("ta_on"), &[]);
    run_tiny_stage1(&root.path().join("ta_off"), &["--set", "loss.lambda_ta=0"]);

    let out = gtasr(&["report", root.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("ta_on"));
    assert!(text.contains("ta_off"));
    assert!(
        text.contains("ablation loss.lambda_ta"),
        "expected a paired delta, got:\n{text}"
    );

    let rows = std::fs::read_to_string(root.path().join("report.csv")).unwrap();
    assert!(rows.starts_with("run,stage,iterations,val_psnr,val_ssim\n"));
    assert_eq!(rows.lines().count(), 3);
    let pairs = std::fs::read_to_string(root.path().join("report_pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 2, "one delta row:\n{pairs}");
    let delta_row = pairs.lines().nth(1).unwrap();
    assert!(delta_row.starts_with("loss.lambda_ta,ta_on,ta_off,0.5,0,"));

    // byte determinism of the bundle
    let first = std::fs::read(root.path().join("report.csv")).unwrap();
    let out = gtasr(&["report", root.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(root.path().join("report.csv")).unwrap(), first);
}

#[test]
fn single_run_directory_is_reportable() {
    let root = tempdir().unwrap();
    let run = root.path().join("solo");
    run_tiny_stage1(&run, &[]);
    let out = gtasr(&["report", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("solo"));
}
