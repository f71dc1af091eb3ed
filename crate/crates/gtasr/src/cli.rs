//! Command-line surface tying the modules together.
//!
//! Exit codes: 0 success, 1 operational failure (including failed
//! verification checks), 2 usage error. All randomness derives from
//! the run seed (default 42). `GTASR_THREADS` caps internal op
//! parallelism; 0 or unset picks the core count automatically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    consistency_probe, decoupling_scatter, probe_csv, scatter_csv, verify_math, write_report,
};
use crate::config::TrainConfig;
use crate::data::{self, Split};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, PredictorNet};
use crate::pfode::{sample_multistep, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use crate::train::train;

#[derive(Parser)]
#[command(
    name = "gtasr",
    version,
    about = "One-step image super-resolution trained with trajectory-aligned consistency objectives",
    long_about = "Train, sample and analyze a one-step super-resolution model on synthetic \
grayscale data.\n\nExit codes: 0 success, 1 operational failure, 2 usage error.\n\
Set GTASR_THREADS to cap internal parallelism (0 or unset = auto)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_key_val(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

/// Config resolution shared by the config-driven subcommands: defaults,
/// then the file, then `--set` overrides, then dedicated flags.
#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file (# comments); omitted keys keep
    /// their defaults. Unknown or duplicate keys are errors.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set train.lr=5e-4 (repeatable;
    /// wins over the file).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_val)]
    set: Vec<(String, String)>,

    /// Run seed; wins over the file and --set.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(String, String)]) -> Result<TrainConfig> {
        let mut overrides = self.set.clone();
        overrides.extend(extra.iter().cloned());
        if let Some(seed) = self.seed {
            overrides.push(("seed".to_string(), seed.to_string()));
        }
        TrainConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Probe {
    /// Per-step fidelity of the predicted origin; CSV columns: t,psnr.
    Consistency,
    /// Pixel-vs-structural discrepancy scatter under the frozen target
    /// net; CSV columns: instance,t_prime,pixel_mae,structural_mae.
    Decoupling,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired dataset of 8-bit binary PGM files (P5,
    /// maxval 255): hr_NNNNNN.pgm / lr_NNNNNN.pgm plus manifest.txt
    /// with one "hr lr" line per pair.
    GenData {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs to write.
        #[arg(long)]
        count: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },

    /// Train one stage. Writes to the run directory: the resolved
    /// config, stageN.ckpt (parameters + optimizer state), summary.csv
    /// (val PSNR/SSIM) and stageN_metrics.csv with columns
    /// iteration,loss_total,loss_ct,loss_ta,wall_ms (stage 1) or
    /// iteration,loss_total,loss_ct,loss_dtm,loss_stab,loss_rect,wall_ms
    /// (stage 2).
    Train {
        /// Training stage; stage 2 requires --init.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
        /// Checkpoint to start from (mandatory for stage 2).
        #[arg(long, value_name = "CKPT")]
        init: Option<PathBuf>,
        /// Run directory (shorthand for --set out.dir=...).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },

    /// Restore one PGM observation with a trained checkpoint and write
    /// the result as PGM. --steps 1 is the one-step restorer; higher
    /// counts run the multi-step sampler on a uniform grid.
    Sample {
        /// Sampler steps (uniform grid).
        #[arg(long, default_value_t = 1)]
        steps: u32,
        /// Seed for the initial-state noise draw.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Degraded observation (binary PGM, already at target size).
        #[arg(long, value_name = "PGM")]
        input: PathBuf,
        /// Restored output (binary PGM).
        #[arg(long, value_name = "PGM")]
        output: PathBuf,
        /// Total steps T of the noise schedule.
        #[arg(long, default_value_t = 5)]
        t_total: u32,
        /// Schedule exponent n in (t/T)^n.
        #[arg(long, default_value_t = 1.0)]
        exponent: f64,
    },

    /// Run a read-only diagnostic probe over a frozen checkpoint and
    /// write its CSV (re-running reproduces the file byte for byte).
    /// The schedule and data parameters come from the config (probe a
    /// stage 2 checkpoint with --set stage=2).
    Analyze {
        #[arg(long, value_enum)]
        probe: Probe,
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Frozen target net for the decoupling probe; defaults to
        /// --checkpoint.
        #[arg(long, value_name = "CKPT")]
        target_checkpoint: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Re-noising step t' for the decoupling probe.
        #[arg(long, default_value_t = 2)]
        t_prime: u32,
        /// Probe instances for the decoupling probe.
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Validation instance probed by consistency.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },

    /// Re-derive the identities the training objectives rely on (drift
    /// cancellation, projection linearity, Sobel stencil values,
    /// stop-gradient partition, finite-difference gradient agreement)
    /// and print one PASS/FAIL line per check. Exits 1 if any check
    /// fails.
    Verify {
        /// Also write the report to this path.
        #[arg(long, value_name = "REPORT")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Corrupt one Sobel tap to demonstrate that the stencil
        /// checks discriminate (expected to fail).
        #[arg(long, hide = true)]
        corrupt_sobel: bool,
    },

    /// Summarize finished runs under a directory: writes report.csv
    /// (run,stage,iterations,val_psnr,val_ssim) and report_pairs.csv
    /// with paired-ablation deltas for run pairs whose configs differ
    /// in exactly one loss weight. Byte-deterministic for fixed inputs.
    Report {
        /// Directory of run directories (or a single run directory).
        run_dir: PathBuf,
    },
}

/// Parse argv and execute; returns the process exit code.
pub fn run() -> u8 {
    init_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("GTASR_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn clamp01(t: &Tensor) -> Result<Tensor> {
    Tensor::from_vec(
        t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        t.shape(),
    )
}

fn load_net(path: &Path) -> Result<PredictorNet> {
    let (arrays, _) = load_checkpoint(path)?;
    PredictorNet::from_arrays(&arrays)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { out, count, cfg } => {
            let cfg = cfg.resolve(&[])?;
            let manifest = data::generate_dataset(&out, count, &cfg.data_config())?;
            println!("wrote {count} pairs; manifest at {}", manifest.display());
            Ok(())
        }

        Command::Train {
            stage,
            init,
            out,
            cfg,
        } => {
            let mut extra = Vec::new();
            if let Some(s) = stage {
                extra.push(("stage".to_string(), s.to_string()));
            }
            if let Some(dir) = &out {
                extra.push(("out.dir".to_string(), dir.display().to_string()));
            }
            let cfg = cfg.resolve(&extra)?;
            let report = train(&cfg, init.as_deref())?;
            println!(
                "stage {} finished after {} iterations: val PSNR {:.3} dB, val SSIM {:.4}",
                cfg.stage.as_u8(),
                report.iterations,
                report.val_psnr,
                report.val_ssim
            );
            println!("checkpoint: {}", report.checkpoint.display());
            Ok(())
        }

        Command::Sample {
            steps,
            seed,
            checkpoint,
            input,
            output,
            t_total,
            exponent,
        } => {
            let net = load_net(&checkpoint)?;
            let y0 = data::read_pgm(&input)?;
            let schedule = NoiseSchedule::new(t_total, exponent)?;
            let sampler = SamplerConfig::new(steps, schedule)?;
            let restored = clamp01(&sample_multistep(&net, &y0, &sampler, seed)?)?;
            data::write_pgm(&output, &restored)?;
            println!("wrote {}", output.display());
            Ok(())
        }

        Command::Analyze {
            probe,
            checkpoint,
            target_checkpoint,
            out,
            t_prime,
            count,
            index,
            cfg,
        } => {
            let cfg = cfg.resolve(&[])?;
            let net = load_net(&checkpoint)?;
            let schedule = cfg.schedule_for(cfg.stage)?;
            let csv = match probe {
                Probe::Consistency => {
                    let (x0, y0) = data::sample(&cfg.data_config(), Split::Val, index)?;
                    probe_csv(&consistency_probe(&net, &x0, &y0, &schedule, cfg.seed)?)
                }
                Probe::Decoupling => {
                    let target = match &target_checkpoint {
                        Some(p) => load_net(p)?,
                        None => net.clone(),
                    };
                    scatter_csv(&decoupling_scatter(
                        &net,
                        &target,
                        &cfg.data_config(),
                        &schedule,
                        t_prime,
                        count,
                        cfg.seed,
                    )?)
                }
            };
            write_text(&out, &csv)?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::Verify {
            out,
            seed,
            corrupt_sobel,
        } => {
            let report = verify_math(seed, corrupt_sobel)?;
            print!("{}", report.render());
            if let Some(path) = &out {
                write_report(&report, path)?;
            }
            if report.all_passed() {
                Ok(())
            } else {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name)
                    .collect();
                Err(Error::Verification(failed.join(", ")))
            }
        }

        Command::Report { run_dir } => report_runs(&run_dir),
    }
}

// --- run aggregation --------------------------------------------------------

struct RunSummary {
    name: String,
    stage: String,
    iterations: String,
    val_psnr: f64,
    val_ssim: f64,
    config: BTreeMap<String, String>,
}

fn read_run(dir: &Path, name: String) -> Result<RunSummary> {
    let summary_path = dir.join("summary.csv");
    let text = std::fs::read_to_string(&summary_path)
        .map_err(|e| Error::io(format!("reading {}", summary_path.display()), e))?;
    let row = text.lines().nth(1).ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no data row", summary_path.display()))
    })?;
    let fields: Vec<&str> = row.split(',').collect();
    if fields.len() != 5 {
        return Err(Error::InvalidArgument(format!(
            "{} row has {} fields, expected 5",
            summary_path.display(),
            fields.len()
        )));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidArgument(format!("bad number `{s}` in summary.csv")))
    };
    let config_path = dir.join("config.resolved.txt");
    let config_text = std::fs::read_to_string(&config_path)
        .map_err(|e| Error::io(format!("reading {}", config_path.display()), e))?;
    let mut config = BTreeMap::new();
    for line in config_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            config.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(RunSummary {
        name,
        stage: fields[0].to_string(),
        iterations: fields[1].to_string(),
        val_psnr: parse(fields[3])?,
        val_ssim: parse(fields[4])?,
        config,
    })
}

/// Keys whose values differ between two resolved configs, ignoring the
/// run directory itself.
fn config_diff<'a>(a: &'a RunSummary, b: &'a RunSummary) -> Vec<&'a str> {
    let mut keys: Vec<&str> = Vec::new();
    for (k, va) in &a.config {
        if k == "out.dir" {
            continue;
        }
        if b.config.get(k) != Some(va) {
            keys.push(k);
        }
    }
    for k in b.config.keys() {
        if k != "out.dir" && !a.config.contains_key(k) {
            keys.push(k);
        }
    }
    keys
}

fn report_runs(run_dir: &Path) -> Result<()> {
    let mut runs: Vec<RunSummary> = Vec::new();
    if run_dir.join("summary.csv").exists() {
        let name = run_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| ".".to_string());
        runs.push(read_run(run_dir, name)?);
    } else {
        let entries = std::fs::read_dir(run_dir)
            .map_err(|e| Error::io(format!("reading {}", run_dir.display()), e))?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("summary.csv").exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            runs.push(read_run(&dir, name)?);
        }
    }
    if runs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no finished runs (summary.csv) under {}",
            run_dir.display()
        )));
    }
    runs.sort_by(|a, b| a.name.cmp(&b.name));

    let mut rows = String::from("run,stage,iterations,val_psnr,val_ssim\n");
    println!("run summaries:");
    for r in &runs {
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            r.name, r.stage, r.iterations, r.val_psnr, r.val_ssim
        ));
        println!(
            "  {}: stage {}, {} iterations, val PSNR {:.3} dB, val SSIM {:.4} (loss curves: {}/stage{}_metrics.csv)",
            r.name, r.stage, r.iterations, r.val_psnr, r.val_ssim, r.name, r.stage
        );
    }

    let mut pairs =
        String::from("key,run_hi,run_lo,value_hi,value_lo,delta_val_psnr,delta_val_ssim\n");
    let mut pair_count = 0usize;
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let diff = config_diff(&runs[i], &runs[j]);
            let [key] = diff.as_slice() else { continue };
            if !key.starts_with("loss.lambda") {
                continue;
            }
            let key = key.to_string();
            let va: f64 = runs[i].config[&key].parse().unwrap_or(f64::NAN);
            let vb: f64 = runs[j].config[&key].parse().unwrap_or(f64::NAN);
            let (hi, lo) = if va >= vb {
                (&runs[i], &runs[j])
            } else {
                (&runs[j], &runs[i])
            };
            let d_psnr = hi.val_psnr - lo.val_psnr;
            let d_ssim = hi.val_ssim - lo.val_ssim;
            pairs.push_str(&format!(
                "{key},{},{},{},{},{},{}\n",
                hi.name, lo.name, hi.config[&key], lo.config[&key], d_psnr, d_ssim
            ));
            println!(
                "ablation {key}: {} ({}) vs {} ({}): delta val PSNR {:+.4} dB, delta val SSIM {:+.5}",
                hi.name, hi.config[&key], lo.name, lo.config[&key], d_psnr, d_ssim
            );
            pair_count += 1;
        }
    }
    if pair_count == 0 {
        println!("no paired ablations found (pairs must differ in exactly one loss weight)");
    }

    write_text(&run_dir.join("report.csv"), &rows)?;
    write_text(&run_dir.join("report_pairs.csv"), &pairs)?;
    println!(
        "wrote {} and {}",
        run_dir.join("report.csv").display(),
        run_dir.join("report_pairs.csv").display()
    );
    Ok(())
}
