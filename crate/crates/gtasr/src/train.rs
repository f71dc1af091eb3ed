//! The two-stage training driver.
//!
//! Stage I trains the online net against its own per-iteration
//! reference copy (consistency + trajectory alignment); Stage II
//! continues from a Stage I checkpoint and adds the three discrepancy
//! losses under a hard-synced frozen target net. Every random draw
//! comes from a named, per-purpose stream of the run seed, so two runs
//! that differ only in loss weights still see identical batches, time
//! draws and noise — ablations stay paired sample for sample.
//!
//! Outputs per run directory:
//! - `config.resolved.txt` — every config key, sorted, byte-stable;
//! - `stage{1,2}_metrics.csv` — `iteration`, per-component losses,
//!   `wall_ms` rows at the log interval (plus first and last);
//! - `stage{1,2}.ckpt` — parameters and optimizer state;
//! - `summary.csv` — final validation PSNR/SSIM.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use crate::analysis::{psnr, ssim};
use crate::config::{Stage, TrainConfig};
use crate::data::{self, DataConfig, Split};
use crate::error::{Error, Result};
use crate::losses::{
    self, loss_ct_with, loss_dtm, loss_rect, loss_stab, loss_ta_projected, LossTerms, Metrics,
};
use crate::model::{
    load_checkpoint, save_checkpoint, CheckpointMeta, NetworkTriplet, PredictorNet,
};
use crate::optim::Adam;
use crate::pfode::{sample_onestep, Predictor};
use crate::rng::{self, streams};
use crate::schedule::{forward_project, NoiseSchedule};
use crate::tensor::{Tape, Tensor};

/// Validation instances scored at the end of every run.
pub const VAL_COUNT: u64 = 32;

/// What a finished run reports back to the caller.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub iterations: u64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Serialize the online parameters followed by the optimizer moments
/// (`opt.m.*`, `opt.v.*`, `opt.step`), always in parameter order, so a
/// fixed training state has exactly one byte representation.
fn write_run_checkpoint(
    path: &Path,
    net: &PredictorNet,
    opt: &Adam,
    meta: CheckpointMeta,
) -> Result<()> {
    let (m, v) = opt.moments();
    let mut owned: Vec<(String, Tensor)> = Vec::new();
    for (i, (name, p)) in net.params().iter().enumerate() {
        owned.push((
            format!("opt.m.{name}"),
            Tensor::from_vec(m[i].clone(), p.shape())?,
        ));
        owned.push((
            format!("opt.v.{name}"),
            Tensor::from_vec(v[i].clone(), p.shape())?,
        ));
    }
    owned.push((
        "opt.step".to_string(),
        Tensor::from_vec(vec![opt.step_count() as f32], &[1])?,
    ));
    let mut arrays: Vec<(String, &Tensor)> = net
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), t))
        .collect();
    arrays.extend(owned.iter().map(|(n, t)| (n.clone(), t)));
    save_checkpoint(path, &arrays, meta)
}

/// Load a checkpoint into a net matching `cfg`, plus the optimizer
/// state when the file carries a complete set of moments.
fn restore(path: &Path, cfg: &TrainConfig) -> Result<(PredictorNet, Option<Adam>)> {
    let (arrays, _meta) = load_checkpoint(path)?;
    let net = PredictorNet::from_arrays(&arrays)?;
    let want = cfg.net_config();
    if net.config().base_width != want.base_width || net.config().depth != want.depth {
        return Err(Error::Config(format!(
            "checkpoint {} holds a width {} / depth {} net but the config asks for width {} / depth {}",
            path.display(),
            net.config().base_width,
            net.config().depth,
            want.base_width,
            want.depth
        )));
    }
    let lookup = |name: &str| {
        arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.to_vec())
    };
    let mut m = Vec::new();
    let mut v = Vec::new();
    let mut complete = true;
    for (name, _) in net.params() {
        match (
            lookup(&format!("opt.m.{name}")),
            lookup(&format!("opt.v.{name}")),
        ) {
            (Some(a), Some(b)) => {
                m.push(a);
                v.push(b);
            }
            _ => {
                complete = false;
                break;
            }
        }
    }
    let step = lookup("opt.step").and_then(|s| s.first().copied());
    let opt = match (complete, step) {
        (true, Some(s)) => Some(Adam::from_state(
            cfg.stage_lr(),
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
            s as u64,
            m,
            v,
        )?),
        _ => None,
    };
    Ok((net, opt))
}

/// Mean validation PSNR/SSIM of one-step restorations (clamped to
/// [0, 1]) over the first `count` validation instances.
pub fn eval_val(
    net: &dyn Predictor,
    data_cfg: &DataConfig,
    schedule: &NoiseSchedule,
    count: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "validation needs at least one instance".into(),
        ));
    }
    let (mut p_acc, mut s_acc) = (0.0f64, 0.0f64);
    for k in 0..count {
        let (x0, y0) = data::sample(data_cfg, Split::Val, k)?;
        let instance_seed = data::sample_seed(seed, Split::Val, k);
        let pred = sample_onestep(net, &y0, schedule, instance_seed)?;
        let pred = Tensor::from_vec(
            pred.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            pred.shape(),
        )?;
        p_acc += psnr(&pred, &x0)?;
        s_acc += ssim(&pred, &x0)?;
    }
    Ok((p_acc / count as f64, s_acc / count as f64))
}

/// Run one training stage per the config; Stage II requires `init`.
pub fn train(cfg: &TrainConfig, init: Option<&Path>) -> Result<TrainReport> {
    train_observed(cfg, init, |_, _| {})
}

/// [`train`] with a per-iteration observer called after each optimizer
/// step, used by lifecycle probes to watch the reference/target copies
/// without disturbing the run.
pub fn train_observed<F>(cfg: &TrainConfig, init: Option<&Path>, mut observe: F) -> Result<TrainReport>
where
    F: FnMut(u64, &NetworkTriplet),
{
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(format!("creating {}", cfg.out_dir.display()), e))?;
    write_text(&cfg.out_dir.join("config.resolved.txt"), &cfg.resolved())?;

    let stage_no = cfg.stage.as_u8();
    let iters = match cfg.stage {
        Stage::One => cfg.iters_stage1,
        Stage::Two => cfg.iters_stage2,
    };

    let (online, restored_opt) = match (cfg.stage, init) {
        (Stage::Two, None) => {
            return Err(Error::InvalidArgument(
                "stage 2 continues from a stage 1 checkpoint; pass --init".into(),
            ))
        }
        (_, Some(path)) => restore(path, cfg)?,
        (Stage::One, None) => (PredictorNet::new(cfg.net_config(), cfg.seed)?, None),
    };
    let mut triplet = NetworkTriplet::new(online);

    let sizes: Vec<usize> = triplet
        .online
        .params()
        .iter()
        .map(|(_, t)| t.numel())
        .collect();
    let mut opt = match restored_opt {
        Some(o) => o,
        None => Adam::new(cfg.stage_lr(), cfg.beta1, cfg.beta2, cfg.adam_eps, &sizes)?,
    };

    let base_schedule = cfg.schedule_for(cfg.stage)?;
    let late_schedule = if cfg.t_late >= 1 && cfg.switch_iter > 0 {
        let n = match cfg.stage {
            Stage::One => cfg.exponent_stage1,
            Stage::Two => cfg.exponent_stage2,
        };
        Some(NoiseSchedule::new(cfg.t_late, n)?)
    } else {
        None
    };
    let schedule_at = |i: u64| -> &NoiseSchedule {
        match &late_schedule {
            Some(late) if i > cfg.switch_iter => late,
            _ => &base_schedule,
        }
    };

    let metrics = Metrics::new(cfg.percep_seed).with_charbonnier_eps(cfg.charbonnier_eps)?;
    let weights = cfg.loss_weights();
    let data_cfg = cfg.data_config();
    let mut batches = data::batch_stream(&data_cfg, Split::Train)?;

    // One independent stream per random purpose: consuming one never
    // shifts another, so ablation runs stay paired.
    let mut rng_time_ct = rng::seeded(cfg.seed, streams::TIME_CT);
    let mut rng_noise_ct = rng::seeded(cfg.seed, streams::NOISE_CT);
    let mut rng_noise_ta = rng::seeded(cfg.seed, streams::NOISE_TA);
    let mut rng_time_dtm = rng::seeded(cfg.seed, streams::TIME_DTM);
    let mut rng_noise_dtm = rng::seeded(cfg.seed, streams::NOISE_DTM);

    let mut csv = String::new();
    match cfg.stage {
        Stage::One => csv.push_str("iteration,loss_total,loss_ct,loss_ta,wall_ms\n"),
        Stage::Two => {
            csv.push_str("iteration,loss_total,loss_ct,loss_dtm,loss_stab,loss_rect,wall_ms\n")
        }
    }
    let started = Instant::now();

    for i in 1..=iters {
        let schedule = schedule_at(i);
        let t_total = schedule.t_total();
        if cfg.stage == Stage::Two && (i - 1) % cfg.sync_period == 0 {
            triplet.sync_target();
        }
        triplet.copy_reference();

        let (x0, y0) = batches.next().expect("batch stream is endless");
        let t = rng_time_ct.gen_range(1..=t_total);
        let eps = rng::randn(x0.shape(), &mut rng_noise_ct);

        let tape = Tape::new();
        let live = triplet.online.attach(&tape);
        let x_t = forward_project(schedule, &x0, &y0, t, &eps)?;
        let x0_hat = live.predict(&x_t, &y0, t, t_total)?;

        let mut terms = LossTerms {
            ct: Some(loss_ct_with(
                &x0_hat,
                &triplet.reference,
                &x0,
                &y0,
                t,
                &eps,
                schedule,
                &metrics,
            )?),
            ..LossTerms::default()
        };
        match cfg.stage {
            Stage::One => {
                if weights.lambda_ta != 0.0 {
                    terms.ta = Some(loss_ta_projected(
                        &x0_hat,
                        &x0,
                        &y0,
                        schedule,
                        &metrics,
                        &mut rng_noise_ta,
                    )?);
                }
            }
            Stage::Two => {
                // t' and its noise are drawn even for zero weights so
                // weight ablations never shift later draws.
                let t_prime = rng_time_dtm.gen_range(1..=t_total);
                let eps_p = rng::randn(x0.shape(), &mut rng_noise_dtm);
                if weights.lambda_dtm != 0.0 {
                    terms.dtm = Some(loss_dtm(
                        &triplet.target,
                        &x0_hat,
                        &x0,
                        &y0,
                        t_prime,
                        &eps_p,
                        schedule,
                        &metrics,
                    )?);
                }
                if weights.lambda_stab != 0.0 {
                    terms.stab = Some(loss_stab(
                        &triplet.target,
                        &x0_hat,
                        &x0,
                        &y0,
                        t_prime,
                        &eps_p,
                        schedule,
                        &metrics,
                        cfg.stab_mode,
                    )?);
                }
                if weights.lambda_rect != 0.0 {
                    terms.rect = Some(loss_rect(
                        &live, &x0, &y0, t_prime, &eps_p, schedule, &metrics,
                    )?);
                }
            }
        }

        let total = losses::stage_totals(&terms, stage_no, &weights)?;
        let total_v = total.item();
        if !total_v.is_finite() {
            return Err(Error::NanLoss {
                iteration: i,
                batch_seed: data::sample_seed(
                    cfg.seed,
                    Split::Train,
                    (i - 1) * cfg.batch_size as u64,
                ),
            });
        }

        let grads = total.backward()?;
        let grad_vecs: Vec<Vec<f32>> = live
            .params()
            .iter()
            .map(|(_, p)| grads.wrt_or_zeros(p))
            .collect();
        let mut param_vecs: Vec<Vec<f32>> = triplet
            .online
            .params()
            .iter()
            .map(|(_, t)| t.to_vec())
            .collect();
        opt.step(&mut param_vecs, &grad_vecs)?;
        for (idx, vals) in param_vecs.into_iter().enumerate() {
            triplet.online.set_param(idx, vals)?;
        }

        if i == 1 || i % cfg.log_every == 0 || i == iters {
            let item = |t: &Option<Tensor>| t.as_ref().map_or(0.0, Tensor::item);
            let ms = started.elapsed().as_millis();
            match cfg.stage {
                Stage::One => {
                    let _ = writeln!(
                        csv,
                        "{i},{total_v},{},{},{ms}",
                        item(&terms.ct),
                        item(&terms.ta)
                    );
                }
                Stage::Two => {
                    let _ = writeln!(
                        csv,
                        "{i},{total_v},{},{},{},{},{ms}",
                        item(&terms.ct),
                        item(&terms.dtm),
                        item(&terms.stab),
                        item(&terms.rect)
                    );
                }
            }
        }
        observe(i, &triplet);
    }

    write_text(
        &cfg.out_dir.join(format!("stage{stage_no}_metrics.csv")),
        &csv,
    )?;
    let checkpoint = cfg.out_dir.join(format!("stage{stage_no}.ckpt"));
    write_run_checkpoint(
        &checkpoint,
        &triplet.online,
        &opt,
        CheckpointMeta {
            iteration: iters as u32,
            stage: stage_no,
        },
    )?;

    let (val_psnr, val_ssim) = eval_val(
        &triplet.online,
        &data_cfg,
        schedule_at(iters.max(1)),
        VAL_COUNT,
        cfg.seed,
    )?;
    write_text(
        &cfg.out_dir.join("summary.csv"),
        &format!(
            "stage,iterations,val_count,val_psnr,val_ssim\n{stage_no},{iters},{VAL_COUNT},{val_psnr},{val_ssim}\n"
        ),
    )?;

    Ok(TrainReport {
        checkpoint,
        iterations: iters,
        val_psnr,
        val_ssim,
    })
}
