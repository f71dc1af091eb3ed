//! Acceptance suite: one test per behavioural criterion the build
//! commits to, each printing a single `criterion NN PASS/FAIL: ...`
//! line with its pinned tolerance and the measured value (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! Criteria 7, 9 and 10 score trained checkpoints at the full desk
//! configuration (3000 stage-1 iterations on 32x32 images), so this
//! binary trains eight runs on first demand and shares them across
//! tests; expect roughly an hour and a half of single-core wall time.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gtasr::analysis::decoupling_scatter;
use gtasr::config::{Stage, TrainConfig};
use gtasr::data::{self, Split};
use gtasr::losses::{
    charbonnier, delta_dtm, delta_stab, loss_ct, loss_ct_with, loss_dtm, loss_rect, loss_stab,
    loss_ta, loss_tp, omega, sobel, stage_totals, LossTerms, LossWeights, Metrics,
    StabChannelMode, CHARBONNIER_EPS,
};
use gtasr::model::{load_checkpoint, save_checkpoint, NetConfig, PatchedPredictor, PredictorNet};
use gtasr::pfode::{sample_multistep, sample_onestep, OraclePredictor, Predictor, SamplerConfig};
use gtasr::rng::{self, streams};
use gtasr::schedule::{drift_residual_mismatched, forward_project, NoiseSchedule};
use gtasr::tensor::{finite_difference_check, Tape, Tensor};
use gtasr::train::{train, train_observed, TrainReport};

/// Print the criterion verdict line, then enforce it.
fn check(n: u32, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("criterion {n:02} {tag}: {detail}");
    assert!(passed, "criterion {n:02} FAIL: {detail}");
}

fn uniform(seed: u64, stream: u64, shape: &[usize]) -> Tensor {
    rng::rand_uniform(shape, 0.0, 1.0, &mut rng::seeded(seed, stream))
}

fn max_abs(t: &Tensor) -> f32 {
    t.data().iter().fold(0.0f32, |m, v| m.max(v.abs()))
}

fn l1_sum(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v.abs() as f64).sum()
}

// --- shared trained artifacts ----------------------------------------------

struct TimedRun {
    report: TrainReport,
    wall: Duration,
}

fn scratch_dir() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("gtasr-acceptance-{}", std::process::id()));
        std::fs::create_dir_all(&dir).expect("scratch dir");
        dir
    })
}

fn run_stage1(seed: u64, lambda_ta: f32) -> TimedRun {
    let cfg = TrainConfig {
        seed,
        out_dir: scratch_dir().join(format!("s{seed}_ta{lambda_ta}")),
        lambda_ta,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let report = train(&cfg, None).expect("stage 1 run");
    TimedRun {
        report,
        wall: t0.elapsed(),
    }
}

/// Stage 1 at the desk configuration for seeds 42..44, with and
/// without the alignment loss (six runs, trained once per process).
struct Stage1Runs {
    on: Vec<TimedRun>,
    off: Vec<TimedRun>,
}

fn stage1_runs() -> &'static Stage1Runs {
    static RUNS: OnceLock<Stage1Runs> = OnceLock::new();
    RUNS.get_or_init(|| Stage1Runs {
        on: [42, 43, 44].map(|s| run_stage1(s, 0.5)).into(),
        off: [42, 43, 44].map(|s| run_stage1(s, 0.0)).into(),
    })
}

/// Stage 2 from the seed-42 stage 1 checkpoint: the full objective vs
/// the variant with the structural losses removed, same seed/budget.
struct Stage2Pair {
    full: TimedRun,
    dtm_only: TimedRun,
}

fn stage2_pair() -> &'static Stage2Pair {
    static PAIR: OnceLock<Stage2Pair> = OnceLock::new();
    PAIR.get_or_init(|| {
        let init = stage1_runs().on[0].report.checkpoint.clone();
        let run = |name: &str, lambda_stab: f32, lambda_rect: f32| {
            let cfg = TrainConfig {
                stage: Stage::Two,
                out_dir: scratch_dir().join(name),
                lambda_stab,
                lambda_rect,
                ..TrainConfig::default()
            };
            let t0 = Instant::now();
            let report = train(&cfg, Some(&init)).expect("stage 2 run");
            TimedRun {
                report,
                wall: t0.elapsed(),
            }
        };
        Stage2Pair {
            full: run("stage2_full", 0.032, 1.0),
            dtm_only: run("stage2_dtm_only", 0.0, 0.0),
        }
    })
}

fn load_net(path: &Path) -> PredictorNet {
    let (arrays, _) = load_checkpoint(path).expect("checkpoint loads");
    PredictorNet::from_arrays(&arrays).expect("net reconstructs")
}

// --- criteria ----------------------------------------------------------------

#[test]
fn criterion_01_drift_cancellation() {
    let t0 = Instant::now();
    let t_total = 5u32;
    let mut worst = 0.0f64;
    for n in [1.0, 2.5] {
        let s = NoiseSchedule::new(t_total, n).unwrap();
        for i in 1..=50 {
            let t = t_total as f64 * i as f64 / 51.0;
            worst = worst.max(s.drift_residual(t).unwrap().abs());
        }
    }
    let matched = worst < 1e-9;

    // deliberately mismatched exponents (2, 1): residual t/T^2, which
    // is 0.5/T at t = 0.5T
    let got = drift_residual_mismatched(t_total, 2.0, 1.0, 0.5 * t_total as f64).unwrap();
    let want = 0.5 / t_total as f64;
    let mismatched = (got - want).abs() < 1e-6;
    let fast = t0.elapsed() < Duration::from_secs(1);

    check(
        1,
        matched && mismatched && fast,
        &format!(
            "matched max |residual| {worst:.3e} (tol 1e-9) on 50-point grid, n in {{1.0, 2.5}}; \
             mismatched residual {got:.9} vs hand value {want} (tol 1e-6); {:?} (< 1s)",
            t0.elapsed()
        ),
    );
}

#[test]
fn criterion_02_oracle_sampler_exactness() {
    let t0 = Instant::now();
    let s = NoiseSchedule::new(5, 2.5).unwrap();
    let shape = [1usize, 1, 16, 16];
    let mut worst = 0.0f32;
    for k in 0..10u64 {
        let x0 = uniform(200 + k, 50, &shape);
        let y0 = uniform(300 + k, 50, &shape);
        let oracle = OraclePredictor { x0: x0.clone() };
        for steps in [1u32, 2, 4, 5] {
            let cfg = SamplerConfig::new(steps, s.clone()).unwrap();
            let out = sample_multistep(&oracle, &y0, &cfg, 400 + k).unwrap();
            worst = worst.max(max_abs(&out.sub(&x0).unwrap()));
        }
    }
    let fast = t0.elapsed() < Duration::from_secs(5);
    check(
        2,
        worst < 1e-5 && fast,
        &format!(
            "max recovery error {worst:.3e} (tol 1e-5) over 10 instances x steps {{1,2,4,5}}; {:?} (< 5s)",
            t0.elapsed()
        ),
    );
}

#[test]
fn criterion_03_projection_difference_identity() {
    let s = NoiseSchedule::new(5, 2.5).unwrap();
    let shape = [1usize, 1, 8, 8];

    let mut worst_q = 0.0f32;
    for k in 0..10u64 {
        let a = uniform(500 + k, 51, &shape);
        let b = uniform(600 + k, 51, &shape);
        let y0 = uniform(700 + k, 51, &shape);
        let eps = rng::randn(&shape, &mut rng::seeded(800 + k, 51));
        for t in 1..=5u32 {
            let lhs = forward_project(&s, &a, &y0, t, &eps)
                .unwrap()
                .sub(&forward_project(&s, &b, &y0, t, &eps).unwrap())
                .unwrap();
            let coeff = 1.0 - s.alpha(t as f64).unwrap() as f32;
            let rhs = a.sub(&b).unwrap().scale(coeff).unwrap();
            worst_q = worst_q.max(max_abs(&lhs.sub(&rhs).unwrap()));
        }
    }

    // pixel component of each alignment term collapses to a
    // deterministic Charbonnier of the shrunk origin gap
    let x0 = uniform(900, 52, &shape);
    let x0_hat = uniform(901, 52, &shape);
    let y0 = uniform(902, 52, &shape);
    let zeros = Tensor::zeros(&shape);
    let mut worst_ta = 0.0f32;
    for t in 1..=5u32 {
        let eps = rng::randn(&shape, &mut rng::seeded(903 + t as u64, 52));
        let qa = forward_project(&s, &x0_hat, &y0, t, &eps).unwrap();
        let qb = forward_project(&s, &x0, &y0, t, &eps).unwrap();
        let direct = charbonnier(&qa, &qb, CHARBONNIER_EPS).unwrap().item();
        let coeff = 1.0 - s.alpha(t as f64).unwrap() as f32;
        let gap = x0_hat.sub(&x0).unwrap().scale(coeff).unwrap();
        let reduced = charbonnier(&gap, &zeros, CHARBONNIER_EPS).unwrap().item();
        worst_ta = worst_ta.max((direct - reduced).abs());
    }

    check(
        3,
        worst_q < 1e-6 && worst_ta < 1e-5,
        &format!(
            "projection-difference max error {worst_q:.3e} (tol 1e-6) over 10 instances x t in 1..=5; \
             alignment pixel-component max gap {worst_ta:.3e} (tol 1e-5) over s in 1..=5"
        ),
    );
}

/// Mean across channels of a detached NCHW tensor (mirrors the
/// structural loss's bracket construction).
fn channel_mean(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    let data = x.data();
    let mut out = vec![0f32; n * plane];
    for i in 0..n {
        for ch in 0..c {
            let src = (i * c + ch) * plane;
            for p in 0..plane {
                out[i * plane + p] += data[src + p] / c as f32;
            }
        }
    }
    Tensor::from_vec(out, &[n, 1, h, w]).unwrap()
}

fn probe_param<F>(net: &PredictorNet, name: &str, h: f32, loss: F) -> f32
where
    F: Fn(&dyn Predictor) -> gtasr::Result<Tensor>,
{
    let idx = net.param_index(name).expect("parameter exists");
    let base = net.params()[idx].1.detach();
    finite_difference_check(
        |p| {
            let patched = PatchedPredictor {
                net,
                idx,
                values: p.clone(),
            };
            loss(&patched)
        },
        &base,
        h,
    )
    .expect("probe evaluates")
}

#[test]
fn criterion_04_gradient_fidelity() {
    // Probe instances are pinned: a conditioning scan picked them so
    // every probed output-kernel coordinate carries gradient well above
    // the f32 central-difference noise floor ulp(|L|)/2h at h = 2e-2.
    let t0 = Instant::now();
    const FD_H: f32 = 2e-2;
    let shape = [1usize, 1, 8, 8];
    let m = Metrics::new(42);
    let s = NoiseSchedule::new(5, 2.5).unwrap();
    let x0 = uniform(100, 90, &shape);
    let y0 = uniform(101, 90, &shape);
    let noise = rng::randn(&shape, &mut rng::seeded(102, 96));
    let noise_p = rng::randn(&shape, &mut rng::seeded(103, 103));
    let tiny = NetConfig {
        base_width: 4,
        depth: 1,
    };
    let online = PredictorNet::new(tiny.clone(), 104).unwrap();
    let reference = PredictorNet::new(tiny.clone(), 105).unwrap();
    let target = PredictorNet::new(tiny, 106).unwrap();
    let (t, t_prime) = (3u32, 2u32);

    let e_ct = probe_param(&online, "out.w", FD_H, |p| {
        loss_ct(p, &reference, &x0, &y0, t, &noise, &s, &m)
    });
    let e_tp = probe_param(&online, "out.w", FD_H, |p| {
        loss_tp(p, &x0, &y0, t, &noise, &s, &m)
    });
    let e_ta = probe_param(&online, "out.w", FD_H, |p| {
        let mut r = rng::seeded(107, 99);
        loss_ta(p, &x0, &y0, t, &noise, &s, &m, &mut r)
    });

    // bracketed losses: freeze the stop-gradient branch at the base
    // prediction, exactly as backprop sees it
    let x_t = forward_project(&s, &x0, &y0, t, &noise).unwrap();
    let x0_hat_base = online.predict(&x_t, &y0, t, 5).unwrap();
    let w = omega(&x0_hat_base, &x0).unwrap();

    let delta = delta_dtm(&target, &x0_hat_base, &x0, &y0, t_prime, &noise_p, &s).unwrap();
    let bracket = x0_hat_base.detach().sub(&delta).unwrap();
    let e_dtm = probe_param(&online, "out.w", FD_H, |p| {
        let pred = p.predict(&x_t, &y0, t, 5)?;
        m.d_ii(&pred, &bracket)?.scale(w)
    });

    let delta = delta_stab(&target, &x0_hat_base, &x0, &y0, t_prime, &noise_p, &s).unwrap();
    let bracket = x0_hat_base.detach().sub(&channel_mean(&delta)).unwrap();
    let e_stab = probe_param(&online, "out.w", FD_H, |p| {
        let pred = p.predict(&x_t, &y0, t, 5)?;
        m.d_ii(&pred, &bracket)?.scale(w)
    });

    let e_rect = probe_param(&online, "out.w", FD_H, |p| {
        loss_rect(p, &x0, &y0, t_prime, &noise_p, &s, &m)
    });

    // forward pass: mean(predict) is linear in the output kernel (big
    // step, zero truncation); the input probe takes a smaller step
    let e_fwd_w = probe_param(&online, "out.w", 0.1, |p| p.predict(&x_t, &y0, t, 5)?.mean());
    let e_fwd_x = finite_difference_check(
        |x| online.predict(x, &y0, t, 5)?.mean(),
        &x_t.detach(),
        0.01,
    )
    .unwrap();

    let errs = [e_ct, e_tp, e_ta, e_dtm, e_stab, e_rect, e_fwd_w, e_fwd_x];
    let passed = errs.iter().all(|e| *e < 1e-3) && t0.elapsed() < Duration::from_secs(60);
    check(
        4,
        passed,
        &format!(
            "max relative gradient error (tol 1e-3 each): ct {e_ct:.3e}, tp {e_tp:.3e}, \
             ta {e_ta:.3e}, dtm {e_dtm:.3e}, stab {e_stab:.3e}, rect {e_rect:.3e}, \
             forward/kernel {e_fwd_w:.3e}, forward/input {e_fwd_x:.3e}; {:?} (< 60s)",
            t0.elapsed()
        ),
    );
}

#[test]
fn criterion_05_stop_gradient_partition() {
    // One full second-stage iteration with all three parameter sets on
    // one tape: every gradient must land on the online set only.
    let s = NoiseSchedule::new(5, 1.0).unwrap();
    let m = Metrics::new(42);
    let tiny = NetConfig {
        base_width: 4,
        depth: 1,
    };
    let online_net = PredictorNet::new(tiny.clone(), 104).unwrap();
    let reference_net = PredictorNet::new(tiny.clone(), 105).unwrap();
    let target_net = PredictorNet::new(tiny, 106).unwrap();
    let shape = [2usize, 1, 8, 8];
    let x0 = uniform(110, 53, &shape);
    let y0 = uniform(111, 53, &shape);
    let eps = rng::randn(&shape, &mut rng::seeded(112, 53));
    let eps_p = rng::randn(&shape, &mut rng::seeded(113, 53));
    let (t, t_prime) = (3u32, 2u32);

    let tape = Tape::new();
    let online = online_net.attach(&tape);
    let reference = reference_net.attach(&tape);
    let target = target_net.attach(&tape);

    let x_t = forward_project(&s, &x0, &y0, t, &eps).unwrap();
    let x0_hat = online.predict(&x_t, &y0, t, 5).unwrap();
    let terms = LossTerms {
        ct: Some(loss_ct_with(&x0_hat, &reference, &x0, &y0, t, &eps, &s, &m).unwrap()),
        dtm: Some(loss_dtm(&target, &x0_hat, &x0, &y0, t_prime, &eps_p, &s, &m).unwrap()),
        stab: Some(
            loss_stab(
                &target,
                &x0_hat,
                &x0,
                &y0,
                t_prime,
                &eps_p,
                &s,
                &m,
                StabChannelMode::Average,
            )
            .unwrap(),
        ),
        rect: Some(loss_rect(&online, &x0, &y0, t_prime, &eps_p, &s, &m).unwrap()),
        ta: None,
    };
    let total = stage_totals(&terms, 2, &LossWeights::default()).unwrap();
    let grads = total.backward().unwrap();

    let online_nonzero = online
        .params()
        .iter()
        .any(|(_, p)| grads.wrt_or_zeros(p).iter().any(|g| *g != 0.0));
    let frozen_zero = reference
        .params()
        .iter()
        .chain(target.params())
        .all(|(_, p)| grads.wrt_or_zeros(p).iter().all(|g| *g == 0.0));

    check(
        5,
        online_nonzero && frozen_zero,
        &format!(
            "online gradients nonzero: {online_nonzero}; reference+target gradients bitwise zero: {frozen_zero} \
             (full second-stage iteration, every loss term active, t = {t}, t' = {t_prime})"
        ),
    );
}

#[test]
fn criterion_06_sobel_contract() {
    let shape = [1usize, 1, 8, 8];

    // linearity to 1e-6
    let u = uniform(120, 54, &shape);
    let v = uniform(121, 54, &shape);
    let (a, b) = (0.7f32, -1.3f32);
    let lhs = sobel(&u.scale(a).unwrap().add(&v.scale(b).unwrap()).unwrap()).unwrap();
    let rhs = sobel(&u)
        .unwrap()
        .scale(a)
        .unwrap()
        .add(&sobel(&v).unwrap().scale(b).unwrap())
        .unwrap();
    let lin_err = max_abs(&lhs.sub(&rhs).unwrap());

    // horizontal ramp: interior response exactly (8, 0)
    let (h, w) = (8usize, 8usize);
    let ramp: Vec<f32> = (0..h * w).map(|i| (i % w) as f32).collect();
    let maps = sobel(&Tensor::from_vec(ramp, &shape).unwrap()).unwrap();
    let d = maps.data();
    let mut ramp_ok = true;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            ramp_ok &= d[y * w + x] == 8.0 && d[h * w + y * w + x] == 0.0;
        }
    }

    // constant image: the stencil response is exactly 0 wherever the
    // stencil sees only the constant (the whole interior, bitwise);
    // the zero-padded border is a pinned artifact of the operator
    // definition, asserted at its known value rather than hidden.
    let c = 0.75f32;
    let maps = sobel(&Tensor::full(&shape, c)).unwrap();
    let d = maps.data();
    let mut const_ok = true;
    for ch in 0..2 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                const_ok &= d[ch * h * w + y * w + x] == 0.0;
            }
        }
    }
    let border_pinned = d[3 * w] == 4.0 * c // left edge, horizontal channel
        && d[3 * w + w - 1] == -4.0 * c // right edge
        && d[h * w + 3] == 4.0 * c // top edge, vertical channel
        && d[h * w + (h - 1) * w + 3] == -4.0 * c; // bottom edge

    check(
        6,
        lin_err < 1e-6 && ramp_ok && const_ok && border_pinned,
        &format!(
            "linearity max error {lin_err:.3e} (tol 1e-6); ramp interior exactly (8, 0): {ramp_ok}; \
             constant-image response exactly 0 across the full stencil interior (bitwise): {const_ok}; \
             zero-padding border artifact pinned at +-4c: {border_pinned}"
        ),
    );
}

#[test]
fn criterion_07_triangle_decomposition() {
    // 100 probes (20 validation instances x t' in 1..=5) through the
    // trained full second-stage checkpoint.
    let net = load_net(&stage2_pair().full.report.checkpoint);
    let s = NoiseSchedule::new(5, 1.0).unwrap();
    let data_cfg = TrainConfig::default().data_config();
    let mut worst = f64::NEG_INFINITY;
    let mut probes = 0;
    for k in 0..20u64 {
        let (x0, y0) = data::sample(&data_cfg, Split::Val, k).unwrap();
        let seed_k = data::sample_seed(7, Split::Val, k);
        let x0_hat = sample_onestep(&net, &y0, &s, seed_k).unwrap().detach();
        let sobel_x0 = sobel(&x0).unwrap();
        for t_prime in 1..=5u32 {
            let eps = rng::randn(
                x0.shape(),
                &mut rng::seeded(seed_k ^ t_prime as u64, streams::PROBE),
            );
            let xa = forward_project(&s, &x0_hat, &y0, t_prime, &eps).unwrap();
            let xb = forward_project(&s, &x0, &y0, t_prime, &eps).unwrap();
            let sa = sobel(&net.predict(&xa, &y0, t_prime, 5).unwrap()).unwrap();
            let sb = sobel(&net.predict(&xb, &y0, t_prime, 5).unwrap()).unwrap();
            let lhs = l1_sum(&sa.sub(&sobel_x0).unwrap());
            let term_i = l1_sum(&sa.sub(&sb).unwrap());
            let term_ii = l1_sum(&sb.sub(&sobel_x0).unwrap());
            worst = worst.max(lhs - term_i - term_ii);
            probes += 1;
        }
    }
    check(
        7,
        probes == 100 && worst <= 1e-5,
        &format!(
            "worst slack violation {worst:.3e} over {probes} probes (requirement: lhs - term_i - term_ii <= 1e-5, \
             i.e. slack >= -1e-5) on the trained checkpoint"
        ),
    );
}

#[test]
fn criterion_08_target_lifecycle() {
    // Watch target OUTPUTS on a fixed probe input through a stage-2
    // run with sync period 2: bitwise-equal to the online outputs at
    // each sync, bitwise-frozen in between.
    let dir = scratch_dir().join("lifecycle");
    let tiny = TrainConfig {
        out_dir: dir.join("s1"),
        iters_stage1: 2,
        iters_stage2: 5,
        sync_period: 2,
        batch_size: 2,
        width: 4,
        depth: 1,
        data_size: 16,
        data_scale: 2,
        ..TrainConfig::default()
    };
    let stage1 = train(&tiny, None).unwrap();

    let cfg = TrainConfig {
        stage: Stage::Two,
        out_dir: dir.join("s2"),
        ..tiny.clone()
    };
    let (x0p, y0p) = data::sample(&cfg.data_config(), Split::Val, 0).unwrap();
    let s = NoiseSchedule::new(5, 1.0).unwrap();
    let eps = rng::randn(x0p.shape(), &mut rng::seeded(9, streams::PROBE));
    let x_probe = forward_project(&s, &x0p, &y0p, 3, &eps).unwrap();
    let out_of = |net: &PredictorNet| net.predict(&x_probe, &y0p, 3, 5).unwrap().data().to_vec();

    let mut online_outs: Vec<Vec<f32>> = Vec::new();
    let mut target_outs: Vec<Vec<f32>> = Vec::new();
    train_observed(&cfg, Some(&stage1.checkpoint), |_, triplet| {
        online_outs.push(out_of(&triplet.online));
        target_outs.push(out_of(&triplet.target));
    })
    .unwrap();

    // syncs happen at iterations 1, 3, 5 (period 2); the observer runs
    // after each optimizer step, so the target matches the online
    // parameters as of the start of the sync iteration.
    let init_out = out_of(&load_net(&stage1.checkpoint));
    let synced = target_outs[0] == init_out
        && target_outs[2] == online_outs[1]
        && target_outs[4] == online_outs[3];
    let frozen = target_outs[1] == target_outs[0] && target_outs[3] == target_outs[2];
    let moving = online_outs[1] != online_outs[0];

    check(
        8,
        synced && frozen && moving,
        &format!(
            "post-sync target outputs bitwise equal online outputs: {synced}; \
             bitwise frozen between syncs: {frozen}; online outputs kept moving: {moving}"
        ),
    );
}

#[test]
fn criterion_09_ta_ablation_direction() {
    let runs = stage1_runs();
    let mut deltas = Vec::new();
    let mut detail = String::new();
    for (on, off) in runs.on.iter().zip(&runs.off) {
        let d = on.report.val_psnr - off.report.val_psnr;
        detail.push_str(&format!(
            "[with {:.3} dB vs without {:.3} dB -> {:+.3} dB] ",
            on.report.val_psnr, off.report.val_psnr, d
        ));
        deltas.push(d);
    }
    let mean: f64 = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let slowest = runs
        .on
        .iter()
        .chain(&runs.off)
        .map(|r| r.wall)
        .max()
        .unwrap();
    let within_budget = slowest < Duration::from_secs(30 * 60);
    check(
        9,
        mean >= 0.0 && within_budget,
        &format!(
            "mean val-PSNR improvement from the alignment loss {mean:+.3} dB (gate: >= 0.0 dB; \
             magnitude reported, not gated) over 3 seeds at the desk config (3000 iterations, 32x32): \
             {detail}; slowest run {slowest:?} (< 30 min)"
        ),
    );
}

#[test]
fn criterion_10_drsr_ablation_direction() {
    let pair = stage2_pair();
    let s = NoiseSchedule::new(5, 1.0).unwrap();
    let data_cfg = TrainConfig::default().data_config();
    let mean_structural = |ckpt: &Path| -> f64 {
        let net = load_net(ckpt);
        let samples = decoupling_scatter(&net, &net, &data_cfg, &s, 2, 200, 42).unwrap();
        samples.iter().map(|p| p.structural_mae).sum::<f64>() / samples.len() as f64
    };
    let full = mean_structural(&pair.full.report.checkpoint);
    let dtm_only = mean_structural(&pair.dtm_only.report.checkpoint);
    let slowest = pair.full.wall.max(pair.dtm_only.wall);
    let within_budget = slowest < Duration::from_secs(15 * 60);
    check(
        10,
        full < dtm_only && within_budget,
        &format!(
            "mean structural MAE over 200 probe instances at t' = 2: full second stage {full:.6} < \
             structural-losses-removed {dtm_only:.6} (same init, seed and budget): {}; \
             slowest run {slowest:?} (< 15 min)",
            full < dtm_only
        ),
    );
}

#[test]
fn criterion_11_determinism_and_persistence() {
    let dir = scratch_dir().join("determinism");
    let cfg_for = |name: &str| TrainConfig {
        out_dir: dir.join(name),
        iters_stage1: 4,
        batch_size: 2,
        width: 4,
        depth: 1,
        data_size: 16,
        data_scale: 2,
        ..TrainConfig::default()
    };
    let r1 = train(&cfg_for("a"), None).unwrap();
    let r2 = train(&cfg_for("b"), None).unwrap();
    let bytes1 = std::fs::read(&r1.checkpoint).unwrap();
    let identical = bytes1 == std::fs::read(&r2.checkpoint).unwrap();

    let (arrays, meta) = load_checkpoint(&r1.checkpoint).unwrap();
    let refs: Vec<(String, &Tensor)> = arrays.iter().map(|(n, t)| (n.clone(), t)).collect();
    let resaved = dir.join("resaved.ckpt");
    save_checkpoint(&resaved, &refs, meta).unwrap();
    let roundtrip = bytes1 == std::fs::read(&resaved).unwrap();

    check(
        11,
        identical && roundtrip,
        &format!(
            "identical config + seed give bitwise-identical checkpoints: {identical}; \
             save -> load -> save is byte-identical: {roundtrip}"
        ),
    );
}

#[test]
fn criterion_12_omega_identity() {
    let shape = [4usize, 1, 8, 8];
    let x0 = uniform(130, 55, &shape);
    let x0_hat = uniform(131, 55, &shape);
    let w = omega(&x0_hat, &x0).unwrap() as f64;

    let per_instance = shape[1] * shape[2] * shape[3];
    let d = x0_hat.sub(&x0).unwrap();
    let data = d.data();
    let mut mean_l1 = 0.0f64;
    for i in 0..shape[0] {
        mean_l1 += data[i * per_instance..(i + 1) * per_instance]
            .iter()
            .map(|v| v.abs() as f64)
            .sum::<f64>();
    }
    mean_l1 /= shape[0] as f64;

    let product = w * mean_l1;
    let rel = (product - per_instance as f64).abs() / per_instance as f64;
    check(
        12,
        rel < 1e-4,
        &format!(
            "omega * (batch-mean per-instance L1) = {product:.6} vs element count {per_instance} per instance; \
             relative error {rel:.3e} (tol 1e-4) on non-degenerate random inputs"
        ),
    );
}
