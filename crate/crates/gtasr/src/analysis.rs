//! Quantitative diagnostics: PSNR/SSIM, the per-timestep consistency
//! probe, the pixel-vs-structural decoupling scatter, and the
//! self-contained verification harness.
//!
//! Everything here is read-only over frozen networks and deterministic
//! per seed, so re-running a probe reproduces its CSV byte for byte.
//! `verify_math` is the oracle suite: it re-derives every identity the
//! training objectives rely on (drift cancellation, projection
//! linearity, Sobel stencil values, stop-gradient partition,
//! finite-difference gradient agreement) and reports one pass/fail
//! entry per check.

use std::path::Path;

use crate::data::{self, DataConfig, Split};
use crate::error::{Error, Result};
use crate::losses::{
    self, charbonnier, delta_dtm, delta_stab, loss_ct, loss_ct_with, loss_dtm, loss_rect,
    loss_stab, loss_ta, loss_tp, omega, sobel, LossTerms, LossWeights, Metrics, StabChannelMode,
    CHARBONNIER_EPS,
};
use crate::model::{NetConfig, PatchedPredictor, PredictorNet};
use crate::pfode::{sample_multistep, sample_onestep, OraclePredictor, Predictor, SamplerConfig};
use crate::rng::{self, streams};
use crate::schedule::{drift_residual_mismatched, forward_project, NoiseSchedule};
use crate::tensor::{finite_difference_check, Tape, Tensor};

// --- image quality metrics --------------------------------------------------

/// Peak value reported when the mean squared error vanishes; finite
/// PSNRs are capped here so the sentinel is also the maximum.
pub const PSNR_SENTINEL: f64 = 99.0;

/// PSNR in dB for images in [0, 1]: 10 log10(1 / MSE), capped at the
/// sentinel. Symmetric in its arguments.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "psnr",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    let mse = acc / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_SENTINEL))
}

const SSIM_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4; // (K1 L)^2, K1 = 0.01, L = 1
const SSIM_C2: f64 = 9e-4; // (K2 L)^2, K2 = 0.03

fn ssim_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *v;
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean local SSIM over a 7x7 Gaussian window (sigma 1.5, K1 = 0.01,
/// K2 = 0.03, L = 1), valid positions only, averaged over the batch.
/// Note the luminance term compares local means as a ratio, so a joint
/// constant offset changes the score whenever the two images disagree
/// in their local means.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "ssim",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let s = a.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::InvalidShape(format!(
            "ssim expects (N, 1, H, W), got {s:?}"
        )));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = ssim_window();
    let (da, db) = (a.data(), b.data());
    let mut total = 0.0f64;
    let mut count = 0usize;
    for i in 0..n {
        let plane = &da[i * h * w..(i + 1) * h * w];
        let plane_b = &db[i * h * w..(i + 1) * h * w];
        for cy in 0..=h - SSIM_WINDOW {
            for cx in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb) = (0.0f64, 0.0f64);
                let (mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let wgt = win[dy] * win[dx];
                        let va = plane[(cy + dy) * w + cx + dx] as f64;
                        let vb = plane_b[(cy + dy) * w + cx + dx] as f64;
                        ma += wgt * va;
                        mb += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                }
                let (va, vb, vab) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * vab + SSIM_C2);
                let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

// --- consistency probe ------------------------------------------------------

/// One row of the consistency probe: the prediction from x_t and its
/// fidelity to the true origin.
pub struct ProbePoint {
    pub t: u32,
    pub prediction: Tensor,
    pub psnr: f64,
}

/// For each t in {1..T}, build x_t from one fixed noise draw and record
/// the model's predicted origin and its PSNR against x0. A perfectly
/// consistent model scores the sentinel at every t.
pub fn consistency_probe(
    net: &dyn Predictor,
    x0: &Tensor,
    y0: &Tensor,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<ProbePoint>> {
    let eps = rng::randn(x0.shape(), &mut rng::seeded(seed, streams::PROBE));
    let mut out = Vec::with_capacity(schedule.t_total() as usize);
    for t in 1..=schedule.t_total() {
        let x_t = forward_project(schedule, x0, y0, t, &eps)?;
        let prediction = net.predict(&x_t, y0, t, schedule.t_total())?.detach();
        let fidelity = psnr(&prediction, x0)?;
        out.push(ProbePoint {
            t,
            prediction,
            psnr: fidelity,
        });
    }
    Ok(out)
}

/// CSV rows `t,psnr` for the consistency probe.
pub fn probe_csv(points: &[ProbePoint]) -> String {
    let mut out = String::from("t,psnr\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.t, p.psnr));
    }
    out
}

// --- decoupling scatter -----------------------------------------------------

/// One probe instance of the pixel-vs-structural decoupling diagnostic.
#[derive(Clone, Debug)]
pub struct DecouplingSample {
    pub instance: u64,
    pub t_prime: u32,
    pub pixel_mae: f64,
    pub structural_mae: f64,
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        acc += (*x - *y).abs() as f64;
    }
    acc / a.numel() as f64
}

/// Draw `count` validation instances, restore each with the online net,
/// re-noise the restored and true origins to t' with one shared draw,
/// and compare the frozen target net's two predictions in pixel space
/// and in Sobel space. Both MAEs normalize by total element count.
#[allow(clippy::too_many_arguments)]
pub fn decoupling_scatter(
    online: &dyn Predictor,
    target: &dyn Predictor,
    data: &DataConfig,
    schedule: &NoiseSchedule,
    t_prime: u32,
    count: usize,
    seed: u64,
) -> Result<Vec<DecouplingSample>> {
    if t_prime == 0 || t_prime > schedule.t_total() {
        return Err(Error::InvalidArgument(format!(
            "t_prime must be in 1..={}, got {t_prime}",
            schedule.t_total()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count as u64 {
        let (x0, y0) = data::sample(data, Split::Val, k)?;
        let instance_seed = data::sample_seed(seed, Split::Val, k);
        let x0_hat = sample_onestep(online, &y0, schedule, instance_seed)?.detach();
        let eps = rng::randn(x0.shape(), &mut rng::seeded(instance_seed, streams::PROBE));
        let xa = forward_project(schedule, &x0_hat, &y0, t_prime, &eps)?;
        let xb = forward_project(schedule, &x0, &y0, t_prime, &eps)?;
        let pa = target.predict(&xa, &y0, t_prime, schedule.t_total())?.detach();
        let pb = target.predict(&xb, &y0, t_prime, schedule.t_total())?.detach();
        out.push(DecouplingSample {
            instance: k,
            t_prime,
            pixel_mae: mean_abs_diff(&pa, &pb),
            structural_mae: mean_abs_diff(&sobel(&pa)?, &sobel(&pb)?),
        });
    }
    Ok(out)
}

/// CSV rows `instance,t_prime,pixel_mae,structural_mae`.
pub fn scatter_csv(samples: &[DecouplingSample]) -> String {
    let mut out = String::from("instance,t_prime,pixel_mae,structural_mae\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.instance, s.t_prime, s.pixel_mae, s.structural_mae
        ));
    }
    out
}

// --- verification harness ---------------------------------------------------

/// One verification probe: a named boolean with a human-readable
/// measurement trail.
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = format!("verification report (seed {})\n", self.seed);
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {:<32} {}\n", c.name, c.detail));
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        out.push_str(&format!(
            "{} checks, {} failed\n",
            self.checks.len(),
            failed
        ));
        out
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: String) {
        self.checks.push(Check {
            name,
            passed,
            detail,
        });
    }
}

/// Write a rendered report to disk.
pub fn write_report(report: &VerifyReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.render())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Sobel operator used by the harness; `corrupt` swaps in a kernel with
/// one wrong tap so the stencil-value checks can demonstrate they
/// discriminate (linearity holds for any fixed kernel and must keep
/// passing).
fn sobel_probe(x: &Tensor, corrupt: bool) -> Result<Tensor> {
    if !corrupt {
        return sobel(x);
    }
    #[rustfmt::skip]
    let kernel = Tensor::from_vec(
        vec![
            -1.0, 0.0, 1.0,
            -2.0, 0.0, 2.0,
            -1.0, 0.0, 2.0, // wrong corner tap

            -1.0, -2.0, -1.0,
             0.0,  0.0,  0.0,
             1.0,  2.0,  1.0,
        ],
        &[2, 1, 3, 3],
    )?;
    x.conv2d(&kernel, 1, 1)
}

fn tiny_net(seed: u64) -> Result<PredictorNet> {
    PredictorNet::new(
        NetConfig {
            base_width: 4,
            depth: 1,
        },
        seed,
    )
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

fn probe_param<F>(net: &PredictorNet, name: &str, h: f32, loss: F) -> Result<f32>
where
    F: Fn(&dyn Predictor) -> Result<Tensor>,
{
    let idx = net
        .param_index(name)
        .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
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
}

/// Run the full verification suite. Probes that tolerate arbitrary
/// instances derive their draws from `seed`; the finite-difference
/// probes pin their own instances, picked by a conditioning scan so
/// every probed coordinate carries gradient signal well above the f32
/// noise floor of a central difference.
pub fn verify_math(seed: u64, corrupt_sobel: bool) -> Result<VerifyReport> {
    let mut report = VerifyReport {
        seed,
        checks: Vec::new(),
    };
    let t_total = 5u32;
    let shape = [1usize, 1, 8, 8];

    // Drift cancellation on a 50-point interior grid for both stage
    // exponents.
    {
        let mut worst = 0.0f64;
        for n in [1.0, 2.5] {
            let s = NoiseSchedule::new(t_total, n)?;
            for i in 1..=50 {
                let t = t_total as f64 * i as f64 / 51.0;
                worst = worst.max(s.drift_residual(t)?.abs());
            }
        }
        report.push(
            "drift_cancellation_matched",
            worst < 1e-9,
            format!("max |residual| = {worst:.3e} over 50 interior t, n in {{1.0, 2.5}}"),
        );
    }

    // The deliberately mismatched pair alpha = (t/T)^2, sigma = t/T has
    // residual t/T^2, i.e. 0.5/T at t = 0.5 T.
    {
        let t = 0.5 * t_total as f64;
        let got = drift_residual_mismatched(t_total, 2.0, 1.0, t)?;
        let want = 0.5 / t_total as f64;
        let err = (got - want).abs();
        report.push(
            "drift_mismatched_hand_value",
            err < 1e-6,
            format!("residual {got:.9} vs hand value {want:.9} (|diff| = {err:.3e})"),
        );
    }

    // Projection differences are linear in the origin: shared noise and
    // the observation cancel exactly.
    {
        let s = NoiseSchedule::new(t_total, 2.5)?;
        let mut worst = 0.0f32;
        for trial in 0..10u64 {
            let a = uniform(seed ^ trial, 20, &shape);
            let b = uniform(seed ^ trial, 21, &shape);
            let y0 = uniform(seed ^ trial, 22, &shape);
            let eps = rng::randn(&shape, &mut rng::seeded(seed ^ trial, 23));
            for t in 1..=t_total {
                let lhs = forward_project(&s, &a, &y0, t, &eps)?
                    .sub(&forward_project(&s, &b, &y0, t, &eps)?)?;
                let coeff = 1.0 - s.alpha(t as f64)? as f32;
                let rhs = a.sub(&b)?.scale(coeff)?;
                worst = worst.max(max_abs(&lhs.sub(&rhs)?));
            }
        }
        report.push(
            "projection_difference_identity",
            worst < 1e-6,
            format!("max |Q(a)-Q(b) - (1-alpha)(a-b)| = {worst:.3e}"),
        );
    }

    // The pixel component of each trajectory-alignment term reduces to
    // the Charbonnier of the deterministically shrunk origin gap.
    {
        let s = NoiseSchedule::new(t_total, 2.5)?;
        let x0 = uniform(seed, 24, &shape);
        let x0_hat = uniform(seed, 25, &shape);
        let y0 = uniform(seed, 26, &shape);
        let zeros = Tensor::zeros(&shape);
        let mut worst = 0.0f32;
        for t in 1..=t_total {
            let eps = rng::randn(&shape, &mut rng::seeded(seed + t as u64, 27));
            let qa = forward_project(&s, &x0_hat, &y0, t, &eps)?;
            let qb = forward_project(&s, &x0, &y0, t, &eps)?;
            let direct = charbonnier(&qa, &qb, CHARBONNIER_EPS)?.item();
            let coeff = 1.0 - s.alpha(t as f64)? as f32;
            let gap = x0_hat.sub(&x0)?.scale(coeff)?;
            let reduced = charbonnier(&gap, &zeros, CHARBONNIER_EPS)?.item();
            worst = worst.max((direct - reduced).abs());
        }
        report.push(
            "ta_pixel_component_identity",
            worst < 1e-5,
            format!("max |Charb(Qa,Qb) - Charb((1-alpha)(x0_hat-x0), 0)| = {worst:.3e}"),
        );
    }

    // Sobel is linear for any fixed kernel...
    {
        let a = uniform(seed, 28, &shape);
        let b = uniform(seed, 29, &shape);
        let c = 0.7f32;
        let lhs = sobel_probe(&a.scale(c)?.add(&b)?, corrupt_sobel)?;
        let rhs = sobel_probe(&a, corrupt_sobel)?
            .scale(c)?
            .add(&sobel_probe(&b, corrupt_sobel)?)?;
        let worst = max_abs(&lhs.sub(&rhs)?);
        report.push(
            "sobel_linearity",
            worst < 1e-6,
            format!("max |S(ca+b) - (cS(a)+S(b))| = {worst:.3e}"),
        );
    }

    // ...but only the true stencil gives the (8, 0) interior response
    // on a horizontal ramp.
    {
        let (h, w) = (8usize, 8usize);
        let ramp: Vec<f32> = (0..h * w).map(|i| (i % w) as f32).collect();
        let ramp = Tensor::from_vec(ramp, &[1, 1, h, w])?;
        let maps = sobel_probe(&ramp, corrupt_sobel)?;
        let d = maps.data();
        let mut ok = true;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                ok &= d[y * w + x] == 8.0;
                ok &= d[h * w + y * w + x] == 0.0;
            }
        }
        report.push(
            "sobel_ramp_response",
            ok,
            format!(
                "interior response ({}, {}), want exactly (8, 0)",
                d[w + 1],
                d[h * w + w + 1]
            ),
        );
    }

    // A constant image has bitwise-zero response away from the zero
    // padding; the one-pixel frame keeps the known padding artifact.
    {
        let (h, w) = (8usize, 8usize);
        let c = 0.75f32;
        let maps = sobel_probe(&Tensor::full(&[1, 1, h, w], c), corrupt_sobel)?;
        let d = maps.data();
        let mut ok = true;
        for ch in 0..2 {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    ok &= d[ch * h * w + y * w + x] == 0.0;
                }
            }
        }
        let frame = d[1]; // top edge, horizontal-derivative channel
        report.push(
            "sobel_constant_interior_zero",
            ok,
            format!("interior bitwise zero: {ok}; padding frame sample = {frame} (= -4c expected)"),
        );
    }

    // At the terminal step the reconstruction branch starts from the
    // real state itself, so the structural mismatch is identically zero.
    {
        let s = NoiseSchedule::new(t_total, 1.0)?;
        let x0 = uniform(seed, 30, &shape);
        let y0 = uniform(seed, 31, &shape);
        let eps = rng::randn(&shape, &mut rng::seeded(seed, 32));
        let x_t = forward_project(&s, &x0, &y0, t_total, &eps)?;
        let gap = sobel(&x_t)?.sub(&sobel(&x_t)?)?;
        let ok = gap.data().iter().all(|v| *v == 0.0);
        report.push(
            "terminal_state_identity",
            ok,
            "S(x_hat_T) - S(x_T) bitwise zero with x_hat_T taken as x_T".to_string(),
        );
    }

    // Per-step triangle decomposition of the structural error under a
    // frozen net: 100 probes (20 instances x 5 steps).
    {
        let s = NoiseSchedule::new(t_total, 1.0)?;
        let net = tiny_net(seed ^ 0x5eed)?;
        let mut worst_violation = f64::NEG_INFINITY;
        for k in 0..20u64 {
            let x0 = uniform(seed + k, 33, &shape);
            let y0 = uniform(seed + k, 34, &shape);
            let x0_hat = x0.add(&rng::randn(&shape, &mut rng::seeded(seed + k, 35)).scale(0.1)?)?;
            for t in 1..=t_total {
                let eps = rng::randn(&shape, &mut rng::seeded(seed + k + t as u64, 36));
                let xa = forward_project(&s, &x0_hat, &y0, t, &eps)?;
                let xb = forward_project(&s, &x0, &y0, t, &eps)?;
                let sa = sobel(&net.predict(&xa, &y0, t, t_total)?)?;
                let sb = sobel(&net.predict(&xb, &y0, t, t_total)?)?;
                let sc = sobel(&x0)?;
                let lhs = l1_sum(&sa.sub(&sc)?);
                let term_i = l1_sum(&sa.sub(&sb)?);
                let term_ii = l1_sum(&sb.sub(&sc)?);
                worst_violation = worst_violation.max(lhs - term_i - term_ii);
            }
        }
        report.push(
            "triangle_decomposition",
            worst_violation <= 1e-5,
            format!("worst (lhs - term_i - term_ii) = {worst_violation:.3e} over 100 probes"),
        );
    }

    // The exact integrator driven by the oracle recovers the origin for
    // every step count.
    {
        let s = NoiseSchedule::new(t_total, 2.5)?;
        let mut worst = 0.0f32;
        for k in 0..10u64 {
            let x0 = uniform(seed + k, 37, &shape);
            let y0 = uniform(seed + k, 38, &shape);
            let oracle = OraclePredictor { x0: x0.clone() };
            for steps in [1u32, 2, 4, 5] {
                let cfg = SamplerConfig::new(steps, s.clone())?;
                let rec = sample_multistep(&oracle, &y0, &cfg, seed + k)?;
                worst = worst.max(max_abs(&rec.sub(&x0)?));
            }
        }
        report.push(
            "oracle_sampler_exactness",
            worst < 1e-5,
            format!("max |recovered - x0| = {worst:.3e} over 10 instances, steps {{1,2,4,5}}"),
        );
    }

    // One full Stage II iteration: every gradient lands on the online
    // parameters; reference and target stay bitwise untouched.
    {
        let s = NoiseSchedule::new(t_total, 1.0)?;
        let m = Metrics::new(42);
        let online_net = tiny_net(104)?;
        let reference_net = tiny_net(105)?;
        let target_net = tiny_net(106)?;
        let x0 = uniform(seed, 39, &shape);
        let y0 = uniform(seed, 40, &shape);
        let eps = rng::randn(&shape, &mut rng::seeded(seed, 41));
        let eps_p = rng::randn(&shape, &mut rng::seeded(seed, 42));
        let (t, t_prime) = (3u32, 2u32);

        let tape = Tape::new();
        let online = online_net.attach(&tape);
        let reference = reference_net.attach(&tape);
        let target = target_net.attach(&tape);

        let x_t = forward_project(&s, &x0, &y0, t, &eps)?;
        let x0_hat = online.predict(&x_t, &y0, t, t_total)?;
        let terms = LossTerms {
            ct: Some(loss_ct_with(&x0_hat, &reference, &x0, &y0, t, &eps, &s, &m)?),
            dtm: Some(loss_dtm(&target, &x0_hat, &x0, &y0, t_prime, &eps_p, &s, &m)?),
            stab: Some(loss_stab(
                &target,
                &x0_hat,
                &x0,
                &y0,
                t_prime,
                &eps_p,
                &s,
                &m,
                StabChannelMode::Average,
            )?),
            rect: Some(loss_rect(&online, &x0, &y0, t_prime, &eps_p, &s, &m)?),
            ta: None,
        };
        let total = losses::stage_totals(&terms, 2, &LossWeights::default())?;
        let grads = total.backward()?;

        let online_nonzero = online
            .params()
            .iter()
            .any(|(_, p)| grads.wrt_or_zeros(p).iter().any(|g| *g != 0.0));
        let frozen_zero = reference
            .params()
            .iter()
            .chain(target.params())
            .all(|(_, p)| grads.wrt_or_zeros(p).iter().all(|g| *g == 0.0));
        report.push(
            "stop_gradient_partition",
            online_nonzero && frozen_zero,
            format!("online grads nonzero: {online_nonzero}; reference/target grads bitwise zero: {frozen_zero}"),
        );
    }

    // Finite-difference agreement for every loss and the raw forward
    // pass. The probe instances are pinned: they were selected by a
    // conditioning scan so the probed output-kernel coordinates all
    // carry gradient far above the central-difference noise floor
    // ulp(|L|)/2h, and h = 2e-2 sits in the window where that floor and
    // the Charbonnier curvature (truncation ~ h^2) are both below the
    // tolerance.
    {
        const FD_H: f32 = 2e-2;
        let m = Metrics::new(42);
        let s = NoiseSchedule::new(t_total, 2.5)?;
        let x0 = uniform(100, 90, &shape);
        let y0 = uniform(101, 90, &shape);
        let noise = rng::randn(&shape, &mut rng::seeded(102, 96));
        let noise_p = rng::randn(&shape, &mut rng::seeded(103, 103));
        let online = tiny_net(104)?;
        let reference = tiny_net(105)?;
        let target = tiny_net(106)?;
        let (t, t_prime) = (3u32, 2u32);

        let mut fd = |name: &'static str, err: Result<f32>| match err {
            Ok(e) => report.push(name, e < 1e-3, format!("max rel grad error = {e:.3e}")),
            Err(why) => report.push(name, false, format!("probe failed: {why}")),
        };

        fd(
            "fd_loss_ct",
            probe_param(&online, "out.w", FD_H, |p| {
                loss_ct(p, &reference, &x0, &y0, t, &noise, &s, &m)
            }),
        );
        fd(
            "fd_loss_tp",
            probe_param(&online, "out.w", FD_H, |p| {
                loss_tp(p, &x0, &y0, t, &noise, &s, &m)
            }),
        );
        fd(
            "fd_loss_ta",
            probe_param(&online, "out.w", FD_H, |p| {
                let mut r = rng::seeded(107, 99);
                loss_ta(p, &x0, &y0, t, &noise, &s, &m, &mut r)
            }),
        );
        // For the bracketed losses the oracle freezes the stop-gradient
        // branch at the base prediction, exactly as backprop sees it.
        let x_t = forward_project(&s, &x0, &y0, t, &noise)?;
        let x0_hat_base = online.predict(&x_t, &y0, t, t_total)?;
        {
            let delta = delta_dtm(&target, &x0_hat_base, &x0, &y0, t_prime, &noise_p, &s)?;
            let bracket = x0_hat_base.detach().sub(&delta)?;
            let w = omega(&x0_hat_base, &x0)?;
            fd(
                "fd_loss_dtm",
                probe_param(&online, "out.w", FD_H, |p| {
                    let pred = p.predict(&x_t, &y0, t, t_total)?;
                    m.d_ii(&pred, &bracket)?.scale(w)
                }),
            );
        }
        {
            let delta = delta_stab(&target, &x0_hat_base, &x0, &y0, t_prime, &noise_p, &s)?;
            let bracket = x0_hat_base
                .detach()
                .sub(&losses::channel_mean(&delta)?)?;
            let w = omega(&x0_hat_base, &x0)?;
            fd(
                "fd_loss_stab",
                probe_param(&online, "out.w", FD_H, |p| {
                    let pred = p.predict(&x_t, &y0, t, t_total)?;
                    m.d_ii(&pred, &bracket)?.scale(w)
                }),
            );
        }
        fd(
            "fd_loss_rect",
            probe_param(&online, "out.w", FD_H, |p| {
                loss_rect(p, &x0, &y0, t_prime, &noise_p, &s, &m)
            }),
        );

        // Raw forward pass: mean(predict) is linear in the output
        // kernel, so a large step has zero truncation error there; the
        // input probe needs a smaller one.
        let fwd_w = probe_param(&online, "out.w", 0.1, |p| {
            p.predict(&x_t, &y0, t, t_total)?.mean()
        });
        let fwd_x = finite_difference_check(
            |x| online.predict(x, &y0, t, t_total)?.mean(),
            &x_t.detach(),
            0.01,
        );
        let (ew, ex) = (fwd_w.unwrap_or(f32::INFINITY), fwd_x.unwrap_or(f32::INFINITY));
        report.push(
            "fd_forward_pass",
            ew < 1e-3 && ex < 1e-3,
            format!("max rel grad error: {ew:.3e} (output kernel), {ex:.3e} (input)"),
        );
    }

    Ok(report)
}
