//! Training losses and structural operators.
//!
//! Two base metrics are combined into the weighted distances d_I
//! (pixel + perceptual, used by the consistency-style losses) and d_II
//! (perceptual only, used by the discrepancy losses):
//!
//!   d(a, b) = lambda1 * percep_lite(a, b) + lambda2 * charbonnier(a, b)
//!
//! On top of them sit the consistency loss (`loss_ct`), the target-point
//! and trajectory-alignment losses (`loss_tp`, `loss_ta`), the
//! target-trajectory discrepancy and its stabilized structural variant
//! (`loss_dtm`, `loss_stab`) with the `omega` magnitude normalizer, and
//! the Sobel-based rectification loss (`loss_rect`). `stage_totals`
//! assembles the per-stage training objectives.
//!
//! Gradient-flow contract: exactly one branch of every loss is ever
//! attached to the tape — the online prediction. Reference and target
//! network evaluations are value snapshots, and the discrepancy
//! brackets are explicitly detached, so reference/target parameters
//! receive bitwise-zero gradient by construction.

use crate::error::{Error, Result};
use crate::pfode::Predictor;
use crate::rng::{self, streams};
use crate::schedule::{forward_project, NoiseSchedule};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// Charbonnier smoothing constant: the metric's floor at a = b.
pub const CHARBONNIER_EPS: f32 = 1e-3;

/// Additive guard in the omega normalizer's denominator.
pub const OMEGA_GUARD: f32 = 1e-8;

/// Output channel widths of the perceptual encoder stages.
const ENCODER_CHANNELS: [usize; 3] = [8, 16, 32];

fn check_t(what: &str, t: u32, t_total: u32) -> Result<()> {
    if t == 0 || t > t_total {
        return Err(Error::InvalidArgument(format!(
            "{what} needs 1 <= t <= {t_total}, got {t}"
        )));
    }
    Ok(())
}

fn check_same_shape(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

// --- base metrics ---------------------------------------------------------

/// Weights of the combined distance: lambda1 scales the perceptual
/// term, lambda2 the Charbonnier term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricWeights {
    lambda1: f32,
    lambda2: f32,
}

impl MetricWeights {
    pub fn new(lambda1: f32, lambda2: f32) -> Result<MetricWeights> {
        let ok = lambda1.is_finite() && lambda2.is_finite() && lambda1 >= 0.0 && lambda2 >= 0.0;
        if !ok || (lambda1 == 0.0 && lambda2 == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "metric weights must be nonnegative and not both zero, got ({lambda1}, {lambda2})"
            )));
        }
        Ok(MetricWeights { lambda1, lambda2 })
    }

    /// The pixel + perceptual mix (0.5, 0.5).
    pub fn d_i() -> MetricWeights {
        MetricWeights {
            lambda1: 0.5,
            lambda2: 0.5,
        }
    }

    /// The purely perceptual distance (1.0, 0.0).
    pub fn d_ii() -> MetricWeights {
        MetricWeights {
            lambda1: 1.0,
            lambda2: 0.0,
        }
    }

    pub fn lambda1(&self) -> f32 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f32 {
        self.lambda2
    }
}

/// Frozen random-feature encoder behind the perceptual distance: three
/// 3x3 stride-2 SiLU conv stages (1 -> 8 -> 16 -> 32 channels) with
/// per-channel scales calibrated once at construction so every stage
/// has unit feature RMS on a reference batch. The weights never train;
/// the encoder is a fixed nonlinear measurement function, which is all
/// the losses need from it: nonlinearity (so shared noise between two
/// projected arguments does not cancel) and spatial pooling.
pub struct PerceptualEncoder {
    stages: Vec<EncoderStage>,
}

struct EncoderStage {
    kernel: Tensor,
    norm: Tensor,
}

impl PerceptualEncoder {
    pub fn new(seed: u64) -> PerceptualEncoder {
        let mut r = rng::seeded(seed, streams::PERCEP);
        let mut kernels = Vec::new();
        let mut in_c = 1;
        for &out_c in &ENCODER_CHANNELS {
            let std = (2.0 / (in_c * 9) as f64).sqrt() as f32;
            let k = rng::randn(&[out_c, in_c, 3, 3], &mut r).scale(std).unwrap();
            kernels.push(k);
            in_c = out_c;
        }

        // Calibration pass: fix per-channel scales from the raw feature
        // RMS of a seeded reference batch. The constants are baked in,
        // keeping the metric a pure frozen function afterwards.
        let mut h = rng::rand_uniform(&[4, 1, 16, 16], 0.0, 1.0, &mut r);
        let mut stages = Vec::new();
        for kernel in kernels {
            h = h.conv2d(&kernel, 2, 1).unwrap().silu().unwrap();
            let (n, c) = (h.shape()[0], h.shape()[1]);
            let plane = h.numel() / (n * c);
            let data = h.data();
            let mut sq = vec![0f64; c];
            for i in 0..n {
                for ch in 0..c {
                    let off = (i * c + ch) * plane;
                    for &v in &data[off..off + plane] {
                        sq[ch] += v as f64 * v as f64;
                    }
                }
            }
            let denom = (n * plane) as f64;
            let norm: Vec<f32> = sq
                .iter()
                .map(|s| (1.0 / ((s / denom).sqrt() + 1e-6)) as f32)
                .collect();
            stages.push(EncoderStage {
                kernel,
                norm: Tensor::from_vec(norm, &[c]).unwrap(),
            });
        }
        PerceptualEncoder { stages }
    }

    /// Normalized feature maps of a single-channel batch, one per stage.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::InvalidShape(format!(
                "perceptual encoder expects (N,1,H,W), got {s:?}"
            )));
        }
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            h = h.conv2d(&stage.kernel, 2, 1)?.silu()?;
            out.push(h.scale_c(&stage.norm)?);
        }
        Ok(out)
    }
}

/// Mean over elements of sqrt((a - b)^2 + eps^2).
pub fn charbonnier(a: &Tensor, b: &Tensor, eps: f32) -> Result<Tensor> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "charbonnier eps must be finite and >= 0, got {eps}"
        )));
    }
    check_same_shape("charbonnier", a, b)?;
    a.sub(b)?.square()?.add_scalar(eps * eps)?.sqrt_eps()?.mean()
}

/// Multichannel batches are folded to stacked single-channel images so
/// the 1-channel encoder applies to each channel independently.
fn fold_channels(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s[1] == 1 {
        Ok(x.clone())
    } else {
        x.reshape(&[s[0] * s[1], 1, s[2], s[3]])
    }
}

/// Perceptual distance: sum over encoder stages of the mean squared
/// difference of normalized features. Zero iff the features agree, and
/// nonlinear in (a - b) through the encoder's activations.
pub fn percep_lite(a: &Tensor, b: &Tensor, enc: &PerceptualEncoder) -> Result<Tensor> {
    check_same_shape("percep_lite", a, b)?;
    if a.shape().len() != 4 {
        return Err(Error::InvalidShape(format!(
            "percep_lite expects rank-4 batches, got {:?}",
            a.shape()
        )));
    }
    let fa = enc.features(&fold_channels(a)?)?;
    let fb = enc.features(&fold_channels(b)?)?;
    let mut total: Option<Tensor> = None;
    for (pa, pb) in fa.iter().zip(&fb) {
        let d = pa.sub(pb)?.square()?.mean()?;
        total = Some(match total {
            Some(t) => t.add(&d)?,
            None => d,
        });
    }
    Ok(total.expect("encoder has at least one stage"))
}

/// The metric bundle shared by all losses: the frozen perceptual
/// encoder plus the Charbonnier smoothing constant.
pub struct Metrics {
    enc: PerceptualEncoder,
    charbonnier_eps: f32,
}

impl Metrics {
    pub fn new(percep_seed: u64) -> Metrics {
        Metrics {
            enc: PerceptualEncoder::new(percep_seed),
            charbonnier_eps: CHARBONNIER_EPS,
        }
    }

    pub fn with_charbonnier_eps(mut self, eps: f32) -> Result<Metrics> {
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "charbonnier eps must be finite and >= 0, got {eps}"
            )));
        }
        self.charbonnier_eps = eps;
        Ok(self)
    }

    pub fn encoder(&self) -> &PerceptualEncoder {
        &self.enc
    }

    pub fn charbonnier_eps(&self) -> f32 {
        self.charbonnier_eps
    }

    /// Weighted combination lambda1 * percep_lite + lambda2 * charbonnier.
    /// Zero-weight components are skipped entirely.
    pub fn eval(&self, a: &Tensor, b: &Tensor, w: MetricWeights) -> Result<Tensor> {
        let mut total: Option<Tensor> = None;
        if w.lambda1() != 0.0 {
            total = Some(percep_lite(a, b, &self.enc)?.scale(w.lambda1())?);
        }
        if w.lambda2() != 0.0 {
            let c = charbonnier(a, b, self.charbonnier_eps)?.scale(w.lambda2())?;
            total = Some(match total {
                Some(t) => t.add(&c)?,
                None => c,
            });
        }
        total.ok_or_else(|| Error::InvalidArgument("metric weights are both zero".into()))
    }

    pub fn d_i(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.eval(a, b, MetricWeights::d_i())
    }

    pub fn d_ii(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.eval(a, b, MetricWeights::d_ii())
    }
}

// --- consistency and trajectory losses ------------------------------------

/// Consistency loss at step t: d_I between the online prediction from
/// x_t and the frozen reference prediction from x_{t-1}, both states
/// built from the same noise draw. At t = 1 the reference branch is the
/// boundary identity, so the target is the t = 0 state itself (exactly
/// x0) with no network call.
pub fn loss_ct(
    online: &dyn Predictor,
    reference: &dyn Predictor,
    x0: &Tensor,
    y0: &Tensor,
    t: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
    m: &Metrics,
) -> Result<Tensor> {
    check_t("loss_ct", t, schedule.t_total())?;
    let x_t = forward_project(schedule, x0, y0, t, noise)?;
    let pred = online.predict(&x_t, y0, t, schedule.t_total())?;
    loss_ct_with(&pred, reference, x0, y0, t, noise, schedule, m)
}

/// `loss_ct` with the online prediction already computed, so the
/// training loop can share one forward pass across losses.
#[allow(clippy::too_many_arguments)]
pub fn loss_ct_with(
    online_pred: &Tensor,
    reference: &dyn Predictor,
    x0: &Tensor,
    y0: &Tensor,
    t: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
    m: &Metrics,
) -> Result<Tensor> {
    check_t("loss_ct", t, schedule.t_total())?;
    let x_prev = forward_project(schedule, x0, y0, t - 1, noise)?;
    let target = if t == 1 {
        x_prev
    } else {
        reference.predict(&x_prev, y0, t - 1, schedule.t_total())?
    };
    m.d_i(online_pred, &target.stop_gradient())
}

/// Target-point loss: d_I between the prediction from x_t and the true
/// origin x0.
pub fn loss_tp(
    net: &dyn Predictor,
    x0: &Tensor,
    y0: &Tensor,
    t: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
    m: &Metrics,
) -> Result<Tensor> {
    check_t("loss_tp", t, schedule.t_total())?;
    let x_t = forward_project(schedule, x0, y0, t, noise)?;
    let pred = net.predict(&x_t, y0, t, schedule.t_total())?;
    m.d_i(&pred, &x0.stop_gradient())
}

/// Trajectory-alignment core: sum over every step s in {1..T} of
/// d_I(Q(x0_hat, y0, s, eps_s), Q(x0, y0, s, eps_s)), each pair sharing
/// one fresh noise draw. Because the projection is linear, the shared
/// noise cancels exactly in the pixel component — its Charbonnier
/// argument is (1 - alpha_s)(x0_hat - x0) — while the perceptual
/// component keeps full strength.
pub fn loss_ta_projected(
    x0_hat: &Tensor,
    x0: &Tensor,
    y0: &Tensor,
    schedule: &NoiseSchedule,
    m: &Metrics,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    check_same_shape("loss_ta x0_hat/x0", x0_hat, x0)?;
    let mut total: Option<Tensor> = None;
    for s in 1..=schedule.t_total() {
        let eps = rng::randn(x0.shape(), rng);
        let qa = forward_project(schedule, x0_hat, y0, s, &eps)?;
        let qb = forward_project(schedule, x0, y0, s, &eps)?;
        let d = m.d_i(&qa, &qb)?;
        total = Some(match total {
            Some(t) => t.add(&d)?,
            None => d,
        });
    }
    Ok(total.expect("schedule has at least one step"))
}

/// Trajectory-alignment loss from scratch: predict x0_hat at step t,
/// then re-project it across the whole schedule.
#[allow(clippy::too_many_arguments)]
pub fn loss_ta(
    net: &dyn Predictor,
    x0: &Tensor,
    y0: &Tensor,
    t: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
    m: &Metrics,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    check_t("loss_ta", t, schedule.t_total())?;
    let x_t = forward_project(schedule, x0, y0, t, noise)?;
    let x0_hat = net.predict(&x_t, y0, t, schedule.t_total())?;
    loss_ta_projected(&x0_hat, x0, y0, schedule, m, rng)
}

// --- structural operator --------------------------------------------------

/// Sobel gradient map of a single-channel batch: channel 0 is the
/// horizontal-derivative response, channel 1 the vertical one, both by
/// 3x3 cross-correlation with zero padding 1. The kernel is a frozen
/// constant, so gradients flow through the image argument only.
///
/// Zero padding means a constant image maps to zero only away from the
/// border; the one-pixel frame picks up fictitious transitions against
/// the zero exterior.
pub fn sobel(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::InvalidShape(format!(
            "sobel expects (N,1,H,W), got {s:?}"
        )));
    }
    #[rustfmt::skip]
    let kernel = Tensor::from_vec(
        vec![
            -1.0, 0.0, 1.0,
            -2.0, 0.0, 2.0,
            -1.0, 0.0, 1.0,

            -1.0, -2.0, -1.0,
             0.0,  0.0,  0.0,
             1.0,  2.0,  1.0,
        ],
        &[2, 1, 3, 3],
    )?;
    x.conv2d(&kernel, 1, 1)
}

// --- discrepancy losses under the frozen target net ------------------------

/// Target-trajectory discrepancy map: both origins are re-projected to
/// step t' with one shared noise draw and passed through the frozen
/// target net; the map is the difference of the two predictions. The
/// whole computation is detached — it can never carry gradient.
pub fn delta_dtm(
    target: &dyn Predictor,
    x0_hat: &Tensor,
    x0: &Tensor,
    y0: &Tensor,
    t_prime: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    check_t("delta_dtm", t_prime, schedule.t_total())?;
    let x0_hat = x0_hat.detach();
    let xa = forward_project(schedule, &x0_hat, y0, t_prime, noise)?;
    let xb = forward_project(schedule, x0, y0, t_prime, noise)?;
    let pa = target.predict(&xa, y0, t_prime, schedule.t_total())?.detach();
    let pb = target.predict(&xb, y0, t_prime, schedule.t_total())?.detach();
    pa.sub(&pb)
}

/// Structural discrepancy map: like `delta_dtm` but compared in Sobel
/// space, giving a two-channel detached map.
pub fn delta_stab(
    target: &dyn Predictor,
    x0_hat: &Tensor,
    x0: &Tensor,
    y0: &Tensor,
    t_prime: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    check_t("delta_stab", t_prime, schedule.t_total())?;
    let x0_hat = x0_hat.detach();
    let xa = forward_project(schedule, &x0_hat, y0, t_prime, noise)?;
    let xb = forward_project(schedule, x0, y0, t_prime, noise)?;
    let pa = target.predict(&xa, y0, t_prime, schedule.t_total())?.detach();
    let pb = target.predict(&xb, y0, t_prime, schedule.t_total())?.detach();
    sobel(&pa)?.sub(&sobel(&pb)?)
}

/// Magnitude normalizer C*S / (batch-mean per-instance L1 distance +
/// guard), evaluated on raw values and returned as a plain constant so
/// it never routes gradient.
pub fn omega(x0_hat: &Tensor, x0: &Tensor) -> Result<f32> {
    check_same_shape("omega", x0_hat, x0)?;
    let s = x0_hat.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "omega expects rank-4 batches, got {s:?}"
        )));
    }
    let n = s[0];
    let per = x0_hat.numel() / n;
    let (da, db) = (x0_hat.data(), x0.data());
    let mut total = 0f64;
    for (a, b) in da.iter().zip(db) {
        total += (a - b).abs() as f64;
    }
    let mean_l1 = total / n as f64;
    Ok((per as f64 / (mean_l1 + OMEGA_GUARD as f64)) as f32)
}

/// Target-trajectory-matching loss: omega * d_II(x0_hat, bracket) with
/// bracket = detach(x0_hat - delta_dtm). Gradient reaches the online
/// parameters only through the first metric argument.
#[allow(clippy::too_many_arguments)]
pub fn loss_dtm(
    target: &dyn Predictor,
    x0_hat: &Tensor,
    x0: &Tensor,
    y0: &Tensor,
    t_prime: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
    m: &Metrics,
) -> Result<Tensor> {
    let delta = delta_dtm(target, x0_hat, x0, y0, t_prime, noise, schedule)?;
    let w = omega(x0_hat, x0)?;
    let bracket = x0_hat.detach().sub(&delta)?;
    m.d_ii(x0_hat, &bracket)?.scale(w)
}

/// How the two-channel structural discrepancy is reconciled with the
/// single-channel image inside `loss_stab`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabChannelMode {
    /// Average the two Sobel channels back to one image-shaped map.
    Average,
    /// Duplicate the image across two channels and subtract per channel.
    Duplicate,
}

impl Default for StabChannelMode {
    fn default() -> Self {
        StabChannelMode::Average
    }
}

impl std::fmt::Display for StabChannelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StabChannelMode::Average => "average",
            StabChannelMode::Duplicate => "duplicate",
        })
    }
}

impl std::str::FromStr for StabChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<StabChannelMode> {
        match s {
            "average" => Ok(StabChannelMode::Average),
            "duplicate" => Ok(StabChannelMode::Duplicate),
            other => Err(Error::Config(format!(
                "stab_channel_mode must be 'average' or 'duplicate', got '{other}'"
            ))),
        }
    }
}

/// Mean across channels of a detached NCHW tensor.
pub(crate) fn channel_mean(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "channel_mean expects rank-4, got {s:?}"
        )));
    }
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
    Tensor::from_vec(out, &[n, 1, h, w])
}

/// Stability loss: omega * d_II(x0_hat, bracket) where the bracket
/// subtracts the structural discrepancy, reconciled to the image shape
/// per `mode`. Same stop-gradient contract as `loss_dtm`.
#[allow(clippy::too_many_arguments)]
pub fn loss_stab(
    target: &dyn Predictor,
    x0_hat: &Tensor,
    x0: &Tensor,
    y0: &Tensor,
    t_prime: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
    m: &Metrics,
    mode: StabChannelMode,
) -> Result<Tensor> {
    let delta = delta_stab(target, x0_hat, x0, y0, t_prime, noise, schedule)?;
    let w = omega(x0_hat, x0)?;
    match mode {
        StabChannelMode::Average => {
            let bracket = x0_hat.detach().sub(&channel_mean(&delta)?)?;
            m.d_ii(x0_hat, &bracket)?.scale(w)
        }
        StabChannelMode::Duplicate => {
            let doubled = x0_hat.concat_c(x0_hat)?;
            let bracket = doubled.detach().sub(&delta)?;
            m.d_ii(&doubled, &bracket)?.scale(w)
        }
    }
}

/// Rectification loss: d_II between the Sobel map of the online
/// prediction from the real trajectory state x_{t'} and the Sobel map
/// of the true origin.
pub fn loss_rect(
    net: &dyn Predictor,
    x0: &Tensor,
    y0: &Tensor,
    t_prime: u32,
    noise: &Tensor,
    schedule: &NoiseSchedule,
    m: &Metrics,
) -> Result<Tensor> {
    check_t("loss_rect", t_prime, schedule.t_total())?;
    let x_t = forward_project(schedule, x0, y0, t_prime, noise)?;
    let pred = net.predict(&x_t, y0, t_prime, schedule.t_total())?;
    let target = sobel(&x0.stop_gradient())?;
    m.d_ii(&sobel(&pred)?, &target)
}

// --- stage objectives ------------------------------------------------------

/// Per-iteration loss components; only the terms entering the selected
/// stage total are required to be present.
#[derive(Default)]
pub struct LossTerms {
    pub ct: Option<Tensor>,
    pub ta: Option<Tensor>,
    pub dtm: Option<Tensor>,
    pub stab: Option<Tensor>,
    pub rect: Option<Tensor>,
}

/// Balancing coefficients of the stage totals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_ta: f32,
    pub lambda_dtm: f32,
    pub lambda_stab: f32,
    pub lambda_rect: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ta: 0.5,
            lambda_dtm: 1.6,
            lambda_stab: 0.032,
            lambda_rect: 1.0,
        }
    }
}

/// Weighted stage objective:
///   stage 1: ct + lambda_ta * ta
///   stage 2: ct + lambda_dtm * dtm + lambda_stab * stab + lambda_rect * rect
/// A component is consumed (and required) exactly when its coefficient
/// is nonzero; the consistency term is always required.
pub fn stage_totals(terms: &LossTerms, stage: u8, weights: &LossWeights) -> Result<Tensor> {
    for (name, lambda) in [
        ("lambda_ta", weights.lambda_ta),
        ("lambda_dtm", weights.lambda_dtm),
        ("lambda_stab", weights.lambda_stab),
        ("lambda_rect", weights.lambda_rect),
    ] {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite and >= 0, got {lambda}"
            )));
        }
    }
    fn require(term: &Option<Tensor>, name: &str) -> Result<Tensor> {
        term.clone().ok_or_else(|| {
            Error::InvalidArgument(format!("stage total needs the {name} component"))
        })
    }
    fn weighted(total: Tensor, term: &Option<Tensor>, lambda: f32, name: &str) -> Result<Tensor> {
        if lambda == 0.0 {
            Ok(total)
        } else {
            total.add(&require(term, name)?.scale(lambda)?)
        }
    }

    let total = require(&terms.ct, "ct")?;
    match stage {
        1 => weighted(total, &terms.ta, weights.lambda_ta, "ta"),
        2 => {
            let total = weighted(total, &terms.dtm, weights.lambda_dtm, "dtm")?;
            let total = weighted(total, &terms.stab, weights.lambda_stab, "stab")?;
            weighted(total, &terms.rect, weights.lambda_rect, "rect")
        }
        other => Err(Error::InvalidArgument(format!(
            "stage must be 1 or 2, got {other}"
        ))),
    }
}
