//! Probability-flow ODE integration for the residual-shifting schedule.
//!
//! With the matched power schedule the PF-ODE reduces to
//!
//!   dx/dt = (n/t) * (x_t - f(x_t, y0, t))
//!
//! which is linear in x for a frozen prediction f, so one integration
//! step has the closed form
//!
//!   x_{t_prev} = f + (t_prev/t)^n * (x_t - f).
//!
//! The closed form removes the n/t singularity at t -> 0: the final
//! step lands exactly on the prediction. An oracle predictor f = x0
//! therefore recovers x0 exactly regardless of the step count, which is
//! one of the crate's core verification probes.

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Anything that maps a trajectory state back to an origin estimate.
/// Implemented by the trained network (value space and tape-attached)
/// and by test oracles.
pub trait Predictor {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: u32, t_total: u32) -> Result<Tensor>;
}

/// Test/verification predictor that already knows the answer.
pub struct OraclePredictor {
    pub x0: Tensor,
}

impl Predictor for OraclePredictor {
    fn predict(&self, _x_t: &Tensor, _y0: &Tensor, _t: u32, _t_total: u32) -> Result<Tensor> {
        Ok(self.x0.clone())
    }
}

/// PF-ODE velocity (n/t) * (x_t - f_pred) at continuous t > 0.
pub fn velocity(
    schedule: &NoiseSchedule,
    x_t: &Tensor,
    f_pred: &Tensor,
    t: f64,
) -> Result<Tensor> {
    if !(t > 0.0 && t <= schedule.t_total() as f64) {
        return Err(Error::Sampler(format!(
            "velocity needs t in (0, {}], got {t}",
            schedule.t_total()
        )));
    }
    if x_t.shape() != f_pred.shape() {
        return Err(Error::ShapeMismatch {
            context: "velocity",
            lhs: x_t.shape().to_vec(),
            rhs: f_pred.shape().to_vec(),
        });
    }
    let scale = (schedule.exponent() / t) as f32;
    x_t.sub(f_pred)?.scale(scale)
}

/// One exact integration step of the PF-ODE from t down to t_prev with
/// a frozen prediction. t_prev = 0 returns `f_pred` exactly.
pub fn step_exact(
    schedule: &NoiseSchedule,
    x_t: &Tensor,
    f_pred: &Tensor,
    t: u32,
    t_prev: u32,
) -> Result<Tensor> {
    if !(t_prev < t && t <= schedule.t_total()) {
        return Err(Error::Sampler(format!(
            "step_exact needs t_prev < t <= {}, got t={t}, t_prev={t_prev}",
            schedule.t_total()
        )));
    }
    if x_t.shape() != f_pred.shape() {
        return Err(Error::ShapeMismatch {
            context: "step_exact",
            lhs: x_t.shape().to_vec(),
            rhs: f_pred.shape().to_vec(),
        });
    }
    if t_prev == 0 {
        return Ok(f_pred.clone());
    }
    let ratio = (t_prev as f64 / t as f64).powf(schedule.exponent()) as f32;
    f_pred.add(&x_t.sub(f_pred)?.scale(ratio)?)
}

/// Multi-step sampler configuration.
#[derive(Clone, Debug)]
pub struct SamplerConfig {
    steps: u32,
    schedule: NoiseSchedule,
}

impl SamplerConfig {
    pub fn new(steps: u32, schedule: NoiseSchedule) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Sampler("steps must be >= 1".into()));
        }
        if steps > schedule.t_total() {
            return Err(Error::Sampler(format!(
                "steps = {steps} exceeds t_total = {}",
                schedule.t_total()
            )));
        }
        Ok(SamplerConfig { steps, schedule })
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Uniform integer grid from T down to 0 (inclusive), distinct
    /// because steps <= T.
    pub fn grid(&self) -> Vec<u32> {
        let t_total = self.schedule.t_total() as f64;
        (0..=self.steps)
            .rev()
            .map(|i| (t_total * i as f64 / self.steps as f64).round() as u32)
            .collect()
    }
}

/// Draw the initial state x_T = y0 + eps for a given seed.
fn initial_state(y0: &Tensor, seed: u64) -> Result<Tensor> {
    let mut r = rng::seeded(seed, rng::streams::SAMPLER);
    let eps = rng::randn(y0.shape(), &mut r);
    y0.add(&eps)
}

/// One-step restoration: f(y0 + eps, y0, T).
pub fn sample_onestep(
    net: &dyn Predictor,
    y0: &Tensor,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Tensor> {
    let x_t = initial_state(y0, seed)?;
    net.predict(&x_t, y0, schedule.t_total(), schedule.t_total())
}

/// Multi-step restoration over the uniform grid, re-predicting at each
/// grid point and integrating exactly within each interval.
pub fn sample_multistep(
    net: &dyn Predictor,
    y0: &Tensor,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    Ok(sample_multistep_trace(net, y0, cfg, seed)?.0)
}

/// Like [`sample_multistep`] but also returns the visited states
/// (t, x_t) including the initial state, for diagnostics.
pub fn sample_multistep_trace(
    net: &dyn Predictor,
    y0: &Tensor,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<(Tensor, Vec<(u32, Tensor)>)> {
    let schedule = cfg.schedule();
    let grid = cfg.grid();
    let mut x = initial_state(y0, seed)?;
    let mut trace = vec![(grid[0], x.clone())];
    for w in grid.windows(2) {
        let (t, t_prev) = (w[0], w[1]);
        let f = net.predict(&x, y0, t, schedule.t_total())?;
        x = step_exact(schedule, &x, &f, t, t_prev)?;
        trace.push((t_prev, x.clone()));
    }
    Ok((x, trace))
}
