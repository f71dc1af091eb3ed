//! Residual-shifting noise schedule and forward projection.
//!
//! The forward process interpolates from the clean image x0 toward the
//! degraded observation y0 while injecting noise:
//!
//!   x_t = x0 + alpha(t) * (y0 - x0) + sigma(t) * eps
//!
//! with the power schedule alpha(t) = sigma(t) = (t/T)^n. Because the
//! two coefficients are identical, the deterministic drift of the
//! residual term and the stochastic scaling cancel in the
//! probability-flow velocity; `drift_residual` measures exactly that
//! cancellation and is the first verification probe of the crate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Power noise schedule on the discrete grid t in {0..t_total}, with
/// continuous evaluation for verification probes.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    t_total: u32,
    exponent: f64,
}

impl NoiseSchedule {
    pub fn new(t_total: u32, exponent: f64) -> Result<Self> {
        if t_total == 0 {
            return Err(Error::Schedule("t_total must be >= 1".into()));
        }
        if !(exponent > 0.0) || !exponent.is_finite() {
            return Err(Error::Schedule(format!(
                "schedule exponent must be positive and finite, got {exponent}"
            )));
        }
        Ok(NoiseSchedule { t_total, exponent })
    }

    pub fn t_total(&self) -> u32 {
        self.t_total
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    fn check_range(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_total as f64).contains(&t) {
            return Err(Error::Schedule(format!(
                "t = {t} outside [0, {}]",
                self.t_total
            )));
        }
        Ok(())
    }

    /// alpha(t) = (t/T)^n for continuous t in [0, T].
    pub fn alpha(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        Ok((t / self.t_total as f64).powf(self.exponent))
    }

    /// sigma(t) = (t/T)^n; identical to alpha by construction.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.alpha(t)
    }

    /// d alpha / dt = (n/T) * (t/T)^(n-1).
    pub fn alpha_dot(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        let tt = self.t_total as f64;
        Ok(self.exponent / tt * (t / tt).powf(self.exponent - 1.0))
    }

    pub fn sigma_dot(&self, t: f64) -> Result<f64> {
        self.alpha_dot(t)
    }

    /// Residual of the drift-cancellation identity,
    /// alpha_dot(t) - (sigma_dot(t)/sigma(t)) * alpha(t), evaluated
    /// numerically (no algebraic shortcut). Zero up to rounding for the
    /// matched schedule; requires t > 0 where sigma vanishes.
    pub fn drift_residual(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        if t <= 0.0 {
            return Err(Error::Schedule(
                "drift_residual needs t > 0 (sigma(0) = 0)".into(),
            ));
        }
        let sigma = self.sigma(t)?;
        Ok(self.alpha_dot(t)? - self.sigma_dot(t)? / sigma * self.alpha(t)?)
    }
}

/// Drift residual for a deliberately mismatched pair
/// alpha = (t/T)^na, sigma = (t/T)^ns. With na = 2, ns = 1 the residual
/// is t/T² analytically: nonzero everywhere in the interior, which is
/// what the matched schedule is designed to avoid.
pub fn drift_residual_mismatched(t_total: u32, na: f64, ns: f64, t: f64) -> Result<f64> {
    if t_total == 0 {
        return Err(Error::Schedule("t_total must be >= 1".into()));
    }
    if !(t > 0.0 && t <= t_total as f64) {
        return Err(Error::Schedule(format!(
            "t = {t} outside (0, {t_total}]"
        )));
    }
    let tt = t_total as f64;
    let r = t / tt;
    let alpha = r.powf(na);
    let alpha_dot = na / tt * r.powf(na - 1.0);
    let sigma = r.powf(ns);
    let sigma_dot = ns / tt * r.powf(ns - 1.0);
    Ok(alpha_dot - sigma_dot / sigma * alpha)
}

/// Forward projection Q(x0, y0, t, eps) = x0 + alpha_t (y0 - x0) +
/// sigma_t eps on the discrete grid. At t = 0 this returns x0 itself
/// (exactly, not up to rounding). Works in value space for detached
/// inputs and records on the tape when any input is attached, so the
/// same routine serves data construction and the trajectory-alignment
/// loss.
pub fn forward_project(
    schedule: &NoiseSchedule,
    x0: &Tensor,
    y0: &Tensor,
    t: u32,
    noise: &Tensor,
) -> Result<Tensor> {
    if x0.shape() != y0.shape() {
        return Err(Error::ShapeMismatch {
            context: "forward_project x0/y0",
            lhs: x0.shape().to_vec(),
            rhs: y0.shape().to_vec(),
        });
    }
    if x0.shape() != noise.shape() {
        return Err(Error::ShapeMismatch {
            context: "forward_project x0/noise",
            lhs: x0.shape().to_vec(),
            rhs: noise.shape().to_vec(),
        });
    }
    if t > schedule.t_total() {
        return Err(Error::Schedule(format!(
            "t = {t} beyond t_total = {}",
            schedule.t_total()
        )));
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    let alpha = schedule.alpha(t as f64)? as f32;
    let sigma = schedule.sigma(t as f64)? as f32;
    let residual = y0.sub(x0)?;
    x0.add(&residual.scale(alpha)?)?.add(&noise.scale(sigma)?)
}
