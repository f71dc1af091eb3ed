//! Central-difference verification of reverse-mode gradients.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Step used by gradient checks unless a caller overrides it.
pub const DEFAULT_FD_STEP: f32 = 1e-3;

/// Compare autodiff gradients of `f` at `x` against central finite
/// differences with step `h`. Returns the worst relative error
/// `max_i |g_auto[i] - g_fd[i]| / (|g_fd[i]| + 1e-8)`.
///
/// `f` must map its (tracked) input to a scalar and must be a pure
/// function of that input; it is invoked `2 * numel(x) + 1` times.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f32) -> Result<f32>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite difference step must be positive, got {h}"
        )));
    }

    let tape = Tape::new();
    let xl = tape.var(x);
    let loss = f(&xl)?;
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    let grads = loss.backward()?;
    let auto = grads.wrt_or_zeros(&xl);

    let base = x.to_vec();
    let mut worst = 0.0f32;
    for i in 0..base.len() {
        let probe = |delta: f32| -> Result<f32> {
            let mut v = base.clone();
            v[i] += delta;
            let t = Tensor::from_vec(v, x.shape())?;
            Ok(f(&t)?.item())
        };
        let fp = probe(h)?;
        let fm = probe(-h)?;
        let fd = (fp as f64 - fm as f64) / (2.0 * h as f64);
        let err = (auto[i] as f64 - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(err as f32);
    }
    Ok(worst)
}
