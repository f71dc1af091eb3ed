//! Adam optimizer over flat parameter arrays.
//!
//! The training loop owns parameters as plain `Vec<f32>` pulled from
//! the network store, so the optimizer is a pure array transform: no
//! tensors, no tape, every operation a deterministic IEEE f32 sequence.
//! Moment state is exposed for checkpointing and can be restored
//! exactly, which is what makes save -> load -> save byte-identical.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step_count: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    /// Fresh optimizer for parameters of the given element counts.
    pub fn new(lr: f32, beta1: f32, beta2: f32, eps: f32, sizes: &[usize]) -> Result<Adam> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            step_count: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// Rebuild an optimizer mid-run from checkpointed moments.
    pub fn from_state(
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
        step_count: u64,
        m: Vec<Vec<f32>>,
        v: Vec<Vec<f32>>,
    ) -> Result<Adam> {
        let sizes: Vec<usize> = m.iter().map(Vec::len).collect();
        let mut adam = Adam::new(lr, beta1, beta2, eps, &sizes)?;
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Checkpoint(
                "optimizer moment arrays disagree in shape".into(),
            ));
        }
        adam.step_count = step_count;
        adam.m = m;
        adam.v = v;
        Ok(adam)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// One Adam update in place. `params[i]` and `grads[i]` must match
    /// the element counts given at construction.
    pub fn step(&mut self, params: &mut [Vec<f32>], grads: &[Vec<f32>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer has {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {i}: expected {} elements, got {} params / {} grads",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.step_count += 1;
        let c1 = (1.0 - (self.beta1 as f64).powi(self.step_count as i32)) as f32;
        let c2 = (1.0 - (self.beta2 as f64).powi(self.step_count as i32)) as f32;
        for i in 0..params.len() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((p, &g), (m, v)) in params[i]
                .iter_mut()
                .zip(&grads[i])
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(sizes: &[usize]) -> Adam {
        Adam::new(1e-3, 0.9, 0.999, 1e-8, sizes).unwrap()
    }

    #[test]
    fn hyperparameters_are_validated() {
        assert!(Adam::new(0.0, 0.9, 0.999, 1e-8, &[1]).is_err());
        assert!(Adam::new(1e-3, 1.0, 0.999, 1e-8, &[1]).is_err());
        assert!(Adam::new(1e-3, 0.9, -0.1, 1e-8, &[1]).is_err());
        assert!(Adam::new(1e-3, 0.9, 0.999, 0.0, &[1]).is_err());
    }

    #[test]
    fn zero_gradients_leave_fresh_parameters_unchanged() {
        let mut adam = defaults(&[3]);
        let mut params = vec![vec![0.25f32, -1.5, 3.0]];
        let before = params.clone();
        adam.step(&mut params, &[vec![0.0; 3]]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_is_minus_lr_times_sign() {
        // Hand value: m_hat = g, v_hat = g^2 after bias correction, so
        // the first update is -lr * g / (|g| + eps) ~ -lr * sign(g).
        let mut adam = defaults(&[2]);
        let mut params = vec![vec![1.0f32, 1.0]];
        adam.step(&mut params, &[vec![0.3, -0.007]]).unwrap();
        assert!((params[0][0] - (1.0 - 1e-3)).abs() < 1e-8);
        assert!((params[0][1] - (1.0 + 1e-3)).abs() < 1e-8);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = defaults(&[2, 3]);
        let mut params = vec![vec![0.0; 2], vec![0.0; 3]];
        assert!(adam.step(&mut params, &[vec![0.0; 2]]).is_err());
        assert!(adam
            .step(&mut params, &[vec![0.0; 2], vec![0.0; 4]])
            .is_err());
        let mut short = vec![vec![0.0; 2], vec![0.0; 2]];
        assert!(adam
            .step(&mut short, &[vec![0.0; 2], vec![0.0; 3]])
            .is_err());
    }

    #[test]
    fn ten_steps_are_bitwise_deterministic() {
        let run = || {
            let mut adam = defaults(&[4]);
            let mut params = vec![vec![0.5f32, -0.25, 0.125, 2.0]];
            let mut r = crate::rng::seeded(3, 0);
            for _ in 0..10 {
                let g: Vec<f32> = (0..4).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
                adam.step(&mut params, &[g]).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn state_restore_continues_bitwise() {
        let grads = [vec![0.4f32, -0.2], vec![0.1, 0.05]];
        let mut full = defaults(&[2]);
        let mut p_full = vec![vec![1.0f32, -1.0]];
        full.step(&mut p_full, &grads[..1]).unwrap();
        let (m, v) = full.moments();
        let snapshot = (full.step_count(), m.to_vec(), v.to_vec());
        full.step(&mut p_full, &grads[1..]).unwrap();

        let mut resumed =
            Adam::from_state(1e-3, 0.9, 0.999, 1e-8, snapshot.0, snapshot.1, snapshot.2).unwrap();
        let mut p_resumed = vec![vec![1.0f32, -1.0]];
        let mut warm = defaults(&[2]);
        warm.step(&mut p_resumed, &grads[..1]).unwrap();
        drop(warm);
        resumed.step(&mut p_resumed, &grads[1..]).unwrap();
        assert_eq!(p_full, p_resumed);
    }

    #[test]
    fn quadratic_descent_converges() {
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8, &[1]).unwrap();
        let mut params = vec![vec![5.0f32]];
        for _ in 0..300 {
            let g = vec![params[0][0]];
            adam.step(&mut params, &[g]).unwrap();
        }
        assert!(params[0][0].abs() < 0.05, "got {}", params[0][0]);
    }
}
