//! Bias-corrected Adam over flat parameter vectors.

use crate::error::{Result, SobolevError};

/// Adam state for one parameter group. `update` applies a descent step;
/// negate the gradients for ascent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    /// Defaults beta1 = 0.5, beta2 = 0.999, eps = 1e-8.
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SobolevError::Dimension(format!(
                "Adam state holds {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(SobolevError::Training(format!(
                "non-finite gradient at Adam step {}",
                self.t + 1
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        // With bias correction, the first step is lr * g / (|g| + eps').
        let mut adam = Adam::new(1, 0.1);
        let mut p = vec![1.0];
        adam.update(&mut p, &[42.0]).unwrap();
        assert!((p[0] - (1.0 - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(1, 0.1);
        let mut p = vec![1.0];
        for _ in 0..100 {
            let g = 2.0 * p[0];
            adam.update(&mut p, &[g]).unwrap();
        }
        assert!(p[0].abs() < 0.05, "x = {}", p[0]);
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut adam = Adam::new(1, 0.1);
        let mut p = vec![1.0];
        assert!(adam.update(&mut p, &[f64::NAN]).is_err());
    }
}
