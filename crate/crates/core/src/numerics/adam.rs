//! Adam / AdamW optimizer with bias correction and decoupled weight decay.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Optimizer state for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight-decay coefficient; 0 disables decay (plain Adam).
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    /// Defaults: beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn new(shapes: &[(usize, usize)], lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update in place. Weight decay, when enabled, is
    /// applied multiplicatively to the parameters (AdamW).
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("adam parameter count".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.rows != m.rows || p.cols != m.cols || g.rows != p.rows || g.cols != p.cols {
                return Err(Error::Shape("adam tensor shape".into()));
            }
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                if self.weight_decay > 0.0 {
                    p.data[i] *= 1.0 - self.lr * self.weight_decay;
                }
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut params = vec![Matrix::from_rows(&[vec![1.0, -2.0]])];
        let grads = vec![Matrix::zeros(1, 2)];
        let mut st = AdamState::new(&[(1, 2)], 1e-3, 0.0);
        let before = params[0].clone();
        st.step(&mut params, &grads).unwrap();
        assert_eq!(params[0], before);
    }

    #[test]
    fn first_step_closed_form() {
        // g = 1 scalar: bias correction gives mhat = vhat = 1, update = -lr.
        let mut params = vec![Matrix::from_rows(&[vec![0.5]])];
        let grads = vec![Matrix::from_rows(&[vec![1.0]])];
        let mut st = AdamState::new(&[(1, 1)], 1e-3, 0.0);
        st.step(&mut params, &grads).unwrap();
        let update = params[0].data[0] - 0.5;
        assert!((update + 1e-3).abs() < 1e-8, "update {update}");
    }

    #[test]
    fn minimizes_scalar_quadratic() {
        // 100 steps on (w - 3)^2 from w = 0: loss trend must decrease.
        let mut params = vec![Matrix::from_rows(&[vec![0.0]])];
        let mut st = AdamState::new(&[(1, 1)], 0.1, 0.0);
        let loss = |w: f64| (w - 3.0) * (w - 3.0);
        let mut window: Vec<f64> = Vec::new();
        for _ in 0..100 {
            let w = params[0].data[0];
            window.push(loss(w));
            let grads = vec![Matrix::from_rows(&[vec![2.0 * (w - 3.0)]])];
            st.step(&mut params, &grads).unwrap();
        }
        let early: f64 = window[..20].iter().sum::<f64>() / 20.0;
        let late: f64 = window[80..].iter().sum::<f64>() / 20.0;
        assert!(late < 0.5 * early, "early {early} late {late}");
        assert!((params[0].data[0] - 3.0).abs() < 1.5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Matrix::zeros(2, 2)];
        let grads = vec![Matrix::zeros(1, 2)];
        let mut st = AdamState::new(&[(2, 2)], 1e-3, 0.0);
        assert!(st.step(&mut params, &grads).is_err());
    }
}
