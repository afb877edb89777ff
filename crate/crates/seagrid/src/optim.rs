//! Adam optimizer over a flat parameter vector.
//!
//! Both training engines flatten their model parameters into one `Vec<f64>`
//! (see [`crate::model::Model::flatten`]) and share this implementation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LR: f64 = 1e-5;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// First/second moment estimates plus step counter for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optional global-norm gradient clip; disabled by default.
    pub clip: Option<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            clip: None,
        }
    }

    /// One bias-corrected Adam update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::data(format!(
                "adam state holds {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite gradient in adam step"));
        }
        let scale = match self.clip {
            Some(max_norm) => {
                let gn = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if gn > max_norm {
                    max_norm / gn
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
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
    fn zero_gradients_leave_params_unchanged() {
        let mut p = vec![0.4, -1.3, 2.0];
        let mut st = AdamState::new(3, 0.01);
        st.step(&mut p, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.4, -1.3, 2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // At t=1 the bias corrections cancel the (1-beta) factors, so the
        // update is exactly -lr * g / (|g| + eps).
        let g = 0.37_f64;
        let lr = 0.003;
        let mut p = vec![1.0];
        let mut st = AdamState::new(1, lr);
        st.step(&mut p, &[g]).unwrap();
        let expected = 1.0 - lr * g / (g.abs() + DEFAULT_EPS);
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {expected}", p[0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut x = vec![3.0];
        let mut st = AdamState::new(1, 0.1);
        for _ in 0..500 {
            let g = 2.0 * x[0];
            st.step(&mut x, &[g]).unwrap();
        }
        assert!(x[0].abs() < 1e-3, "did not converge: {}", x[0]);
    }

    #[test]
    fn permuted_parameters_get_permuted_updates() {
        let grads = [0.5, -0.2, 1.7, 0.01];
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        let mut b = vec![4.0, 3.0, 2.0, 1.0];
        let mut sa = AdamState::new(4, 0.05);
        let mut sb = AdamState::new(4, 0.05);
        let rev: Vec<f64> = grads.iter().rev().cloned().collect();
        for _ in 0..7 {
            sa.step(&mut a, &grads).unwrap();
            sb.step(&mut b, &rev).unwrap();
        }
        for i in 0..4 {
            assert_eq!(a[i], b[3 - i]);
        }
    }

    #[test]
    fn state_serializes_bit_exactly() {
        let mut p = vec![0.1, 0.2];
        let mut st = AdamState::new(2, 0.01);
        st.step(&mut p, &[0.3, -0.7]).unwrap();
        st.step(&mut p, &[-0.1, 0.2]).unwrap();
        let json = serde_json::to_string(&st).unwrap();
        let back: AdamState = serde_json::from_str(&json).unwrap();
        assert_eq!(st, back);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1, 0.01);
        assert!(st.step(&mut p, &[f64::NAN]).is_err());
    }

    #[test]
    fn global_norm_clip_bounds_update() {
        let mut st = AdamState::new(2, 0.1);
        st.clip = Some(1.0);
        let mut p = vec![0.0, 0.0];
        st.step(&mut p, &[30.0, 40.0]).unwrap();
        // Clipped gradient is (0.6, 0.8); first-step update magnitude is
        // lr * g/(|g|+eps) per component.
        assert!((p[0] + 0.1).abs() < 1e-8 && (p[1] + 0.1).abs() < 1e-8);
    }
}
