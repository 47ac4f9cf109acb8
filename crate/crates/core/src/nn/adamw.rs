//! AdamW with decoupled weight decay.
//!
//! ```text
//! m <- b1 m + (1 - b1) g
//! v <- b2 v + (1 - b2) g^2
//! p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
//! ```
//! with bias-corrected `m_hat = m / (1 - b1^t)`, `v_hat = v / (1 - b2^t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, shapes: &[usize]) -> Self {
        AdamWState {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!(
                    "tensor {i}: expected {} values, got {} parameters and {} gradients",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }

        self.t += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps) - lr * weight_decay * p[j];
            }
        }
        Ok(())
    }
}

pub fn adamw_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamWState) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_only_step() {
        let mut p = vec![2.0, -4.0];
        let mut st = AdamWState::new(AdamWConfig::default(), &[2]);
        adamw_step(&mut [&mut p], &[&[0.0, 0.0]], &mut st).unwrap();
        let f = 1.0 - 1e-4 * 0.01;
        assert!((p[0] - 2.0 * f).abs() < 1e-15);
        assert!((p[1] + 4.0 * f).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn one_step_hand_oracle() {
        // m = 0.1, v = 0.001, m_hat = v_hat = 1
        // p' = 1 - 1e-4 * 1 / (1 + 1e-8) - 1e-4 * 0.01 * 1
        let mut p = vec![1.0];
        let mut st = AdamWState::new(AdamWConfig::default(), &[1]);
        adamw_step(&mut [&mut p], &[&[1.0]], &mut st).unwrap();
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8) - 1e-6;
        assert!((p[0] - expected).abs() < 1e-10);
        assert!((p[0] - 0.999_899_000_001).abs() < 1e-10);
    }

    #[test]
    fn identical_sets_stay_identical() {
        let mut a = vec![0.3, -0.7, 1.1];
        let mut b = a.clone();
        let mut sa = AdamWState::new(AdamWConfig::default(), &[3]);
        let mut sb = sa.clone();
        for k in 0..10 {
            let g = [0.1 * k as f64, -0.2, 0.05];
            sa.step(&mut [&mut a], &[&g]).unwrap();
            sb.step(&mut [&mut b], &[&g]).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 3];
        let mut st = AdamWState::new(AdamWConfig::default(), &[2]);
        assert!(st.step(&mut [&mut p], &[&[0.0; 3]]).is_err());
        let mut st = AdamWState::new(AdamWConfig::default(), &[3]);
        assert!(st.step(&mut [&mut p], &[&[0.0; 2]]).is_err());
    }

    #[test]
    fn second_moments_nonnegative() {
        let mut p = vec![0.0; 4];
        let mut st = AdamWState::new(AdamWConfig::default(), &[4]);
        for k in 0..20 {
            let g: Vec<f64> = (0..4).map(|j| ((k * 7 + j) as f64).sin()).collect();
            st.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert!(st.v[0].iter().all(|&v| v >= 0.0));
    }
}
