use serde::{Deserialize, Serialize};

use crate::error::{BhraError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let first: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            config,
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at the configured learning rate.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        self.step_with_lr(params, grads, self.config.lr)
    }

    /// One update at an explicit learning rate (for warmup schedules).
    pub fn step_with_lr(
        &mut self,
        params: &mut [&mut Matrix],
        grads: &[Matrix],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(BhraError::config(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(BhraError::DimensionMismatch {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }

        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let p = p.as_mut_slice();
            for (k, ((pk, &gk), (mk, vk))) in p
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()))
                .enumerate()
            {
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let update = (*mk / c1) / ((*vk / c2).sqrt() + eps);
                let next = *pk - lr * (update + weight_decay * *pk);
                if !next.is_finite() {
                    return Err(BhraError::NonFinite {
                        row: k,
                        col: 0,
                        value: next,
                    });
                }
                *pk = next;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Matrix::zeros(2, 2)]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Matrix::from_rows(&[[0.0]]);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, [&p]);
        adam.step(&mut [&mut p], &[Matrix::from_rows(&[[1.0]])])
            .unwrap();
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        assert!((p.get(0, 0) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        adam.step(&mut [&mut p], &[Matrix::from_rows(&[[1.0]])])
            .unwrap();
        assert!((p.get(0, 0) + 0.2).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = Matrix::from_rows(&[[2.0]]);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, [&p]);
        adam.step(&mut [&mut p], &[Matrix::zeros(1, 1)]).unwrap();
        assert!((p.get(0, 0) - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam.step(&mut [&mut p], &[Matrix::zeros(2, 1)]).is_err());
        assert!(adam.step(&mut [&mut p], &[]).is_err());
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut p = Matrix::from_rows(&[[1.0, 2.0]]);
            let mut adam = AdamState::new(AdamConfig::default(), [&p]);
            for k in 0..20 {
                let g = p.map(|v| v * 2.0 + k as f64 * 0.01).unwrap();
                adam.step(&mut [&mut p], &[g]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
