use serde::{Deserialize, Serialize};

use super::tensor::Param;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated lazily and are
/// matched to parameters by visiting order.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Fails without touching any parameter if a
    /// gradient is non-finite or shapes disagree with the moment buffers.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<(), NnError> {
        for (i, p) in params.iter().enumerate() {
            if p.grad.shape() != p.value.shape() {
                return Err(NnError::ShapeMismatch {
                    layer: format!("param[{i}]"),
                    expected: format!("{:?}", p.value.shape()),
                    got: format!("{:?}", p.grad.shape()),
                });
            }
            if !p.grad.all_finite() {
                return Err(NnError::NonFinite {
                    layer: format!("param[{i}].grad"),
                });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                layer: "adam".into(),
                expected: format!("{} parameters", self.m.len()),
                got: format!("{} parameters", params.len()),
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            for (((w, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn param(values: &[f64]) -> Param {
        Param::new(Tensor::from_vec(values.to_vec()))
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = param(&[1.5, -2.0]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value.data(), &[1.5, -2.0]);
    }

    #[test]
    fn single_step_descends_on_square() {
        let mut p = param(&[1.0]);
        p.grad.data_mut()[0] = 2.0; // d/dw w^2 at w=1
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut [&mut p]).unwrap();
        let w = p.value.data()[0];
        assert!(w < 1.0 && w > 0.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(a, b) = (a - 3)^2 + 10 (b + 1)^2, minimum 0 at (3, -1).
        let mut p = param(&[0.0, 0.0]);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let f = |w: &[f64]| (w[0] - 3.0).powi(2) + 10.0 * (w[1] + 1.0).powi(2);
        for _ in 0..200 {
            let w = p.value.data().to_vec();
            p.grad
                .data_mut()
                .copy_from_slice(&[2.0 * (w[0] - 3.0), 20.0 * (w[1] + 1.0)]);
            adam.step(&mut [&mut p]).unwrap();
        }
        assert!(f(p.value.data()) < 1e-6, "loss {}", f(p.value.data()));
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = param(&[1.0]);
        p.grad.data_mut()[0] = f64::NAN;
        let err = Adam::new(AdamConfig::default()).step(&mut [&mut p]).unwrap_err();
        assert_eq!(err.kind(), "numerical_divergence");
        assert_eq!(p.value.data(), &[1.0]);
    }
}
