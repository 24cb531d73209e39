use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::tensor::Tensor;
use crate::{NdError, Result};

/// Adam hyperparameters. Defaults follow the training setup used across this
/// workspace: `beta1 = 0.0`, `beta2 = 0.5`, `eps = 1e-8`.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.0, beta2: 0.5, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// Adam optimizer state: step counter plus per-parameter first/second moment
/// buffers, keyed by parameter name so updates are order-independent.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    step_count: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState { cfg, step_count: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update with bias correction over every named parameter that
    /// has a gradient; parameters missing from `grads` are left untouched.
    /// `lr` overrides the configured rate for this step (scheduling).
    ///
    /// Aborts with a diagnostic naming the parameter if any gradient entry is
    /// non-finite.
    pub fn step(
        &mut self,
        lr: f64,
        params: &mut [(&str, &mut Tensor)],
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);

        for (name, tensor) in params.iter_mut() {
            let Some(grad) = grads.get(*name) else { continue };
            if grad.shape() != tensor.shape() {
                return Err(NdError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "gradient {:?} vs parameter {:?} for `{name}`",
                        grad.shape(),
                        tensor.shape()
                    ),
                });
            }
            if !grad.all_finite() {
                return Err(NdError::Numerical(format!(
                    "non-finite gradient for `{name}` at step {t}"
                )));
            }
            let n = tensor.len();
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate: `lr0 * (1 + cos(pi * epoch / total)) / 2`,
/// which starts at `lr0` and reaches zero at `epoch == total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(NdError::Range("cosine_lr: total_epochs must be positive".into()));
    }
    if epoch > total_epochs {
        return Err(NdError::Range(format!(
            "cosine_lr: epoch {epoch} exceeds total_epochs {total_epochs}"
        )));
    }
    if lr0 <= 0.0 {
        return Err(NdError::Range(format!("cosine_lr: lr0 must be positive, got {lr0}")));
    }
    Ok(lr0 * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(tensor: &mut Tensor) -> Vec<(&str, &mut Tensor)> {
        vec![("p", tensor)]
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::vector(vec![1.5, -2.5]);
        let before = p.data().to_vec();
        let mut adam = AdamState::new(AdamConfig::default());
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::vector(vec![0.0, 0.0]));
        for _ in 0..5 {
            adam.step(1e-2, &mut named(&mut p), &grads).unwrap();
        }
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // beta1=0, beta2=0.5, g=1: m_hat=1, v_hat=1 => delta = lr/(1+eps).
        let mut p = Tensor::scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::scalar(1.0));
        adam.step(1e-4, &mut named(&mut p), &grads).unwrap();
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-18, "{}", p.data()[0]);
    }

    #[test]
    fn step_count_increments_per_call() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::scalar(1.0));
        adam.step(1e-4, &mut named(&mut p), &grads).unwrap();
        adam.step(1e-4, &mut named(&mut p), &grads).unwrap();
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::scalar(f64::NAN));
        let err = adam.step(1e-4, &mut named(&mut p), &grads).unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.5).unwrap(), 0.5);
        assert!(cosine_lr(10, 10, 0.5).unwrap().abs() < 1e-16);
        assert!((cosine_lr(5, 10, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(cosine_lr(11, 10, 0.5).is_err());
    }
}
