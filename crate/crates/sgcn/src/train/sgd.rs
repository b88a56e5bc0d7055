//! Optimizer settings and the clipped SGD update.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::scalar::Scalar;
use crate::train::TrainError;

/// Optimizer and schedule settings.
///
/// `decay_start_epoch` is the first epoch (1-based) whose learning rate is
/// multiplied by `lr_decay`; every later epoch multiplies it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub lr_decay: f64,
    pub decay_start_epoch: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.3,
            batch_size: 50,
            patience: 5,
            max_epochs: 100,
            lr_decay: 0.9,
            decay_start_epoch: 15,
            grad_clip_norm: 5.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".to_string());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".to_string());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".to_string());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if self.decay_start_epoch == 0 {
            return bad("decay_start_epoch must be at least 1".to_string());
        }
        if !(self.grad_clip_norm > 0.0 && self.grad_clip_norm.is_finite()) {
            return bad(format!(
                "grad_clip_norm must be positive and finite, got {}",
                self.grad_clip_norm
            ));
        }
        Ok(())
    }
}

/// One SGD update over every parameter in the store.
///
/// The L2 norm is taken over all gradient buffers jointly; when it exceeds
/// `clip_norm`, every gradient is scaled by `clip_norm / norm` before the
/// `θ ← θ − lr·grad` update. Gradients are reset to zero afterwards, so
/// consecutive steps never mix. Returns the pre-clip gradient norm.
pub fn sgd_step<S: Scalar>(
    store: &mut ParamStore<S>,
    lr: f64,
    clip_norm: f64,
) -> Result<f64, TrainError> {
    let ids: Vec<_> = store.ids().collect();
    let mut sq = 0.0f64;
    for &id in &ids {
        if let Some(grad) = store.get(id).grad() {
            for &g in grad {
                let g = g.to_f64();
                if !g.is_finite() {
                    return Err(TrainError::NonFiniteGrad(store.name(id).to_string()));
                }
                sq += g * g;
            }
        }
    }
    let norm = sq.sqrt();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    let step = S::from_f64(lr * scale);
    for &id in &ids {
        store.get_mut(id).apply_grad_step(step);
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store_with(values: &[f64]) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.add(
            "theta",
            Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
        );
        store
    }

    fn set_grad(store: &mut ParamStore<f64>, name: &str, grad: &[f64]) {
        let id = store.find(name).unwrap();
        store.get_mut(id).grad_mut().copy_from_slice(grad);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut absent = store_with(&[1.0, -2.0]);
        sgd_step(&mut absent, 0.3, 5.0).unwrap();
        assert_eq!(absent.get(absent.find("theta").unwrap()).values(), &[1.0, -2.0]);

        let mut zeroed = store_with(&[1.0, -2.0]);
        set_grad(&mut zeroed, "theta", &[0.0, 0.0]);
        let norm = sgd_step(&mut zeroed, 0.3, 5.0).unwrap();
        assert_eq!(norm, 0.0);
        assert_eq!(zeroed.get(zeroed.find("theta").unwrap()).values(), &[1.0, -2.0]);
    }

    #[test]
    fn scalar_step_matches_hand_arithmetic() {
        let mut store = store_with(&[1.0]);
        set_grad(&mut store, "theta", &[2.0]);
        let norm = sgd_step(&mut store, 0.3, 100.0).unwrap();
        assert!((norm - 2.0).abs() < 1e-15);
        let theta = store.get(store.find("theta").unwrap()).values()[0];
        assert!((theta - 0.4).abs() < 1e-12, "theta = {theta}");
    }

    #[test]
    fn clipping_bounds_the_update_norm() {
        // Gradient split across two groups: (6,) and (8,), global norm 10.
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(vec![1], vec![0.0]).unwrap());
        store.add("b", Tensor::new(vec![1], vec![0.0]).unwrap());
        set_grad(&mut store, "a", &[6.0]);
        set_grad(&mut store, "b", &[8.0]);
        let lr = 0.3;
        let norm = sgd_step(&mut store, lr, 5.0).unwrap();
        assert!((norm - 10.0).abs() < 1e-12);
        let a = store.get(store.find("a").unwrap()).values()[0];
        let b = store.get(store.find("b").unwrap()).values()[0];
        let update_norm = (a * a + b * b).sqrt();
        assert!(
            (update_norm - 5.0 * lr).abs() < 1e-12,
            "update norm {update_norm} != {}",
            5.0 * lr
        );
        // Direction preserved: components in 3:4 ratio.
        assert!((a / b - 6.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_aborts_naming_the_group() {
        let mut store = ParamStore::new();
        store.add("fine", Tensor::new(vec![1], vec![0.0]).unwrap());
        store.add("broken.w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        set_grad(&mut store, "fine", &[1.0]);
        set_grad(&mut store, "broken.w", &[0.5, f64::NAN]);
        let err = sgd_step(&mut store, 0.3, 5.0).unwrap_err();
        match err {
            TrainError::NonFiniteGrad(name) => assert_eq!(name, "broken.w"),
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
        // Nothing was applied: the scan aborts before any update.
        assert_eq!(store.get(store.find("fine").unwrap()).values(), &[0.0]);
    }

    #[test]
    fn gradients_reset_after_the_step() {
        let mut store = store_with(&[1.0, 1.0]);
        set_grad(&mut store, "theta", &[3.0, 4.0]);
        sgd_step(&mut store, 0.1, 100.0).unwrap();
        let grad = store.get(store.find("theta").unwrap()).grad().unwrap();
        assert_eq!(grad, &[0.0, 0.0]);
        // A second step with the cleared gradient is a no-op.
        let before: Vec<f64> = store.get(store.find("theta").unwrap()).values().to_vec();
        sgd_step(&mut store, 0.1, 100.0).unwrap();
        assert_eq!(store.get(store.find("theta").unwrap()).values(), &before[..]);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { lr: f64::NAN, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { max_epochs: 0, ..Default::default() },
            TrainConfig { lr_decay: 0.0, ..Default::default() },
            TrainConfig { lr_decay: 1.5, ..Default::default() },
            TrainConfig { decay_start_epoch: 0, ..Default::default() },
            TrainConfig { grad_clip_norm: 0.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err(), "accepted {cfg:?}");
        }
    }
}
