//! AdamW, cosine-annealing learning-rate schedule, early stopping, and
//! gradient-norm bookkeeping.
//!
//! Defaults follow the usual AdamW convention: base_lr 4e-3, betas
//! (0.9, 0.999), eps 1e-8, weight decay 0.01, 5 warmup epochs. Gradient
//! norms are recorded per optimizer step before any clipping (there is no
//! clipping) so the stability analytics see raw dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamTensor;

/// Optimizer hyperparameters, separate from the mutable state so configs
/// serialize cleanly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: u32,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            base_lr: 4e-3,
            min_lr: 4e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_epochs: 5,
        }
    }
}

/// AdamW state: first/second moment buffers per parameter plus the shared
/// step counter.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(cfg: &OptimConfig, param_lens: &[usize]) -> Self {
        OptimState {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One AdamW update over an ordered parameter list. `grads[i] = None` means
/// the parameter received no gradient this step (treated as zero: only the
/// decoupled decay applies).
pub fn adamw_step(
    params: &mut [&mut ParamTensor],
    grads: &[Option<Vec<f64>>],
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adamw_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::contract(format!("adamw_step: bad lr {lr}")));
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if let Some(g) = grad {
            if g.len() != param.values.len() {
                return Err(Error::contract(format!(
                    "adamw_step: grad len {} vs param '{}' len {}",
                    g.len(),
                    param.name,
                    param.values.len()
                )));
            }
        }
        let decay = lr * state.weight_decay;
        match grad {
            Some(g) => {
                for (((p, &gi), mi), vi) in
                    param.values.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
                {
                    *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
                    *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + state.eps) + decay * *p;
                }
            }
            None => {
                // zero gradient: moments decay toward zero, params only decay
                for ((p, mi), vi) in param.values.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi *= state.beta1;
                    *vi *= state.beta2;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + state.eps) + decay * *p;
                }
            }
        }
    }
    Ok(())
}

/// Cosine-annealing schedule with an optional linear warmup.
///
/// With no warmup: lr(t) = min + (base - min) * (1 + cos(pi (t-1)/(T-1))) / 2
/// for t in [1, T]. With `warmup_epochs = w > 0`, epochs 1..=w ramp linearly
/// from base/w to base and the cosine phase runs over the remaining T - w
/// epochs, so lr(w+1) = base and lr(T) = min.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_epochs: u32,
    pub warmup_epochs: u32,
}

impl LrSchedule {
    pub fn new(cfg: &OptimConfig, total_epochs: u32) -> Self {
        LrSchedule {
            base_lr: cfg.base_lr,
            min_lr: cfg.min_lr,
            total_epochs,
            warmup_epochs: cfg.warmup_epochs.min(total_epochs.saturating_sub(1)),
        }
    }

    pub fn lr_at(&self, t: u32) -> Result<f64> {
        if t < 1 || t > self.total_epochs {
            return Err(Error::contract(format!(
                "epoch {t} outside [1, {}]",
                self.total_epochs
            )));
        }
        let w = self.warmup_epochs;
        if w > 0 && t <= w {
            return Ok(self.base_lr * t as f64 / w as f64);
        }
        let span = (self.total_epochs - w).saturating_sub(1);
        if span == 0 {
            return Ok(self.base_lr);
        }
        let phase = (t - w - 1) as f64 / span as f64;
        Ok(self.min_lr
            + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * phase).cos()))
    }
}

/// Global L2 norm over an ordered gradient collection; absent buffers
/// contribute zero.
pub fn grad_global_norm(grads: &[Option<Vec<f64>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Early stopping on a lower-is-better validation metric. Fires after
/// `patience` consecutive epochs without strict improvement beyond 1e-6.
#[derive(Clone, Debug)]
pub struct EarlyStop {
    pub patience: u32,
    pub best_metric: Option<f64>,
    pub epochs_since_best: u32,
}

const IMPROVEMENT_TOL: f64 = 1e-6;

impl EarlyStop {
    pub fn new(patience: u32) -> Self {
        EarlyStop { patience, best_metric: None, epochs_since_best: 0 }
    }

    /// Feed one validation metric; returns true when training should stop.
    /// Also reports whether this epoch improved the best metric.
    pub fn update(&mut self, metric: f64) -> Result<bool> {
        if !metric.is_finite() {
            return Err(Error::contract(format!("early stop metric {metric} not finite")));
        }
        let improved = match self.best_metric {
            None => true,
            Some(best) => metric < best - IMPROVEMENT_TOL,
        };
        if improved {
            self.best_metric = Some(metric);
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        Ok(self.epochs_since_best >= self.patience)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(vals: Vec<f64>) -> ParamTensor {
        ParamTensor { name: "p".into(), shape: vec![vals.len()], values: vals, trainable: true }
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_fixed_point() {
        let cfg = OptimConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = param(vec![1.5, -0.25]);
        let mut state = OptimState::new(&cfg, &[2]);
        adamw_step(&mut [&mut p], &[Some(vec![0.0, 0.0])], &mut state, 0.1).unwrap();
        assert_eq!(p.values, vec![1.5, -0.25]);
        adamw_step(&mut [&mut p], &[None], &mut state, 0.1).unwrap();
        assert_eq!(p.values, vec![1.5, -0.25]);
    }

    #[test]
    fn adamw_first_step_hand_rolled() {
        // p=1, g=1, betas (0.9, 0.999), eps 1e-8, lr 0.1, wd 0:
        // m_hat = 1, v_hat = 1, p' = 1 - 0.1/(1 + 1e-8) ~ 0.9
        let cfg = OptimConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = param(vec![1.0]);
        let mut state = OptimState::new(&cfg, &[1]);
        adamw_step(&mut [&mut p], &[Some(vec![1.0])], &mut state, 0.1).unwrap();
        let expect = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.values[0] - expect).abs() < 1e-15);
        assert!((p.values[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn adamw_decay_only_step() {
        let cfg = OptimConfig { weight_decay: 0.1, ..Default::default() };
        let mut p = param(vec![2.0]);
        let mut state = OptimState::new(&cfg, &[1]);
        adamw_step(&mut [&mut p], &[Some(vec![0.0])], &mut state, 0.1).unwrap();
        assert!((p.values[0] - 2.0 * (1.0 - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn adamw_shape_mismatch_is_contract_error() {
        let cfg = OptimConfig::default();
        let mut p = param(vec![1.0, 2.0]);
        let mut state = OptimState::new(&cfg, &[2]);
        let res = adamw_step(&mut [&mut p], &[Some(vec![1.0])], &mut state, 0.1);
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn lr_schedule_endpoints_and_midpoint() {
        let s = LrSchedule { base_lr: 1.0, min_lr: 0.1, total_epochs: 11, warmup_epochs: 0 };
        assert_eq!(s.lr_at(1).unwrap(), 1.0);
        assert!((s.lr_at(11).unwrap() - 0.1).abs() < 1e-15);
        // midpoint t = (T+1)/2 = 6: (base + min) / 2
        assert!((s.lr_at(6).unwrap() - 0.55).abs() < 1e-15);
        assert!(s.lr_at(0).is_err());
        assert!(s.lr_at(12).is_err());
    }

    #[test]
    fn lr_schedule_warmup_then_nonincreasing() {
        let s = LrSchedule { base_lr: 1.0, min_lr: 0.0, total_epochs: 20, warmup_epochs: 4 };
        assert!((s.lr_at(1).unwrap() - 0.25).abs() < 1e-15);
        assert!((s.lr_at(4).unwrap() - 1.0).abs() < 1e-15);
        assert!((s.lr_at(5).unwrap() - 1.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in 5..=20 {
            let lr = s.lr_at(t).unwrap();
            assert!(lr <= prev + 1e-15);
            assert!((0.0..=1.0).contains(&lr));
            prev = lr;
        }
        assert!(s.lr_at(20).unwrap().abs() < 1e-15);
    }

    #[test]
    fn grad_norm_cases() {
        assert_eq!(grad_global_norm(&[Some(vec![3.0]), Some(vec![4.0])]), 5.0);
        assert_eq!(grad_global_norm(&[Some(vec![0.0, 0.0]), None]), 0.0);
        // partition invariance
        let flat = grad_global_norm(&[Some(vec![1.0, -2.0, 3.0, -4.0])]);
        let split = grad_global_norm(&[Some(vec![1.0, -2.0]), Some(vec![3.0]), Some(vec![-4.0])]);
        assert!((flat - split).abs() < 1e-15);
    }

    #[test]
    fn early_stop_semantics() {
        // strictly decreasing: never stops
        let mut es = EarlyStop::new(3);
        for i in 0..50 {
            assert!(!es.update(1.0 / (i + 1) as f64).unwrap());
        }

        // constant metric with patience 3: stops at the 4th observation
        let mut es = EarlyStop::new(3);
        assert!(!es.update(0.5).unwrap());
        assert!(!es.update(0.5).unwrap());
        assert!(!es.update(0.5).unwrap());
        assert!(es.update(0.5).unwrap());

        // improvement at the patience boundary resets the counter
        let mut es = EarlyStop::new(3);
        assert!(!es.update(0.5).unwrap());
        assert!(!es.update(0.5).unwrap());
        assert!(!es.update(0.5).unwrap());
        assert!(!es.update(0.4).unwrap());
        assert!(!es.update(0.4).unwrap());

        assert!(es.update(f64::NAN).is_err());
    }
}
