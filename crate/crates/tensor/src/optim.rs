//! AdamW with decoupled weight decay, and the one-cycle learning-rate
//! schedule.

use std::f64::consts::PI;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }
}

/// One AdamW update using the gradients stored on `params`. A parameter with
/// no gradient is treated as having a zero gradient. Nothing is modified if
/// any gradient is non-finite.
pub fn adamw_step(params: &[Tensor], state: &mut OptimizerState, lr: f64) -> Result<()> {
    const OP: &str = "adamw_step";
    if params.len() != state.m.len() {
        return Err(TensorError::invalid(
            OP,
            format!("{} parameters but state for {}", params.len(), state.m.len()),
        ));
    }
    let grads: Vec<Option<Vec<f64>>> = params.iter().map(Tensor::grad).collect();
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        if state.m[i].len() != p.numel() {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: vec![state.m[i].len()],
                rhs: p.shape().to_vec(),
            });
        }
        if g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TensorError::NonFinite { op: OP });
        }
    }

    state.t += 1;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        let mut data = p.data_mut();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..data.len() {
            let gj = g.as_ref().map_or(0.0, |g| g[j]);
            data[j] -= lr * weight_decay * data[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One-cycle policy: cosine ramp from `lr_max / div_factor` up to `lr_max`
/// over the first `warmup_fraction` of the steps, then cosine decay to
/// `lr_max / final_div_factor` at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl LrSchedule {
    pub fn new(lr_max: f64, total_steps: usize) -> Self {
        LrSchedule {
            lr_max,
            total_steps,
            warmup_fraction: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "one_cycle_lr";
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(TensorError::invalid(OP, format!("lr_max {} must be positive", self.lr_max)));
        }
        if self.total_steps == 0 {
            return Err(TensorError::invalid(OP, "total_steps must be positive"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(TensorError::invalid(
                OP,
                format!("warmup_fraction {} outside (0, 1)", self.warmup_fraction),
            ));
        }
        if !(self.div_factor > 1.0 && self.final_div_factor > 1.0) {
            return Err(TensorError::invalid(OP, "div factors must exceed 1"));
        }
        Ok(())
    }

    pub fn peak_step(&self) -> f64 {
        self.warmup_fraction * self.total_steps as f64
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        one_cycle_lr(self, step)
    }
}

fn cosine_interp(from: f64, to: f64, progress: f64) -> f64 {
    to + (from - to) * 0.5 * (1.0 + (PI * progress).cos())
}

pub fn one_cycle_lr(schedule: &LrSchedule, step: usize) -> Result<f64> {
    schedule.validate()?;
    if step >= schedule.total_steps {
        return Err(TensorError::invalid(
            "one_cycle_lr",
            format!("step {step} outside [0, {})", schedule.total_steps),
        ));
    }
    let start = schedule.lr_max / schedule.div_factor;
    let end = schedule.lr_max / schedule.final_div_factor;
    let peak = schedule.peak_step();
    let s = step as f64;
    if s <= peak {
        Ok(cosine_interp(start, schedule.lr_max, s / peak))
    } else {
        let span = (schedule.total_steps - 1) as f64 - peak;
        let progress = if span > 0.0 { ((s - peak) / span).min(1.0) } else { 1.0 };
        Ok(cosine_interp(schedule.lr_max, end, progress))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoupled_decay_with_zero_grad() {
        let p = Tensor::param(vec![1.0], &[1]).unwrap();
        let mut st = OptimizerState::new(
            std::slice::from_ref(&p),
            AdamWConfig {
                weight_decay: 0.1,
                ..Default::default()
            },
        );
        adamw_step(std::slice::from_ref(&p), &mut st, 0.01).unwrap();
        assert!((p.item() - 0.999).abs() < 1e-15);
        assert_eq!(st.m[0], vec![0.0]);
        assert_eq!(st.v[0], vec![0.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        for g in [3.0, -0.25] {
            let p = Tensor::param(vec![0.5], &[1]).unwrap();
            let mut st = OptimizerState::new(
                std::slice::from_ref(&p),
                AdamWConfig {
                    weight_decay: 0.0,
                    ..Default::default()
                },
            );
            let loss = p.scale(g).unwrap().sum().unwrap();
            loss.backward().unwrap();
            adamw_step(std::slice::from_ref(&p), &mut st, 0.01).unwrap();
            let delta = p.item() - 0.5;
            assert_eq!(delta.signum(), -g.signum());
            assert!((delta.abs() - 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_non_finite_grad_without_mutation() {
        let p = Tensor::param(vec![2.0], &[1]).unwrap();
        let mut st = OptimizerState::new(std::slice::from_ref(&p), AdamWConfig::default());
        p.set_grad(vec![f64::NAN]).unwrap();
        assert!(adamw_step(std::slice::from_ref(&p), &mut st, 0.1).is_err());
        assert_eq!(p.item(), 2.0);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(1e-4, 100);
        assert!((s.lr(0).unwrap() - 1e-4 / 25.0).abs() < 1e-18);
        assert_eq!(s.lr(30).unwrap(), 1e-4);
        assert!(s.lr(100).is_err());
        let last = s.lr(99).unwrap();
        assert!((last - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn schedule_validation() {
        let mut s = LrSchedule::new(1e-3, 10);
        s.warmup_fraction = 1.0;
        assert!(s.lr(0).is_err());
        s.warmup_fraction = 0.5;
        s.div_factor = 1.0;
        assert!(s.lr(0).is_err());
    }
}
