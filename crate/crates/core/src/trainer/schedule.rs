//! One-cycle learning-rate schedule and the Adam optimizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },
    #[error("pct_warmup must lie in (0, 1), got {0}")]
    BadWarmup(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub pct_warmup: f64,
    pub final_lr_fraction: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        OneCycle {
            pct_warmup: 0.3,
            final_lr_fraction: 0.04,
        }
    }
}

impl OneCycle {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.pct_warmup > 0.0 && self.pct_warmup < 1.0) {
            return Err(ScheduleError::BadWarmup(self.pct_warmup));
        }
        Ok(())
    }

    pub fn lr(&self, step: usize, total_steps: usize, lr_max: f64) -> Result<f64, ScheduleError> {
        onecycle_lr(step, total_steps, lr_max, self.pct_warmup, self.final_lr_fraction)
    }
}

/// Linear ramp from `lr_max * final_fraction` to `lr_max` over the first
/// `pct_warmup * total_steps` steps, then a half-cosine back down to
/// `lr_max * final_fraction` at `total_steps`.
pub fn onecycle_lr(
    step: usize,
    total_steps: usize,
    lr_max: f64,
    pct_warmup: f64,
    final_fraction: f64,
) -> Result<f64, ScheduleError> {
    if step > total_steps {
        return Err(ScheduleError::StepOutOfRange { step, total: total_steps });
    }
    if !(pct_warmup > 0.0 && pct_warmup < 1.0) {
        return Err(ScheduleError::BadWarmup(pct_warmup));
    }
    let lo = lr_max * final_fraction;
    if total_steps == 0 {
        return Ok(lo);
    }
    let s = step as f64;
    let warm = pct_warmup * total_steps as f64;
    if s == warm {
        return Ok(lr_max);
    }
    if s < warm {
        return Ok(lo + (lr_max - lo) * s / warm);
    }
    let t = (s - warm) / (total_steps as f64 - warm);
    Ok(lo + (lr_max - lo) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0)
}

/// Adam with bias correction; moment buffers mirror the parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
