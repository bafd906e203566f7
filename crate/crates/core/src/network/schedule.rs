use serde::{Deserialize, Serialize};

/// Linear warmup from zero to `peak_lr`, then cosine decay to `end_lr` at
/// `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub end_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    /// Default rates with warmup over the first epoch.
    pub fn new(steps_per_epoch: usize, total_steps: usize) -> Self {
        Self {
            peak_lr: 1e-5,
            end_lr: 1e-6,
            warmup_steps: steps_per_epoch.min(total_steps),
            total_steps,
        }
    }
}

pub fn lr_at(step: usize, s: &LrSchedule) -> f64 {
    if step < s.warmup_steps {
        return s.peak_lr * (step as f64 / s.warmup_steps as f64);
    }
    let decay = s.total_steps.saturating_sub(s.warmup_steps);
    if decay == 0 {
        return s.end_lr;
    }
    let progress = ((step - s.warmup_steps) as f64 / decay as f64).min(1.0);
    // Written as a convex blend so both endpoints are exact.
    let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    s.peak_lr * w + s.end_lr * (1.0 - w)
}
