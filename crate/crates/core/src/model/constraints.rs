use serde::{Deserialize, Serialize};

/// Compression and accuracy measurements of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub flops_reduction: f64,
    pub accuracy: f64,
}

/// Search termination constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub flops_target: f64,
    pub acc_floor: f64,
    /// Inner-step guard per episode.
    pub max_inner_steps: usize,
}

impl ConstraintSet {
    pub fn new(flops_target: f64, acc_floor: f64) -> Self {
        Self {
            flops_target,
            acc_floor,
            max_inner_steps: 50,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.flops_target) && (0.0..=1.0).contains(&self.acc_floor) && self.max_inner_steps > 0
    }
}

pub fn check_constraints(metrics: Metrics, c: &ConstraintSet) -> bool {
    metrics.flops_reduction >= c.flops_target && metrics.accuracy >= c.acc_floor
}
