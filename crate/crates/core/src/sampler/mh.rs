//! Random-walk Metropolis bookkeeping.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Consecutive rejections after which a block is reported as stuck.
pub const STUCK_WINDOW: usize = 500;

/// Accept/reject from a log target ratio. Non-finite ratios reject, except
/// `+inf` (leaving an impossible state), which accepts.
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, greedy: bool, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    if greedy {
        return false;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// Proposal scale tuned by Robbins-Monro on its logarithm while adapting,
/// frozen afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveScale {
    pub log_scale: f64,
    pub target: f64,
    pub adapting: bool,
    steps: usize,
    pub accepted: usize,
    pub proposed: usize,
    pub accepted_after_adapt: usize,
    pub proposed_after_adapt: usize,
    run_of_rejections: usize,
    pub stuck: bool,
}

impl AdaptiveScale {
    pub fn new(initial_scale: f64, target: f64) -> Self {
        Self {
            log_scale: initial_scale.ln(),
            target,
            adapting: true,
            steps: 0,
            accepted: 0,
            proposed: 0,
            accepted_after_adapt: 0,
            proposed_after_adapt: 0,
            run_of_rejections: 0,
            stuck: false,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
            self.run_of_rejections = 0;
        } else {
            self.run_of_rejections += 1;
            if self.run_of_rejections >= STUCK_WINDOW {
                self.stuck = true;
            }
        }
        if self.adapting {
            self.steps += 1;
            let gain = (self.steps as f64 + 1.0).powf(-0.6);
            let a = if accepted { 1.0 } else { 0.0 };
            self.log_scale = (self.log_scale + gain * (a - self.target)).clamp(-30.0, 10.0);
        } else {
            self.proposed_after_adapt += 1;
            if accepted {
                self.accepted_after_adapt += 1;
            }
        }
    }

    pub fn freeze(&mut self) {
        self.adapting = false;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed_after_adapt > 0 {
            self.accepted_after_adapt as f64 / self.proposed_after_adapt as f64
        } else if self.proposed > 0 {
            self.accepted as f64 / self.proposed as f64
        } else {
            0.0
        }
    }
}
