//! Reduce-on-plateau learning rate with early stopping.

use serde::{Deserialize, Serialize};

/// Outcome of observing one validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub improved: bool,
    pub halved: bool,
    pub stop: bool,
}

/// Tracks the best validation loss. Only a strict decrease counts as an
/// improvement. Every `plateau_patience` consecutive non-improving epochs
/// multiply the learning rate by `factor`; `stop_patience` of them end the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    /// `None` until the first observation.
    pub best: Option<f64>,
    pub since_improvement: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, plateau_patience: usize, stop_patience: usize) -> Self {
        PlateauSchedule {
            lr,
            factor,
            plateau_patience,
            stop_patience,
            best: None,
            since_improvement: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Step {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.since_improvement = 0;
            return Step {
                improved: true,
                halved: false,
                stop: false,
            };
        }
        self.since_improvement += 1;
        let halved = self.since_improvement % self.plateau_patience == 0;
        if halved {
            self.lr *= self.factor;
        }
        Step {
            improved: false,
            halved,
            stop: self.since_improvement >= self.stop_patience,
        }
    }
}
