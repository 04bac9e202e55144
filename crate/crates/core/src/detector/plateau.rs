//! Validation-loss plateau handling: learning-rate reduction and early
//! stopping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlateauAction {
    pub improved: bool,
    pub reduce_lr: bool,
    pub stop: bool,
}

/// Counts epochs without a strict improvement of the validation loss.
/// After `lr_patience` such epochs the learning rate is reduced and that
/// count restarts; after `stop_patience` consecutive ones training stops.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauTracker {
    pub lr_patience: usize,
    pub stop_patience: usize,
    best: f64,
    stagnant: usize,
    since_reduce: usize,
}

impl PlateauTracker {
    pub fn new(lr_patience: usize, stop_patience: usize) -> Self {
        PlateauTracker {
            lr_patience,
            stop_patience,
            best: f64::INFINITY,
            stagnant: 0,
            since_reduce: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stagnant_epochs(&self) -> usize {
        self.stagnant
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauAction {
        if val_loss < self.best {
            self.best = val_loss;
            self.stagnant = 0;
            self.since_reduce = 0;
            return PlateauAction {
                improved: true,
                ..Default::default()
            };
        }
        self.stagnant += 1;
        self.since_reduce += 1;
        let reduce_lr = self.since_reduce >= self.lr_patience;
        if reduce_lr {
            self.since_reduce = 0;
        }
        PlateauAction {
            improved: false,
            reduce_lr,
            stop: self.stagnant >= self.stop_patience,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_history() {
        let mut t = PlateauTracker::new(2, 8);
        assert!(t.observe(1.0).improved);
        let acts: Vec<_> = (0..8).map(|_| t.observe(1.0)).collect();
        let reduce: Vec<usize> = acts
            .iter()
            .enumerate()
            .filter(|(_, a)| a.reduce_lr)
            .map(|(i, _)| i + 1)
            .collect();
        assert_eq!(reduce, vec![2, 4, 6, 8]);
        assert!(acts[..7].iter().all(|a| !a.stop));
        assert!(acts[7].stop);
    }

    #[test]
    fn improvement_resets() {
        let mut t = PlateauTracker::new(2, 3);
        t.observe(5.0);
        assert!(!t.observe(6.0).reduce_lr);
        assert!(t.observe(4.0).improved);
        assert!(!t.observe(4.5).reduce_lr);
        assert!(t.observe(4.5).reduce_lr);
        assert!(t.observe(4.5).stop);
    }
}
