//! Early stopping and learning-rate reduction on plateau.

/// Stops when the monitored value fails to improve for `patience` epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: Option<f64>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, min_delta: 0.0, best: None, wait: 0 }
    }

    /// Feeds a value where larger is better. Returns true when training
    /// should stop.
    pub fn update(&mut self, value: f64) -> bool {
        match self.best {
            Some(b) if value <= b + self.min_delta => {
                self.wait += 1;
                self.wait >= self.patience
            }
            _ => {
                self.best = Some(value);
                self.wait = 0;
                false
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs
/// without improvement, never going below `min_lr`.
#[derive(Clone, Debug)]
pub struct ReduceLrOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: Option<f64>,
    wait: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        Self { factor, patience, min_lr, best: None, wait: 0 }
    }

    /// Feeds a value where larger is better and returns the learning rate
    /// for the next epoch.
    pub fn update(&mut self, value: f64, lr: f64) -> f64 {
        match self.best {
            Some(b) if value <= b => {
                self.wait += 1;
                if self.wait >= self.patience {
                    self.wait = 0;
                    return (lr * self.factor).max(self.min_lr);
                }
                lr
            }
            _ => {
                self.best = Some(value);
                self.wait = 0;
                lr
            }
        }
    }
}
