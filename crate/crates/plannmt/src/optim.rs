//! Nesterov-momentum SGD with global-norm gradient clipping, plus the
//! plateau-based learning-rate annealing schedule used by both training loops.

use crate::numcore::{GradMap, NumError, ParamStore};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// NAG with a parameter-space velocity per parameter tensor.
///
/// Usage per step: call [`lookahead`](Self::lookahead) to shift the parameters
/// to θ + μv, evaluate the gradient there, then call [`step`](Self::step),
/// which clips the gradient, updates the velocity v ← μv − lr·g, and leaves
/// the parameters at θ + v.
pub struct NagOptimizer {
    lr: f64,
    momentum: f64,
    clip_norm: f64,
    velocity: GradMap,
}

impl NagOptimizer {
    pub fn new(lr: f64, params: &ParamStore) -> Self {
        NagOptimizer {
            lr,
            momentum: DEFAULT_MOMENTUM,
            clip_norm: DEFAULT_CLIP_NORM,
            velocity: GradMap::zeros_like(params),
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_clip_norm(mut self, clip_norm: f64) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Shift parameters to the look-ahead point θ + μv.
    pub fn lookahead(&self, params: &mut ParamStore) -> Result<(), NumError> {
        for (name, v) in self.velocity.iter() {
            let p = params.get_mut(name)?;
            for (pi, vi) in p.data_mut().iter_mut().zip(v.data()) {
                *pi += self.momentum * vi;
            }
        }
        Ok(())
    }

    /// Finish one update with gradients taken at the look-ahead point.
    /// Clips to the global-norm budget first; returns the pre-clip norm.
    ///
    /// The parameters arrive at θ + μv and leave at θ + v_new, which after the
    /// velocity update equals (θ + μv) − lr·g.
    pub fn step(&mut self, params: &mut ParamStore, grads: &mut GradMap) -> Result<f64, NumError> {
        for (name, g) in grads.iter() {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(NumError::ShapeMismatch {
                    context: format!("gradient for '{name}'"),
                    expected: format!("{:?}", p.shape()),
                    actual: format!("{:?}", g.shape()),
                });
            }
        }
        let norm = grads.clip_global_norm(self.clip_norm);
        for (name, v) in self.velocity.iter_mut() {
            let g = grads.get(name)?;
            let p = params.get_mut(name)?;
            for ((vi, gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                *vi = self.momentum * *vi - self.lr * gi;
                *pi -= self.lr * gi;
            }
        }
        Ok(norm)
    }
}

/// Learning-rate annealing: divide by `factor` whenever the best observed
/// loss has not improved for `patience` consecutive observations.
///
/// The state is a pure function of the observed loss sequence, so a schedule
/// can be replayed from a log.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    base_lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    since_best: usize,
    drops: u32,
}

impl LrSchedule {
    pub fn new(base_lr: f64, factor: f64, patience: usize) -> Self {
        LrSchedule {
            base_lr,
            factor,
            patience,
            best: f64::INFINITY,
            since_best: 0,
            drops: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.base_lr / self.factor.powi(self.drops as i32)
    }

    /// Record one loss; returns the learning rate for the next step.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                self.drops += 1;
                self.since_best = 0;
            }
        }
        self.lr()
    }

    /// Learning rate after observing a full loss history from scratch.
    pub fn replay(base_lr: f64, factor: f64, patience: usize, losses: &[f64]) -> f64 {
        let mut s = LrSchedule::new(base_lr, factor, patience);
        for &l in losses {
            s.observe(l);
        }
        s.lr()
    }
}
