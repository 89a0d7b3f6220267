//! Adam, the plateau learning-rate schedule and early stopping.
//!
//! Both state machines treat only a strict decrease of the validation loss as
//! an improvement.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f32], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::invalid(
            "adam step",
            format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let update = lr * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + state.eps);
        if update != 0.0 {
            params[i] = (params[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.2,
            patience: 5,
            min_lr: 1e-7,
        }
    }
}

/// Reduce-on-plateau state: after `patience` consecutive epochs without a new
/// best validation loss the rate is multiplied by `factor` (never below
/// `min_lr`) and the counter restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, cfg: PlateauConfig) -> Self {
        PlateauScheduler {
            cfg,
            lr: initial_lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's validation loss; returns true when the rate dropped.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait < self.cfg.patience {
            return false;
        }
        self.wait = 0;
        let next = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
        let reduced = next < self.lr;
        self.lr = next;
        reduced
    }
}

/// Rate to use after the last entry of `history`, given the rate in force
/// while it was recorded.
pub fn lr_schedule_update(history: &[f64], current_lr: f64, cfg: &PlateauConfig) -> f64 {
    let Some((&last, before)) = history.split_last() else {
        return current_lr;
    };
    // the patience counter depends only on the losses, not on the rate
    let mut sched = PlateauScheduler::new(1.0, *cfg);
    for &v in before {
        sched.observe(v);
    }
    let mut probe = PlateauScheduler {
        lr: current_lr,
        ..sched
    };
    probe.observe(last);
    probe.lr
}

/// Rate in force at each epoch when replaying `history` from `initial_lr`.
pub fn lr_trace(history: &[f64], initial_lr: f64, cfg: &PlateauConfig) -> Vec<f64> {
    let mut sched = PlateauScheduler::new(initial_lr, *cfg);
    history
        .iter()
        .map(|&v| {
            let lr = sched.lr();
            sched.observe(v);
            lr
        })
        .collect()
}

/// True when the best loss of `history` lies at least `patience` epochs
/// before its end.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    let mut best = f64::INFINITY;
    let mut best_at = None;
    for (i, &v) in history.iter().enumerate() {
        if v < best {
            best = v;
            best_at = Some(i);
        }
    }
    best_at.is_some_and(|i| history.len() - 1 - i >= patience)
}
