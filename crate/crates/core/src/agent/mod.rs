//! Deep Q-learning agent: network, replay, exploration, and training.

pub mod model_io;
pub mod net;
pub mod replay;
pub mod train;

pub use model_io::{load_model, save_model};
pub use net::{Architecture, QNetwork};
pub use replay::ReplayBuffer;
pub use train::{
    sync_target, td_targets, train, train_step, train_step_with, Batch, StepBuffers, TrainConfig,
    TrainLogRow, TrainOutcome,
};

use rand::Rng;

use crate::env::{Action, N_ACTIONS};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over the 30 QP actions.
pub fn select_action<R: Rng>(qvals: &[f64], epsilon: f64, rng: &mut R) -> Action {
    debug_assert_eq!(qvals.len(), N_ACTIONS);
    let idx = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..N_ACTIONS)
    } else {
        argmax(qvals)
    };
    Action::from_index(idx).expect("index below N_ACTIONS")
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let t = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * t
    }
}
