use rand::Rng;
use serde::{Deserialize, Serialize};

/// Greedy action; ties go to 0 (wait).
pub fn argmax(q: &[f64; 2]) -> u8 {
    u8::from(q[1] > q[0])
}

/// Epsilon-greedy over the summed Q values.
pub fn select_action<R: Rng>(q_total: &[f64; 2], epsilon: f64, rng: &mut R) -> u8 {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..2u8)
    } else {
        argmax(q_total)
    }
}

/// Linear decay from `start` to `end` over the first `decay_frac` of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_frac: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_frac: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> EpsilonSchedule {
        EpsilonSchedule {
            start: eps,
            end: eps,
            decay_frac: 0.0,
        }
    }

    pub fn value(&self, episode: usize, total: usize) -> f64 {
        let span = self.decay_frac * total as f64;
        if span <= 0.0 || episode as f64 >= span {
            return self.end;
        }
        self.start + (self.end - self.start) * episode as f64 / span
    }

    /// First episode at which the schedule sits at its floor.
    pub fn decay_end(&self, total: usize) -> usize {
        (self.decay_frac * total as f64).ceil() as usize
    }
}
