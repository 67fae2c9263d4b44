//! Q-mixing: a frozen supervised network plus a trainable correction, with a
//! periodically synced target copy of the correction.

use super::{argmax, AgentError, Transition};
use crate::nn::{optimizer_step, AdamState, AsNetInput, Gradients, LossTarget, NetInput, Network};

#[derive(Debug, Clone)]
pub struct MixedQ {
    frozen: Network,
    learn: Network,
    target: Network,
    adam: AdamState,
    pub lr: f64,
    pub target_sync: u64,
    /// Double-DQN action selection; plain max over the target otherwise.
    pub double: bool,
    updates: u64,
}

impl MixedQ {
    /// The trainable part starts as a copy of `frozen` with a zeroed output
    /// layer: it reuses the pretrained features but adds nothing at first.
    pub fn from_pretrained(frozen: Network, lr: f64, target_sync: u64) -> MixedQ {
        let mut learn = frozen.clone();
        let (w, b) = learn.output_layer();
        learn.params_mut()[w].fill(0.0);
        learn.params_mut()[b].fill(0.0);
        MixedQ::new(frozen, learn, lr, target_sync)
    }

    pub fn new(frozen: Network, learn: Network, lr: f64, target_sync: u64) -> MixedQ {
        MixedQ {
            adam: AdamState::new(learn.params()),
            target: learn.clone(),
            frozen,
            learn,
            lr,
            target_sync: target_sync.max(1),
            double: true,
            updates: 0,
        }
    }

    pub fn frozen(&self) -> &Network {
        &self.frozen
    }

    pub fn learn(&self) -> &Network {
        &self.learn
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn frozen_q(&self, input: &NetInput) -> Result<[f64; 2], AgentError> {
        Ok(self.frozen.forward(input)?)
    }

    /// `(Q_frozen, Q_frozen + Q_learn)` for one state.
    pub fn q_values(&self, input: &NetInput) -> Result<([f64; 2], [f64; 2]), AgentError> {
        let f = self.frozen.forward(input)?;
        let l = self.learn.forward(input)?;
        Ok((f, [f[0] + l[0], f[1] + l[1]]))
    }

    pub fn sync_target(&mut self) {
        self.target = self.learn.clone();
    }

    /// One squared-error step on the trainable network; returns the mean loss.
    pub fn ddqn_update<S: AsNetInput>(&mut self, batch: &[Transition<S>], gamma: f64) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let mut grads = Gradients::zeros_like(self.learn.params());
        let weight = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for tr in batch {
            let y = match &tr.next {
                None => tr.reward,
                Some((next, next_frozen)) => {
                    let x = next.net_input();
                    let tq = self.target.forward(&x)?;
                    let a = if self.double {
                        let lq = self.learn.forward(&x)?;
                        argmax(&[next_frozen[0] + lq[0], next_frozen[1] + lq[1]])
                    } else {
                        argmax(&[next_frozen[0] + tq[0], next_frozen[1] + tq[1]])
                    } as usize;
                    tr.reward + gamma * (next_frozen[a] + tq[a])
                }
            };
            let a = tr.action as usize;
            let target = LossTarget::on(a, y - tr.frozen_q[a]);
            total += self.learn.accumulate_gradients(&tr.state.net_input(), &target, weight, &mut grads)?;
        }
        optimizer_step(self.learn.params_mut(), &grads.0, &mut self.adam, self.lr);
        self.updates += 1;
        if self.updates % self.target_sync == 0 {
            self.sync_target();
        }
        Ok(total * weight)
    }
}
