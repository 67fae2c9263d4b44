//! Stage one: regress each agent's action-1 output onto its label; the
//! action-0 output is pinned at zero.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{label_order, label_signal};
use super::AgentError;
use crate::gym::{AgentRole, EnvConfig, ObsBundle, PreparedEpisode};
use crate::marketdata::WINDOW;
use crate::nn::{optimizer_step, AdamState, AsNetInput, Gradients, LossTarget, Network};

#[derive(Debug, Clone)]
pub struct LabeledSample<S> {
    pub input: S,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of samples held out for the reported metrics.
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            holdout_frac: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub n: usize,
    pub mae: f64,
    /// Percent; `None` when every label is zero.
    pub mape: Option<f64>,
    /// Bounded form: 0 for a perfect forecast, 1 at worst.
    pub theil_u: f64,
    pub correlation: Option<f64>,
}

pub fn regression_metrics(labels: &[f64], preds: &[f64]) -> RegressionMetrics {
    assert_eq!(labels.len(), preds.len(), "label and prediction counts");
    let n = labels.len();
    let nf = n.max(1) as f64;
    let mae = labels.iter().zip(preds).map(|(y, p)| (y - p).abs()).sum::<f64>() / nf;
    let nonzero: Vec<(f64, f64)> = labels.iter().zip(preds).filter(|(y, _)| **y != 0.0).map(|(y, p)| (*y, *p)).collect();
    let mape = (!nonzero.is_empty())
        .then(|| nonzero.iter().map(|(y, p)| ((y - p) / y).abs()).sum::<f64>() / nonzero.len() as f64 * 100.0);
    let rms = |v: &mut dyn Iterator<Item = f64>| (v.map(|x| x * x).sum::<f64>() / nf).sqrt();
    let err = rms(&mut labels.iter().zip(preds).map(|(y, p)| y - p));
    let denom = rms(&mut labels.iter().copied()) + rms(&mut preds.iter().copied());
    let theil_u = if denom == 0.0 { 0.0 } else { err / denom };
    let my = labels.iter().sum::<f64>() / nf;
    let mp = preds.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (y, p) in labels.iter().zip(preds) {
        sxy += (y - my) * (p - mp);
        sxx += (y - my) * (y - my);
        syy += (p - mp) * (p - mp);
    }
    let correlation = (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt());
    RegressionMetrics {
        n,
        mae,
        mape,
        theil_u,
        correlation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub train_samples: usize,
    pub validation: RegressionMetrics,
}

pub fn pretrain<S: AsNetInput>(
    net: &mut Network,
    samples: &[LabeledSample<S>],
    cfg: &PretrainConfig,
) -> Result<PretrainReport, AgentError> {
    if samples.is_empty() {
        return Err(AgentError::EmptyDataset);
    }
    net.zero_output_row(0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if samples.len() < 2 {
        0
    } else {
        ((samples.len() as f64 * cfg.holdout_frac).ceil() as usize).min(samples.len() - 1)
    };
    let (hold, mut train) = (order[..n_hold].to_vec(), order[n_hold..].to_vec());
    let mut adam = AdamState::new(net.params());
    let batch = cfg.batch_size.max(1);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in train.chunks(batch) {
            let mut grads = Gradients::zeros_like(net.params());
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &samples[i];
                sum += net.accumulate_gradients(&s.input.net_input(), &LossTarget::on(1, s.label), w, &mut grads)?;
            }
            optimizer_step(net.params_mut(), &grads.0, &mut adam, cfg.lr);
        }
        epoch_loss.push(sum / train.len() as f64);
    }
    // with nothing held out, report on the training samples
    let eval = if hold.is_empty() { &train } else { &hold };
    let mut labels = Vec::with_capacity(eval.len());
    let mut preds = Vec::with_capacity(eval.len());
    for &i in eval {
        labels.push(samples[i].label);
        preds.push(net.forward(&samples[i].input.net_input())?[1]);
    }
    Ok(PretrainReport {
        epoch_loss,
        train_samples: train.len(),
        validation: regression_metrics(&labels, &preds),
    })
}

/// How labels are cut from episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub samples_per_episode: usize,
    /// Clip band for signal labels; `None` leaves them raw.
    pub clip: Option<f64>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            samples_per_episode: 200,
            clip: Some(super::labels::SIGNAL_CLIP_PCT),
        }
    }
}

/// Random labeled states for `role`. Order-agent labels carry the
/// environment's buy-order reward sign so they match the reward later used.
pub fn build_dataset<R: Rng>(
    episodes: &[Arc<PreparedEpisode>],
    role: AgentRole,
    env: &EnvConfig,
    labels: &LabelConfig,
    rng: &mut R,
) -> Result<Vec<LabeledSample<ObsBundle>>, AgentError> {
    let d = env.deadline_s;
    let mut out = Vec::new();
    for ep in episodes {
        if ep.len() < WINDOW + d + 1 {
            continue;
        }
        let last_signal = ep.len() - 1 - d;
        let prices = ep.last_prices();
        for _ in 0..labels.samples_per_episode {
            let t1 = rng.random_range(WINDOW..=last_signal);
            let (t, lt, label) = match role {
                AgentRole::Bsa => (t1, None, label_signal(prices, t1, role, d, labels.clip)?),
                _ => {
                    let t = rng.random_range(t1..t1 + d);
                    let lt = t1 + d - t;
                    let label = match role {
                        AgentRole::Ssa => label_signal(prices, t, role, lt, labels.clip)?,
                        AgentRole::Boa => env.boa_reward_sign * label_order(prices, t1, t, role, d)?,
                        _ => label_order(prices, t1, t, role, d)?,
                    };
                    (t, Some(lt), label)
                }
            };
            out.push(LabeledSample {
                input: ObsBundle::new(Arc::clone(ep), t, lt, Some(role), d),
                label,
            });
        }
    }
    Ok(out)
}
