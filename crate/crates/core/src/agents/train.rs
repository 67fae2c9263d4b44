//! Stage two: the four agents drive the environment together and each
//! refines its own Q-mixing network from its own replay buffer.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{select_action, AgentError, EpsilonSchedule, MixedQ, ReplayBuffer, Transition};
use crate::epfilter::Episode;
use crate::gym::{AgentAction, AgentRole, EnvConfig, ObsBundle, PhaseState, PreparedEpisode, RewardVector, TradingEnv};
use crate::marketdata::WINDOW;
use crate::nn::AsNetInput;

impl AsNetInput for ObsBundle {
    fn net_input(&self) -> crate::nn::NetInput {
        let v = self.net_views();
        crate::nn::NetInput {
            branches: vec![v.ask, v.bid, v.trade],
            extra: self.lt_fraction().into_iter().collect(),
        }
    }
}

/// An episode ready for replay, with the earliest second a run may start.
#[derive(Debug, Clone)]
pub struct Replayable {
    pub episode: Arc<PreparedEpisode>,
    pub earliest_start: usize,
}

impl Replayable {
    /// Runs start no earlier than the first second clearing `threshold`.
    pub fn new(episode: &Episode, threshold: f64) -> Replayable {
        let trigger = episode.trigger_index(threshold).unwrap_or(0);
        Replayable {
            episode: Arc::new(PreparedEpisode::new(episode)),
            earliest_start: trigger.max(WINDOW),
        }
    }

    /// Last index at which an episode can still start.
    pub fn latest_start(&self, deadline: usize) -> Option<usize> {
        let last = (self.episode.len()).checked_sub(deadline + 1)?;
        (last >= self.earliest_start).then_some(last)
    }
}

/// Stops exploration for the buy-signal agent once its reward settles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsaGate {
    /// Episodes per comparison window.
    pub window: usize,
    /// Absolute tolerance on the change of the window mean.
    pub tolerance: f64,
    /// Standard errors of slack on top of the tolerance.
    pub z: f64,
    /// End training this many episodes after convergence.
    pub stop_after: Option<usize>,
}

impl Default for BsaGate {
    fn default() -> Self {
        BsaGate {
            window: 50,
            tolerance: 0.05,
            z: 2.0,
            stop_after: None,
        }
    }
}

impl BsaGate {
    /// Whether the last two windows of `rewards` have statistically equal means.
    pub fn settled(&self, rewards: &[f64]) -> bool {
        let w = self.window;
        if w < 2 || rewards.len() < 2 * w {
            return false;
        }
        let recent = &rewards[rewards.len() - w..];
        let before = &rewards[rewards.len() - 2 * w..rewards.len() - w];
        let stats = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / w as f64;
            let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (w - 1) as f64;
            (m, var)
        };
        let ((m1, v1), (m0, v0)) = (stats(recent), stats(before));
        let se = ((v1 + v0) / w as f64).sqrt();
        (m1 - m0).abs() <= self.tolerance.max(self.z * se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub lr: f64,
    /// Agent decisions per gradient update.
    pub train_every: usize,
    pub double_dqn: bool,
    /// With `false` the agents act but never update (baselines).
    pub learn: bool,
    pub gate: BsaGate,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            gamma: 0.99,
            epsilon: EpsilonSchedule::default(),
            buffer_capacity: 100_000,
            batch_size: 32,
            target_sync: 1000,
            lr: 1e-4,
            train_every: 4,
            double_dqn: true,
            learn: true,
            gate: BsaGate::default(),
            seed: 0,
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    /// Primary plus shared reward per agent.
    pub reward: [f64; 4],
    /// Net return of the episode's trade (0 without a trade).
    pub profit: f64,
    pub traded: bool,
}

pub const CURVE_HEADER: &str = "episode,reward_bsa,reward_boa,reward_ssa,reward_soa,profit";

impl CurveRow {
    pub fn csv_line(&self) -> String {
        let r = self.reward;
        format!("{},{},{},{},{},{}", self.episode, r[0], r[1], r[2], r[3], self.profit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub curves: Vec<CurveRow>,
    pub bsa_converged_at: Option<usize>,
    pub stopped_early: bool,
}

impl TrainOutput {
    /// Mean profit over the last `n` episodes.
    pub fn tail_profit(&self, n: usize) -> f64 {
        let tail = &self.curves[self.curves.len().saturating_sub(n)..];
        tail.iter().map(|c| c.profit).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Everything one episode produced.
pub struct EpisodeRun {
    pub transitions: [Vec<Transition<ObsBundle>>; 4],
    pub reward: RewardVector,
    pub state: PhaseState,
}

/// Plays one episode from index `start` with per-agent exploration rates.
pub fn run_episode<R: Rng>(
    env: &mut TradingEnv,
    agents: &[MixedQ; 4],
    episode: &Arc<PreparedEpisode>,
    start: usize,
    epsilon: [f64; 4],
    rng: &mut R,
) -> Result<EpisodeRun, AgentError> {
    let mut bundle = env.reset_prepared(Arc::clone(episode), episode.timestamp(start))?;
    let mut transitions: [Vec<Transition<ObsBundle>>; 4] = Default::default();
    let mut pending: [Option<(ObsBundle, u8, [f64; 2])>; 4] = Default::default();
    loop {
        let role = bundle.active.expect("active agent until done");
        let i = role.index();
        let input = bundle.net_input();
        let (frozen_q, total) = agents[i].q_values(&input)?;
        let a = select_action(&total, epsilon[i], rng);
        if let Some((s, pa, fq)) = pending[i].take() {
            transitions[i].push(Transition {
                state: s,
                action: pa,
                reward: 0.0,
                frozen_q: fq,
                next: Some((bundle.clone(), frozen_q)),
            });
        }
        pending[i] = Some((bundle, a, frozen_q));
        let out = env.step(AgentAction::new(role, a))?;
        if out.done {
            let reward = out.reward.expect("terminal reward");
            for (i, p) in pending.iter_mut().enumerate() {
                if let Some((s, pa, fq)) = p.take() {
                    transitions[i].push(Transition {
                        state: s,
                        action: pa,
                        reward: reward.total(i),
                        frozen_q: fq,
                        next: None,
                    });
                }
            }
            return Ok(EpisodeRun {
                transitions,
                reward,
                state: out.info.state,
            });
        }
        bundle = out.bundle;
    }
}

pub fn train_loop(
    agents: &mut [MixedQ; 4],
    episodes: &[Replayable],
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput, AgentError> {
    let usable: Vec<(&Replayable, usize)> = episodes
        .iter()
        .filter_map(|r| r.latest_start(env_cfg.deadline_s).map(|last| (r, last)))
        .collect();
    if usable.is_empty() {
        return Err(AgentError::EmptyTrainSet);
    }
    for q in agents.iter_mut() {
        q.double = cfg.double_dqn;
        q.lr = cfg.lr;
        q.target_sync = cfg.target_sync.max(1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut env = TradingEnv::new(*env_cfg);
    let mut buffers: [ReplayBuffer<Transition<ObsBundle>>; 4] =
        std::array::from_fn(|_| ReplayBuffer::new(cfg.buffer_capacity));
    let mut curves = Vec::with_capacity(cfg.episodes);
    let mut bsa_rewards = Vec::with_capacity(cfg.episodes);
    let mut converged_at = None;
    let mut stopped_early = false;
    let decay_end = cfg.epsilon.decay_end(cfg.episodes);
    for e in 0..cfg.episodes {
        let (rep, last) = usable[rng.random_range(0..usable.len())];
        let start = rng.random_range(rep.earliest_start..=last);
        let eps = cfg.epsilon.value(e, cfg.episodes);
        let mut per_agent = [eps; 4];
        if converged_at.is_some() {
            per_agent[AgentRole::Bsa.index()] = 0.0;
        }
        let run = run_episode(&mut env, agents, &rep.episode, start, per_agent, &mut rng)?;
        let rv = run.reward;
        if cfg.learn {
            for (i, trs) in run.transitions.into_iter().enumerate() {
                let n = trs.len();
                for t in trs {
                    buffers[i].push(t);
                }
                if n == 0 || buffers[i].len() < cfg.batch_size {
                    continue;
                }
                for _ in 0..n.div_ceil(cfg.train_every.max(1)) {
                    let batch = buffers[i].sample(cfg.batch_size, &mut rng);
                    agents[i].ddqn_update(&batch, cfg.gamma)?;
                }
            }
        }
        curves.push(CurveRow {
            episode: e,
            reward: std::array::from_fn(|i| rv.total(i)),
            profit: rv.net_return,
            traded: rv.traded,
        });
        bsa_rewards.push(rv.total(AgentRole::Bsa.index()));
        if converged_at.is_none() && e + 1 >= decay_end && cfg.learn && cfg.gate.settled(&bsa_rewards) {
            converged_at = Some(e);
        }
        if let (Some(c), Some(p)) = (converged_at, cfg.gate.stop_after) {
            if e >= c + p {
                stopped_early = e + 1 < cfg.episodes;
                break;
            }
        }
    }
    Ok(TrainOutput {
        curves,
        bsa_converged_at: converged_at,
        stopped_early,
    })
}

/// A finished greedy episode from a backtest.
#[derive(Debug, Clone)]
pub struct BacktestEpisode {
    pub start: i64,
    pub reward: RewardVector,
    pub state: PhaseState,
    pub trace: String,
}

/// Greedy episodes back to back through one day: each starts the second after
/// the previous one ended, until too little of the day is left.
pub fn backtest_day(agents: &[MixedQ; 4], day: &Replayable, env_cfg: &EnvConfig) -> Result<Vec<BacktestEpisode>, AgentError> {
    let mut env = TradingEnv::new(*env_cfg).with_trace();
    // greedy play never draws from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    let Some(last) = day.latest_start(env_cfg.deadline_s) else {
        return Ok(out);
    };
    let mut start = day.earliest_start;
    while start <= last {
        let run = run_episode(&mut env, agents, &day.episode, start, [0.0; 4], &mut rng)?;
        let end = day.episode.index_of(run.state.t).expect("episode ends inside the day");
        out.push(BacktestEpisode {
            start: day.episode.timestamp(start),
            reward: run.reward,
            state: run.state,
            trace: env.trace_jsonl(),
        });
        start = end + 1;
    }
    Ok(out)
}
