//! The replay environment: one episode, one active agent per second.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rewards::{reward_boa, reward_bsa, reward_soa, reward_ssa, shared_rewards, RewardVector};
use super::{EnvConfig, FillMode, GymError};
use crate::epfilter::{Episode, EpisodeId};
use crate::marketdata::{center_window, split_window, ObsViews, ObservationTensor, ScaledDay, WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AgentRole {
    Bsa,
    Boa,
    Ssa,
    Soa,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [AgentRole::Bsa, AgentRole::Boa, AgentRole::Ssa, AgentRole::Soa];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Order and sell agents also see the seconds left before the deadline.
    pub fn sees_remaining_time(self) -> bool {
        self != AgentRole::Bsa
    }

    pub fn lower(self) -> &'static str {
        match self {
            AgentRole::Bsa => "bsa",
            AgentRole::Boa => "boa",
            AgentRole::Ssa => "ssa",
            AgentRole::Soa => "soa",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.lower().to_ascii_uppercase())
    }
}

impl FromStr for AgentRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.lower().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown agent role {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    WaitBuySignal,
    WaitBuyOrder,
    WaitSellSignal,
    WaitSellOrder,
    Done,
}

impl Phase {
    pub fn active(self) -> Option<AgentRole> {
        match self {
            Phase::WaitBuySignal => Some(AgentRole::Bsa),
            Phase::WaitBuyOrder => Some(AgentRole::Boa),
            Phase::WaitSellSignal => Some(AgentRole::Ssa),
            Phase::WaitSellOrder => Some(AgentRole::Soa),
            Phase::Done => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub agent: AgentRole,
    /// 1 signals or orders, 0 waits a second.
    pub a: u8,
}

impl AgentAction {
    pub fn new(agent: AgentRole, a: u8) -> AgentAction {
        AgentAction { agent, a }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: Phase,
    pub t: i64,
    pub t1: Option<i64>,
    pub t2: Option<i64>,
    pub t3: Option<i64>,
    pub t4: Option<i64>,
    pub p_t1: Option<f64>,
    pub p_t2: Option<f64>,
    pub p_t3: Option<f64>,
    pub p_t4: Option<f64>,
    /// Lowest last price since the buy signal.
    pub min_since_t1: Option<f64>,
}

impl PhaseState {
    fn start(t: i64) -> PhaseState {
        PhaseState {
            phase: Phase::WaitBuySignal,
            t,
            t1: None,
            t2: None,
            t3: None,
            t4: None,
            p_t1: None,
            p_t2: None,
            p_t3: None,
            p_t4: None,
            min_since_t1: None,
        }
    }
}

/// An episode scaled once up front, shared by every observation cut from it.
#[derive(Debug)]
pub struct PreparedEpisode {
    pub id: EpisodeId,
    scaled: ScaledDay,
    last: Vec<f64>,
    best_bid: Vec<f64>,
    best_ask: Vec<f64>,
}

impl PreparedEpisode {
    pub fn new(episode: &Episode) -> PreparedEpisode {
        let r = &episode.records;
        PreparedEpisode {
            id: episode.id.clone(),
            scaled: ScaledDay::new(r, &episode.meta),
            last: r.iter().map(|x| x.last_price).collect(),
            best_bid: r.iter().map(|x| x.bid_price[0]).collect(),
            best_ask: r.iter().map(|x| x.ask_price[0]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.last.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last.is_empty()
    }

    pub fn timestamp(&self, idx: usize) -> i64 {
        self.scaled.timestamp(idx)
    }

    pub fn index_of(&self, t: i64) -> Option<usize> {
        let idx = usize::try_from(t - self.scaled.timestamp(0)).ok()?;
        (idx < self.len()).then_some(idx)
    }

    pub fn last_prices(&self) -> &[f64] {
        &self.last
    }

    pub fn window_slice(&self, idx: usize) -> &[f64] {
        self.scaled.window_slice(idx).expect("bundle index has full history")
    }
}

/// What the active agent sees: the observation window ending at `t` and,
/// once a buy signal is out, the seconds left before the deadline.
#[derive(Debug, Clone)]
pub struct ObsBundle {
    episode: Arc<PreparedEpisode>,
    index: usize,
    pub t: i64,
    pub lt: Option<usize>,
    pub active: Option<AgentRole>,
    pub deadline: usize,
}

impl PartialEq for ObsBundle {
    fn eq(&self, other: &Self) -> bool {
        self.episode.id == other.episode.id
            && (self.index, self.t, self.lt, self.active, self.deadline)
                == (other.index, other.t, other.lt, other.active, other.deadline)
    }
}

impl ObsBundle {
    pub fn new(episode: Arc<PreparedEpisode>, index: usize, lt: Option<usize>, active: Option<AgentRole>, deadline: usize) -> ObsBundle {
        assert!(index >= WINDOW && index < episode.len(), "index {index} outside observable range");
        ObsBundle {
            t: episode.timestamp(index),
            episode,
            index,
            lt,
            active,
            deadline,
        }
    }

    pub fn episode(&self) -> &Arc<PreparedEpisode> {
        &self.episode
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn observation(&self) -> ObservationTensor {
        ObservationTensor::from_rows(self.episode.window_slice(self.index).to_vec())
    }

    pub fn views(&self) -> ObsViews {
        split_window(self.episode.window_slice(self.index))
    }

    /// Centered views for the networks.
    pub fn net_views(&self) -> ObsViews {
        split_window(&center_window(self.episode.window_slice(self.index)))
    }

    /// Remaining time as a fraction of the deadline.
    pub fn lt_fraction(&self) -> Option<f64> {
        self.lt.map(|l| l as f64 / self.deadline as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub state: PhaseState,
    /// Agents whose action was executed by the deadline rather than chosen.
    pub forced: Vec<AgentRole>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub bundle: ObsBundle,
    /// Present only on the terminal step.
    pub reward: Option<RewardVector>,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: i64,
    pub phase: Phase,
    pub agent: AgentRole,
    pub action: u8,
    pub last_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTerminal {
    pub t1: Option<i64>,
    pub t2: Option<i64>,
    pub t3: Option<i64>,
    pub t4: Option<i64>,
    pub p_t2: Option<f64>,
    pub p_t4: Option<f64>,
    pub gross: f64,
    pub net: f64,
    pub primary: [f64; 4],
    pub shared: [f64; 4],
}

impl TraceTerminal {
    pub fn traded(&self) -> bool {
        self.t4.is_some()
    }
}

pub struct TradingEnv {
    config: EnvConfig,
    episode: Option<Arc<PreparedEpisode>>,
    state: Option<PhaseState>,
    idx: usize,
    tracing: bool,
    trace: Vec<TraceStep>,
    terminal: Option<TraceTerminal>,
}

impl TradingEnv {
    pub fn new(config: EnvConfig) -> TradingEnv {
        TradingEnv {
            config,
            episode: None,
            state: None,
            idx: 0,
            tracing: false,
            trace: Vec::new(),
            terminal: None,
        }
    }

    /// Record every consumed action for `trace_jsonl`.
    pub fn with_trace(mut self) -> TradingEnv {
        self.tracing = true;
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&PhaseState> {
        self.state.as_ref()
    }

    pub fn reset(&mut self, episode: &Episode, start: i64) -> Result<ObsBundle, GymError> {
        self.reset_prepared(Arc::new(PreparedEpisode::new(episode)), start)
    }

    pub fn reset_prepared(&mut self, episode: Arc<PreparedEpisode>, start: i64) -> Result<ObsBundle, GymError> {
        let first = episode.timestamp(0);
        let offset = start - first;
        if offset < WINDOW as i64 {
            return Err(GymError::InsufficientHistory {
                start,
                available: offset.max(0) as usize,
            });
        }
        let idx = offset as usize;
        let remaining = episode.len().saturating_sub(idx);
        if remaining < self.config.deadline_s + 1 {
            return Err(GymError::EpisodeTooShort {
                start,
                needed: self.config.deadline_s + 1,
                remaining,
            });
        }
        self.idx = idx;
        self.state = Some(PhaseState::start(start));
        self.trace.clear();
        self.terminal = None;
        self.episode = Some(episode);
        Ok(self.bundle())
    }

    fn bundle(&self) -> ObsBundle {
        let st = self.state.as_ref().expect("reset");
        let active = st.phase.active();
        let lt = match (active, st.t1) {
            (Some(r), Some(t1)) if r.sees_remaining_time() => {
                Some((t1 + self.config.deadline_s as i64 - st.t) as usize)
            }
            _ => None,
        };
        ObsBundle::new(self.episode.clone().expect("reset"), self.idx, lt, active, self.config.deadline_s)
    }

    fn buy_fill(&self, ep: &PreparedEpisode, idx: usize) -> f64 {
        match self.config.fill {
            FillMode::Last => ep.last[idx],
            FillMode::Quote => ep.best_ask[idx],
        }
    }

    fn sell_fill(&self, ep: &PreparedEpisode, idx: usize) -> f64 {
        match self.config.fill {
            FillMode::Last => ep.last[idx],
            FillMode::Quote => ep.best_bid[idx],
        }
    }

    pub fn step(&mut self, action: AgentAction) -> Result<StepOutcome, GymError> {
        let ep = self.episode.clone().ok_or(GymError::NotReset)?;
        let mut st = self.state.clone().ok_or(GymError::NotReset)?;
        let Some(active) = st.phase.active() else {
            return Err(GymError::SteppedAfterDone);
        };
        if action.agent != active {
            return Err(GymError::WrongAgent {
                expected: active,
                got: action.agent,
            });
        }
        if action.a > 1 {
            return Err(GymError::InvalidAction(action.a));
        }
        if self.tracing {
            self.trace.push(TraceStep {
                t: st.t,
                phase: st.phase,
                agent: active,
                action: action.a,
                last_price: ep.last[self.idx],
            });
        }
        let deadline = self.config.deadline_s;
        let mut forced = Vec::new();
        let idx = self.idx;
        if action.a == 1 {
            match st.phase {
                Phase::WaitBuySignal => {
                    st.t1 = Some(st.t);
                    st.p_t1 = Some(ep.last[idx]);
                    st.min_since_t1 = Some(ep.last[idx]);
                    st.phase = Phase::WaitBuyOrder;
                }
                Phase::WaitBuyOrder => {
                    st.t2 = Some(st.t);
                    st.p_t2 = Some(self.buy_fill(&ep, idx));
                    st.phase = Phase::WaitSellSignal;
                }
                Phase::WaitSellSignal => {
                    st.t3 = Some(st.t);
                    st.p_t3 = Some(ep.last[idx]);
                    st.phase = Phase::WaitSellOrder;
                }
                Phase::WaitSellOrder => {
                    st.t4 = Some(st.t);
                    st.p_t4 = Some(self.sell_fill(&ep, idx));
                    st.phase = Phase::Done;
                }
                Phase::Done => unreachable!(),
            }
        } else {
            self.idx += 1;
            st.t += 1;
            let now = self.idx;
            match st.t1 {
                None => {
                    // the buy-signal reward needs a full deadline of future prices
                    if now + deadline >= ep.len() {
                        st.phase = Phase::Done;
                    }
                }
                Some(t1) => {
                    st.min_since_t1 = st.min_since_t1.map(|m| m.min(ep.last[now]));
                    if st.t == t1 + deadline as i64 {
                        self.force(&ep, &mut st, &mut forced);
                    }
                }
            }
        }
        let done = st.phase == Phase::Done;
        let reward = done.then(|| self.settle(&ep, &st));
        if let Some(rv) = &reward {
            self.terminal = Some(TraceTerminal {
                t1: st.t1,
                t2: st.t2,
                t3: st.t3,
                t4: st.t4,
                p_t2: st.p_t2,
                p_t4: st.p_t4,
                gross: rv.gross_return,
                net: rv.net_return,
                primary: rv.primary,
                shared: rv.shared,
            });
        }
        self.state = Some(st.clone());
        Ok(StepOutcome {
            bundle: self.bundle(),
            reward,
            done,
            info: StepInfo { state: st, forced },
        })
    }

    /// Executes every outstanding step at the deadline second.
    fn force(&self, ep: &PreparedEpisode, st: &mut PhaseState, forced: &mut Vec<AgentRole>) {
        let idx = self.idx;
        if st.phase == Phase::WaitBuyOrder {
            st.t2 = Some(st.t);
            st.p_t2 = Some(self.buy_fill(ep, idx));
            forced.push(AgentRole::Boa);
            st.phase = Phase::WaitSellSignal;
        }
        if st.phase == Phase::WaitSellSignal {
            st.t3 = Some(st.t);
            st.p_t3 = Some(ep.last[idx]);
            forced.push(AgentRole::Ssa);
            st.phase = Phase::WaitSellOrder;
        }
        if st.phase == Phase::WaitSellOrder {
            st.t4 = Some(st.t);
            st.p_t4 = Some(self.sell_fill(ep, idx));
            forced.push(AgentRole::Soa);
            st.phase = Phase::Done;
        }
    }

    fn settle(&self, ep: &PreparedEpisode, st: &PhaseState) -> RewardVector {
        let (Some(t1), Some(t2), Some(t3), Some(p2), Some(p4)) = (st.t1, st.t2, st.t3, st.p_t2, st.p_t4) else {
            return RewardVector::no_trade();
        };
        let at = |t: i64| ep.index_of(t).expect("timestamp inside episode");
        let (i1, i2, i3) = (at(t1), at(t2), at(t3));
        let deadline = self.config.deadline_s;
        let lt3 = i1 + deadline - i3;
        let prices = &ep.last;
        let primary = [
            reward_bsa(prices, i1, deadline).expect("future checked before the signal"),
            self.config.boa_reward_sign * reward_boa(prices, i1, i2),
            if lt3 == 0 {
                0.0
            } else {
                reward_ssa(prices, i3, lt3).expect("deadline lies inside the episode")
            },
            reward_soa(p2, p4),
        ];
        let gross = primary[3];
        RewardVector {
            primary,
            shared: shared_rewards(primary),
            gross_return: gross,
            net_return: self.config.cost.net(gross, p2, p4),
            traded: true,
        }
    }

    /// Recorded steps as JSON lines, plus the terminal line once done.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.trace {
            out.push_str(&serde_json::to_string(s).expect("trace step serializes"));
            out.push('\n');
        }
        if let Some(term) = &self.terminal {
            out.push_str(&serde_json::to_string(term).expect("terminal serializes"));
            out.push('\n');
        }
        out
    }

    pub fn terminal(&self) -> Option<&TraceTerminal> {
        self.terminal.as_ref()
    }
}
