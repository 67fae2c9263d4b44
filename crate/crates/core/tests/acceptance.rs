//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the test
//! harness so the lines always reach the output.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalpgym::agents::{role_spec, train_loop, EpsilonSchedule, MixedQ, Replayable, TrainConfig};
use scalpgym::dataset::load_universe;
use scalpgym::epfilter::{filter_universe, split_train_test, Episode};
use scalpgym::eval::{calmar, max_drawdown, profit_per_episode, sharpe, BacktestReport, MetricError, METRIC_NAMES};
use scalpgym::gym::{
    reward_boa, reward_bsa, reward_soa, reward_ssa, shared_rewards, AgentAction, EnvConfig, Phase, PreparedEpisode,
    TradingEnv,
};
use scalpgym::nn::{ArchConfig, Network};
use scalpgym::pipeline::{Pipeline, RunConfig, TrainSummary};
use scalpgym::synth::{generate, write_universe, SynthConfig, SynthKind};

// Pinned tolerances and budgets.
const REWARD_REL_TOL: f64 = 1e-9;
/// Relative errors are taken against max(|oracle|, floor): below a
/// thousandth of a percent point the summed terms cancel and only absolute
/// error is meaningful.
const REWARD_REL_FLOOR: f64 = 1e-3;
const REWARD_PATHS: usize = 1_000;
const REWARD_BUDGET: Duration = Duration::from_secs(10);
const FSM_SEQUENCES: usize = 10_000;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const FILTER_DAYS: usize = 100;
const LEARN_MARGIN_PCT: f64 = 0.5;
const LEARN_MAX_EPISODES: usize = 5_000;
const LEARN_BUDGET: Duration = Duration::from_secs(15 * 60);
const TAIL: usize = 50;
const NULL_EPISODES: usize = 3_000;
const NULL_SIGMAS: f64 = 3.0;
const METRIC_TOL: f64 = 1e-9;

/// Configuration of the learnability run on the `pattern` market.
const LEARN_CONFIG: &str = "\
seed=1
conv3d_channels=2
conv1d_channels=2
dense_width=16
samples_per_episode=100
pretrain_epochs=10
pretrain_lr=3e-4
episodes=2000
eps_end=0.01
eps_decay_frac=0.3
lr=1e-3
target_sync=200
";

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, oracle: f64) -> f64 {
    (a - oracle).abs() / oracle.abs().max(REWARD_REL_FLOOR)
}

// Brute-force oracles, written from the definitions and sharing no code with
// the library.
fn oracle_bsa(p: &[f64], t: usize, h: usize) -> f64 {
    let mut s = 0.0;
    for k in 1..=h {
        s += 100.0 * (p[t + k] / p[t] - 1.0);
    }
    s / h as f64
}

fn oracle_boa(p: &[f64], t1: usize, t2: usize) -> f64 {
    let mut low = p[t1];
    for &x in &p[t1..=t2] {
        if x < low {
            low = x;
        }
    }
    100.0 * (p[t2] / low - 1.0)
}

fn oracle_ssa(p: &[f64], t: usize, lt: usize) -> f64 {
    let mut s = 0.0;
    for k in 1..=lt {
        s += 100.0 * (1.0 - p[t + k] / p[t]);
    }
    s / lt as f64
}

fn oracle_soa(p2: f64, p4: f64) -> f64 {
    100.0 * (p4 / p2 - 1.0)
}

fn oracle_shared(r: [f64; 4]) -> [f64; 4] {
    let total: f64 = r.iter().sum();
    r.map(|own| 0.5 * (total - own))
}

fn random_path(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(130..400);
    let mut p = rng.random_range(1_000.0..50_000.0);
    (0..n)
        .map(|_| {
            let jump = if rng.random_bool(0.02) { rng.random_range(-0.03..0.03) } else { 0.0 };
            p *= 1.0 + rng.random_range(-0.002..0.002) + jump;
            p
        })
        .collect()
}

fn reward_oracles() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    for _ in 0..REWARD_PATHS {
        let p = random_path(&mut rng);
        let n = p.len();
        for _ in 0..5 {
            let h = rng.random_range(1..=120.min(n - 1));
            let t1 = rng.random_range(0..n - h);
            let t2 = rng.random_range(t1..t1 + h);
            let t3 = rng.random_range(t2..t1 + h);
            let lt = t1 + h - t3;
            let t4 = rng.random_range(t3..=t1 + h);
            let got = [
                reward_bsa(&p, t1, h).map_err(|e| e.to_string())?,
                reward_boa(&p, t1, t2),
                reward_ssa(&p, t3, lt).map_err(|e| e.to_string())?,
                reward_soa(p[t2], p[t4]),
            ];
            let want = [oracle_bsa(&p, t1, h), oracle_boa(&p, t1, t2), oracle_ssa(&p, t3, lt), oracle_soa(p[t2], p[t4])];
            let sg = shared_rewards(got);
            let sw = oracle_shared(want);
            for i in 0..4 {
                worst = worst.max(rel(got[i], want[i])).max(rel(sg[i], sw[i]));
            }
            compared += 8;
        }
    }
    // worked values
    let ramp: Vec<f64> = (0..121).map(|k| 100.0 + 0.01 * k as f64).collect();
    let eq3 = reward_bsa(&ramp, 0, 120).map_err(|e| e.to_string())?;
    ensure((eq3 - 0.605).abs() <= 1e-9, || format!("ramp buy-signal reward {eq3}"))?;
    let eq5 = reward_ssa(&[100.0, 99.0, 98.0], 0, 2).map_err(|e| e.to_string())?;
    ensure((eq5 - 1.5).abs() <= 1e-9, || format!("two-step sell-signal reward {eq5}"))?;
    let shared = shared_rewards([1.0, 2.0, 3.0, 4.0]);
    ensure(shared == [4.5, 4.0, 3.5, 3.0], || format!("shared vector {shared:?}"))?;
    let took = started.elapsed();
    ensure(worst <= REWARD_REL_TOL, || format!("max relative error {worst:e}"))?;
    ensure(took < REWARD_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{compared} comparisons, max rel err {worst:.1e}, worked values exact, {took:.2?}"))
}

fn synth_episodes(kind: SynthKind, days: usize, seed: u64) -> Vec<Episode> {
    let cfg = SynthConfig {
        kind,
        days,
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg)
        .into_iter()
        .map(|d| Episode::new(d.ticker, d.date, d.records, d.meta).expect("synthetic day is valid"))
        .collect()
}

fn fsm_totality() -> Check {
    let eps: Vec<Arc<PreparedEpisode>> =
        synth_episodes(SynthKind::RandomWalk, 4, 21).iter().map(|e| Arc::new(PreparedEpisode::new(e))).collect();
    let cfg = EnvConfig::default();
    let d = cfg.deadline_s;
    let mut env = TradingEnv::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut signals, mut worst) = (0usize, 0.0f64);
    for k in 0..FSM_SEQUENCES {
        let ep = &eps[k % eps.len()];
        let start = rng.random_range(120..ep.len() - d - 1);
        let p_one: f64 = rng.random_range(0.02..0.98);
        env.reset_prepared(Arc::clone(ep), ep.timestamp(start)).map_err(|e| e.to_string())?;
        let (state, rv) = loop {
            let agent = env.state().expect("reset").phase.active().expect("active until done");
            let out = env.step(AgentAction::new(agent, u8::from(rng.random_bool(p_one)))).map_err(|e| e.to_string())?;
            if out.done {
                break (out.info.state, out.reward.expect("terminal reward"));
            }
        };
        ensure(state.phase == Phase::Done, || format!("sequence {k} ended in {:?}", state.phase))?;
        let Some(t1) = state.t1 else {
            ensure(!rv.traded && rv.net_return == 0.0, || format!("sequence {k}: reward without a signal"))?;
            continue;
        };
        signals += 1;
        let (t2, t3, t4) = (state.t2.unwrap(), state.t3.unwrap(), state.t4.unwrap());
        ensure(t1 <= t2 && t2 <= t3 && t3 <= t4 && t4 <= t1 + d as i64, || format!("sequence {k}: times {state:?}"))?;
        ensure(rv.net_return == rv.gross_return - 0.33, || {
            format!("sequence {k}: net {} gross {}", rv.net_return, rv.gross_return)
        })?;
        // terminal rewards against the oracles on the replayed path
        let p = ep.last_prices();
        let idx = |t: i64| ep.index_of(t).expect("inside the day");
        let (i1, i2, i3, i4) = (idx(t1), idx(t2), idx(t3), idx(t4));
        let lt3 = i1 + d - i3;
        let want = [
            oracle_bsa(p, i1, d),
            oracle_boa(p, i1, i2),
            if lt3 == 0 { 0.0 } else { oracle_ssa(p, i3, lt3) },
            oracle_soa(p[i2], p[i4]),
        ];
        for i in 0..4 {
            worst = worst.max(rel(rv.primary[i], want[i]));
        }
        worst = worst.max(rel(rv.gross_return, want[3]));
    }
    ensure(worst <= REWARD_REL_TOL, || format!("episode rewards off by {worst:e}"))?;
    ensure(signals > FSM_SEQUENCES / 2, || format!("only {signals} sequences signalled"))?;
    Ok(format!("{FSM_SEQUENCES} sequences, {signals} signals, all Done within deadline, net = gross - 0.33 exactly"))
}

fn gradient_checks() -> Check {
    let started = Instant::now();
    let mut worst: Vec<(&str, f64)> = vec![
        ("conv3d", 0.0),
        ("conv1d", 0.0),
        ("dense", 0.0),
        ("relu", 0.0),
        ("network", 0.0),
    ];
    for seed in 0..5 {
        let errs = [
            common::conv3d_check(seed),
            common::conv1d_check(seed),
            common::dense_check(seed),
            common::relu_check(seed),
            common::network_check(common::toy_spec(), seed),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            w.1 = w.1.max(e);
        }
    }
    let took = started.elapsed();
    let summary = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(worst.iter().all(|(_, e)| *e < common::GRAD_TOL), || summary.clone())?;
    ensure(took < GRAD_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{summary}, {took:.2?}"))
}

fn episode_filter() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        kind: SynthKind::Ramp,
        days: FILTER_DAYS,
        seed: 31,
        below_frac: 0.3,
        ..SynthConfig::default()
    };
    let days = generate(&cfg);
    write_universe(&days, dir.path()).map_err(|e| e.to_string())?;
    let all = load_universe(dir.path()).map_err(|e| e.to_string())?;
    ensure(all.len() == FILTER_DAYS, || format!("loaded {} days", all.len()))?;
    let kept = filter_universe(&all, 15.0);
    let got: BTreeSet<String> = kept.iter().map(|e| e.id.to_string()).collect();
    // oracle: recompute each day's peak from the generated ticks
    let want: BTreeSet<String> = days
        .iter()
        .filter(|d| {
            let peak = d.records.iter().map(|r| r.last_price).fold(f64::MIN, f64::max);
            (peak - d.meta.prev_close) / d.meta.prev_close * 100.0 >= 15.0
        })
        .map(|d| format!("{},{}", d.ticker, d.date))
        .collect();
    let planted: BTreeSet<String> = days
        .iter()
        .filter(|d| d.planted_peak_pct >= 15.0)
        .map(|d| format!("{},{}", d.ticker, d.date))
        .collect();
    ensure(got == want && got == planted, || format!("kept {} of {}, expected {}", got.len(), all.len(), want.len()))?;
    ensure(got.len() < FILTER_DAYS, || "universe had no below-threshold days".into())?;
    let split = split_train_test(&kept, 0.7, 5).map_err(|e| e.to_string())?;
    let (tr, te) = (split.train_ids(), split.test_ids());
    let n = kept.len();
    ensure(tr.len() == (0.7 * n as f64).floor() as usize && tr.len() + te.len() == n, || {
        format!("split {} / {}", tr.len(), te.len())
    })?;
    let union: BTreeSet<String> = tr.iter().chain(&te).map(|i| i.to_string()).collect();
    ensure(union == got, || "split is not a partition of the kept days".into())?;
    let again = split_train_test(&kept, 0.7, 5).map_err(|e| e.to_string())?;
    ensure(again.train_ids() == tr, || "split is not reproducible".into())?;
    let other = split_train_test(&kept, 0.7, 6).map_err(|e| e.to_string())?;
    ensure(other.train_ids() != tr, || "seed has no effect on the split".into())?;
    Ok(format!("kept {n} of {FILTER_DAYS} (exactly the >=15% days), split {} / {}", tr.len(), te.len()))
}

struct LearnRun {
    dir: tempfile::TempDir,
    pipeline: Pipeline,
}

fn learn_run() -> Result<(LearnRun, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let synth = SynthConfig {
        kind: SynthKind::Pattern,
        days: 20,
        seed: 1,
        ..SynthConfig::default()
    };
    write_universe(&generate(&synth), &data).map_err(|e| e.to_string())?;
    let text = format!("data_dir={}\nout_dir={}\n{LEARN_CONFIG}", data.display(), dir.path().join("out").display());
    let cfg = RunConfig::parse(&text).map_err(|e| e.to_string())?;
    ensure(cfg.train.episodes <= LEARN_MAX_EPISODES, || "episode budget exceeded".into())?;
    let pipeline = Pipeline::new(cfg);
    let started = Instant::now();
    pipeline.run_all().map_err(|e| e.to_string())?;
    let took = started.elapsed();
    ensure(took <= LEARN_BUDGET, || format!("pipeline took {took:?}"))?;
    Ok((LearnRun { dir, pipeline }, format!("{took:.1?}")))
}

fn curve_profits(path: &Path) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    ensure(lines.next() == Some(scalpgym::agents::CURVE_HEADER), || "curve header".into())?;
    lines
        .map(|l| l.rsplit(',').next().and_then(|v| v.parse().ok()).ok_or_else(|| format!("bad curve row {l}")))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn learnability(run: &LearnRun, took: &str) -> Check {
    let p = &run.pipeline;
    let profits = curve_profits(&p.layout.curves())?;
    ensure(profits.len() >= TAIL, || format!("only {} episodes", profits.len()))?;
    let tail = mean(&profits[profits.len() - TAIL..]);
    // baseline: the same pretrained agents acting uniformly at random
    let mut base_cfg = p.cfg.clone();
    base_cfg.out_dir = run.dir.path().join("baseline");
    base_cfg.train.learn = false;
    base_cfg.train.epsilon = EpsilonSchedule::constant(1.0);
    let base = Pipeline::new(base_cfg);
    fs::create_dir_all(base.layout.checkpoints()).map_err(|e| e.to_string())?;
    fs::copy(p.layout.train_list(), base.layout.train_list()).map_err(|e| e.to_string())?;
    for role in scalpgym::gym::AgentRole::ALL {
        fs::copy(p.layout.frozen(role), base.layout.frozen(role)).map_err(|e| e.to_string())?;
    }
    let out = base.train().map_err(|e| e.to_string())?;
    let base_profits: Vec<f64> = out.curves.iter().map(|c| c.profit).collect();
    let baseline = mean(&base_profits);
    let detail = format!(
        "last-{TAIL} mean {tail:+.3}% vs random baseline {baseline:+.3}% over {} episodes, pipeline {took}",
        profits.len()
    );
    ensure(tail > 0.0 && tail >= baseline + LEARN_MARGIN_PCT, || detail.clone())?;
    Ok(detail)
}

fn random_null() -> Check {
    let days: Vec<Replayable> =
        synth_episodes(SynthKind::RandomWalk, 6, 41).iter().map(|e| Replayable::new(e, 15.0)).collect();
    let arch = ArchConfig {
        conv3d_channels: 1,
        conv1d_channels: 1,
        dense_width: 4,
        ..ArchConfig::default()
    };
    let mut agents: [MixedQ; 4] = std::array::from_fn(|i| {
        let role = scalpgym::gym::AgentRole::ALL[i];
        MixedQ::from_pretrained(Network::new(role_spec(&arch, role), 40 + i as u64).expect("valid spec"), 1e-3, 100)
    });
    let cfg = TrainConfig {
        episodes: NULL_EPISODES,
        epsilon: EpsilonSchedule::constant(1.0),
        learn: false,
        seed: 42,
        ..TrainConfig::default()
    };
    let out = train_loop(&mut agents, &days, &EnvConfig::default(), &cfg).map_err(|e| e.to_string())?;
    let profits: Vec<f64> = out.curves.iter().map(|c| c.profit).collect();
    let n = profits.len() as f64;
    let m = mean(&profits);
    let sd = (profits.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let rate = out.curves.iter().filter(|c| c.traded).count() as f64 / n;
    let expect = -0.33 * rate;
    let detail = format!("mean {m:+.4}% vs {expect:+.4}% (trade rate {rate:.3}), SE {se:.4}");
    ensure((m - expect).abs() <= NULL_SIGMAS * se, || detail.clone())?;
    Ok(detail)
}

fn metrics(run: &LearnRun) -> Check {
    let up = [0.5, 0.0, 1.2, 3.0];
    ensure(max_drawdown(&up) == Ok(0.0), || "monotone equity has a drawdown".into())?;
    let mdd = max_drawdown(&[20.0, -25.0, 200.0 / 9.0]).map_err(|e| e.to_string())?;
    ensure((mdd + 25.0).abs() <= METRIC_TOL, || format!("100-120-90-110 drawdown {mdd}"))?;
    let sh = sharpe(&[2.0, 0.0]).map_err(|e| e.to_string())?;
    ensure((sh - 0.5f64.sqrt()).abs() <= METRIC_TOL, || format!("sharpe {sh}"))?;
    ensure(sharpe(&[1.0, 1.0]) == Err(MetricError::SigmaZero), || "constant returns".into())?;
    ensure(calmar(&up) == Err(MetricError::ZeroDrawdown), || "calmar on monotone equity".into())?;
    let ppe = profit_per_episode(&[0.67, 0.0, -0.33]).map_err(|e| e.to_string())?;
    ensure((ppe - 0.34 / 3.0).abs() <= METRIC_TOL, || format!("profit per episode {ppe}"))?;
    let text = fs::read_to_string(run.pipeline.layout.report()).map_err(|e| e.to_string())?;
    let report: BacktestReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let names: Vec<&str> = report.rows.iter().map(|r| r.metric.as_str()).collect();
    ensure(names == METRIC_NAMES, || format!("report rows {names:?}"))?;
    ensure(report.rows.iter().all(|r| r.train.is_some() && r.test.is_some()), || {
        format!("missing report values {:?}", report.rows)
    })?;
    ensure(report.config_hash == run.pipeline.cfg.hash(), || "report lacks the config hash".into())?;
    let row = |i: usize| report.rows[i].test.unwrap_or(f64::NAN);
    Ok(format!(
        "worked values hold; report.json test: profit {:.3}%, sharpe {:.3}, mdd {:.2}%, calmar {:.3}",
        row(0),
        row(1),
        row(2),
        row(3)
    ))
}

fn frozen_checksum(run: &LearnRun) -> Check {
    let p = &run.pipeline;
    let text = fs::read_to_string(p.layout.train_summary()).map_err(|e| e.to_string())?;
    let summary: TrainSummary = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for (i, role) in scalpgym::gym::AgentRole::ALL.into_iter().enumerate() {
        let pre: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p.layout.pretrain_report(role)).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let before = pre["frozen_checksum"].as_str().unwrap_or_default();
        let on_disk = Network::load(role_spec(&p.cfg.arch, role), &p.layout.frozen(role))
            .map_err(|e| e.to_string())?
            .checksum();
        ensure(before == summary.frozen_checksums[i] && before == on_disk, || format!("{role} frozen network changed"))?;
        ensure(summary.learn_checksums[i] != before, || format!("{role} learned nothing"))?;
    }
    Ok(format!("4 frozen checksums unchanged across {} RL episodes", summary.episodes_run))
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, res: Check| match res {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL  {name}: {detail}");
        }
    };
    report("reward oracles", reward_oracles());
    report("FSM totality", fsm_totality());
    report("gradient checks", gradient_checks());
    report("episode filter", episode_filter());
    match learn_run() {
        Ok((run, took)) => {
            report("learnability", learnability(&run, &took));
            report("metrics and report", metrics(&run));
            report("Q-frozen checksum", frozen_checksum(&run));
        }
        Err(e) => {
            for name in ["learnability", "metrics and report", "Q-frozen checksum"] {
                report(name, Err(format!("pipeline failed: {e}")));
            }
        }
    }
    report("random-market null", random_null());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
