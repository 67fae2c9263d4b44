//! Experiment orchestration: filter, pretrain the four agents, joint RL
//! training, backtest. Each stage leaves a stamp holding the config hash and
//! is skipped on rerun while the stamp matches.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{
    backtest_day, build_dataset, pretrain, role_spec, train_loop, AgentError, BsaGate, EpsilonSchedule, LabelConfig,
    MixedQ, PretrainConfig, PretrainReport, Replayable, TrainConfig, TrainOutput, CURVE_HEADER,
};
use crate::dataset::{load_listed, load_universe, read_manifest, write_manifest, DataError};
use crate::epfilter::{filter_universe, split_train_test, EpisodeId, FilterError, DEFAULT_THRESHOLD_PCT, DEFAULT_TRAIN_RATIO};
use crate::eval::{BacktestReport, EpisodeResult, MetricsReport};
use crate::gym::{AgentRole, EnvConfig, PreparedEpisode, TraceTerminal};
use crate::kv::{ConfigError, KvMap};
use crate::nn::{ArchConfig, Network, NnError};

/// Seeds for every random stage, all derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub split: u64,
    pub init: u64,
    pub pretrain: u64,
    pub train: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Seeds {
        Seeds {
            master,
            split: master,
            init: master.wrapping_add(1_000),
            pretrain: master.wrapping_add(2_000),
            train: master.wrapping_add(3_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    /// Not part of the config hash, so a rerun elsewhere reproduces the same
    /// artifacts.
    pub out_dir: PathBuf,
    pub threshold_pct: f64,
    pub train_ratio: f64,
    pub seed: u64,
    pub env: EnvConfig,
    pub arch: ArchConfig,
    pub labels: LabelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            threshold_pct: DEFAULT_THRESHOLD_PCT,
            train_ratio: DEFAULT_TRAIN_RATIO,
            seed: 0,
            env: EnvConfig::default(),
            arch: ArchConfig::default(),
            labels: LabelConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn opt_to_string<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn take_opt<T: std::str::FromStr>(kv: &mut KvMap, key: &str, default: Option<T>) -> Result<Option<T>, ConfigError> {
    match kv.take::<String>(key)? {
        None => Ok(default),
        Some(s) if s.eq_ignore_ascii_case("none") => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: s,
            reason: "expected a number or none".into(),
        }),
    }
}

fn parse_kernel3(s: &str) -> Option<[usize; 3]> {
    let v: Vec<usize> = s.split('x').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut kv = KvMap::parse(text)?;
        let d = RunConfig::default();
        let env = EnvConfig::from_kv(&mut kv)?;
        let kernel = match kv.take::<String>("conv3d_kernel")? {
            None => d.arch.conv3d_kernel,
            Some(s) => parse_kernel3(&s).ok_or_else(|| ConfigError::BadValue {
                key: "conv3d_kernel".into(),
                value: s,
                reason: "expected DxHxW".into(),
            })?,
        };
        let arch = ArchConfig {
            conv3d_channels: kv.take_or("conv3d_channels", d.arch.conv3d_channels)?,
            conv3d_kernel: kernel,
            conv1d_channels: kv.take_or("conv1d_channels", d.arch.conv1d_channels)?,
            conv1d_kernel: kv.take_or("conv1d_kernel", d.arch.conv1d_kernel)?,
            dense_width: kv.take_or("dense_width", d.arch.dense_width)?,
        };
        let labels = LabelConfig {
            samples_per_episode: kv.take_or("samples_per_episode", d.labels.samples_per_episode)?,
            clip: take_opt(&mut kv, "label_clip", d.labels.clip)?,
        };
        let pretrain = PretrainConfig {
            epochs: kv.take_or("pretrain_epochs", d.pretrain.epochs)?,
            batch_size: kv.take_or("pretrain_batch", d.pretrain.batch_size)?,
            lr: kv.take_or("pretrain_lr", d.pretrain.lr)?,
            holdout_frac: kv.take_or("holdout_frac", d.pretrain.holdout_frac)?,
            seed: 0,
        };
        let dt = d.train;
        let train = TrainConfig {
            episodes: kv.take_or("episodes", dt.episodes)?,
            gamma: kv.take_or("gamma", dt.gamma)?,
            epsilon: EpsilonSchedule {
                start: kv.take_or("eps_start", dt.epsilon.start)?,
                end: kv.take_or("eps_end", dt.epsilon.end)?,
                decay_frac: kv.take_or("eps_decay_frac", dt.epsilon.decay_frac)?,
            },
            buffer_capacity: kv.take_or("buffer_capacity", dt.buffer_capacity)?,
            batch_size: kv.take_or("batch_size", dt.batch_size)?,
            target_sync: kv.take_or("target_sync", dt.target_sync)?,
            lr: kv.take_or("lr", dt.lr)?,
            train_every: kv.take_or("train_every", dt.train_every)?,
            double_dqn: kv.take_or("double_dqn", dt.double_dqn)?,
            learn: kv.take_or("learn", dt.learn)?,
            gate: BsaGate {
                window: kv.take_or("gate_window", dt.gate.window)?,
                tolerance: kv.take_or("gate_tolerance", dt.gate.tolerance)?,
                z: kv.take_or("gate_z", dt.gate.z)?,
                stop_after: take_opt(&mut kv, "gate_stop_after", dt.gate.stop_after)?,
            },
            seed: 0,
        };
        let cfg = RunConfig {
            data_dir: kv.take_or("data_dir", d.data_dir)?,
            out_dir: kv.take_or("out_dir", d.out_dir)?,
            threshold_pct: kv.take_or("threshold_pct", d.threshold_pct)?,
            train_ratio: kv.take_or("train_ratio", d.train_ratio)?,
            seed: kv.take_or("seed", d.seed)?,
            env,
            arch,
            labels,
            pretrain,
            train,
        };
        kv.finish()?;
        cfg.check_values()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    fn check_values(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        self.env.validate()?;
        if !self.threshold_pct.is_finite() {
            return bad("threshold_pct must be finite");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must lie in (0, 1)");
        }
        let a = &self.arch;
        if a.conv3d_channels == 0 || a.conv1d_channels == 0 || a.dense_width == 0 || a.conv1d_kernel == 0 {
            return bad("layer widths and kernels must be positive");
        }
        if a.conv3d_kernel.contains(&0) {
            return bad("conv3d_kernel entries must be positive");
        }
        if !(0.0..1.0).contains(&self.pretrain.holdout_frac) {
            return bad("holdout_frac must lie in [0, 1)");
        }
        let t = &self.train;
        if !(0.0..=1.0).contains(&t.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        let e = &t.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || !(0.0..=1.0).contains(&e.decay_frac) {
            return bad("epsilon settings must lie in [0, 1]");
        }
        if t.batch_size == 0 || t.buffer_capacity < t.batch_size {
            return bad("batch_size must be positive and fit in buffer_capacity");
        }
        if !(t.lr > 0.0 && self.pretrain.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    /// Full check, including that the data directory exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check_values()?;
        if !self.data_dir.is_dir() {
            return Err(ConfigError::Invalid(format!("data_dir {} is not a directory", self.data_dir.display())));
        }
        Ok(())
    }

    /// Canonical key/value text; parsing it gives back the same config.
    pub fn to_kv(&self) -> String {
        let (a, l, p, t) = (&self.arch, &self.labels, &self.pretrain, &self.train);
        let k = a.conv3d_kernel;
        let mut s = format!(
            "data_dir={}\nout_dir={}\nthreshold_pct={}\ntrain_ratio={}\nseed={}\n",
            self.data_dir.display(),
            self.out_dir.display(),
            self.threshold_pct,
            self.train_ratio,
            self.seed
        );
        s += &self.env.to_kv();
        s += &format!(
            "conv3d_channels={}\nconv3d_kernel={}x{}x{}\nconv1d_channels={}\nconv1d_kernel={}\ndense_width={}\n",
            a.conv3d_channels, k[0], k[1], k[2], a.conv1d_channels, a.conv1d_kernel, a.dense_width
        );
        s += &format!(
            "samples_per_episode={}\nlabel_clip={}\npretrain_epochs={}\npretrain_batch={}\npretrain_lr={}\nholdout_frac={}\n",
            l.samples_per_episode,
            opt_to_string(l.clip),
            p.epochs,
            p.batch_size,
            p.lr,
            p.holdout_frac
        );
        s += &format!(
            "episodes={}\ngamma={}\neps_start={}\neps_end={}\neps_decay_frac={}\nbuffer_capacity={}\nbatch_size={}\n\
             target_sync={}\nlr={}\ntrain_every={}\ndouble_dqn={}\nlearn={}\n",
            t.episodes,
            t.gamma,
            t.epsilon.start,
            t.epsilon.end,
            t.epsilon.decay_frac,
            t.buffer_capacity,
            t.batch_size,
            t.target_sync,
            t.lr,
            t.train_every,
            t.double_dqn,
            t.learn
        );
        s += &format!(
            "gate_window={}\ngate_tolerance={}\ngate_z={}\ngate_stop_after={}\n",
            t.gate.window,
            t.gate.tolerance,
            t.gate.z,
            opt_to_string(t.gate.stop_after)
        );
        s
    }

    /// SHA-256 of the canonical text without the output directory.
    pub fn hash(&self) -> String {
        let text: String = self.to_kv().lines().filter(|l| !l.starts_with("out_dir=")).map(|l| format!("{l}\n")).collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn layout(&self) -> Layout {
        Layout(self.out_dir.clone())
    }
}

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout(pub PathBuf);

impl Layout {
    pub fn train_list(&self) -> PathBuf {
        self.0.join("train.list")
    }
    pub fn test_list(&self) -> PathBuf {
        self.0.join("test.list")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.0.join("checkpoints")
    }
    pub fn frozen(&self, role: AgentRole) -> PathBuf {
        self.checkpoints().join(format!("{}_frozen.sgnn", role.lower()))
    }
    pub fn learn(&self, role: AgentRole) -> PathBuf {
        self.checkpoints().join(format!("{}_learn.sgnn", role.lower()))
    }
    pub fn pretrain_report(&self, role: AgentRole) -> PathBuf {
        self.checkpoints().join(format!("{}_pretrain.json", role.lower()))
    }
    pub fn curves(&self) -> PathBuf {
        self.0.join("curves.csv")
    }
    pub fn train_summary(&self) -> PathBuf {
        self.0.join("train_summary.json")
    }
    pub fn traces(&self, split: &str) -> PathBuf {
        self.0.join("traces").join(split)
    }
    pub fn report(&self) -> PathBuf {
        self.0.join("report.json")
    }
    fn stamp(&self, stage: &str) -> PathBuf {
        self.0.join("stages").join(format!("{stage}.done"))
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    BadArtifact { path: PathBuf, msg: String },
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: String,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    fn at(stage: impl Into<String>) -> impl FnOnce(StageError) -> PipelineError {
        let stage = stage.into();
        move |source| PipelineError { stage, source }
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StageError + '_ {
    move |source| StageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), StageError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    fs::write(path, contents).map_err(io_at(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageError> {
    write_file(path, serde_json::to_string_pretty(value).expect("artifact serializes") + "\n")
}

/// Hash and seeds embedded in each artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Seeds,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub layout: Layout,
    hash: String,
    seeds: Seeds,
}

#[derive(Serialize)]
struct PretrainArtifact<'a> {
    #[serde(flatten)]
    prov: Provenance,
    role: AgentRole,
    samples: usize,
    frozen_checksum: String,
    report: &'a PretrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    #[serde(flatten)]
    pub prov: Provenance,
    pub episodes_run: usize,
    pub bsa_converged_at: Option<usize>,
    pub stopped_early: bool,
    pub last50_profit: f64,
    pub frozen_checksums: Vec<String>,
    pub learn_checksums: Vec<String>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Pipeline {
        let layout = cfg.layout();
        let hash = cfg.hash();
        let seeds = cfg.seeds();
        Pipeline { cfg, layout, hash, seeds }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash.clone(),
            seeds: self.seeds,
        }
    }

    fn header(&self) -> String {
        let s = self.seeds;
        format!(
            "config_hash={} seed={} split_seed={} init_seed={} pretrain_seed={} train_seed={}",
            self.hash, s.master, s.split, s.init, s.pretrain, s.train
        )
    }

    fn done(&self, stage: &str) -> bool {
        fs::read_to_string(self.layout.stamp(stage)).is_ok_and(|h| h.trim() == self.hash)
    }

    fn mark(&self, stage: &str) -> Result<(), StageError> {
        write_file(&self.layout.stamp(stage), format!("{}\n", self.hash))
    }

    fn unmark(&self, stage: &str) {
        let _ = fs::remove_file(self.layout.stamp(stage));
    }

    /// Loads the universe, keeps the days clearing the threshold and writes
    /// the two manifests.
    pub fn filter(&self) -> Result<(usize, usize), PipelineError> {
        let run = || -> Result<(usize, usize), StageError> {
            self.cfg.validate()?;
            let all = load_universe(&self.cfg.data_dir)?;
            let kept = filter_universe(&all, self.cfg.threshold_pct);
            let split = split_train_test(&kept, self.cfg.train_ratio, self.seeds.split)?;
            let (tr, te) = (split.train_ids(), split.test_ids());
            fs::create_dir_all(&self.layout.0).map_err(io_at(&self.layout.0))?;
            write_manifest(&self.layout.train_list(), Some(&self.header()), &tr)?;
            write_manifest(&self.layout.test_list(), Some(&self.header()), &te)?;
            Ok((tr.len(), te.len()))
        };
        let counts = run().map_err(PipelineError::at("filter"))?;
        self.mark("filter").map_err(PipelineError::at("filter"))?;
        Ok(counts)
    }

    fn ensure_filter(&self) -> Result<(), PipelineError> {
        if !self.done("filter") {
            self.filter()?;
        }
        Ok(())
    }

    fn listed(&self, list: &Path) -> Result<Vec<crate::epfilter::Episode>, StageError> {
        let ids = read_manifest(list)?;
        Ok(load_listed(&self.cfg.data_dir, &ids)?)
    }

    fn role_seed(base: u64, role: AgentRole) -> u64 {
        base.wrapping_add(role.index() as u64)
    }

    /// Supervised pretraining of one agent; writes `<role>_frozen.sgnn`.
    pub fn pretrain_role(&self, role: AgentRole) -> Result<PretrainReport, PipelineError> {
        let stage = format!("pretrain_{}", role.lower());
        self.ensure_filter()?;
        let run = || -> Result<PretrainReport, StageError> {
            let eps: Vec<Arc<PreparedEpisode>> =
                self.listed(&self.layout.train_list())?.iter().map(|e| Arc::new(PreparedEpisode::new(e))).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(Self::role_seed(self.seeds.pretrain, role));
            let data = build_dataset(&eps, role, &self.cfg.env, &self.cfg.labels, &mut rng)?;
            let mut net = Network::new(role_spec(&self.cfg.arch, role), Self::role_seed(self.seeds.init, role))?;
            let pcfg = PretrainConfig {
                seed: Self::role_seed(self.seeds.pretrain, role),
                ..self.cfg.pretrain
            };
            let report = pretrain(&mut net, &data, &pcfg)?;
            let path = self.layout.frozen(role);
            fs::create_dir_all(self.layout.checkpoints()).map_err(io_at(&path))?;
            net.save(&path)?;
            write_json(
                &self.layout.pretrain_report(role),
                &PretrainArtifact {
                    prov: self.provenance(),
                    role,
                    samples: data.len(),
                    frozen_checksum: net.checksum(),
                    report: &report,
                },
            )?;
            Ok(report)
        };
        let report = run().map_err(PipelineError::at(stage.clone()))?;
        self.mark(&stage).map_err(PipelineError::at(stage))?;
        Ok(report)
    }

    fn load_frozen(&self) -> Result<Vec<Network>, StageError> {
        AgentRole::ALL
            .iter()
            .map(|&role| {
                let path = self.layout.frozen(role);
                if !path.exists() {
                    return Err(AgentError::MissingPretrain(role).into());
                }
                Ok(Network::load(role_spec(&self.cfg.arch, role), &path)?)
            })
            .collect()
    }

    fn replayable(&self, list: &Path) -> Result<Vec<Replayable>, StageError> {
        Ok(self.listed(list)?.iter().map(|e| Replayable::new(e, self.cfg.threshold_pct)).collect())
    }

    /// Joint RL training from the frozen checkpoints; writes the learned
    /// residual networks and `curves.csv`.
    pub fn train(&self) -> Result<TrainOutput, PipelineError> {
        let run = || -> Result<TrainOutput, StageError> {
            let frozen = self.load_frozen()?;
            let mut agents: [MixedQ; 4] = {
                let mut it = frozen.into_iter().map(|n| MixedQ::from_pretrained(n, self.cfg.train.lr, self.cfg.train.target_sync));
                std::array::from_fn(|_| it.next().expect("four roles"))
            };
            let before: Vec<String> = agents.iter().map(|q| q.frozen().checksum()).collect();
            let days = self.replayable(&self.layout.train_list())?;
            let tcfg = TrainConfig {
                seed: self.seeds.train,
                ..self.cfg.train
            };
            let out = train_loop(&mut agents, &days, &self.cfg.env, &tcfg)?;
            let mut csv = format!("# {}\n{CURVE_HEADER}\n", self.header());
            for row in &out.curves {
                csv += &row.csv_line();
                csv.push('\n');
            }
            write_file(&self.layout.curves(), csv)?;
            for (q, role) in agents.iter().zip(AgentRole::ALL) {
                q.learn().save(&self.layout.learn(role))?;
            }
            let frozen_checksums: Vec<String> = agents.iter().map(|q| q.frozen().checksum()).collect();
            assert_eq!(before, frozen_checksums, "frozen networks changed during training");
            write_json(
                &self.layout.train_summary(),
                &TrainSummary {
                    prov: self.provenance(),
                    episodes_run: out.curves.len(),
                    bsa_converged_at: out.bsa_converged_at,
                    stopped_early: out.stopped_early,
                    last50_profit: out.tail_profit(50),
                    frozen_checksums,
                    learn_checksums: agents.iter().map(|q| q.learn().checksum()).collect(),
                },
            )?;
            Ok(out)
        };
        self.unmark("backtest");
        let out = run().map_err(PipelineError::at("train"))?;
        self.mark("train").map_err(PipelineError::at("train"))?;
        Ok(out)
    }

    fn load_trained(&self) -> Result<[MixedQ; 4], StageError> {
        let frozen = self.load_frozen()?;
        let mut agents = Vec::with_capacity(4);
        for (net, role) in frozen.into_iter().zip(AgentRole::ALL) {
            let path = self.layout.learn(role);
            let learn = if path.exists() {
                Network::load(role_spec(&self.cfg.arch, role), &path)?
            } else {
                // no RL stage yet: play the pretrained policy
                let mut n = net.clone();
                n.zero_output_row(0);
                n.zero_output_row(1);
                n
            };
            agents.push(MixedQ::new(net, learn, self.cfg.train.lr, self.cfg.train.target_sync));
        }
        Ok(agents.try_into().unwrap_or_else(|_| unreachable!()))
    }

    /// Greedy backtest over both manifests: writes one trace file per episode
    /// and `report.json`.
    pub fn backtest(&self) -> Result<BacktestReport, PipelineError> {
        let run = || -> Result<BacktestReport, StageError> {
            let agents = self.load_trained()?;
            for (split, list) in [("train", self.layout.train_list()), ("test", self.layout.test_list())] {
                let dir = self.layout.traces(split);
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(io_at(&dir))?;
                }
                fs::create_dir_all(&dir).map_err(io_at(&dir))?;
                let ids = read_manifest(&list)?;
                for (id, day) in ids.iter().zip(self.replayable(&list)?) {
                    for (k, ep) in backtest_day(&agents, &day, &self.cfg.env)?.iter().enumerate() {
                        let path = dir.join(format!("{}_{k:04}.jsonl", id.stem()));
                        write_file(&path, &ep.trace)?;
                    }
                }
            }
            let report = report_from_traces(
                &self.layout.traces("train"),
                &self.layout.traces("test"),
                self.hash.clone(),
                serde_json::to_value(self.seeds).expect("seeds serialize"),
            )?;
            write_json(&self.layout.report(), &report)?;
            Ok(report)
        };
        let report = run().map_err(PipelineError::at("backtest"))?;
        self.mark("backtest").map_err(PipelineError::at("backtest"))?;
        Ok(report)
    }

    /// All stages in order; stages whose stamp matches the config are skipped.
    pub fn run_all(&self) -> Result<BacktestReport, PipelineError> {
        self.ensure_filter()?;
        let mut retrain = !self.done("train");
        for role in AgentRole::ALL {
            if !self.done(&format!("pretrain_{}", role.lower())) {
                self.pretrain_role(role)?;
                retrain = true;
            }
        }
        if retrain {
            self.train()?;
        }
        if !self.done("backtest") {
            return self.backtest();
        }
        let path = self.layout.report();
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::at("backtest")(io_at(&path)(e)))?;
        serde_json::from_str(&text).map_err(|e| PipelineError {
            stage: "backtest".into(),
            source: StageError::BadArtifact { path, msg: e.to_string() },
        })
    }
}

/// Episode results from a directory of JSON-lines traces, in file-name order.
/// The last line of each file is the terminal record; the file stem starts
/// with `<ticker>_<date>`.
pub fn results_from_traces(dir: &Path) -> Result<Vec<EpisodeResult>, StageError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_at(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_at(dir)))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"));
    files.sort();
    files
        .iter()
        .map(|path| {
            let bad = |msg: String| StageError::BadArtifact { path: path.clone(), msg };
            let text = fs::read_to_string(path).map_err(io_at(path))?;
            let last = text.lines().rev().find(|l| !l.trim().is_empty()).ok_or_else(|| bad("empty trace".into()))?;
            let term: TraceTerminal = serde_json::from_str(last).map_err(|e| bad(format!("terminal record: {e}")))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let mut parts = stem.splitn(3, '_');
            let id = match (parts.next(), parts.next()) {
                (Some(t), Some(d)) => EpisodeId::parse(&format!("{t},{d}")),
                _ => None,
            }
            .ok_or_else(|| bad("file name is not <ticker>_<date>_<n>".into()))?;
            Ok(EpisodeResult::from_terminal(id, &term))
        })
        .collect()
}

pub fn report_from_traces(
    train_dir: &Path,
    test_dir: &Path,
    config_hash: String,
    seeds: serde_json::Value,
) -> Result<BacktestReport, StageError> {
    let train = MetricsReport::from_results(&results_from_traces(train_dir)?);
    let test = MetricsReport::from_results(&results_from_traces(test_dir)?);
    Ok(BacktestReport::new(train, test, config_hash, seeds))
}
