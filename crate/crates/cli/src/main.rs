//! `scalpgym` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scalpgym::gym::AgentRole;
use scalpgym::kv::ConfigError;
use scalpgym::pipeline::{report_from_traces, Pipeline, PipelineError, RunConfig, StageError};
use scalpgym::synth::{generate, write_universe, SynthConfig, SynthKind};

#[derive(Parser)]
#[command(name = "scalpgym", version, about = "Tick-replay scalping gym and four-agent Q-learning pipeline")]
struct Cli {
    /// Run configuration (flat key=value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Keep the days rising past the threshold and write train/test manifests.
    Filter {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Minimum intraday rise over the previous close, percent.
        #[arg(long)]
        threshold: Option<f64>,
        /// Share of kept days assigned to training.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Write a synthetic tick universe to --out.
    SynthGen {
        #[arg(long, default_value = "pattern")]
        kind: SynthKind,
        #[arg(long, default_value_t = 10)]
        days: usize,
        #[arg(long, default_value_t = 1800)]
        seconds: usize,
        /// Share of days kept below the filter threshold.
        #[arg(long, default_value_t = 0.2)]
        below_frac: f64,
    },
    /// Supervised pretraining of one agent.
    Pretrain {
        #[arg(long)]
        role: AgentRole,
    },
    /// Joint RL training from the pretrained checkpoints.
    Train,
    /// Greedy backtest and report.json.
    Backtest {
        /// Only summarize existing traces: a directory holding train/ and test/.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Every stage in order, skipping those already done for this config.
    Run,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: 2,
            msg: format!("config: {e}"),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.source {
            StageError::Config(_) => 2,
            StageError::Data(_) | StageError::Filter(_) | StageError::Io { .. } | StageError::BadArtifact { .. } => 3,
            StageError::Agent(_) | StageError::Nn(_) => 4,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn data_failure(msg: String) -> Failure {
    Failure { code: 3, msg }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Filter {
            data_dir,
            threshold,
            ratio,
        } => {
            cfg.data_dir = data_dir.unwrap_or(cfg.data_dir);
            cfg.threshold_pct = threshold.unwrap_or(cfg.threshold_pct);
            cfg.train_ratio = ratio.unwrap_or(cfg.train_ratio);
            cfg.validate()?;
            let p = Pipeline::new(cfg);
            let (tr, te) = p.filter()?;
            println!("train {tr}, test {te} -> {}", p.layout.0.display());
        }
        Command::SynthGen {
            kind,
            days,
            seconds,
            below_frac,
        } => {
            if !(0.0..=1.0).contains(&below_frac) || days == 0 || seconds < 2 {
                return Err(ConfigError::Invalid("need days >= 1, seconds >= 2, below_frac in [0, 1]".into()).into());
            }
            let synth = SynthConfig {
                kind,
                seed: cfg.seed,
                days,
                seconds_per_day: seconds,
                below_frac,
                ..SynthConfig::default()
            };
            let out = cli.out.unwrap_or_else(|| cfg.data_dir.clone());
            write_universe(&generate(&synth), &out).map_err(|e| data_failure(format!("{}: {e}", out.display())))?;
            println!("{days} {kind} days -> {}", out.display());
        }
        Command::Pretrain { role } => {
            cfg.validate()?;
            let rep = Pipeline::new(cfg).pretrain_role(role)?;
            let v = rep.validation;
            println!(
                "{role}: {} samples, holdout MAE {:.4}, Theil U {:.4}, corr {}",
                rep.train_samples,
                v.mae,
                v.theil_u,
                v.correlation.map_or("n/a".to_string(), |c| format!("{c:.3}"))
            );
        }
        Command::Train => {
            cfg.validate()?;
            let out = Pipeline::new(cfg).train()?;
            println!(
                "{} episodes, last-50 mean profit {:.3}%, buy-signal agent settled at {:?}",
                out.curves.len(),
                out.tail_profit(50),
                out.bsa_converged_at
            );
        }
        Command::Backtest { traces } => {
            let p = Pipeline::new(cfg);
            let report = match traces {
                Some(dir) => {
                    let prov = p.provenance();
                    let rep = report_from_traces(
                        &dir.join("train"),
                        &dir.join("test"),
                        prov.config_hash,
                        serde_json::to_value(prov.seeds).expect("seeds serialize"),
                    )
                    .map_err(|e| Failure::from(PipelineError {
                        stage: "backtest".into(),
                        source: e,
                    }))?;
                    let path = p.layout.report();
                    std::fs::create_dir_all(&p.layout.0).map_err(|e| data_failure(e.to_string()))?;
                    std::fs::write(&path, serde_json::to_string_pretty(&rep).expect("report serializes") + "\n")
                        .map_err(|e| data_failure(format!("{}: {e}", path.display())))?;
                    rep
                }
                None => {
                    p.cfg.validate()?;
                    p.backtest()?
                }
            };
            print_report(&report);
        }
        Command::Run => {
            cfg.validate()?;
            print_report(&Pipeline::new(cfg).run_all()?);
        }
    }
    Ok(())
}

fn print_report(r: &scalpgym::eval::BacktestReport) {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    println!("{:<24}{:>10}{:>10}", "", "train", "test");
    for row in &r.rows {
        println!("{:<24}{:>10}{:>10}", row.metric, cell(row.train), cell(row.test));
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
