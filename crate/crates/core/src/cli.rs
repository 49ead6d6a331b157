//! Command-line runner. Exit codes: 0 success, 1 check failure or numerical
//! error, 2 usage or configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checks::{recipe_check_theorems, CheckOptions, ConfigBundle};
use crate::config::ExperimentConfig;
use crate::covariance::{build_covariances, reference_spectrum, write_spectrum_csv};
use crate::data::generate_dataset;
use crate::error::{Error, Result};
use crate::objective::{loss_trace, LinearModel, LossKind};
use crate::recipes::{self, create};
use crate::solver::{gram_to_model, loss_of_gram, min_norm_for, noncollapse_gram, GramMatrix};
use crate::spectral::{sym_eig, TieRule};
use crate::trainer::{train, TrainOptions};

#[derive(Parser, Debug)]
#[command(name = "spectral-cl", version, about = "Linear contrastive-learning laboratory")]
pub struct Cli {
    /// Worker threads for sweeps and multi-seed checks (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration; the subcommand's preset is used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// `key=value` with a TOML literal value; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Scl,
    Ucl,
    /// Uses the configuration's `beta`.
    Joint,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TieArg {
    Lowest,
    Both,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset and write it with its spectrum.
    GenData(Common),
    /// Train by full-batch gradient descent.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "scl")]
        loss: LossArg,
        /// Probe cadence in epochs.
        #[arg(long)]
        probe_every: Option<usize>,
    },
    /// Closed-form minimum-norm minimizer(s).
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "scl")]
        loss: LossArg,
        #[arg(long, value_enum, default_value = "lowest")]
        tie_rule: TieArg,
        /// Emit the subclass-preserving supervised minimizer instead.
        #[arg(long)]
        noncollapse: bool,
    },
    /// Test-set embedding snapshots during supervised training.
    FigEmbeddings(Common),
    /// Feature alignment and probe accuracy over supervised training.
    FigAlignment(Common),
    /// Min-norm (and optionally trained) alignment with v1 across the scale of the last irrelevant feature.
    FigFsSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated phi_K values (default: 13 points around the threshold).
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Also train the unsupervised loss for --epochs epochs.
        #[arg(long)]
        gd: bool,
    },
    /// Gradient-term norm ratio next to the subclass alignment.
    FigGradRatio(Common),
    /// Run every theorem check and write report.json.
    CheckTheorems {
        #[command(flatten)]
        common: Common,
        /// Skip the gradient-descent checks.
        #[arg(long)]
        skip_training: bool,
    },
}

fn load(common: &Common, preset: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, &common.overrides)?,
        None => ExperimentConfig::from_toml_with_overrides(&preset.to_toml_string(), &common.overrides)?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn loss_kind(arg: LossArg, cfg: &ExperimentConfig) -> LossKind {
    match arg {
        LossArg::Scl => LossKind::Scl,
        LossArg::Ucl => LossKind::Ucl,
        LossArg::Joint => LossKind::Joint(cfg.beta),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::from)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut f = create(&out.join("config.toml"))?;
    f.write_all(cfg.to_toml_string().as_bytes())?;
    f.flush()?;
    Ok(())
}

fn write_weights(model: &LinearModel, path: &Path) -> Result<()> {
    let mut f = create(path)?;
    for row in model.w.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    config_hash: String,
    seed: u64,
    loss: String,
    epochs: usize,
    final_loss: f64,
    align_v1: f64,
    align_v2: f64,
}

#[derive(Serialize)]
struct SolutionSummary {
    index: usize,
    provenance: String,
    rank: usize,
    frobenius: f64,
    loss: f64,
    align_v1: f64,
    align_v2: f64,
}

/// Outcome of a subcommand: `true` when every check passed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = load(&c, ExperimentConfig::c0())?;
            let ds = generate_dataset(&cfg)?;
            let cov = build_covariances(&ds)?;
            let mut f = create(&c.out.join("dataset.csv"))?;
            ds.write_csv(&mut f)?;
            f.flush()?;
            let eig = sym_eig(&cov.m)?;
            let nonzero: Vec<f64> = eig.values.iter().copied().take(eig.rank).collect();
            let mut f = create(&c.out.join("spectrum.csv"))?;
            write_spectrum_csv(&nonzero, &mut f)?;
            f.flush()?;
            if let Ok(reference) = reference_spectrum(&cfg) {
                let mut f = create(&c.out.join("reference_spectrum.csv"))?;
                write_spectrum_csv(&reference, &mut f)?;
                f.flush()?;
            }
            write_config(&cfg, &c.out)?;
            Ok(true)
        }
        Command::Train { common: c, loss, probe_every } => {
            let cfg = load(&c, ExperimentConfig::c0())?;
            let kind = loss_kind(loss, &cfg);
            let epochs = c.epochs.unwrap_or(300);
            let opts = TrainOptions { probe_every, ..TrainOptions::default() };
            let (model, trace) = train(&cfg, kind, epochs, &opts, &mut |_, _| {})?;
            let mut f = create(&c.out.join("trace.csv"))?;
            trace.write_csv(&mut f)?;
            f.flush()?;
            write_weights(&model, &c.out.join("weights.csv"))?;
            let last = trace.last();
            write_json(
                &c.out.join("summary.json"),
                &TrainSummary {
                    config_hash: cfg.fingerprint(),
                    seed: cfg.seed,
                    loss: kind.name(),
                    epochs,
                    final_loss: last.loss,
                    align_v1: last.align_v1,
                    align_v2: last.align_v2,
                },
            )?;
            write_config(&cfg, &c.out)?;
            Ok(true)
        }
        Command::Solve { common: c, loss, tie_rule, noncollapse } => {
            let cfg = load(&c, ExperimentConfig::c0())?;
            let kind = loss_kind(loss, &cfg);
            let ds = generate_dataset(&cfg)?;
            let cov = build_covariances(&ds)?;
            let rule = match tie_rule {
                TieArg::Lowest => TieRule::LowestIndex,
                TieArg::Both => TieRule::EnumerateBoth,
            };
            let grams: Vec<GramMatrix> = if noncollapse {
                vec![noncollapse_gram(&cov, &cfg)?]
            } else {
                min_norm_for(&cov, kind, cfg.p, rule)?
            };
            let target = kind.target(&cov)?;
            let mut summaries = Vec::new();
            for (i, g) in grams.iter().enumerate() {
                let model = gram_to_model(g, cfg.p)?;
                write_weights(&model, &c.out.join(format!("weights_{i}.csv")))?;
                let loss = if noncollapse {
                    loss_trace(&model, &cov, LossKind::Scl)?
                } else {
                    loss_of_gram(&g.core, &target, &cov.m)
                };
                summaries.push(SolutionSummary {
                    index: i,
                    provenance: format!("{:?}", g.provenance),
                    rank: g.rank,
                    frobenius: g.frobenius(),
                    loss,
                    align_v1: g.alignment(1),
                    align_v2: g.alignment(2),
                });
            }
            write_json(&c.out.join("solution.json"), &summaries)?;
            write_config(&cfg, &c.out)?;
            Ok(true)
        }
        Command::FigEmbeddings(c) => {
            let cfg = load(&c, ExperimentConfig::fig1())?;
            let mut epochs = recipes::SNAPSHOT_EPOCHS.to_vec();
            if let Some(e) = c.epochs {
                epochs.retain(|&x| x <= e);
                if !epochs.contains(&e) {
                    epochs.push(e);
                }
            }
            let res = recipes::recipe_fig_embeddings(&cfg, &epochs)?;
            recipes::write_fig_embeddings(&res, &c.out)?;
            write_config(&cfg, &c.out)?;
            Ok(true)
        }
        Command::FigAlignment(c) => {
            let cfg = load(&c, ExperimentConfig::fig1())?;
            let trace = recipes::recipe_fig_alignment(&cfg, c.epochs.unwrap_or(300))?;
            recipes::write_fig_alignment(&trace, &c.out)?;
            write_config(&cfg, &c.out)?;
            Ok(true)
        }
        Command::FigGradRatio(c) => {
            let cfg = load(&c, ExperimentConfig::fig1())?;
            let trace = recipes::recipe_grad_ratio(&cfg, c.epochs.unwrap_or(300))?;
            recipes::write_grad_ratio(&trace, &c.out)?;
            write_config(&cfg, &c.out)?;
            Ok(true)
        }
        Command::FigFsSweep { common: c, grid, seeds, gd } => {
            let cfg = load(&c, ExperimentConfig::fig4(3, 0.8))?;
            let grid = if grid.is_empty() { recipes::default_fs_grid(&cfg) } else { grid };
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let gd_epochs = gd.then(|| c.epochs.unwrap_or(300));
            let rows = recipes::recipe_fs_sweep(&cfg, &grid, &seed_list, gd_epochs)?;
            recipes::write_fs_sweep(&rows, &cfg, &c.out)?;
            write_config(&cfg, &c.out)?;
            Ok(true)
        }
        Command::CheckTheorems { common: c, skip_training } => {
            let mut bundle = match &c.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
                    ConfigBundle::from_toml_with_overrides(&text, &c.overrides)?
                }
                None => ConfigBundle::from_toml_with_overrides(&ConfigBundle::default().to_toml_string(), &c.overrides)?,
            };
            if let Some(s) = c.seed {
                bundle = bundle.with_seed(s);
            }
            for cfg in [&bundle.c0, &bundle.c1, &bundle.c2, &bundle.fig1] {
                cfg.validate()?;
            }
            let mut opts = CheckOptions { skip_training, ..CheckOptions::default() };
            if let Some(e) = c.epochs {
                opts.train_epochs = e;
            }
            let report = recipe_check_theorems(&bundle, &opts)?;
            for check in &report.checks {
                println!("{}", check.line());
            }
            let mut f = create(&c.out.join("report.json"))?;
            writeln!(f, "{}", report.to_json())?;
            f.flush()?;
            let mut f = create(&c.out.join("timings.json"))?;
            writeln!(f, "{}", report.timings_json())?;
            f.flush()?;
            println!("aggregate: {}", if report.pass { "PASS" } else { "FAIL" });
            Ok(report.pass)
        }
    }
}

/// Parses `argv` and runs the subcommand, returning the process exit code.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(j) = cli.jobs {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                2
            } else {
                1
            }
        }
    }
}
