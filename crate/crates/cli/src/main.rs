use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use normstab::analysis::{eig_moduli, export_csv, forget_gate_stats, norm_trajectory, render_csv, CsvReport};
use normstab::cells::{CellKind, CellParams};
use normstab::checkpoint::Checkpoint;
use normstab::config::{load_config, Overrides};
use normstab::experiment::{
    read_corpus, run_experiment, summary_csv, sweep, ExperimentConfig, HorizonData, Split, TaskData, TaskKind, Trainer,
};
use normstab::tasks::{adding_baselines, monte_carlo_baselines};
use normstab::{Model, Rng};

#[derive(Parser)]
#[command(name = "normstab", version, about = "Norm-stabilized recurrent network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment configuration file (TOML sections, see README).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    cell: Option<CellKind>,
    /// Plain-text corpus for the char_lm task.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::new(TaskKind::Adding),
        };
        Overrides {
            seed: self.seed,
            beta: self.beta,
            cell: self.cell,
            corpus: self.corpus.clone(),
        }
        .apply(&mut config)?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write summary.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train once per beta value and write one combined summary.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated beta values, e.g. 0,50,500.
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
    },
    /// Per-step norms and costs of a trained model beyond its training length.
    EvalHorizon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the configured eval_horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Sorted eigenvalue moduli of the recurrent matrix (SRNN cells).
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sorted per-cell average forget-gate activations (LSTM cells).
    ForgetGates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Reference MSEs for the adding task, analytic and Monte Carlo.
    AddingBaselines {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        length: usize,
    },
}

fn load_data(config: &ExperimentConfig, seed: u64) -> Result<TaskData> {
    Ok(match config.task {
        TaskKind::Adding => TaskData::adding(config, seed)?,
        TaskKind::CharLm => TaskData::char_lm(config, &read_corpus(config)?)?,
    })
}

/// A model shaped by `config` and `data`, with weights from `path`.
fn load_model(config: &ExperimentConfig, data: &TaskData, seed: u64, path: &Path) -> Result<Model> {
    let mut model = Trainer::new(config, data, seed)?.state.params;
    Checkpoint::load(path)?
        .restore_params(&mut model)
        .with_context(|| format!("checkpoint {} does not fit the configured model", path.display()))?;
    Ok(model)
}

/// Write to `<out_dir>/<name>` or print to stdout.
fn emit<R: CsvReport>(report: &R, out_dir: Option<&Path>, name: &str) -> Result<()> {
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            export_csv(report, &path)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{}", render_csv(report)),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let config = common.load()?;
            let result = run_experiment(&config, common.out_dir.as_deref())?;
            print!("{}", summary_csv(&result.rows));
        }
        Command::Sweep { common, betas } => {
            let config = common.load()?;
            let out = sweep(&config, &betas, common.out_dir.as_deref())?;
            let rows: Vec<_> = out.into_iter().flat_map(|(_, r)| r.rows).collect();
            print!("{}", summary_csv(&rows));
        }
        Command::EvalHorizon {
            common,
            checkpoint,
            horizon,
        } => {
            let config = common.load()?;
            let seed = config.seeds[0];
            let horizon = horizon.unwrap_or(config.eval_horizon);
            if horizon == 0 {
                bail!("no horizon given: pass --horizon or set eval_horizon");
            }
            let data = load_data(&config, seed)?;
            let model = load_model(&config, &data, seed, &checkpoint)?;
            let hd = HorizonData::new(&config, &data, seed, horizon)?;
            let report = norm_trajectory(&model, &hd.sequences(), horizon)?;
            emit(&report, common.out_dir.as_deref(), "norm_trajectory.csv")?;
        }
        Command::Spectrum { common, checkpoint } => {
            let config = common.load()?;
            let seed = config.seeds[0];
            let data = load_data(&config, seed)?;
            let model = load_model(&config, &data, seed, &checkpoint)?;
            let CellParams::Srnn(p) = &model.cell else {
                bail!("spectrum needs a square recurrent matrix; {} is an LSTM", config.cell);
            };
            emit(&eig_moduli(&p.w_hh)?, common.out_dir.as_deref(), "spectrum.csv")?;
        }
        Command::ForgetGates { common, checkpoint } => {
            let config = common.load()?;
            let seed = config.seeds[0];
            let data = load_data(&config, seed)?;
            let model = load_model(&config, &data, seed, &checkpoint)?;
            let n = data.len(Split::Test).min(config.eval_sequences);
            let seqs: Vec<_> = (0..n).map(|i| data.sequence(Split::Test, i)).collect();
            emit(&forget_gate_stats(&model, &seqs)?, common.out_dir.as_deref(), "forget_gates.csv")?;
        }
        Command::AddingBaselines {
            common,
            samples,
            length,
        } => {
            let b = adding_baselines();
            let mc = monte_carlo_baselines(&mut Rng::new(common.seed.unwrap_or(0)), length, samples)?;
            println!("predictor,analytic_mse,monte_carlo_mse");
            println!("short_sighted,{},{}", b.short_sighted, mc.short_sighted);
            println!("constant,{},{}", b.constant_predictor, mc.constant_predictor);
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
