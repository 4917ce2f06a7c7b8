use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use graphprune_train::trainer::latest_checkpoint;
use graphprune_train::{replay_log, train, TrainConfig};

use crate::eval::{run_eval, EvalSpec, Strategy};
use crate::plot::{emit_eval_plot, emit_training_plots};
use crate::render::{checkpoint_states, episode_state, save_png, snapshot};

#[derive(Debug, Parser)]
#[command(name = "graphprune", version, about = "Learned pruning of exploration graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a pruning policy with PPO.
    Train(TrainArgs),
    /// Compare pruning strategies on paired episode seeds.
    Eval(EvalArgs),
    /// Write map images from a log or checkpoint.
    Render(RenderArgs),
    /// Re-execute a training or evaluation log and check every value.
    Replay(ReplayArgs),
    /// Plot a training log or an evaluation report.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Paper,
    Desk,
    Tiny,
}

impl ScaleArg {
    fn name(self) -> &'static str {
        match self {
            ScaleArg::Paper => "paper",
            ScaleArg::Desk => "desk",
            ScaleArg::Tiny => "tiny",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    None,
    Random,
    Learned,
    LearnedNoisy,
    /// Every strategy.
    All,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML file; keys are the hyperparameter names, unset keys come from the
    /// scale preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset supplying unset keys (overrides `scale` in the file).
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    /// Run seed (overrides `seed` in the file).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> anyhow::Result<TrainConfig> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut table: toml::Table = text.parse().context("parsing config")?;
        if let Some(s) = self.scale {
            table.insert("scale".into(), s.name().into());
        }
        if let Some(seed) = self.seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        Ok(TrainConfig::from_toml(&table.to_string())?)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory for the log and checkpoints.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    /// Overrides `total_timesteps`.
    #[arg(long)]
    pub total_timesteps: Option<u64>,
    /// Resume from this checkpoint, or from the newest one in the run
    /// directory when given without a value (or as `latest`).
    #[arg(long, num_args = 0..=1, default_missing_value = "latest")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Strategy to evaluate; repeat for several.
    #[arg(long, value_enum, default_values_t = [StrategyArg::None, StrategyArg::Random])]
    pub strategy: Vec<StrategyArg>,
    /// Simulations per strategy.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Steps per simulation (defaults to the move cap).
    #[arg(long)]
    pub budget: Option<u32>,
    /// Policy for the learned strategies.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-strategy step logs.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Directory for the coverage bar chart.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Training or evaluation log to re-execute.
    #[arg(long, conflicts_with = "checkpoint")]
    pub log: Option<PathBuf>,
    /// Training checkpoint; renders every worker's map.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub worker: usize,
    #[arg(long, default_value_t = 0)]
    pub episode: u64,
    /// Steps to replay before rendering; defaults to the whole episode.
    #[arg(long)]
    pub step: Option<u32>,
    /// Pixels per cell.
    #[arg(long, default_value_t = 4)]
    pub pixels: u32,
    /// Output PNG (for checkpoints, `-w<N>` is appended per worker).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Training log.
    #[arg(long, conflicts_with = "report", required_unless_present = "report")]
    pub log: Option<PathBuf>,
    /// Evaluation report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Exponential smoothing factor in (0, 1]; no smoothing when absent.
    #[arg(long)]
    pub ema: Option<f64>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(t) = a.total_timesteps {
        cfg.total_timesteps = t;
        cfg.validate()?;
    }
    let resume = match a.resume {
        Some(p) if p.as_os_str() == "latest" => {
            Some(latest_checkpoint(&a.out).with_context(|| format!("no checkpoint in {}", a.out.display()))?)
        }
        other => other,
    };
    let n_updates = cfg.n_updates();
    let summary = train(cfg, &a.out, resume.as_deref(), |u| {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        eprintln!(
            "update {:>4}/{n_updates} step {:>8} value_loss {:.4} reward {} coverage {} kl {:.4}",
            u.update_idx + 1,
            u.global_step,
            u.value_loss,
            fmt(u.mean_episode_reward),
            fmt(u.mean_coverage),
            u.approx_kl
        );
    })?;
    println!("log: {}", summary.log_path.display());
    println!("checkpoint: {}", summary.final_checkpoint.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let cfg = a.config.load()?;
    let seed = cfg.seed;
    let mut spec = EvalSpec::new(cfg, a.n, seed);
    let mut strategies: Vec<Strategy> = Vec::new();
    for s in &a.strategy {
        let add: &[Strategy] = match s {
            StrategyArg::None => &[Strategy::None],
            StrategyArg::Random => &[Strategy::Random],
            StrategyArg::Learned => &[Strategy::Learned],
            StrategyArg::LearnedNoisy => &[Strategy::LearnedNoisy],
            StrategyArg::All => &Strategy::ALL,
        };
        for &x in add {
            if !strategies.contains(&x) {
                strategies.push(x);
            }
        }
    }
    strategies.sort();
    spec.strategies = strategies;
    if let Some(b) = a.budget {
        spec.step_budget = b;
    }
    spec.checkpoint = a.checkpoint;
    let report = run_eval(&spec, a.log_dir.as_deref())?;
    for s in &report.strategies {
        eprintln!(
            "{:<14} coverage {:6.2} ± {:5.2} %  tree {:8.1} ± {:6.1}",
            s.strategy.to_string(),
            s.coverage_pct.mean,
            s.coverage_pct.std,
            s.tree_size.mean,
            s.tree_size.std
        );
    }
    let json = report.to_json();
    match &a.out {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    if let Some(dir) = &a.plot {
        emit_eval_plot(&report, dir)?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> anyhow::Result<()> {
    if let Some(ck) = &a.checkpoint {
        for (i, env) in checkpoint_states(ck)?.iter().enumerate() {
            let path = suffixed(&a.out, &format!("-w{i}"));
            save_png(&snapshot(env, a.pixels), &path)?;
            println!("{}", path.display());
        }
        return Ok(());
    }
    let Some(log) = &a.log else {
        bail!("render needs --log or --checkpoint");
    };
    let env = episode_state(log, a.worker, a.episode, a.step)?;
    save_png(&snapshot(&env, a.pixels), &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn cmd_replay(a: ReplayArgs) -> anyhow::Result<()> {
    let report = replay_log(&a.log)?;
    println!(
        "replayed {} steps over {} episodes, {} divergences",
        report.steps,
        report.episodes,
        report.divergences.len()
    );
    for d in report.divergences.iter().take(20) {
        println!("  step {} {}: logged {} replayed {}", d.global_step, d.field, d.logged, d.replayed);
    }
    if !report.is_exact() {
        bail!("replay diverged from {}", a.log.display());
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> anyhow::Result<()> {
    if let Some(alpha) = a.ema {
        if !(alpha > 0.0 && alpha <= 1.0) {
            bail!("--ema: must be in (0, 1]");
        }
    }
    let written = match (&a.log, &a.report) {
        (Some(log), _) => emit_training_plots(log, &a.out, a.ema)?,
        (None, Some(report)) => {
            let text = std::fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
            emit_eval_plot(&serde_json::from_str(&text)?, &a.out)?
        }
        (None, None) => bail!("plot needs --log or --report"),
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

