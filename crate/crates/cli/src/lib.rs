//! Experiment launcher: run configuration, the ablation grid, and the
//! files written for every run.
//!
//! A results directory holds:
//!
//! - `episodes.csv`: one row per recorded episode
//! - `rolling.csv`: rolling mean and population std of the score
//! - `summary.txt`: `key = value` lines
//! - `checkpoint.bin`: final policy parameters
//! - `config.json`: the [`RunConfig`] that produced the run

#![forbid(unsafe_code)]

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use qdqn::agent::{EpsilonSchedule, LossKind};
use qdqn::checkpoint;
use qdqn::env::{EnvConfig, EnvVariant};
use qdqn::model::{layout, param_count_for};
use qdqn::optimizer::RmsConfig;
use qdqn::replay::ReplayConfig;
use qdqn::trainer::{run_training_with_sink, EpisodeRecord, ReplayMode, TrainerConfig, TrainingReport};
use qdqn::{QNetwork, Variant};

pub const VERSION: &str = concat!("qdqn ", env!("CARGO_PKG_VERSION"));
pub const ROLLING_WINDOW: usize = 5000;

/// Seeds of grid cell `i` are `base + i * GRID_SEED_STRIDE`.
pub const GRID_SEED_STRIDE: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub segment_len: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub clip_norm: Option<f64>,
    pub per_alpha: f64,
    pub per_beta: f64,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        let rms = RmsConfig::default();
        let replay = ReplayConfig::default();
        let eps = EpsilonSchedule::default();
        Self {
            gamma: 0.9,
            segment_len: 5,
            batch_size: 4,
            target_sync: 2000,
            lr: rms.lr,
            rms_alpha: rms.rms_alpha,
            rms_eps: rms.eps,
            clip_norm: rms.clip_norm,
            per_alpha: replay.per_alpha,
            per_beta: replay.per_beta,
            replay_capacity: replay.capacity,
            epsilon_start: eps.start,
            epsilon_decay: eps.decay,
            epsilon_min: eps.min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env_variant: EnvVariant,
    pub model: Variant,
    /// Prioritized sampling; `off` samples uniformly with unit IS weights.
    pub per: Switch,
    /// `off` drops the replay memory and trains on each segment once.
    pub replay: Switch,
    pub loss: LossKind,
    pub workers: usize,
    pub episodes: u64,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env_variant: EnvVariant::V0,
            model: Variant::Quantum,
            per: Switch::On,
            replay: Switch::On,
            loss: LossKind::Matrix,
            workers: 4,
            episodes: 50_000,
            seed: 0,
            hyperparams: Hyperparams::default(),
            out: PathBuf::from("results"),
        }
    }
}

impl RunConfig {
    pub fn replay_mode(&self) -> ReplayMode {
        match (self.replay, self.per) {
            (Switch::Off, _) => ReplayMode::Off,
            (Switch::On, Switch::On) => ReplayMode::Prioritized,
            (Switch::On, Switch::Off) => ReplayMode::Uniform,
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let h = &self.hyperparams;
        TrainerConfig {
            network: QNetwork::new(self.model),
            env: EnvConfig::new(self.env_variant),
            replay: ReplayConfig {
                capacity: h.replay_capacity,
                per_alpha: h.per_alpha,
                per_beta: h.per_beta,
            },
            replay_mode: self.replay_mode(),
            rms: RmsConfig {
                lr: h.lr,
                rms_alpha: h.rms_alpha,
                eps: h.rms_eps,
                clip_norm: h.clip_norm,
            },
            loss: self.loss,
            epsilon: EpsilonSchedule {
                start: h.epsilon_start,
                decay: h.epsilon_decay,
                min: h.epsilon_min,
            },
            gamma: h.gamma,
            segment_len: h.segment_len,
            batch_size: h.batch_size,
            target_sync: h.target_sync,
            workers: self.workers,
            episodes: self.episodes,
            seed: self.seed,
            record_trace: false,
        }
    }

    /// Short label used for grid subdirectories.
    pub fn label(&self) -> String {
        let model = match self.model {
            Variant::Quantum => "quantum",
            Variant::Classical => "classical",
        };
        let replay = match self.replay_mode() {
            ReplayMode::Prioritized => "per",
            ReplayMode::Uniform => "noper",
            ReplayMode::Off => "noreplay",
        };
        let loss = match self.loss {
            LossKind::Matrix => "matrix",
            LossKind::Td => "td",
        };
        format!("{}-{model}-{replay}-{loss}", self.env_variant)
    }
}

/// `(mean, population std)` over the trailing `window` scores at every index.
pub fn rolling_stats(scores: &[f64], window: usize) -> Vec<(f64, f64)> {
    let window = window.max(1);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut out = Vec::with_capacity(scores.len());
    for (i, &s) in scores.iter().enumerate() {
        sum += s;
        sum_sq += s * s;
        if i >= window {
            let old = scores[i - window];
            sum -= old;
            sum_sq -= old * old;
        }
        let n = (i + 1).min(window);
        // Running sums drift over long series; recompute exactly now and then.
        if i % 4096 == 4095 {
            let lo = i + 1 - n;
            sum = scores[lo..=i].iter().sum();
            sum_sq = scores[lo..=i].iter().map(|v| v * v).sum();
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        out.push((mean, var.sqrt()));
    }
    out
}

/// The comparison set for one environment variant. The no-PER cells train
/// without any replay memory.
pub fn ablation_grid(base: &RunConfig) -> Vec<RunConfig> {
    let cells = [
        (Variant::Quantum, Switch::On, LossKind::Matrix),
        (Variant::Quantum, Switch::Off, LossKind::Matrix),
        (Variant::Quantum, Switch::On, LossKind::Td),
        (Variant::Classical, Switch::On, LossKind::Matrix),
        (Variant::Classical, Switch::Off, LossKind::Matrix),
    ];
    cells
        .iter()
        .enumerate()
        .map(|(i, &(model, per, loss))| {
            let mut c = RunConfig {
                model,
                per,
                replay: per,
                loss,
                seed: base.seed.wrapping_add(i as u64 * GRID_SEED_STRIDE),
                ..base.clone()
            };
            c.out = base.out.join(c.label());
            c
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub param_count: usize,
    pub quantum_params: usize,
    pub episodes: usize,
    pub global_steps: u64,
    pub updates: u64,
    pub target_syncs: usize,
    pub mean_score: f64,
    pub wall_time_s: f64,
}

fn quantum_param_count(variant: Variant) -> usize {
    layout(variant)
        .iter()
        .filter(|s| s.name == "quantum_params")
        .map(|s| s.len())
        .sum()
}

/// Trains per `config` and writes every output file into `config.out`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    let trainer = config.trainer_config();
    trainer.validate().context("invalid configuration")?;
    let out = &config.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(config)?)?;

    let report = run_training_with_sink(&trainer, |_| {}).context("training failed")?;
    write_episodes(&out.join("episodes.csv"), &report.episodes)?;
    let scores: Vec<f64> = report.episodes.iter().map(|e| e.score).collect();
    write_rolling(&out.join("rolling.csv"), &scores)?;
    let file = fs::File::create(out.join("checkpoint.bin"))?;
    checkpoint::write(BufWriter::new(file), &report.final_params, config.seed)?;

    let summary = summarize(config, &report);
    fs::write(out.join("summary.txt"), render_summary(config, &summary, &scores))?;
    Ok(summary)
}

fn summarize(config: &RunConfig, report: &TrainingReport) -> RunSummary {
    let n = report.episodes.len();
    RunSummary {
        param_count: param_count_for(config.model),
        quantum_params: quantum_param_count(config.model),
        episodes: n,
        global_steps: report.global_steps,
        updates: report.updates,
        target_syncs: report.syncs.len(),
        mean_score: report.episodes.iter().map(|e| e.score).sum::<f64>() / n.max(1) as f64,
        wall_time_s: report.wall_time.as_secs_f64(),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn render_summary(config: &RunConfig, s: &RunSummary, scores: &[f64]) -> String {
    let k = scores.len().min(500);
    let lines = [
        ("version", VERSION.to_string()),
        ("label", config.label()),
        ("env", config.env_variant.to_string()),
        ("model", format!("{:?}", config.model).to_lowercase()),
        ("replay_mode", format!("{:?}", config.replay_mode()).to_lowercase()),
        ("loss", format!("{:?}", config.loss).to_lowercase()),
        ("seed", config.seed.to_string()),
        ("workers", config.workers.to_string()),
        ("param_count", s.param_count.to_string()),
        ("quantum_params", s.quantum_params.to_string()),
        ("episodes", s.episodes.to_string()),
        ("global_steps", s.global_steps.to_string()),
        ("updates", s.updates.to_string()),
        ("target_syncs", s.target_syncs.to_string()),
        ("mean_score", format!("{:.4}", s.mean_score)),
        ("first_500_mean", format!("{:.4}", mean(&scores[..k]))),
        ("last_500_mean", format!("{:.4}", mean(&scores[scores.len() - k..]))),
        ("wall_time_s", format!("{:.3}", s.wall_time_s)),
    ];
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn write_episodes(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rolling(path: &Path, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "rolling_mean", "rolling_std"])?;
    for (i, (m, s)) in rolling_stats(scores, ROLLING_WINDOW).into_iter().enumerate() {
        w.write_record([i.to_string(), m.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "qdqn", version, about = "Train asynchronous quantum or classical DQN agents on cart-pole")]
pub struct Cli {
    /// JSON run configuration; flags given explicitly override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvVariant>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub per: Option<Switch>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// `off` trains on each segment once without a replay memory.
    #[arg(long, value_enum)]
    pub replay: Option<Switch>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run the five-cell comparison set into subdirectories of the output.
    #[arg(long)]
    pub ablation_grid: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Quantum,
    Classical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Matrix,
    Td,
}

fn parse_env(s: &str) -> std::result::Result<EnvVariant, String> {
    s.parse().map_err(|e: qdqn::Error| e.to_string())
}

impl Cli {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.env {
            c.env_variant = v;
        }
        if let Some(m) = self.model {
            c.model = match m {
                ModelArg::Quantum => Variant::Quantum,
                ModelArg::Classical => Variant::Classical,
            };
        }
        if let Some(p) = self.per {
            c.per = p;
        }
        if let Some(l) = self.loss {
            c.loss = match l {
                LossArg::Matrix => LossKind::Matrix,
                LossArg::Td => LossKind::Td,
            };
        }
        if let Some(r) = self.replay {
            c.replay = r;
        }
        if let Some(w) = self.workers {
            c.workers = w as usize;
        }
        if let Some(e) = self.episodes {
            c.episodes = e;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if c.workers == 0 {
            bail!("workers must be at least 1");
        }
        Ok(c)
    }
}

fn print_summary(config: &RunConfig, s: &RunSummary) {
    println!(
        "{}: {} episodes, {} steps, mean score {:.2}, param_count {} ({} quantum), {:.1}s -> {}",
        config.label(),
        s.episodes,
        s.global_steps,
        s.mean_score,
        s.param_count,
        s.quantum_params,
        s.wall_time_s,
        config.out.display()
    );
}

/// Entry point shared by the binary and tests. Returns the exit code.
pub fn parse_and_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = cli.resolve().and_then(|config| {
        let configs = if cli.ablation_grid {
            ablation_grid(&config)
        } else {
            vec![config]
        };
        for c in &configs {
            let summary = run(c)?;
            print_summary(c, &summary);
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
