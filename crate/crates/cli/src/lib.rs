//! Command implementations behind the `arpo` binary.
//!
//! Every command reads JSONL or a TOML config, writes its outputs atomically
//! and reports failures as [`CliError`], which maps to the process exit code.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use arpo_core::records::{group_records, parse_jsonl, score_record, LineRecord, ScoredRecord};
use arpo_core::sim::{
    compare_strategies, run_training, ComparisonReport, EnvSpec, RunMetrics, RunSummary,
};
use arpo_core::{
    compute_arpo, ArpoConfig, ArpoOutput, CognitiveDomain, RewardConfig, RewardWeights, SkipReport,
    Strategy, TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "arpo",
    version,
    about = "Task-aware rewards and rebalanced group advantages"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score rollout records and write one reward breakdown per line.
    Score(ScoreArgs),
    /// Group scored rollouts by prompt and write per-response advantages.
    Advantage(AdvantageArgs),
    /// Train the tabular policy for every configured strategy and seed.
    Simulate(SimulateArgs),
    /// Train every strategy on every seed and compare the minority domain.
    Compare(SimulateArgs),
    /// Summarise rewards, advantages and skipped groups per domain.
    Report(AdvantageArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file; omitted sections take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reward weights as `task,spatial,format`.
    #[arg(long)]
    pub weights: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Rollout records, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Scored records, one JSON object per line.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AdvantageArgs {
    /// Rollout records, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file (JSONL for `advantage`, JSON for `report`).
    #[arg(long)]
    pub output: PathBuf,
    /// Training step used for the curriculum factor.
    #[arg(long, default_value_t = 0)]
    pub step: u64,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory for `simulate`, output file for `compare`.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Grpo, Strategy::Arpo],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// The whole configuration document. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub reward: RewardConfig,
    pub advantage: ArpoConfig,
    pub env: EnvSpec,
    pub train: TrainConfig,
    pub simulate: SimulateSection,
}

impl AppConfig {
    pub fn validate(&self) -> arpo_core::Result<()> {
        self.reward.weights.validate()?;
        self.advantage.validate()?;
        self.env.validate()?;
        self.train.validate()
    }

    /// Applies `--seed` and `--weights`. A seed override replaces the
    /// k-means seed, the training seed and the seed list, which becomes
    /// `seed, seed + 1, ...` with its length unchanged.
    pub fn apply_overrides(&mut self, common: &CommonArgs) -> Result<(), CliError> {
        if let Some(seed) = common.seed {
            self.advantage.kmeans.seed = seed;
            self.train.seed = seed;
            let n = self.simulate.seeds.len().max(1) as u64;
            self.simulate.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
        }
        if let Some(w) = &common.weights {
            self.reward.weights = w
                .parse::<RewardWeights>()
                .map_err(|e| CliError::Config(anyhow!("--weights: {e}")))?;
        }
        Ok(())
    }
}

/// A failed command. Input problems exit with 2, configuration problems
/// with 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0:#}")]
    Input(anyhow::Error),
    #[error("{0:#}")]
    Config(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

fn input_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Input(e.into())
}

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

/// Reads the config (or defaults), applies overrides and validates.
pub fn load_config(common: &CommonArgs) -> Result<AppConfig, CliError> {
    let mut cfg = match &common.config {
        None => AppConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(config_err)?;
            toml::from_str(&text)
                .with_context(|| format!("config {}", path.display()))
                .map_err(config_err)?
        }
    };
    cfg.apply_overrides(common)?;
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(input_err)
}

fn to_jsonl<T: Serialize>(items: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn to_pretty_json<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<LineRecord>, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input_err)?;
    parse_jsonl(&text)
        .with_context(|| format!("{}", path.display()))
        .map_err(input_err)
}

fn score_all(records: &[LineRecord], cfg: &RewardConfig) -> Result<Vec<ScoredRecord>, CliError> {
    records
        .iter()
        .map(|r| {
            score_record(r, cfg)
                .with_context(|| format!("line {}", r.line))
                .map_err(input_err)
        })
        .collect()
}

pub fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let records = read_records(&args.input)?;
    let scored = score_all(&records, &cfg.reward)?;
    write_output(&args.output, &to_jsonl(&scored).map_err(input_err)?)
}

fn advantages_for(
    records: &[LineRecord],
    step: u64,
    cfg: &AppConfig,
) -> Result<(Vec<ScoredRecord>, ArpoOutput), CliError> {
    let scored = score_all(records, &cfg.reward)?;
    let rewards: Vec<f64> = scored.iter().map(|s| s.breakdown.r_total).collect();
    let groups = group_records(records, &rewards).map_err(input_err)?;
    let out = compute_arpo(&groups, step, &cfg.advantage).map_err(input_err)?;
    Ok((scored, out))
}

/// Location of the skip report written next to the advantage records.
pub fn skip_report_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".skip.json");
    PathBuf::from(name)
}

pub fn cmd_advantage(args: &AdvantageArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let records = read_records(&args.input)?;
    let (_, out) = advantages_for(&records, args.step, &cfg)?;
    write_output(&args.output, &to_jsonl(&out.records).map_err(input_err)?)?;
    write_output(
        &skip_report_path(&args.output),
        &to_pretty_json(&out.skip_report).map_err(input_err)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub domain: CognitiveDomain,
    pub responses: usize,
    pub groups: usize,
    pub retained_groups: usize,
    /// Mean total reward over every response, skipped groups included.
    pub mean_reward: f64,
    /// Mean |final advantage| over retained responses.
    pub mean_abs_advantage: f64,
    /// Domain temperature, absent when every group was skipped.
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: AppConfig,
    pub step: u64,
    pub lambda: f64,
    pub dampening_scale: f64,
    pub renorm_degenerate: bool,
    pub domains: Vec<DomainSummary>,
    pub skip_report: SkipReport,
}

pub fn build_report(
    records: &[LineRecord],
    step: u64,
    cfg: &AppConfig,
) -> Result<RunReport, CliError> {
    let (scored, out) = advantages_for(records, step, cfg)?;
    let mut domains: BTreeMap<CognitiveDomain, DomainSummary> = BTreeMap::new();
    let mut prompts: BTreeMap<CognitiveDomain, std::collections::BTreeSet<&str>> = BTreeMap::new();
    for (rec, s) in records.iter().zip(&scored) {
        let d = rec.record.domain;
        let e = domains.entry(d).or_insert(DomainSummary {
            domain: d,
            responses: 0,
            groups: 0,
            retained_groups: 0,
            mean_reward: 0.0,
            mean_abs_advantage: 0.0,
            temperature: None,
        });
        e.responses += 1;
        e.mean_reward += s.breakdown.r_total;
        prompts.entry(d).or_default().insert(&rec.record.prompt_id);
    }
    for (d, e) in domains.iter_mut() {
        e.mean_reward /= e.responses as f64;
        e.groups = prompts[d].len();
        let advs: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.domain == *d)
            .map(|r| r.a_final.abs())
            .collect();
        if !advs.is_empty() {
            e.mean_abs_advantage = advs.iter().sum::<f64>() / advs.len() as f64;
        }
        if let Some(stats) = out.domain_stats.iter().find(|s| s.domain == *d) {
            e.retained_groups = stats.groups;
            e.temperature = Some(stats.temperature);
        }
    }
    Ok(RunReport {
        version: VERSION.to_string(),
        config: cfg.clone(),
        step,
        lambda: out.lambda,
        dampening_scale: out.dampening_scale,
        renorm_degenerate: out.renorm_degenerate,
        domains: domains.into_values().collect(),
        skip_report: out.skip_report,
    })
}

pub fn cmd_report(args: &AdvantageArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let records = read_records(&args.input)?;
    let report = build_report(&records, args.step, &cfg)?;
    write_output(&args.output, &to_pretty_json(&report).map_err(input_err)?)
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    step: u64,
    domain: CognitiveDomain,
    mean_reward: f64,
    mean_abs_advantage: f64,
    skipped: usize,
}

pub fn metrics_csv(metrics: &RunMetrics) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &metrics.steps {
        for d in &s.domains {
            w.serialize(MetricsRow {
                step: s.step,
                domain: d.domain,
                mean_reward: d.mean_reward,
                mean_abs_advantage: d.mean_abs_advantage,
                skipped: d.skipped,
            })?;
        }
    }
    Ok(w.into_inner()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryFile {
    pub version: String,
    pub config: AppConfig,
    /// Advantage settings after the strategy and run length were applied.
    pub effective_advantage: ArpoConfig,
    #[serde(flatten)]
    pub run: RunSummary,
    pub total_groups_skipped: usize,
}

pub fn metrics_file_name(strategy: Strategy, seed: u64) -> String {
    format!("metrics_{strategy}_seed{seed}.csv")
}

pub fn summary_file_name(strategy: Strategy, seed: u64) -> String {
    format!("summary_{strategy}_seed{seed}.json")
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    if cfg.simulate.strategies.is_empty() || cfg.simulate.seeds.is_empty() {
        return Err(config_err(anyhow!(
            "simulate needs at least one strategy and one seed"
        )));
    }
    fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))
        .map_err(input_err)?;
    for &strategy in &cfg.simulate.strategies {
        for &seed in &cfg.simulate.seeds {
            let train = TrainConfig {
                strategy,
                seed,
                ..cfg.train.clone()
            };
            let metrics = run_training(&train, &cfg.advantage, &cfg.env).map_err(config_err)?;
            write_output(
                &args.output.join(metrics_file_name(strategy, seed)),
                &metrics_csv(&metrics).map_err(input_err)?,
            )?;
            let summary = RunSummaryFile {
                version: VERSION.to_string(),
                config: cfg.clone(),
                effective_advantage: train.effective_advantage(&cfg.advantage),
                run: RunSummary::from(&metrics),
                total_groups_skipped: metrics.steps.iter().map(|s| s.groups_skipped).sum(),
            };
            write_output(
                &args.output.join(summary_file_name(strategy, seed)),
                &to_pretty_json(&summary).map_err(input_err)?,
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub version: String,
    pub config: AppConfig,
    #[serde(flatten)]
    pub report: ComparisonReport,
}

pub fn run_comparison(cfg: &AppConfig) -> Result<ComparisonReport, CliError> {
    compare_strategies(
        &cfg.train,
        &cfg.advantage,
        &cfg.env,
        &cfg.simulate.strategies,
        &cfg.simulate.seeds,
    )
    .map_err(config_err)
}

pub fn cmd_compare(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let report = run_comparison(&cfg)?;
    for s in &report.strategies {
        println!(
            "{:<10} {} mean accuracy {:.4}  not worse than {} in {}/{} seeds  mean gap {:+.4}",
            s.strategy.as_str(),
            report.minority_domain.as_str(),
            s.minority_mean_accuracy,
            report.baseline,
            s.not_worse,
            report.seeds.len(),
            s.mean_gap
        );
    }
    let file = ComparisonFile {
        version: VERSION.to_string(),
        config: cfg,
        report,
    };
    write_output(&args.output, &to_pretty_json(&file).map_err(input_err)?)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Advantage(a) => cmd_advantage(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Report(a) => cmd_report(a),
    }
}
