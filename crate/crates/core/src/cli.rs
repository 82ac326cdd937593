//! Command-line entry point wiring the modules into the three-phase
//! workflow: ingest/baseline/classify (phase 1), derive-strategy (phase
//! 2), run/stats/advise/report (phase 3), plus the synthetic sweep and
//! cost estimation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::advisor::{self, AdvisorPolicy};
use crate::corpus::{AdapterId, CaseSet, Extracted, LabelSpace, TaskKind};
use crate::modelio::{self, ModelConfig, Prediction, ProviderKind};
use crate::report::{self, ResultsTableRow, TableFormat};
use crate::runner::{self, JournalRecord, RunInputs, RunPlan};
use crate::stats;
use crate::strategy::{self, Strategy, DEFAULT_INCLUSION_THRESHOLD};
use crate::taxonomy::{self, DataOrigin, ErrorDistribution, Rubric};

pub const CASES_FILE: &str = "cases.jsonl";
pub const LOAD_REPORT_FILE: &str = "load_report.json";
pub const SAMPLE_FILE: &str = "sample.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const BASELINE_JOURNAL_FILE: &str = "baseline.journal.jsonl";
pub const BASELINE_RESULT_FILE: &str = "baseline_result.json";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const DISTRIBUTION_FILE: &str = "distribution.json";
pub const DERIVED_STRATEGY_FILE: &str = "strategy.derived.json";
pub const DERIVATION_TRACE_FILE: &str = "derivation_trace.json";
pub const RUN_JOURNAL_FILE: &str = "run.journal.jsonl";
pub const RUN_RESULT_FILE: &str = "run_result.json";
pub const STATS_FILE: &str = "stats.json";
pub const VERDICT_FILE: &str = "verdict.json";
pub const REPORT_TSV_FILE: &str = "report.tsv";
pub const REPORT_MD_FILE: &str = "report.md";
pub const FIGURE_SVG_FILE: &str = "figure.svg";
pub const FIGURE_CSV_FILE: &str = "figure.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";
pub const SWEEP_JSON_FILE: &str = "sweep.json";
pub const COST_FILE: &str = "cost.json";

#[derive(Debug, Clone, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub adapter: AdapterId,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_seed() -> u64 {
    7
}

fn default_dev_fraction() -> f64 {
    0.3
}

fn default_concurrency() -> usize {
    runner::DEFAULT_CONCURRENCY
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: None,
            seed: default_seed(),
            dev_fraction: default_dev_fraction(),
            concurrency: default_concurrency(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct AdviseConfig {
    #[serde(default)]
    pub task_kind: Option<TaskKind>,
}

/// One JSON config file plus flag overrides; secrets only by environment
/// variable name.
#[derive(Debug, Clone, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub labels_path: Option<PathBuf>,
    #[serde(default)]
    pub rubric_path: Option<PathBuf>,
    #[serde(default)]
    pub profile_path: Option<PathBuf>,
    #[serde(default)]
    pub blocks_path: Option<PathBuf>,
    #[serde(default)]
    pub strategy_path: Option<PathBuf>,
    #[serde(default)]
    pub policy_path: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub advise: AdviseConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Config {
    /// Load a config, resolving its referenced paths relative to the
    /// config file's directory and checking they exist.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("ConfigInvalid: cannot read {}", path.display()))?;
        let mut cfg: Config = serde_json::from_str(&raw)
            .with_context(|| format!("ConfigInvalid: {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&inner);
                }
            }
        };
        if let Some(ds) = &mut cfg.dataset {
            if ds.path.is_relative() {
                ds.path = base.join(&ds.path);
            }
        }
        resolve(&mut cfg.labels_path);
        resolve(&mut cfg.rubric_path);
        resolve(&mut cfg.profile_path);
        resolve(&mut cfg.blocks_path);
        resolve(&mut cfg.strategy_path);
        resolve(&mut cfg.policy_path);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for (name, path) in [
            ("dataset.path", self.dataset.as_ref().map(|d| d.path.clone())),
            ("labels_path", self.labels_path.clone()),
            ("rubric_path", self.rubric_path.clone()),
            ("profile_path", self.profile_path.clone()),
            ("blocks_path", self.blocks_path.clone()),
            ("strategy_path", self.strategy_path.clone()),
            ("policy_path", self.policy_path.clone()),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    bail!("ConfigInvalid: {name} {} does not exist", path.display());
                }
            }
        }
        self.model
            .validate()
            .map_err(|e| anyhow!("ConfigInvalid: model: {e}"))?;
        if !(0.0..1.0).contains(&self.run.dev_fraction) || self.run.dev_fraction <= 0.0 {
            bail!("ConfigInvalid: run.dev_fraction must be in (0,1)");
        }
        Ok(())
    }

    fn labels(&self) -> Result<LabelSpace> {
        let path = self
            .labels_path
            .as_ref()
            .ok_or_else(|| anyhow!("ConfigInvalid: labels_path is required for this subcommand"))?;
        Ok(LabelSpace::load(path)?)
    }

    fn profile(&self) -> Result<strategy::DomainProfile> {
        let path = self
            .profile_path
            .as_ref()
            .ok_or_else(|| anyhow!("ConfigInvalid: profile_path is required for this subcommand"))?;
        Ok(strategy::DomainProfile::load(path)?)
    }

    fn rubric(&self) -> Result<Rubric> {
        let path = self
            .rubric_path
            .as_ref()
            .ok_or_else(|| anyhow!("ConfigInvalid: rubric_path is required for this subcommand"))?;
        Ok(Rubric::load(path)?)
    }

    fn policy(&self) -> Result<AdvisorPolicy> {
        match &self.policy_path {
            Some(path) => Ok(AdvisorPolicy::load(path)?),
            None => Ok(AdvisorPolicy::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Http,
    Mock,
    Synthetic,
}

impl From<ProviderArg> for ProviderKind {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::Http => ProviderKind::HttpOpenaiCompatible,
            ProviderArg::Mock => ProviderKind::MockScripted,
            ProviderArg::Synthetic => ProviderKind::Synthetic,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hec",
    version,
    about = "Paired LLM classification experiments with hierarchical error analysis"
)]
pub struct Cli {
    /// JSON config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Case-count override.
    #[arg(long, global = true, value_name = "N")]
    pub n: Option<usize>,
    /// Strategy id to analyze (stats/advise; defaults to the last arm).
    #[arg(long, global = true, value_name = "ID")]
    pub strategy: Option<String>,
    /// Model id override.
    #[arg(long, global = true, value_name = "ID")]
    pub model: Option<String>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Provider override.
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and normalize the configured dataset into cases.jsonl.
    Ingest,
    /// Stratified sample of n cases from a case set.
    Sample {
        /// Input case set (default: OUT/cases.jsonl).
        #[arg(long, value_name = "PATH")]
        cases: Option<PathBuf>,
    },
    /// Leak-proof development/evaluation split.
    Split {
        #[arg(long, value_name = "PATH")]
        cases: Option<PathBuf>,
        /// Development-side fraction (default from config).
        #[arg(long, value_name = "F")]
        dev_fraction: Option<f64>,
    },
    /// Run the baseline arm alone (phase 1 error source).
    Baseline {
        /// Case set to run on (default: OUT/dev.jsonl).
        #[arg(long, value_name = "PATH")]
        cases: Option<PathBuf>,
    },
    /// Classify failed cells from a journal into the error taxonomy.
    ClassifyErrors {
        /// Journal to read (default: OUT/baseline.journal.jsonl).
        #[arg(long, value_name = "PATH")]
        journal: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        cases: Option<PathBuf>,
        /// Arm to classify (default: the journal's first arm).
        #[arg(long, value_name = "ID")]
        arm: Option<String>,
    },
    /// Derive an intervention strategy from an error distribution.
    DeriveStrategy {
        /// Distribution JSON (default: OUT/distribution.json).
        #[arg(long, value_name = "PATH")]
        distribution: Option<PathBuf>,
        /// Layer-share inclusion threshold.
        #[arg(long, value_name = "F", default_value_t = DEFAULT_INCLUSION_THRESHOLD)]
        threshold: f64,
    },
    /// Paired run: baseline plus the enhanced strategy (or its ablation set).
    Run {
        /// Case set to run on (default: OUT/eval.jsonl).
        #[arg(long, value_name = "PATH")]
        cases: Option<PathBuf>,
        /// Strategy file (default: config strategy_path, then
        /// OUT/strategy.derived.json).
        #[arg(long, value_name = "PATH")]
        strategy_file: Option<PathBuf>,
        /// Run the full ablation set for synergy analysis.
        #[arg(long)]
        ablation: bool,
    },
    /// Significance bundle for every enhanced arm in a run journal.
    Stats {
        /// Journal to analyze (default: OUT/run.journal.jsonl).
        #[arg(long, value_name = "PATH")]
        journal: Option<PathBuf>,
    },
    /// Deployment advice from baseline accuracy and the band policy.
    Advise {
        /// Stats file (default: OUT/stats.json).
        #[arg(long, value_name = "PATH")]
        stats: Option<PathBuf>,
        /// Task kind override (otherwise config, then the case set).
        #[arg(long, value_enum)]
        task_kind: Option<TaskKindArg>,
        #[arg(long, value_name = "PATH")]
        cases: Option<PathBuf>,
    },
    /// Emit tables, the distribution figure, and the run manifest.
    Report {
        /// Rows JSON (array of table rows); default builds rows from
        /// OUT/stats.json.
        #[arg(long, value_name = "PATH")]
        rows: Option<PathBuf>,
        /// Distributions JSON for the figure (default:
        /// OUT/distribution.json when present).
        #[arg(long, value_name = "PATH")]
        dists: Option<PathBuf>,
    },
    /// Synthetic boundary sweep across a p0 grid.
    Sweep {
        /// Comma-separated p0 grid.
        #[arg(long, value_name = "LIST", default_value = "0.55,0.65,0.75,0.85")]
        p0_grid: String,
        #[arg(long, value_name = "N", default_value_t = 2000)]
        cases_per_point: usize,
        /// Comma-separated seeds.
        #[arg(long, value_name = "LIST", default_value = "1,2,3,4,5")]
        seeds: String,
    },
    /// Token and currency budget for cases x strategies.
    EstimateCost {
        #[arg(long, value_name = "PATH")]
        cases: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        strategy_file: Option<PathBuf>,
        #[arg(long)]
        ablation: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKindArg {
    SingleLabel,
    MultiLabel,
    MultipleChoice,
}

impl From<TaskKindArg> for TaskKind {
    fn from(t: TaskKindArg) -> Self {
        match t {
            TaskKindArg::SingleLabel => TaskKind::SingleLabel,
            TaskKindArg::MultiLabel => TaskKind::MultiLabel,
            TaskKindArg::MultipleChoice => TaskKind::MultipleChoice,
        }
    }
}

/// Write an output unless it already exists without --force. Returns
/// whether the file was written.
fn write_output(path: &Path, content: &[u8], force: bool) -> Result<bool> {
    if path.exists() && !force {
        println!("{} exists, skipping (use --force to overwrite)", path.display());
        return Ok(false);
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(true)
}

fn write_json<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<bool> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_output(path, body.as_bytes(), force)
}

struct Ctx {
    cfg: Config,
    out_dir: PathBuf,
    seed: u64,
    n: Option<usize>,
    strategy_id: Option<String>,
    force: bool,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let config_path = cli
            .config
            .clone()
            .ok_or_else(|| anyhow!("ConfigInvalid: --config PATH is required"))?;
        let mut cfg = Config::load(&config_path)?;
        if let Some(model) = &cli.model {
            cfg.model.model_id = model.clone();
        }
        if let Some(provider) = cli.provider {
            cfg.model.provider = provider.into();
            cfg.model
                .validate()
                .map_err(|e| anyhow!("ConfigInvalid: --provider override: {e}"))?;
        }
        let out_dir = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            seed: cli.seed.unwrap_or(cfg.run.seed),
            n: cli.n.or(cfg.run.n),
            strategy_id: cli.strategy.clone(),
            force: cli.force,
            out_dir,
            cfg,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn cases_from(&self, flag: &Option<PathBuf>, default_name: &str) -> Result<CaseSet> {
        let path = flag.clone().unwrap_or_else(|| self.out(default_name));
        CaseSet::read_jsonl(&path).with_context(|| format!("reading cases {}", path.display()))
    }

    fn enhanced_strategy(&self, flag: &Option<PathBuf>) -> Result<Strategy> {
        let path = flag
            .clone()
            .or_else(|| self.cfg.strategy_path.clone())
            .unwrap_or_else(|| self.out(DERIVED_STRATEGY_FILE));
        if !path.exists() {
            bail!(
                "ConfigInvalid: no strategy file at {} (set strategy_path or run derive-strategy)",
                path.display()
            );
        }
        Ok(Strategy::load(&path)?)
    }

    fn arms(&self, enhanced: Strategy, ablation: bool) -> Vec<Strategy> {
        if ablation {
            strategy::ablation_set(&enhanced)
        } else {
            vec![Strategy::baseline(enhanced.domain), enhanced]
        }
    }
}

/// Run the CLI; errors come back for `main` to print as a machine-parsable
/// line.
pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::from_cli(&cli)?;
    match &cli.command {
        Command::Ingest => cmd_ingest(&ctx),
        Command::Sample { cases } => cmd_sample(&ctx, cases),
        Command::Split {
            cases,
            dev_fraction,
        } => cmd_split(&ctx, cases, *dev_fraction),
        Command::Baseline { cases } => cmd_baseline(&ctx, cases),
        Command::ClassifyErrors {
            journal,
            cases,
            arm,
        } => cmd_classify_errors(&ctx, journal, cases, arm),
        Command::DeriveStrategy {
            distribution,
            threshold,
        } => cmd_derive_strategy(&ctx, distribution, *threshold),
        Command::Run {
            cases,
            strategy_file,
            ablation,
        } => cmd_run(&ctx, cases, strategy_file, *ablation),
        Command::Stats { journal } => cmd_stats(&ctx, journal),
        Command::Advise {
            stats,
            task_kind,
            cases,
        } => cmd_advise(&ctx, stats, *task_kind, cases),
        Command::Report { rows, dists } => cmd_report(&ctx, rows, dists),
        Command::Sweep {
            p0_grid,
            cases_per_point,
            seeds,
        } => cmd_sweep(&ctx, p0_grid, *cases_per_point, seeds),
        Command::EstimateCost {
            cases,
            strategy_file,
            ablation,
        } => cmd_estimate_cost(&ctx, cases, strategy_file, *ablation),
    }
}

fn cmd_ingest(ctx: &Ctx) -> Result<()> {
    let dataset = ctx
        .cfg
        .dataset
        .as_ref()
        .ok_or_else(|| anyhow!("ConfigInvalid: dataset is required for ingest"))?;
    let space = ctx.cfg.labels()?;
    let out_path = ctx.out(CASES_FILE);
    if out_path.exists() && !ctx.force {
        println!("{} exists, skipping (use --force to overwrite)", out_path.display());
        return Ok(());
    }
    let outcome = crate::corpus::load_dataset(&dataset.path, dataset.adapter, &space)?;
    outcome.cases.write_jsonl(&out_path)?;
    println!(
        "wrote {} ({} cases, {} skipped rows)",
        out_path.display(),
        outcome.report.valid,
        outcome.report.skipped.len()
    );
    write_json(&ctx.out(LOAD_REPORT_FILE), &outcome.report, true)?;
    Ok(())
}

fn cmd_sample(ctx: &Ctx, cases_flag: &Option<PathBuf>) -> Result<()> {
    let cases = ctx.cases_from(cases_flag, CASES_FILE)?;
    let n = ctx
        .n
        .ok_or_else(|| anyhow!("ConfigInvalid: sample needs --n or run.n in the config"))?;
    let out_path = ctx.out(SAMPLE_FILE);
    if out_path.exists() && !ctx.force {
        println!("{} exists, skipping (use --force to overwrite)", out_path.display());
        return Ok(());
    }
    let sample = cases.stratified_sample(n, ctx.seed)?;
    sample.write_jsonl(&out_path)?;
    println!("wrote {} ({} of {} cases)", out_path.display(), sample.len(), cases.len());
    Ok(())
}

fn cmd_split(ctx: &Ctx, cases_flag: &Option<PathBuf>, dev_fraction: Option<f64>) -> Result<()> {
    let cases = ctx.cases_from(cases_flag, CASES_FILE)?;
    let fraction = dev_fraction.unwrap_or(ctx.cfg.run.dev_fraction);
    let dev_path = ctx.out(DEV_FILE);
    let eval_path = ctx.out(EVAL_FILE);
    if (dev_path.exists() || eval_path.exists()) && !ctx.force {
        println!("split outputs exist, skipping (use --force to overwrite)");
        return Ok(());
    }
    let (dev, eval) = cases.split_isolated(fraction, ctx.seed)?;
    dev.write_jsonl(&dev_path)?;
    eval.write_jsonl(&eval_path)?;
    println!(
        "wrote {} ({} cases) and {} ({} cases)",
        dev_path.display(),
        dev.len(),
        eval_path.display(),
        eval.len()
    );
    Ok(())
}

fn execute_run(
    ctx: &Ctx,
    cases: &CaseSet,
    strategies: &[Strategy],
    journal_path: &Path,
    result_path: &Path,
    run_id: &str,
) -> Result<runner::RunResult> {
    let space = ctx.cfg.labels()?;
    let profile = ctx.cfg.profile()?;
    let provider = modelio::build_provider(&ctx.cfg.model, &space)?;
    let plan = RunPlan::new(run_id, cases, strategies, &ctx.cfg.model.model_id, ctx.seed);
    let inputs = RunInputs {
        plan: &plan,
        cases,
        strategies,
        profile: &profile,
        space: &space,
        provider: provider.as_ref(),
        price: ctx.cfg.model.price,
        concurrency: ctx.cfg.run.concurrency,
    };
    let result = runner::run_paired(&inputs, journal_path)?;
    write_json(result_path, &result, true)?;
    for arm in &result.arms {
        println!(
            "arm {}: {}/{} correct ({:.1}%)",
            arm.strategy_id,
            arm.n_correct,
            arm.n_resolved,
            arm.accuracy * 100.0
        );
    }
    Ok(result)
}

fn maybe_truncate(ctx: &Ctx, cases: CaseSet) -> Result<CaseSet> {
    match ctx.n {
        Some(n) if n < cases.len() => Ok(cases.stratified_sample(n, ctx.seed)?),
        _ => Ok(cases),
    }
}

fn cmd_baseline(ctx: &Ctx, cases_flag: &Option<PathBuf>) -> Result<()> {
    let cases = maybe_truncate(ctx, ctx.cases_from(cases_flag, DEV_FILE)?)?;
    let domain = ctx.cfg.profile()?.domain;
    let strategies = vec![Strategy::baseline(domain)];
    execute_run(
        ctx,
        &cases,
        &strategies,
        &ctx.out(BASELINE_JOURNAL_FILE),
        &ctx.out(BASELINE_RESULT_FILE),
        "baseline",
    )?;
    Ok(())
}

fn prediction_from_record(record: &JournalRecord) -> Prediction {
    Prediction {
        case_id: record.case_id.clone(),
        strategy_id: record.strategy_id.clone(),
        model_id: record.model_id.clone(),
        raw_text: record.response_text.clone(),
        extracted: match &record.predicted {
            Some(label) => Extracted::Label(label.clone()),
            None => Extracted::Unparseable,
        },
        correct: record.correct,
        usage: record.usage,
        latency_ms: record.latency_ms,
    }
}

fn cmd_classify_errors(
    ctx: &Ctx,
    journal_flag: &Option<PathBuf>,
    cases_flag: &Option<PathBuf>,
    arm: &Option<String>,
) -> Result<()> {
    let journal_path = journal_flag
        .clone()
        .unwrap_or_else(|| ctx.out(BASELINE_JOURNAL_FILE));
    let (header, cells) = runner::load_journal(&journal_path)?;
    let cases = ctx.cases_from(cases_flag, DEV_FILE)?;
    let rubric = ctx.cfg.rubric()?;
    let arm_id = arm
        .clone()
        .or_else(|| Some(header.strategy_ids[0].clone()))
        .unwrap();
    let mut errors = Vec::new();
    for cell in cells.iter().filter(|c| c.strategy_id == arm_id && !c.correct) {
        let case = cases.find(&cell.case_id).ok_or_else(|| {
            anyhow!(
                "ConfigInvalid: journal case {} not found in the case set; \
                 pass the case file this journal was run on",
                cell.case_id
            )
        })?;
        errors.push(taxonomy::classify_error(
            case,
            &prediction_from_record(cell),
            &rubric,
        )?);
    }
    if errors.is_empty() {
        bail!("EmptyErrorList: arm {arm_id} has no failed cells in {}", journal_path.display());
    }
    let errors_path = ctx.out(ERRORS_FILE);
    if errors_path.exists() && !ctx.force {
        println!("{} exists, skipping (use --force to overwrite)", errors_path.display());
        return Ok(());
    }
    taxonomy::write_error_journal(&errors_path, &errors)?;
    println!("wrote {} ({} errors)", errors_path.display(), errors.len());
    let mut dist = taxonomy::distribution(&errors)?;
    dist.origin = cases.split.map(DataOrigin::from);
    write_json(&ctx.out(DISTRIBUTION_FILE), &dist, true)?;
    Ok(())
}

fn cmd_derive_strategy(
    ctx: &Ctx,
    distribution_flag: &Option<PathBuf>,
    threshold: f64,
) -> Result<()> {
    let dist_path = distribution_flag
        .clone()
        .unwrap_or_else(|| ctx.out(DISTRIBUTION_FILE));
    let raw = std::fs::read_to_string(&dist_path)
        .with_context(|| format!("reading {}", dist_path.display()))?;
    let dist: ErrorDistribution = serde_json::from_str(&raw)
        .with_context(|| format!("parsing {}", dist_path.display()))?;
    let profile = ctx.cfg.profile()?;
    let blocks_path = ctx
        .cfg
        .blocks_path
        .as_ref()
        .ok_or_else(|| anyhow!("ConfigInvalid: blocks_path is required for derive-strategy"))?;
    let library = strategy::load_blocks(blocks_path)?;
    let derivation = strategy::derive_interventions(&dist, &profile, &library, threshold)?;
    for d in &derivation.trace {
        println!(
            "layer {}: share {:.3} {} threshold {:.2} -> {}",
            d.layer,
            d.share,
            if d.included { ">=" } else { "<" },
            d.threshold,
            if d.included { "included" } else { "excluded" }
        );
    }
    write_json(&ctx.out(DERIVED_STRATEGY_FILE), &derivation.strategy, ctx.force)?;
    write_json(&ctx.out(DERIVATION_TRACE_FILE), &derivation.trace, true)?;
    Ok(())
}

fn cmd_run(
    ctx: &Ctx,
    cases_flag: &Option<PathBuf>,
    strategy_file: &Option<PathBuf>,
    ablation: bool,
) -> Result<()> {
    let cases = maybe_truncate(ctx, ctx.cases_from(cases_flag, EVAL_FILE)?)?;
    let enhanced = ctx.enhanced_strategy(strategy_file)?;
    let strategies = ctx.arms(enhanced, ablation);
    execute_run(
        ctx,
        &cases,
        &strategies,
        &ctx.out(RUN_JOURNAL_FILE),
        &ctx.out(RUN_RESULT_FILE),
        "paired",
    )?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsDocument {
    run_id: String,
    model_id: String,
    baseline_strategy: String,
    arms: BTreeMap<String, stats::StatsSummary>,
}

fn cmd_stats(ctx: &Ctx, journal_flag: &Option<PathBuf>) -> Result<()> {
    let journal_path = journal_flag
        .clone()
        .unwrap_or_else(|| ctx.out(RUN_JOURNAL_FILE));
    let (header, cells) = runner::load_journal(&journal_path)?;
    let result = runner::result_from_journal(&header, &cells, ctx.cfg.model.price);
    let enhanced_ids: Vec<String> = header.strategy_ids.iter().skip(1).cloned().collect();
    if enhanced_ids.is_empty() {
        bail!("InvalidPlan: journal {} has no enhanced arm", journal_path.display());
    }
    let m = enhanced_ids.len();
    let mut arms = BTreeMap::new();
    for id in &enhanced_ids {
        let outcomes = runner::paired_outcomes(&result, id)?;
        arms.insert(id.clone(), stats::summarize(&outcomes, m)?);
    }
    for (id, summary) in &arms {
        println!(
            "{}: {:.1}% -> {:.1}% ({}{}), p = {:.3e} (adjusted {:.3e})",
            id,
            summary.baseline_acc * 100.0,
            summary.enhanced_acc * 100.0,
            report::fmt_signed_pp1(summary.delta_pp),
            report::significance_tier(summary.mcnemar.p_value),
            summary.mcnemar.p_value,
            summary.p_adjusted
        );
    }
    let doc = StatsDocument {
        run_id: header.run_id.clone(),
        model_id: header.model_id.clone(),
        baseline_strategy: header.strategy_ids[0].clone(),
        arms,
    };
    write_json(&ctx.out(STATS_FILE), &doc, true)?;
    Ok(())
}

fn cmd_advise(
    ctx: &Ctx,
    stats_flag: &Option<PathBuf>,
    task_kind: Option<TaskKindArg>,
    cases_flag: &Option<PathBuf>,
) -> Result<()> {
    let stats_path = stats_flag.clone().unwrap_or_else(|| ctx.out(STATS_FILE));
    let raw = std::fs::read_to_string(&stats_path)
        .with_context(|| format!("reading {}", stats_path.display()))?;
    let doc: StatsDocument = serde_json::from_str(&raw)
        .with_context(|| format!("parsing {}", stats_path.display()))?;
    let arm_id = match &ctx.strategy_id {
        Some(id) => id.clone(),
        None => doc
            .arms
            .keys()
            .last()
            .ok_or_else(|| anyhow!("InvalidPlan: stats file has no arms"))?
            .clone(),
    };
    let summary = doc
        .arms
        .get(&arm_id)
        .ok_or_else(|| anyhow!("InvalidPlan: no arm {arm_id:?} in {}", stats_path.display()))?;
    let kind: TaskKind = match task_kind {
        Some(k) => k.into(),
        None => match ctx.cfg.advise.task_kind {
            Some(k) => k,
            None => {
                let cases = ctx.cases_from(cases_flag, EVAL_FILE)?;
                cases.cases[0].task_kind
            }
        },
    };
    let policy = ctx.cfg.policy()?;
    policy.validate()?;
    let verdict = advisor::categorize(summary.baseline_acc, kind, summary.n, &policy);
    let effect = advisor::predict_band_effect(summary.baseline_acc, &policy);
    println!(
        "{}: {:?} -> {:?} ({})",
        arm_id, verdict.category, verdict.recommendation, verdict.rationale
    );
    let doc = serde_json::json!({
        "arm": arm_id,
        "baseline_acc": summary.baseline_acc,
        "n": summary.n,
        "task_kind": kind,
        "verdict": verdict,
        "band_effect": effect,
    });
    write_json(&ctx.out(VERDICT_FILE), &doc, true)?;
    Ok(())
}

fn cmd_report(ctx: &Ctx, rows_flag: &Option<PathBuf>, dists_flag: &Option<PathBuf>) -> Result<()> {
    let rows: Vec<ResultsTableRow> = match rows_flag {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let stats_path = ctx.out(STATS_FILE);
            let raw = std::fs::read_to_string(&stats_path).with_context(|| {
                format!(
                    "reading {} (run `hec stats` first or pass --rows)",
                    stats_path.display()
                )
            })?;
            let doc: StatsDocument = serde_json::from_str(&raw)?;
            let domain = ctx
                .cfg
                .dataset
                .as_ref()
                .map(|d| d.adapter.domain().to_string())
                .unwrap_or_else(|| "unknown".into());
            doc.arms
                .iter()
                .map(|(id, s)| ResultsTableRow {
                    experiment: format!("{} ({})", doc.model_id, id),
                    domain: domain.clone(),
                    n: s.n,
                    baseline_acc: s.baseline_acc,
                    enhanced_acc: s.enhanced_acc,
                    delta_pp: s.delta_pp,
                    p_value: Some(s.mcnemar.p_value),
                })
                .collect()
        }
    };
    let tsv = report::emit_results_table(&rows, TableFormat::Tsv)?;
    let md = report::emit_results_table(&rows, TableFormat::Markdown)?;
    write_output(&ctx.out(REPORT_TSV_FILE), tsv.as_bytes(), ctx.force)?;
    write_output(&ctx.out(REPORT_MD_FILE), md.as_bytes(), ctx.force)?;

    let dists_path = dists_flag.clone().unwrap_or_else(|| ctx.out(DISTRIBUTION_FILE));
    if dists_path.exists() {
        let raw = std::fs::read_to_string(&dists_path)?;
        let dists: Vec<(String, ErrorDistribution)> =
            if let Ok(single) = serde_json::from_str::<ErrorDistribution>(&raw) {
                let name = ctx
                    .cfg
                    .dataset
                    .as_ref()
                    .map(|d| d.adapter.domain().to_string())
                    .unwrap_or_else(|| "domain".into());
                vec![(name, single)]
            } else {
                serde_json::from_str(&raw)
                    .with_context(|| format!("parsing {}", dists_path.display()))?
            };
        let figure = report::emit_distribution_figure(&dists);
        write_output(&ctx.out(FIGURE_SVG_FILE), figure.svg.as_bytes(), ctx.force)?;
        write_output(&ctx.out(FIGURE_CSV_FILE), figure.csv.as_bytes(), ctx.force)?;
    }

    let journal_path = ctx.out(RUN_JOURNAL_FILE);
    let mut manifest_runs = Vec::new();
    if journal_path.exists() {
        let (header, cells) = runner::load_journal(&journal_path)?;
        let result = runner::result_from_journal(&header, &cells, ctx.cfg.model.price);
        let plan = RunPlan {
            run_id: header.run_id.clone(),
            case_set_hash: header.case_set_hash.clone(),
            strategy_ids: header.strategy_ids.clone(),
            model_id: header.model_id.clone(),
            seed: header.seed,
            created_at_ms: header.created_at_ms,
        };
        let strategies: Vec<Strategy> = match ctx.enhanced_strategy(&None) {
            Ok(enhanced) => ctx.arms(enhanced, header.strategy_ids.len() > 2),
            Err(_) => Vec::new(),
        };
        manifest_runs.push(report::manifest_run(
            &plan,
            Some(&result),
            &strategies,
            &ctx.cfg.model,
        ));
    }
    write_output(
        &ctx.out(MANIFEST_FILE),
        report::emit_manifest(&manifest_runs).as_bytes(),
        true,
    )?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| anyhow!("ConfigInvalid: cannot parse {what} entry {s:?}"))
        })
        .collect()
}

fn cmd_sweep(ctx: &Ctx, p0_grid: &str, cases_per_point: usize, seeds: &str) -> Result<()> {
    let profile = ctx
        .cfg
        .model
        .synthetic
        .clone()
        .ok_or_else(|| anyhow!("ConfigInvalid: sweep needs model.synthetic in the config"))?;
    let grid: Vec<f64> = parse_list(p0_grid, "p0_grid")?;
    let seeds: Vec<u64> = parse_list(seeds, "seeds")?;
    let result = advisor::boundary_sweep(&profile, &grid, cases_per_point, &seeds)?;
    let mut csv = String::from("p0,mean_delta_pp,sd,n_seeds\n");
    for row in &result.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.p0, row.mean_delta_pp, row.sd_delta_pp, row.n_seeds
        ));
        println!(
            "p0 {:.2}: mean delta {:+.2}pp (sd {:.2})",
            row.p0, row.mean_delta_pp, row.sd_delta_pp
        );
    }
    if let Some(r) = result.fitted_r {
        println!("fitted r = {r:.3}");
    }
    write_output(&ctx.out(SWEEP_CSV_FILE), csv.as_bytes(), ctx.force)?;
    write_json(&ctx.out(SWEEP_JSON_FILE), &result, ctx.force)?;
    Ok(())
}

fn cmd_estimate_cost(
    ctx: &Ctx,
    cases_flag: &Option<PathBuf>,
    strategy_file: &Option<PathBuf>,
    ablation: bool,
) -> Result<()> {
    let cases = maybe_truncate(ctx, ctx.cases_from(cases_flag, CASES_FILE)?)?;
    let enhanced = ctx.enhanced_strategy(strategy_file)?;
    let strategies = ctx.arms(enhanced, ablation);
    let profile = ctx.cfg.profile()?;
    let estimate = modelio::cost_estimate(&cases, &strategies, &profile, &ctx.cfg.model)?;
    println!(
        "{} cells, {} input tokens, {} output tokens (cap), estimated cost {:.4}",
        estimate.cells, estimate.input_tokens, estimate.output_tokens, estimate.total_cost
    );
    write_json(&ctx.out(COST_FILE), &estimate, true)?;
    Ok(())
}
