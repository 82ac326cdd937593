//! Paired experiment execution: identical case sets under every strategy
//! arm, an append-only JSON Lines journal for crash-safe resumption, a
//! bounded worker pool feeding one serialized writer, and cost accounting
//! from journaled usage.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseSet, Extracted, LabelSpace};
use crate::hashing;
use crate::modelio::{predict, ModelError, PriceTable, Provider, TokenUsage};
use crate::stats::PairedOutcome;
use crate::strategy::{compose, DomainProfile, Strategy, StrategyError};

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("InvalidPlan: {0}")]
    InvalidPlan(String),
    #[error("PlanMismatch: journal fingerprint {found} does not match plan {expected}")]
    PlanMismatch { expected: String, found: String },
    #[error("CorruptJournal: {path} line {line}: {detail}")]
    CorruptJournal {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("ProviderExhausted: cell ({case_id}, {strategy_id}): {source}")]
    ProviderExhausted {
        case_id: String,
        strategy_id: String,
        #[source]
        source: ModelError,
    },
    #[error("IncompleteArm: strategy {strategy_id} resolved {resolved} of {total} cells")]
    IncompleteArm {
        strategy_id: String,
        resolved: usize,
        total: usize,
    },
    #[error("Compose: {0}")]
    Compose(#[from] StrategyError),
    #[error("Journal io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What a run is: cases, arms, model, seed. The fingerprint guards
/// journals against silently mixing runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunPlan {
    pub run_id: String,
    pub case_set_hash: String,
    pub strategy_ids: Vec<String>,
    pub model_id: String,
    pub seed: u64,
    pub created_at_ms: u64,
}

impl RunPlan {
    pub fn new(run_id: &str, cases: &CaseSet, strategies: &[Strategy], model_id: &str, seed: u64) -> Self {
        Self {
            run_id: run_id.to_string(),
            case_set_hash: cases.membership_hash(),
            strategy_ids: strategies.iter().map(|s| s.strategy_id.clone()).collect(),
            model_id: model_id.to_string(),
            seed,
            created_at_ms: now_ms(),
        }
    }

    /// hash(case-set hash || strategy ids || model_id || seed).
    pub fn fingerprint(&self) -> String {
        let ids = self.strategy_ids.join("\x1f");
        hashing::hex64(hashing::fnv1a_concat(&[
            self.case_set_hash.as_bytes(),
            &[0x1f],
            ids.as_bytes(),
            &[0x1f],
            self.model_id.as_bytes(),
            &[0x1f],
            &self.seed.to_le_bytes(),
        ]))
    }

    /// Per-case seed, stable under resumption and scheduling order.
    pub fn case_seed(&self, case_id: &str) -> u64 {
        hashing::keyed_hash(case_id, self.seed)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JournalHeader {
    pub run_id: String,
    pub fingerprint: String,
    pub case_set_hash: String,
    pub strategy_ids: Vec<String>,
    pub model_id: String,
    pub seed: u64,
    pub case_ids: Vec<String>,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Unparseable,
}

/// One completed (case, strategy) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JournalRecord {
    pub run_id: String,
    pub case_id: String,
    pub strategy_id: String,
    pub model_id: String,
    pub attempt: u32,
    pub render_hash: String,
    pub response_text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub parse_status: ParseStatus,
    pub predicted: Option<String>,
    pub correct: bool,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum JournalLine {
    Header(JournalHeader),
    Cell(JournalRecord),
}

/// Per-arm aggregate aligned with `RunResult::case_ids`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub strategy_id: String,
    /// One slot per case; `None` marks an unresolved cell.
    pub outcomes: Vec<Option<bool>>,
    pub n_resolved: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub fingerprint: String,
    pub model_id: String,
    pub case_ids: Vec<String>,
    pub arms: Vec<ArmResult>,
    pub complete: bool,
    pub usage: TokenUsage,
    /// Journal usage priced by the table; absent without one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_cost: Option<f64>,
}

impl RunResult {
    pub fn arm(&self, strategy_id: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.strategy_id == strategy_id)
    }

    pub fn baseline_arm(&self) -> &ArmResult {
        &self.arms[0]
    }
}

/// Everything a run needs. The first strategy is the baseline arm.
pub struct RunInputs<'a> {
    pub plan: &'a RunPlan,
    pub cases: &'a CaseSet,
    pub strategies: &'a [Strategy],
    pub profile: &'a DomainProfile,
    pub space: &'a LabelSpace,
    pub provider: &'a dyn Provider,
    pub price: Option<PriceTable>,
    pub concurrency: usize,
}

fn validate(inputs: &RunInputs) -> Result<(), RunnerError> {
    let plan = inputs.plan;
    if inputs.strategies.is_empty() {
        return Err(RunnerError::InvalidPlan("empty strategy list".into()));
    }
    let ids: Vec<String> = inputs
        .strategies
        .iter()
        .map(|s| s.strategy_id.clone())
        .collect();
    if ids != plan.strategy_ids {
        return Err(RunnerError::InvalidPlan(format!(
            "plan strategies {:?} do not match inputs {:?}",
            plan.strategy_ids, ids
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in inputs.strategies {
        s.validate()?;
        if !seen.insert(&s.strategy_id) {
            return Err(RunnerError::InvalidPlan(format!(
                "duplicate strategy id {:?}",
                s.strategy_id
            )));
        }
        if s.domain != inputs.profile.domain {
            return Err(RunnerError::InvalidPlan(format!(
                "strategy {} domain {} does not match profile domain {}",
                s.strategy_id, s.domain, inputs.profile.domain
            )));
        }
    }
    if plan.case_set_hash != inputs.cases.membership_hash() {
        return Err(RunnerError::InvalidPlan(format!(
            "plan case-set hash {} does not match cases {}",
            plan.case_set_hash,
            inputs.cases.membership_hash()
        )));
    }
    if inputs.cases.is_empty() {
        return Err(RunnerError::InvalidPlan("empty case set".into()));
    }
    Ok(())
}

/// Journal contents plus the byte length of the clean prefix (a truncated
/// final line is tolerated and dropped; earlier corruption is fatal).
struct LoadedJournal {
    header: JournalHeader,
    cells: Vec<JournalRecord>,
    clean_len: u64,
}

fn load_journal_lenient(path: &Path) -> Result<Option<LoadedJournal>, RunnerError> {
    let raw = match std::fs::read(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(source) => {
            return Err(RunnerError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    if raw.is_empty() {
        return Ok(None);
    }
    let text = String::from_utf8_lossy(&raw);
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut header: Option<JournalHeader> = None;
    let mut cells = Vec::new();
    let mut clean_len = 0u64;
    for (i, line) in lines.iter().enumerate() {
        let is_last = i + 1 == lines.len();
        // A final line without its newline is a torn write even if the
        // JSON happens to parse; drop it and let the cell re-run.
        if is_last && !line.ends_with('\n') {
            break;
        }
        let parsed: Result<JournalLine, _> = serde_json::from_str(line.trim_end());
        match parsed {
            Ok(JournalLine::Header(h)) if i == 0 => header = Some(h),
            Ok(JournalLine::Header(_)) => {
                return Err(RunnerError::CorruptJournal {
                    path: path.display().to_string(),
                    line: i + 1,
                    detail: "header record past line 1".into(),
                })
            }
            Ok(JournalLine::Cell(c)) if i > 0 => cells.push(c),
            Ok(JournalLine::Cell(_)) => {
                return Err(RunnerError::CorruptJournal {
                    path: path.display().to_string(),
                    line: 1,
                    detail: "first line is not a header record".into(),
                })
            }
            Err(e) => {
                if is_last {
                    break; // torn final write: drop it
                }
                return Err(RunnerError::CorruptJournal {
                    path: path.display().to_string(),
                    line: i + 1,
                    detail: e.to_string(),
                });
            }
        }
        clean_len += line.len() as u64;
    }
    match header {
        Some(header) => Ok(Some(LoadedJournal {
            header,
            cells,
            clean_len,
        })),
        // Only a torn header line: nothing usable, start fresh.
        None => Ok(None),
    }
}

/// Read a complete journal for downstream analysis (stats, reports).
pub fn load_journal(path: &Path) -> Result<(JournalHeader, Vec<JournalRecord>), RunnerError> {
    match load_journal_lenient(path)? {
        Some(j) => Ok((j.header, j.cells)),
        None => Err(RunnerError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "journal missing or empty"),
        }),
    }
}

struct CellTask<'a> {
    case: &'a crate::corpus::CaseRecord,
    strategy: &'a Strategy,
}

fn execute_cell(inputs: &RunInputs, task: &CellTask) -> Result<JournalRecord, RunnerError> {
    let plan = inputs.plan;
    let prompt = compose(task.strategy, inputs.profile, task.case)?;
    let layers = task.strategy.layers();
    let completion = inputs
        .provider
        .complete(task.case, &prompt, &layers, plan.case_seed(&task.case.case_id))
        .map_err(|source| RunnerError::ProviderExhausted {
            case_id: task.case.case_id.clone(),
            strategy_id: task.strategy.strategy_id.clone(),
            source,
        })?;
    let prediction = predict(
        task.case,
        &task.strategy.strategy_id,
        &plan.model_id,
        &completion,
        inputs.space,
    );
    Ok(JournalRecord {
        run_id: plan.run_id.clone(),
        case_id: task.case.case_id.clone(),
        strategy_id: task.strategy.strategy_id.clone(),
        model_id: plan.model_id.clone(),
        attempt: completion.attempt_count,
        render_hash: prompt.render_hash,
        response_text: completion.text,
        usage: completion.usage,
        latency_ms: completion.latency_ms,
        parse_status: if prediction.extracted.is_unparseable() {
            ParseStatus::Unparseable
        } else {
            ParseStatus::Ok
        },
        predicted: match prediction.extracted {
            Extracted::Label(l) => Some(l),
            Extracted::Unparseable => None,
        },
        correct: prediction.correct,
        timestamp_ms: now_ms(),
    })
}

/// Execute every pending (case x strategy) cell, appending each record to
/// the journal before it is counted. Resumes transparently from a journal
/// matching the plan fingerprint; a journal from a different plan is a
/// hard [`RunnerError::PlanMismatch`].
pub fn run_paired(inputs: &RunInputs, journal_path: &Path) -> Result<RunResult, RunnerError> {
    validate(inputs)?;
    let plan = inputs.plan;
    let fingerprint = plan.fingerprint();

    let mut completed: BTreeMap<(String, String), JournalRecord> = BTreeMap::new();
    let mut clean_len = None;
    if let Some(existing) = load_journal_lenient(journal_path)? {
        if existing.header.fingerprint != fingerprint {
            return Err(RunnerError::PlanMismatch {
                expected: fingerprint,
                found: existing.header.fingerprint,
            });
        }
        clean_len = Some(existing.clean_len);
        for cell in existing.cells {
            completed
                .entry((cell.case_id.clone(), cell.strategy_id.clone()))
                .or_insert(cell);
        }
    }

    let io_err = |source: std::io::Error| RunnerError::Io {
        path: journal_path.display().to_string(),
        source,
    };
    let mut file = match clean_len {
        Some(len) => {
            let f = OpenOptions::new()
                .write(true)
                .open(journal_path)
                .map_err(io_err)?;
            f.set_len(len).map_err(io_err)?;
            let mut f = OpenOptions::new()
                .append(true)
                .open(journal_path)
                .map_err(io_err)?;
            f.flush().map_err(io_err)?;
            f
        }
        None => {
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(journal_path)
                .map_err(io_err)?;
            let header = JournalHeader {
                run_id: plan.run_id.clone(),
                fingerprint: fingerprint.clone(),
                case_set_hash: plan.case_set_hash.clone(),
                strategy_ids: plan.strategy_ids.clone(),
                model_id: plan.model_id.clone(),
                seed: plan.seed,
                case_ids: inputs.cases.case_ids(),
                created_at_ms: plan.created_at_ms,
            };
            writeln!(
                f,
                "{}",
                serde_json::to_string(&JournalLine::Header(header)).expect("header serializes")
            )
            .map_err(io_err)?;
            f.flush().map_err(io_err)?;
            f
        }
    };

    let mut pending = Vec::new();
    for case in &inputs.cases.cases {
        for strategy in inputs.strategies {
            if !completed.contains_key(&(case.case_id.clone(), strategy.strategy_id.clone())) {
                pending.push(CellTask { case, strategy });
            }
        }
    }

    let mut first_error: Option<RunnerError> = None;
    if !pending.is_empty() {
        let workers = inputs.concurrency.max(1).min(pending.len());
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel::<Result<JournalRecord, RunnerError>>();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let pending = &pending;
                let next = &next;
                let stop = &stop;
                scope.spawn(move || loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= pending.len() {
                        break;
                    }
                    if tx.send(execute_cell(inputs, &pending[i])).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            // Single serialized writer: every record is appended and
            // flushed before it is counted.
            for result in rx {
                match result {
                    Ok(record) => {
                        let line = serde_json::to_string(&JournalLine::Cell(record.clone()))
                            .expect("cell serializes");
                        if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                            stop.store(true, Ordering::Relaxed);
                            if first_error.is_none() {
                                first_error = Some(io_err(e));
                            }
                            continue;
                        }
                        completed.insert(
                            (record.case_id.clone(), record.strategy_id.clone()),
                            record,
                        );
                    }
                    Err(e) => {
                        stop.store(true, Ordering::Relaxed);
                        if first_error.is_none() {
                            first_error = Some(e);
                        }
                    }
                }
            }
        });
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    Ok(assemble(
        plan,
        &fingerprint,
        &inputs.cases.case_ids(),
        &plan.strategy_ids,
        &completed,
        inputs.price,
    ))
}

/// Resume a previously interrupted run. The journal must already exist and
/// match the plan; completed cells are skipped, and for deterministic
/// providers the final result is identical to an uninterrupted run.
pub fn resume(inputs: &RunInputs, journal_path: &Path) -> Result<RunResult, RunnerError> {
    if load_journal_lenient(journal_path)?.is_none() {
        return Err(RunnerError::InvalidPlan(format!(
            "resume requires an existing journal at {}",
            journal_path.display()
        )));
    }
    run_paired(inputs, journal_path)
}

fn assemble(
    plan: &RunPlan,
    fingerprint: &str,
    case_ids: &[String],
    strategy_ids: &[String],
    cells: &BTreeMap<(String, String), JournalRecord>,
    price: Option<PriceTable>,
) -> RunResult {
    let mut arms = Vec::with_capacity(strategy_ids.len());
    let mut usage = TokenUsage::default();
    let mut complete = true;
    for strategy_id in strategy_ids {
        let outcomes: Vec<Option<bool>> = case_ids
            .iter()
            .map(|case_id| {
                cells
                    .get(&(case_id.clone(), strategy_id.clone()))
                    .map(|r| r.correct)
            })
            .collect();
        let n_resolved = outcomes.iter().filter(|o| o.is_some()).count();
        let n_correct = outcomes.iter().filter(|o| **o == Some(true)).count();
        if n_resolved < case_ids.len() {
            complete = false;
        }
        arms.push(ArmResult {
            strategy_id: strategy_id.clone(),
            outcomes,
            n_resolved,
            n_correct,
            accuracy: if n_resolved > 0 {
                n_correct as f64 / n_resolved as f64
            } else {
                0.0
            },
        });
    }
    for record in cells.values() {
        usage.input_tokens += record.usage.input_tokens;
        usage.output_tokens += record.usage.output_tokens;
    }
    let total_cost = price.map(|p| {
        usage.input_tokens as f64 * p.per_input_token
            + usage.output_tokens as f64 * p.per_output_token
    });
    RunResult {
        run_id: plan.run_id.clone(),
        fingerprint: fingerprint.to_string(),
        model_id: plan.model_id.clone(),
        case_ids: case_ids.to_vec(),
        arms,
        complete,
        usage,
        total_cost,
    }
}

/// Rebuild a RunResult from a journal alone (no provider), for the stats
/// and report stages.
pub fn result_from_journal(
    header: &JournalHeader,
    cells: &[JournalRecord],
    price: Option<PriceTable>,
) -> RunResult {
    let plan = RunPlan {
        run_id: header.run_id.clone(),
        case_set_hash: header.case_set_hash.clone(),
        strategy_ids: header.strategy_ids.clone(),
        model_id: header.model_id.clone(),
        seed: header.seed,
        created_at_ms: header.created_at_ms,
    };
    let mut map = BTreeMap::new();
    for cell in cells {
        map.entry((cell.case_id.clone(), cell.strategy_id.clone()))
            .or_insert_with(|| cell.clone());
    }
    assemble(
        &plan,
        &header.fingerprint,
        &header.case_ids,
        &header.strategy_ids,
        &map,
        price,
    )
}

/// Per-case (baseline, enhanced) correctness for one enhanced arm. Both
/// arms must be fully resolved.
pub fn paired_outcomes(
    result: &RunResult,
    enhanced_id: &str,
) -> Result<Vec<PairedOutcome>, RunnerError> {
    let total = result.case_ids.len();
    let baseline = result.baseline_arm();
    let enhanced = result
        .arm(enhanced_id)
        .ok_or_else(|| RunnerError::InvalidPlan(format!("no arm named {enhanced_id:?}")))?;
    for arm in [baseline, enhanced] {
        if arm.n_resolved < total {
            return Err(RunnerError::IncompleteArm {
                strategy_id: arm.strategy_id.clone(),
                resolved: arm.n_resolved,
                total,
            });
        }
    }
    Ok(result
        .case_ids
        .iter()
        .enumerate()
        .map(|(i, case_id)| PairedOutcome {
            case_id: case_id.clone(),
            baseline_correct: baseline.outcomes[i].expect("resolved"),
            enhanced_correct: enhanced.outcomes[i].expect("resolved"),
        })
        .collect())
}
