//! Corpus ingestion, normalization, and leak-proof sampling.
//!
//! Four dataset adapters feed one shared [`CaseRecord`] shape. Sampling and
//! splitting are seed-deterministic: within-stratum order comes from a keyed
//! FNV-1a hash of `(case_id, seed)`, and per-stratum allocation uses exact
//! largest-remainder arithmetic.

mod adapters;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing;

pub use adapters::AdapterId;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("FileUnreadable: {path}: {source}")]
    FileUnreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("UnknownAdapter: {0:?} is not a known adapter id")]
    UnknownAdapter(String),
    #[error("EmptyDataset: {path} produced zero valid rows ({detail})")]
    EmptyDataset { path: String, detail: String },
    #[error("LabelOutOfSpace: row {row}: label {label:?} is not in the {domain} label space and no alias matches")]
    LabelOutOfSpace {
        row: usize,
        label: String,
        domain: Domain,
    },
    #[error("SampleTooLarge: requested {requested} from a set of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("DegenerateSplit: dev_fraction {fraction} on {total} cases leaves an empty side (dev={dev})")]
    DegenerateSplit {
        fraction: f64,
        total: usize,
        dev: usize,
    },
    #[error("InvalidLabelSpace: {0}")]
    InvalidLabelSpace(String),
    #[error("MalformedCaseSet: {path}: line {line}: {detail}")]
    MalformedCaseSet {
        path: String,
        line: usize,
        detail: String,
    },
}

/// The four evaluation domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Medical,
    LegalClassification,
    PoliticalBias,
    LegalReasoning,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::Medical => "medical",
            Domain::LegalClassification => "legal_classification",
            Domain::PoliticalBias => "political_bias",
            Domain::LegalReasoning => "legal_reasoning",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleLabel,
    MultiLabel,
    MultipleChoice,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::SingleLabel => "single_label",
            TaskKind::MultiLabel => "multi_label",
            TaskKind::MultipleChoice => "multiple_choice",
        };
        f.write_str(s)
    }
}

/// One normalized evaluation item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub domain: Domain,
    pub task_kind: TaskKind,
    pub input_text: String,
    /// Present iff `task_kind == MultipleChoice`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    /// Canonical gold labels; singleton unless `MultiLabel`.
    pub gold: BTreeSet<String>,
    pub strata_key: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl CaseRecord {
    /// Whether a canonical label counts as correct for this case.
    pub fn is_correct(&self, label: &str) -> bool {
        self.gold.contains(label)
    }
}

/// Result of normalizing a raw label or model output: either a canonical
/// label or the explicit unparseable marker. Never an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extracted {
    Label(String),
    Unparseable,
}

impl Extracted {
    pub fn as_label(&self) -> Option<&str> {
        match self {
            Extracted::Label(l) => Some(l),
            Extracted::Unparseable => None,
        }
    }

    pub fn is_unparseable(&self) -> bool {
        matches!(self, Extracted::Unparseable)
    }
}

/// The label vocabulary for a domain, with a case-insensitive alias table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSpace {
    pub domain: Domain,
    pub canonical_labels: Vec<String>,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

impl LabelSpace {
    pub fn new(
        domain: Domain,
        canonical_labels: Vec<String>,
        aliases: BTreeMap<String, String>,
    ) -> Result<Self, CorpusError> {
        let space = Self {
            domain,
            canonical_labels,
            aliases,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.canonical_labels.is_empty() {
            return Err(CorpusError::InvalidLabelSpace(
                "canonical_labels must be non-empty".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for label in &self.canonical_labels {
            if !seen.insert(canon_key(label)) {
                return Err(CorpusError::InvalidLabelSpace(format!(
                    "duplicate canonical label {label:?}"
                )));
            }
        }
        for (alias, target) in &self.aliases {
            if !self.canonical_labels.iter().any(|c| c == target) {
                return Err(CorpusError::InvalidLabelSpace(format!(
                    "alias {alias:?} points at unknown label {target:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::FileUnreadable {
            path: path.display().to_string(),
            source,
        })?;
        let space: LabelSpace = serde_json::from_str(&raw).map_err(|e| {
            CorpusError::InvalidLabelSpace(format!("{}: {e}", path.display()))
        })?;
        space.validate()?;
        Ok(space)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.canonical_labels.iter().any(|c| c == label)
    }

    /// Normalize a raw string to a canonical label.
    ///
    /// Match order: exact canonical (after trim/punctuation-strip, case
    /// folded), then alias, then unique-substring in either direction.
    pub fn normalize(&self, raw: &str) -> Extracted {
        let key = canon_key(raw);
        if key.is_empty() {
            return Extracted::Unparseable;
        }
        for c in &self.canonical_labels {
            if canon_key(c) == key {
                return Extracted::Label(c.clone());
            }
        }
        for (alias, target) in &self.aliases {
            if canon_key(alias) == key {
                return Extracted::Label(target.clone());
            }
        }
        let mut hits = self.canonical_labels.iter().filter(|c| {
            let ck = canon_key(c);
            ck.contains(&key) || key.contains(&ck)
        });
        match (hits.next(), hits.next()) {
            (Some(only), None) => Extracted::Label(only.clone()),
            _ => Extracted::Unparseable,
        }
    }
}

/// Canonical comparison key: trimmed of surrounding whitespace and ASCII
/// punctuation, lowercased. Interior punctuation is preserved.
pub fn canon_key(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase()
}

/// Where a case set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub adapter: String,
    /// FNV-1a 64 hex over the raw source bytes.
    pub content_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Development,
    Evaluation,
}

/// An ordered, immutable collection of cases with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseSet {
    pub cases: Vec<CaseRecord>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitRole>,
}

/// Skip-and-count record for rows an adapter could not use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedRow {
    pub row: usize,
    pub reason: String,
}

/// Per-load ingestion report: nothing is dropped silently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadReport {
    pub source: String,
    pub adapter: String,
    pub total_rows: usize,
    pub valid: usize,
    pub skipped: Vec<SkippedRow>,
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub cases: CaseSet,
    pub report: LoadReport,
}

/// Load and normalize a source dataset through the named adapter.
pub fn load_dataset(
    source_path: &Path,
    adapter: AdapterId,
    space: &LabelSpace,
) -> Result<LoadOutcome, CorpusError> {
    space.validate()?;
    let bytes = std::fs::read(source_path).map_err(|source| CorpusError::FileUnreadable {
        path: source_path.display().to_string(),
        source,
    })?;
    let (mut records, skipped, total_rows) = adapters::parse(adapter, &bytes, space)?;

    // Enforce case_id uniqueness; later duplicates are skipped, not dropped
    // silently.
    let mut skipped = skipped;
    let mut seen = BTreeSet::new();
    let mut unique = Vec::with_capacity(records.len());
    for (row, rec) in records.drain(..) {
        if seen.insert(rec.case_id.clone()) {
            unique.push(rec);
        } else {
            skipped.push(SkippedRow {
                row,
                reason: format!("duplicate case_id {:?}", rec.case_id),
            });
        }
    }

    if unique.is_empty() {
        return Err(CorpusError::EmptyDataset {
            path: source_path.display().to_string(),
            detail: format!("{} rows seen, {} skipped", total_rows, skipped.len()),
        });
    }

    let provenance = Provenance {
        source: source_path.display().to_string(),
        adapter: adapter.to_string(),
        content_hash: hashing::content_hash(&bytes),
    };
    let report = LoadReport {
        source: provenance.source.clone(),
        adapter: provenance.adapter.clone(),
        total_rows,
        valid: unique.len(),
        skipped,
    };
    Ok(LoadOutcome {
        cases: CaseSet {
            cases: unique,
            provenance,
            seed: None,
            split: None,
        },
        report,
    })
}

impl CaseSet {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.iter().map(|c| c.case_id.clone()).collect()
    }

    /// Hash identifying both the source bytes and the exact ordered
    /// membership. Samples and splits share their parent's provenance
    /// hash, so membership must be part of anything that guards against
    /// mixing runs.
    pub fn membership_hash(&self) -> String {
        let ids = self.case_ids().join("\x1f");
        hashing::hex64(hashing::fnv1a_concat(&[
            self.provenance.content_hash.as_bytes(),
            &[0x1e],
            ids.as_bytes(),
        ]))
    }

    pub fn find(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    /// Strata in sorted key order, each holding indices into `cases`.
    fn strata(&self) -> BTreeMap<String, Vec<usize>> {
        let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, case) in self.cases.iter().enumerate() {
            strata.entry(case.strata_key.clone()).or_default().push(i);
        }
        strata
    }

    /// Proportional stratified sample of `n` cases, deterministic in
    /// `(self, n, seed)`.
    ///
    /// Per-stratum quotas use exact largest-remainder rounding (remainder
    /// ties go to the larger stratum, then lexicographic key order).
    /// Within each stratum, cases are ranked by `keyed_hash(case_id, seed)`.
    pub fn stratified_sample(&self, n: usize, seed: u64) -> Result<CaseSet, CorpusError> {
        if n > self.len() {
            return Err(CorpusError::SampleTooLarge {
                requested: n,
                available: self.len(),
            });
        }
        let quotas = allocate_largest_remainder(&self.strata(), n, self.len());
        let mut picked = Vec::with_capacity(n);
        for (_key, (indices, quota)) in quotas {
            let mut ordered = indices;
            ordered.sort_by_key(|&i| {
                (
                    hashing::keyed_hash(&self.cases[i].case_id, seed),
                    self.cases[i].case_id.clone(),
                )
            });
            picked.extend(ordered.into_iter().take(quota));
        }
        Ok(CaseSet {
            cases: picked.into_iter().map(|i| self.cases[i].clone()).collect(),
            provenance: self.provenance.clone(),
            seed: Some(seed),
            split: self.split,
        })
    }

    /// Stratified, seed-deterministic partition into (dev, eval).
    ///
    /// The dev side gets `floor(dev_fraction * len)` cases; both sides keep
    /// the parent provenance and are tagged with their split role.
    pub fn split_isolated(
        &self,
        dev_fraction: f64,
        seed: u64,
    ) -> Result<(CaseSet, CaseSet), CorpusError> {
        let total = self.len();
        // Epsilon guards against binary-float quotas like 0.7 * 100 =
        // 69.999999999999986 flooring one short.
        let dev_n = (dev_fraction * total as f64 + 1e-9).floor() as usize;
        if dev_n == 0 || dev_n >= total {
            return Err(CorpusError::DegenerateSplit {
                fraction: dev_fraction,
                total,
                dev: dev_n.min(total),
            });
        }
        let quotas = allocate_largest_remainder(&self.strata(), dev_n, total);
        let mut dev_idx = Vec::with_capacity(dev_n);
        let mut eval_idx = Vec::with_capacity(total - dev_n);
        for (_key, (indices, quota)) in quotas {
            let mut ordered = indices;
            ordered.sort_by_key(|&i| {
                (
                    hashing::keyed_hash(&self.cases[i].case_id, seed),
                    self.cases[i].case_id.clone(),
                )
            });
            for (rank, i) in ordered.into_iter().enumerate() {
                if rank < quota {
                    dev_idx.push(i);
                } else {
                    eval_idx.push(i);
                }
            }
        }
        let build = |indices: Vec<usize>, role: SplitRole| CaseSet {
            cases: indices.into_iter().map(|i| self.cases[i].clone()).collect(),
            provenance: self.provenance.clone(),
            seed: Some(seed),
            split: Some(role),
        };
        Ok((
            build(dev_idx, SplitRole::Development),
            build(eval_idx, SplitRole::Evaluation),
        ))
    }

    /// Write one CaseRecord per line, plus a `.meta.json` sidecar carrying
    /// provenance, seed, and split role.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for case in &self.cases {
            out.push_str(&serde_json::to_string(case).expect("CaseRecord serializes"));
            out.push('\n');
        }
        let io = |source| CorpusError::FileUnreadable {
            path: path.display().to_string(),
            source,
        };
        std::fs::write(path, out).map_err(io)?;
        let meta = serde_json::json!({
            "provenance": self.provenance,
            "seed": self.seed,
            "split": self.split,
        });
        std::fs::write(
            meta_path(path),
            serde_json::to_string_pretty(&meta).expect("meta serializes"),
        )
        .map_err(io)?;
        Ok(())
    }

    /// Read a CaseSet written by [`CaseSet::write_jsonl`]. Without the
    /// sidecar, provenance falls back to a hash of the JSONL bytes.
    pub fn read_jsonl(path: &Path) -> Result<CaseSet, CorpusError> {
        let raw = std::fs::read(path).map_err(|source| CorpusError::FileUnreadable {
            path: path.display().to_string(),
            source,
        })?;
        let text = String::from_utf8_lossy(&raw);
        let mut cases = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let case: CaseRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::MalformedCaseSet {
                    path: path.display().to_string(),
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            cases.push(case);
        }
        let mut provenance = Provenance {
            source: path.display().to_string(),
            adapter: "caseset_jsonl".into(),
            content_hash: hashing::content_hash(&raw),
        };
        let mut seed = None;
        let mut split = None;
        if let Ok(meta_raw) = std::fs::read_to_string(meta_path(path)) {
            if let Ok(meta) = serde_json::from_str::<serde_json::Value>(&meta_raw) {
                if let Ok(p) = serde_json::from_value::<Provenance>(meta["provenance"].clone()) {
                    provenance = p;
                }
                seed = meta["seed"].as_u64();
                split = serde_json::from_value(meta["split"].clone()).unwrap_or(None);
            }
        }
        if cases.is_empty() {
            return Err(CorpusError::EmptyDataset {
                path: path.display().to_string(),
                detail: "no case lines".into(),
            });
        }
        Ok(CaseSet {
            cases,
            provenance,
            seed,
            split,
        })
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Exact largest-remainder allocation of `n` slots across strata.
///
/// Quotas and remainders are kept in integer arithmetic: stratum `s` gets
/// `floor(n*|s|/total)` plus one extra for the largest `n*|s| mod total`,
/// ties broken by larger stratum then key order.
fn allocate_largest_remainder(
    strata: &BTreeMap<String, Vec<usize>>,
    n: usize,
    total: usize,
) -> Vec<(String, (Vec<usize>, usize))> {
    let mut rows: Vec<(String, Vec<usize>, usize, usize)> = strata
        .iter()
        .map(|(key, idx)| {
            let product = n as u128 * idx.len() as u128;
            let quota = (product / total as u128) as usize;
            let remainder = (product % total as u128) as usize;
            (key.clone(), idx.clone(), quota, remainder)
        })
        .collect();
    let assigned: usize = rows.iter().map(|r| r.2).sum();
    let mut leftover = n - assigned;

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[b]
            .3
            .cmp(&rows[a].3)
            .then(rows[b].1.len().cmp(&rows[a].1.len()))
            .then(rows[a].0.cmp(&rows[b].0))
    });
    for i in order {
        if leftover == 0 {
            break;
        }
        if rows[i].2 < rows[i].1.len() {
            rows[i].2 += 1;
            leftover -= 1;
        }
    }
    rows.into_iter()
        .map(|(key, idx, quota, _)| (key, (idx, quota)))
        .collect()
}

/// Generate a synthetic single-label case set for offline experiments and
/// boundary sweeps. Gold labels rotate round-robin through the label space.
pub fn synthetic_case_set(n: usize, space: &LabelSpace, domain: Domain, seed: u64) -> CaseSet {
    let labels = &space.canonical_labels;
    let cases = (0..n)
        .map(|i| {
            let gold = labels[i % labels.len()].clone();
            CaseRecord {
                case_id: format!("syn-{i:05}"),
                domain,
                task_kind: TaskKind::SingleLabel,
                input_text: format!("Synthetic evaluation item {i}."),
                choices: None,
                gold: BTreeSet::from([gold.clone()]),
                strata_key: gold,
                metadata: BTreeMap::new(),
            }
        })
        .collect();
    CaseSet {
        cases,
        provenance: Provenance {
            source: format!("synthetic:{n}"),
            adapter: "synthetic".into(),
            content_hash: hashing::hex64(hashing::keyed_hash(&format!("synthetic:{n}"), seed)),
        },
        seed: Some(seed),
        split: None,
    }
}
