//! Three-layer error taxonomy: rubric-driven classification of failed
//! predictions, layer/category distributions, and category-level reduction
//! rates between paired runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseRecord, SplitRole};
use crate::modelio::Prediction;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("NotAnError: classify_error called on a correct prediction for case {0}")]
    NotAnError(String),
    #[error("EmptyErrorList: cannot compute a distribution over zero errors")]
    EmptyErrorList,
    #[error("TooFewDomains: cross-domain summary needs at least 2 domains, got {0}")]
    TooFewDomains(usize),
    #[error("RubricMismatch: {0}")]
    RubricMismatch(String),
    #[error("InvalidRubric: {0}")]
    InvalidRubric(String),
}

/// The three error strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Knowledge,
    Reasoning,
    Complexity,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Knowledge, Layer::Reasoning, Layer::Complexity];

    pub fn letter(self) -> char {
        match self {
            Layer::Knowledge => 'K',
            Layer::Reasoning => 'R',
            Layer::Complexity => 'C',
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Layer::Knowledge => "knowledge",
            Layer::Reasoning => "reasoning",
            Layer::Complexity => "complexity",
        };
        f.write_str(s)
    }
}

/// The five named error categories. The category→layer map is total and
/// fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SpecialtyBoundaryConfusion,
    TerminologyGap,
    ContextualAnalysisFailure,
    BoundaryJudgmentError,
    ProcessingLimit,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::SpecialtyBoundaryConfusion,
        Category::TerminologyGap,
        Category::ContextualAnalysisFailure,
        Category::BoundaryJudgmentError,
        Category::ProcessingLimit,
    ];

    pub fn layer(self) -> Layer {
        match self {
            Category::SpecialtyBoundaryConfusion | Category::TerminologyGap => Layer::Knowledge,
            Category::ContextualAnalysisFailure | Category::BoundaryJudgmentError => {
                Layer::Reasoning
            }
            Category::ProcessingLimit => Layer::Complexity,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::SpecialtyBoundaryConfusion => "specialty_boundary_confusion",
            Category::TerminologyGap => "terminology_gap",
            Category::ContextualAnalysisFailure => "contextual_analysis_failure",
            Category::BoundaryJudgmentError => "boundary_judgment_error",
            Category::ProcessingLimit => "processing_limit",
        };
        f.write_str(s)
    }
}

/// One classified failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub case_id: String,
    /// `None` marks an unparseable prediction.
    pub predicted: Option<String>,
    pub gold: Vec<String>,
    pub layer: Layer,
    pub category: Category,
    pub rule_id: String,
    pub evidence: String,
}

/// Conditions a rubric rule can test; present conditions are AND-ed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RuleWhen {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_in: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_in: Option<Vec<String>>,
    /// Confusion pairs matched as (predicted, gold).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_in: Option<Vec<(String, String)>>,
    /// (metadata key, required value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata_eq: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unparseable: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RubricRule {
    pub rule_id: String,
    pub when: RuleWhen,
    pub category: Category,
}

/// Ordered rule set mapping a failed prediction to an error category.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rubric {
    pub domain: crate::corpus::Domain,
    pub rules: Vec<RubricRule>,
    pub default_category: Category,
}

impl Rubric {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        let mut seen = std::collections::BTreeSet::new();
        for rule in &self.rules {
            if !seen.insert(&rule.rule_id) {
                return Err(TaxonomyError::InvalidRubric(format!(
                    "duplicate rule_id {:?}",
                    rule.rule_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::InvalidRubric(format!("{}: {e}", path.display())))?;
        let rubric: Rubric = serde_json::from_str(&raw)
            .map_err(|e| TaxonomyError::InvalidRubric(format!("{}: {e}", path.display())))?;
        rubric.validate()?;
        Ok(rubric)
    }

    /// rule_ids this rubric can emit, including the built-in ones.
    fn known_rule_ids(&self) -> std::collections::BTreeSet<&str> {
        let mut ids: std::collections::BTreeSet<&str> =
            self.rules.iter().map(|r| r.rule_id.as_str()).collect();
        ids.insert(UNPARSEABLE_RULE_ID);
        ids.insert(DEFAULT_RULE_ID);
        ids
    }
}

pub const UNPARSEABLE_RULE_ID: &str = "builtin:unparseable";
pub const DEFAULT_RULE_ID: &str = "builtin:default";

fn rule_matches(when: &RuleWhen, predicted: Option<&str>, case: &CaseRecord) -> bool {
    if let Some(want) = when.unparseable {
        if want != predicted.is_none() {
            return false;
        }
    }
    if let Some(set) = &when.predicted_in {
        match predicted {
            Some(p) => {
                if !set.iter().any(|s| s == p) {
                    return false;
                }
            }
            None => return false,
        }
    }
    if let Some(set) = &when.gold_in {
        if !set.iter().any(|s| case.gold.contains(s)) {
            return false;
        }
    }
    if let Some(pairs) = &when.pair_in {
        let Some(p) = predicted else { return false };
        if !pairs.iter().any(|(pp, gg)| pp == p && case.gold.contains(gg)) {
            return false;
        }
    }
    if let Some((key, value)) = &when.metadata_eq {
        if case.metadata.get(key) != Some(value) {
            return false;
        }
    }
    true
}

/// Classify one failed prediction. First matching rule wins; unparseable
/// predictions always land in `processing_limit`; no match falls back to
/// the rubric's default category.
pub fn classify_error(
    case: &CaseRecord,
    pred: &Prediction,
    rubric: &Rubric,
) -> Result<ErrorRecord, TaxonomyError> {
    if pred.correct {
        return Err(TaxonomyError::NotAnError(case.case_id.clone()));
    }
    let predicted = pred.extracted.as_label();
    let gold: Vec<String> = case.gold.iter().cloned().collect();

    let (category, rule_id) = if predicted.is_none() {
        (Category::ProcessingLimit, UNPARSEABLE_RULE_ID.to_string())
    } else if let Some(rule) = rubric
        .rules
        .iter()
        .find(|r| rule_matches(&r.when, predicted, case))
    {
        (rule.category, rule.rule_id.clone())
    } else {
        (rubric.default_category, DEFAULT_RULE_ID.to_string())
    };

    Ok(ErrorRecord {
        case_id: case.case_id.clone(),
        predicted: predicted.map(|s| s.to_string()),
        gold: gold.clone(),
        layer: category.layer(),
        category,
        rule_id,
        evidence: format!(
            "predicted={} gold={}",
            predicted.unwrap_or("<unparseable>"),
            gold.join("|")
        ),
    })
}

/// Where the error journal's cases came from, for leak-proofing strategy
/// derivation downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataOrigin {
    Development,
    Evaluation,
}

impl From<SplitRole> for DataOrigin {
    fn from(role: SplitRole) -> Self {
        match role {
            SplitRole::Development => DataOrigin::Development,
            SplitRole::Evaluation => DataOrigin::Evaluation,
        }
    }
}

/// Aggregate layer and category shares over a set of classified errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub total_errors: usize,
    /// (alpha, beta, gamma) = knowledge/reasoning/complexity shares.
    pub layer_shares: BTreeMap<Layer, f64>,
    pub category_counts: BTreeMap<Category, usize>,
    pub category_shares: BTreeMap<Category, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<DataOrigin>,
}

impl ErrorDistribution {
    pub fn share(&self, layer: Layer) -> f64 {
        self.layer_shares.get(&layer).copied().unwrap_or(0.0)
    }

    pub fn with_origin(mut self, origin: DataOrigin) -> Self {
        self.origin = Some(origin);
        self
    }
}

/// Exact count arithmetic over an error list; shares are full-precision.
pub fn distribution(errors: &[ErrorRecord]) -> Result<ErrorDistribution, TaxonomyError> {
    if errors.is_empty() {
        return Err(TaxonomyError::EmptyErrorList);
    }
    let total = errors.len();
    let mut layer_counts: BTreeMap<Layer, usize> = BTreeMap::new();
    let mut category_counts: BTreeMap<Category, usize> = BTreeMap::new();
    for e in errors {
        *layer_counts.entry(e.category.layer()).or_insert(0) += 1;
        *category_counts.entry(e.category).or_insert(0) += 1;
    }
    let layer_shares = Layer::ALL
        .iter()
        .map(|&l| {
            (
                l,
                layer_counts.get(&l).copied().unwrap_or(0) as f64 / total as f64,
            )
        })
        .collect();
    let category_shares = category_counts
        .iter()
        .map(|(&c, &n)| (c, n as f64 / total as f64))
        .collect();
    Ok(ErrorDistribution {
        total_errors: total,
        layer_shares,
        category_counts,
        category_shares,
        origin: None,
    })
}

/// Build a distribution directly from per-layer counts; used by fixtures
/// and report tooling.
pub fn distribution_from_layer_counts(
    knowledge: usize,
    reasoning: usize,
    complexity: usize,
) -> Result<ErrorDistribution, TaxonomyError> {
    let mut errors = Vec::new();
    let mut push = |n: usize, category: Category| {
        for i in 0..n {
            errors.push(ErrorRecord {
                case_id: format!("fixture-{category}-{i}"),
                predicted: Some("x".into()),
                gold: vec!["y".into()],
                layer: category.layer(),
                category,
                rule_id: DEFAULT_RULE_ID.into(),
                evidence: String::new(),
            });
        }
    };
    push(knowledge, Category::SpecialtyBoundaryConfusion);
    push(reasoning, Category::ContextualAnalysisFailure);
    push(complexity, Category::ProcessingLimit);
    distribution(&errors)
}

/// Per-layer mean and spread across domains. Both standard-deviation
/// conventions are reported and labelled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossDomainSummary {
    pub domains: usize,
    /// layer -> (mean, sd_sample (n-1), sd_population (n)) of shares.
    pub per_layer: BTreeMap<Layer, LayerSpread>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpread {
    pub mean: f64,
    pub sd_sample: f64,
    pub sd_population: f64,
}

pub fn cross_domain_summary(
    dists: &[(String, ErrorDistribution)],
) -> Result<CrossDomainSummary, TaxonomyError> {
    if dists.len() < 2 {
        return Err(TaxonomyError::TooFewDomains(dists.len()));
    }
    let n = dists.len() as f64;
    let mut per_layer = BTreeMap::new();
    for layer in Layer::ALL {
        let shares: Vec<f64> = dists.iter().map(|(_, d)| d.share(layer)).collect();
        let mean = shares.iter().sum::<f64>() / n;
        let ss: f64 = shares.iter().map(|s| (s - mean).powi(2)).sum();
        per_layer.insert(
            layer,
            LayerSpread {
                mean,
                sd_sample: (ss / (n - 1.0)).sqrt(),
                sd_population: (ss / n).sqrt(),
            },
        );
    }
    Ok(CrossDomainSummary {
        domains: dists.len(),
        per_layer,
    })
}

/// Per-category baseline→enhanced reduction rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionReport {
    pub denominator_cases: usize,
    pub per_category: BTreeMap<Category, CategoryReduction>,
    /// 1 - |enhanced| / |baseline|.
    pub overall_error_reduction: f64,
    pub baseline_total: usize,
    pub enhanced_total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryReduction {
    pub baseline_count: usize,
    pub enhanced_count: usize,
    /// `None` when the baseline count is zero: undefined, flagged rather
    /// than zeroed.
    pub reduction_rate: Option<f64>,
}

/// Reduction rates between two error journals classified under `rubric`.
pub fn reduction_rates(
    baseline: &[ErrorRecord],
    enhanced: &[ErrorRecord],
    denominator_cases: usize,
    rubric: &Rubric,
) -> Result<ReductionReport, TaxonomyError> {
    let known = rubric.known_rule_ids();
    for (side, records) in [("baseline", baseline), ("enhanced", enhanced)] {
        if let Some(bad) = records.iter().find(|r| !known.contains(r.rule_id.as_str())) {
            return Err(TaxonomyError::RubricMismatch(format!(
                "{side} journal carries rule_id {:?} unknown to this rubric",
                bad.rule_id
            )));
        }
    }
    if baseline.is_empty() {
        return Err(TaxonomyError::EmptyErrorList);
    }
    let count = |records: &[ErrorRecord]| {
        let mut m: BTreeMap<Category, usize> = BTreeMap::new();
        for r in records {
            *m.entry(r.category).or_insert(0) += 1;
        }
        m
    };
    let base_counts = count(baseline);
    let enh_counts = count(enhanced);
    let mut per_category = BTreeMap::new();
    for category in Category::ALL {
        let b = base_counts.get(&category).copied().unwrap_or(0);
        let e = enh_counts.get(&category).copied().unwrap_or(0);
        let reduction_rate = if b > 0 {
            Some(1.0 - e as f64 / b as f64)
        } else {
            None
        };
        per_category.insert(
            category,
            CategoryReduction {
                baseline_count: b,
                enhanced_count: e,
                reduction_rate,
            },
        );
    }
    Ok(ReductionReport {
        denominator_cases,
        per_category,
        overall_error_reduction: 1.0 - enhanced.len() as f64 / baseline.len() as f64,
        baseline_total: baseline.len(),
        enhanced_total: enhanced.len(),
    })
}

/// Write an error journal as JSON Lines, one ErrorRecord per line.
pub fn write_error_journal(path: &Path, records: &[ErrorRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("ErrorRecord serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_error_journal(path: &Path) -> Result<Vec<ErrorRecord>, TaxonomyError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| TaxonomyError::InvalidRubric(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| {
            TaxonomyError::InvalidRubric(format!("{}: line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(records)
}
