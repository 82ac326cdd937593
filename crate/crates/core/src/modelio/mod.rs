//! Uniform completion interface over three providers: a live
//! OpenAI-compatible HTTP endpoint, a scripted mock, and a synthetic
//! error-model generator. Also owns label extraction from free-text
//! completions and the pre-run cost estimate.

pub mod http;
mod synthetic;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseRecord, CaseSet, Extracted, LabelSpace, TaskKind};
use crate::strategy::{DomainProfile, PromptSpec, Strategy};
use crate::taxonomy::Layer;

pub use synthetic::{synthetic_outcome, Interference, SyntheticProfile, SyntheticProvider};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("Exhausted: {attempts} attempts failed; last: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("Timeout: request exceeded the configured timeout after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("MalformedResponse: {0}")]
    MalformedResponse(String),
    #[error("Terminal: HTTP {status}: {body}")]
    Terminal { status: u16, body: String },
    #[error("MissingPriceTable: cost estimation needs a price table in the model config")]
    MissingPriceTable,
    #[error("ScriptMiss: mock script has no entry for case {case_id} / strategy {strategy_id}")]
    ScriptMiss { case_id: String, strategy_id: String },
    #[error("ConfigInvalid: {0}")]
    ConfigInvalid(String),
    #[error("Render: {0}")]
    Render(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpOpenaiCompatible,
    MockScripted,
    Synthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PriceTable {
    pub per_input_token: f64,
    pub per_output_token: f64,
}

/// Provider configuration. Secrets are only ever named here (an
/// environment variable), never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub provider: ProviderKind,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<PriceTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<BTreeMap<String, String>>,
}

fn default_max_tokens() -> u32 {
    64
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.temperature < 0.0 {
            return Err(ModelError::ConfigInvalid("temperature must be >= 0".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(ModelError::ConfigInvalid("max_attempts must be >= 1".into()));
        }
        match self.provider {
            ProviderKind::HttpOpenaiCompatible => {
                if self.endpoint_url.is_none() {
                    return Err(ModelError::ConfigInvalid(
                        "http provider requires endpoint_url".into(),
                    ));
                }
            }
            ProviderKind::Synthetic => {
                let profile = self.synthetic.as_ref().ok_or_else(|| {
                    ModelError::ConfigInvalid("synthetic provider requires a profile".into())
                })?;
                profile.validate()?;
            }
            ProviderKind::MockScripted => {
                if self.mock_script.is_none() {
                    return Err(ModelError::ConfigInvalid(
                        "mock provider requires mock_script".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// One model completion, provider-agnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub provider_id: String,
    pub attempt_count: u32,
}

/// A scored completion for one (case, strategy) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub case_id: String,
    pub strategy_id: String,
    pub model_id: String,
    pub raw_text: String,
    pub extracted: Extracted,
    pub correct: bool,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

/// Score a completion against a case: extract, then exact-match the gold
/// set. Unparseable always scores incorrect.
pub fn predict(
    case: &CaseRecord,
    strategy_id: &str,
    model_id: &str,
    completion: &Completion,
    space: &LabelSpace,
) -> Prediction {
    let extracted = extract_label(&completion.text, case, space);
    let correct = match &extracted {
        Extracted::Label(l) => case.is_correct(l),
        Extracted::Unparseable => false,
    };
    Prediction {
        case_id: case.case_id.clone(),
        strategy_id: strategy_id.to_string(),
        model_id: model_id.to_string(),
        raw_text: completion.text.clone(),
        extracted,
        correct,
        usage: completion.usage,
        latency_ms: completion.latency_ms,
    }
}

/// The uniform completion surface all three providers implement.
///
/// `layers` and `case_seed` only matter to the synthetic provider; the
/// live and mock providers answer from the rendered prompt alone.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(
        &self,
        case: &CaseRecord,
        prompt: &PromptSpec,
        layers: &std::collections::BTreeSet<Layer>,
        case_seed: u64,
    ) -> Result<Completion, ModelError>;
}

/// Scripted mock: answers come from a fixed map keyed by
/// `"{case_id}::{strategy_id}"`, falling back to bare `case_id`.
pub struct MockProvider {
    script: BTreeMap<String, String>,
}

impl MockProvider {
    pub fn new(script: BTreeMap<String, String>) -> Self {
        Self { script }
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        "mock_scripted"
    }

    fn complete(
        &self,
        case: &CaseRecord,
        prompt: &PromptSpec,
        _layers: &std::collections::BTreeSet<Layer>,
        _case_seed: u64,
    ) -> Result<Completion, ModelError> {
        let keyed = format!("{}::{}", case.case_id, prompt.strategy_id);
        let text = self
            .script
            .get(&keyed)
            .or_else(|| self.script.get(&case.case_id))
            .ok_or_else(|| ModelError::ScriptMiss {
                case_id: case.case_id.clone(),
                strategy_id: prompt.strategy_id.clone(),
            })?;
        Ok(Completion {
            text: text.clone(),
            usage: TokenUsage {
                input_tokens: estimate_tokens(prompt.system_text.len() + prompt.user_text.len()),
                output_tokens: estimate_tokens(text.len()),
            },
            latency_ms: 0,
            provider_id: self.id().to_string(),
            attempt_count: 1,
        })
    }
}

/// Build the configured provider. The synthetic provider needs the label
/// space to emit deterministic wrong labels.
pub fn build_provider(
    cfg: &ModelConfig,
    space: &LabelSpace,
) -> Result<Box<dyn Provider>, ModelError> {
    cfg.validate()?;
    match cfg.provider {
        ProviderKind::MockScripted => Ok(Box::new(MockProvider::new(
            cfg.mock_script.clone().unwrap_or_default(),
        ))),
        ProviderKind::Synthetic => Ok(Box::new(SyntheticProvider::new(
            cfg.synthetic.clone().expect("validated"),
            space.canonical_labels.clone(),
        ))),
        ProviderKind::HttpOpenaiCompatible => Ok(Box::new(http::HttpProvider::from_config(cfg)?)),
    }
}

/// Character-count token heuristic: ceil(chars / 4).
pub fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

/// Map a single-character token to a choice index: letters A.. or digits.
fn char_to_choice(c: char, n_choices: usize) -> Option<usize> {
    let idx = match c.to_ascii_lowercase() {
        l @ 'a'..='z' => (l as usize) - ('a' as usize),
        d @ '0'..='9' => (d as usize) - ('0' as usize),
        _ => return None,
    };
    (idx < n_choices).then_some(idx)
}

/// Scan a multiple-choice completion for a standalone choice marker.
///
/// Priority order:
/// 1. the first choice token following the last "answer" keyword,
/// 2. a leading option mark on the first non-empty line ("C.", "(3)", "B)"),
/// 3. any line that is exactly one choice letter or digit.
fn scan_choice(text: &str, n_choices: usize) -> Option<usize> {
    let lower = text.to_lowercase();
    if let Some(pos) = lower.rfind("answer") {
        let tail = &lower[pos + "answer".len()..];
        for token in tail.split(|c: char| !c.is_ascii_alphanumeric()).take(6) {
            if token.is_empty() || token == "is" || token == "the" {
                continue;
            }
            let mut chars = token.chars();
            if let (Some(c), None) = (chars.next(), chars.next()) {
                if let Some(idx) = char_to_choice(c, n_choices) {
                    return Some(idx);
                }
            }
            break;
        }
    }
    if let Some(line) = text.lines().find(|l| !l.trim().is_empty()) {
        let line = line.trim().trim_start_matches(['(', '[']);
        let mut chars = line.chars();
        if let Some(first) = chars.next() {
            let next = chars.next();
            let delimited = matches!(next, None | Some('.' | ')' | ']' | ':' | ','));
            if delimited {
                if let Some(idx) = char_to_choice(first, n_choices) {
                    return Some(idx);
                }
            }
        }
    }
    for line in text.lines() {
        let key = crate::corpus::canon_key(line);
        let mut chars = key.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if let Some(idx) = char_to_choice(c, n_choices) {
                return Some(idx);
            }
        }
    }
    None
}

/// Extract a canonical label from free-form completion text. Never fails:
/// anything unrecognizable is Unparseable.
///
/// Multiple-choice answers are scanned for a standalone choice marker
/// first; everything falls back to label-space normalization of the final
/// non-empty line, then of the whole text.
pub fn extract_label(text: &str, case: &CaseRecord, space: &LabelSpace) -> Extracted {
    if case.task_kind == TaskKind::MultipleChoice {
        if let Some(choices) = &case.choices {
            if let Some(idx) = scan_choice(text, choices.len()) {
                return Extracted::Label(idx.to_string());
            }
        }
    }
    if let Some(line) = text.lines().rev().find(|l| !l.trim().is_empty()) {
        if let Extracted::Label(l) = space.normalize(line) {
            return Extracted::Label(l);
        }
    }
    space.normalize(text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostEstimate {
    pub cells: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_cost: f64,
}

/// Upper-bound cost of running `cases x strategies`: input tokens from the
/// ceil(chars/4) heuristic over case text plus rendered strategy blocks,
/// output tokens at the max_tokens cap.
pub fn cost_estimate(
    cases: &CaseSet,
    strategies: &[Strategy],
    profile: &DomainProfile,
    cfg: &ModelConfig,
) -> Result<CostEstimate, ModelError> {
    let price = cfg.price.ok_or(ModelError::MissingPriceTable)?;
    let mut input_tokens = 0u64;
    let mut cells = 0usize;
    for strategy in strategies {
        let mut overhead = 0usize;
        for block in &strategy.blocks {
            overhead += crate::strategy::render_block(block, profile)
                .map_err(|e| ModelError::Render(e.to_string()))?
                .chars()
                .count();
        }
        for case in &cases.cases {
            input_tokens += estimate_tokens(case.input_text.chars().count() + overhead);
            cells += 1;
        }
    }
    let output_tokens = cells as u64 * cfg.max_tokens as u64;
    let total_cost = input_tokens as f64 * price.per_input_token
        + output_tokens as f64 * price.per_output_token;
    Ok(CostEstimate {
        cells,
        input_tokens,
        output_tokens,
        total_cost,
    })
}

/// Load a model config from a JSON file.
pub fn load_model_config(path: &Path) -> Result<ModelConfig, ModelError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ModelError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    let cfg: ModelConfig = serde_json::from_str(&raw)
        .map_err(|e| ModelError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;
    use crate::strategy::{BlockProvenance, LayerBlock, Strategy};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn mc_case(id: &str, gold_idx: usize) -> CaseRecord {
        CaseRecord {
            case_id: id.into(),
            domain: Domain::LegalReasoning,
            task_kind: TaskKind::MultipleChoice,
            input_text: "which holding?".into(),
            choices: Some((0..5).map(|i| format!("holding {i}")).collect()),
            gold: BTreeSet::from([gold_idx.to_string()]),
            strata_key: gold_idx.to_string(),
            metadata: Default::default(),
        }
    }

    fn single_case(id: &str, gold: &str) -> CaseRecord {
        CaseRecord {
            case_id: id.into(),
            domain: Domain::Medical,
            task_kind: TaskKind::SingleLabel,
            input_text: "note".into(),
            choices: None,
            gold: BTreeSet::from([gold.to_string()]),
            strata_key: gold.into(),
            metadata: Default::default(),
        }
    }

    fn mc_space() -> LabelSpace {
        LabelSpace::new(
            Domain::LegalReasoning,
            (0..5).map(|i| i.to_string()).collect(),
            Default::default(),
        )
        .unwrap()
    }

    fn medical_space() -> LabelSpace {
        LabelSpace::new(
            Domain::Medical,
            vec!["Orthopedic".into(), "Surgery".into(), "Neurology".into()],
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn extract_answer_letter() {
        let case = mc_case("c", 2);
        let space = mc_space();
        assert_eq!(
            extract_label("Answer: C", &case, &space),
            Extracted::Label("2".into())
        );
        assert_eq!(
            extract_label("The answer is C.", &case, &space),
            Extracted::Label("2".into())
        );
        assert_eq!(
            extract_label("Final answer: (3)", &case, &space),
            Extracted::Label("3".into())
        );
    }

    #[test]
    fn extract_leading_option_mark() {
        let case = mc_case("c", 2);
        let space = mc_space();
        assert_eq!(
            extract_label("C. Because the court held so.", &case, &space),
            Extracted::Label("2".into())
        );
        assert_eq!(extract_label("(3)", &case, &space), Extracted::Label("3".into()));
        assert_eq!(extract_label("B)", &case, &space), Extracted::Label("1".into()));
        // A leading capital that begins a sentence is not an option mark.
        assert_eq!(
            extract_label("A patient presented with chest pain.", &case, &space),
            Extracted::Unparseable
        );
    }

    #[test]
    fn extract_free_text_label() {
        let case = single_case("c", "Orthopedic");
        let space = medical_space();
        assert_eq!(
            extract_label("The correct specialty is Orthopedic.", &case, &space),
            Extracted::Label("Orthopedic".into())
        );
        assert_eq!(
            extract_label("I cannot determine this.", &case, &space),
            Extracted::Unparseable
        );
    }

    #[test]
    fn extract_uses_final_line_first() {
        let case = single_case("c", "Surgery");
        let space = medical_space();
        let text = "Reasoning about orthopedic versus surgical management follows.\nSurgery";
        assert_eq!(extract_label(text, &case, &space), Extracted::Label("Surgery".into()));
    }

    #[test]
    fn mock_provider_scripted_echo() {
        let provider = MockProvider::new(BTreeMap::from([(
            "case_7".to_string(),
            "Cardiology".to_string(),
        )]));
        let case = single_case("case_7", "Orthopedic");
        let prompt = PromptSpec {
            system_text: "sys".into(),
            user_text: "user".into(),
            strategy_id: "baseline".into(),
            render_hash: "0".into(),
        };
        let completion = provider
            .complete(&case, &prompt, &BTreeSet::new(), 0)
            .unwrap();
        assert_eq!(completion.text, "Cardiology");
        assert_eq!(completion.attempt_count, 1);
    }

    #[test]
    fn mock_provider_miss_is_error() {
        let provider = MockProvider::new(BTreeMap::new());
        let case = single_case("c", "Orthopedic");
        let prompt = PromptSpec {
            system_text: String::new(),
            user_text: String::new(),
            strategy_id: "baseline".into(),
            render_hash: "0".into(),
        };
        assert!(matches!(
            provider.complete(&case, &prompt, &BTreeSet::new(), 0),
            Err(ModelError::ScriptMiss { .. })
        ));
    }

    fn block_of_len(len: usize) -> LayerBlock {
        LayerBlock {
            layer: Layer::Knowledge,
            block_id: "k".into(),
            text_template: "x".repeat(len),
            provenance: BlockProvenance::Authored,
            allow_empty_slots: false,
        }
    }

    fn price_cfg() -> ModelConfig {
        ModelConfig {
            provider: ProviderKind::MockScripted,
            model_id: "m".into(),
            endpoint_url: None,
            api_key_env: None,
            temperature: 0.0,
            max_tokens: 50,
            timeout_ms: 1000,
            retry: RetryPolicy::default(),
            price: Some(PriceTable {
                per_input_token: 1e-6,
                per_output_token: 2e-6,
            }),
            synthetic: None,
            mock_script: Some(BTreeMap::new()),
        }
    }

    fn profile() -> DomainProfile {
        DomainProfile {
            domain: Domain::Medical,
            label_list: vec!["Orthopedic".into(), "Surgery".into()],
            domain_terms: vec![],
            confusion_pairs: vec![],
            anti_bias_notes: vec![],
        }
    }

    fn caseset_of(cases: Vec<CaseRecord>) -> CaseSet {
        CaseSet {
            cases,
            provenance: crate::corpus::Provenance {
                source: "mem".into(),
                adapter: "test".into(),
                content_hash: "0".into(),
            },
            seed: None,
            split: None,
        }
    }

    #[test]
    fn cost_estimate_hand_arithmetic() {
        // 400-char case + 200-char block = 600 chars -> 150 input tokens;
        // 150e-6 + 50 * 2e-6 = 2.5e-4.
        let mut case = single_case("c", "Orthopedic");
        case.input_text = "y".repeat(400);
        let cases = caseset_of(vec![case]);
        let strategy = Strategy {
            strategy_id: "k".into(),
            domain: Domain::Medical,
            blocks: vec![block_of_len(200)],
        };
        let est = cost_estimate(&cases, &[strategy], &profile(), &price_cfg()).unwrap();
        assert_eq!(est.input_tokens, 150);
        assert_eq!(est.output_tokens, 50);
        assert!((est.total_cost - 2.5e-4).abs() < 1e-12);
    }

    #[test]
    fn cost_estimate_zero_cases_and_linearity() {
        let cases = caseset_of(vec![]);
        let strategy = Strategy {
            strategy_id: "s".into(),
            domain: Domain::Medical,
            blocks: vec![],
        };
        let est = cost_estimate(&cases, &[strategy.clone()], &profile(), &price_cfg()).unwrap();
        assert_eq!(est.total_cost, 0.0);

        let mut case = single_case("c", "Orthopedic");
        case.input_text = "y".repeat(97);
        let cases = caseset_of(vec![case]);
        let one = cost_estimate(&cases, &[strategy.clone()], &profile(), &price_cfg()).unwrap();
        let two = cost_estimate(
            &cases,
            &[strategy.clone(), strategy],
            &profile(),
            &price_cfg(),
        )
        .unwrap();
        assert!((two.total_cost - 2.0 * one.total_cost).abs() < 1e-15);
    }

    #[test]
    fn cost_estimate_requires_price() {
        let mut cfg = price_cfg();
        cfg.price = None;
        let cases = caseset_of(vec![single_case("c", "Orthopedic")]);
        let strategy = Strategy {
            strategy_id: "s".into(),
            domain: Domain::Medical,
            blocks: vec![],
        };
        assert!(matches!(
            cost_estimate(&cases, &[strategy], &profile(), &cfg),
            Err(ModelError::MissingPriceTable)
        ));
    }

    proptest! {
        #[test]
        fn extract_never_panics_and_stays_in_space(text in "\\PC{0,120}") {
            let case = mc_case("c", 1);
            let space = mc_space();
            match extract_label(&text, &case, &space) {
                Extracted::Label(l) => prop_assert!(space.contains(&l)),
                Extracted::Unparseable => {}
            }
            let case = single_case("c", "Orthopedic");
            let space = medical_space();
            match extract_label(&text, &case, &space) {
                Extracted::Label(l) => prop_assert!(space.contains(&l)),
                Extracted::Unparseable => {}
            }
        }
    }
}
