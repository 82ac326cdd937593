//! Intervention strategies: ordered prompt layer blocks, template
//! rendering, error-distribution-driven derivation with a leak guard, and
//! ablation sets for synergy measurement.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseRecord, Domain, TaskKind};
use crate::hashing;
use crate::taxonomy::{DataOrigin, ErrorDistribution, Layer};

/// Default layer-share threshold for including a block when deriving a
/// strategy from an error distribution.
pub const DEFAULT_INCLUSION_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("UnresolvedSlot: template slot {{{slot}}} in block {block_id} cannot be resolved")]
    UnresolvedSlot { block_id: String, slot: String },
    #[error("EvalSetContamination: refusing to derive interventions from an evaluation-split distribution")]
    EvalSetContamination,
    #[error("OriginUnknown: distribution carries no split-provenance tag; derive from a tagged development split")]
    OriginUnknown,
    #[error("MissingLayerBlock: library has no block for the {0} layer")]
    MissingLayerBlock(Layer),
    #[error("InvalidStrategy: {0}")]
    InvalidStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockProvenance {
    Authored,
    Derived,
}

/// One prompt layer block with a slotted text template.
///
/// Slot syntax is `{slot_name}`, with backslash escaping for literal
/// braces. With `allow_empty_slots` a slot whose profile value is empty
/// expands to nothing instead of failing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBlock {
    pub layer: Layer,
    pub block_id: String,
    pub text_template: String,
    pub provenance: BlockProvenance,
    #[serde(default)]
    pub allow_empty_slots: bool,
}

/// An ordered selection of layer blocks. The baseline strategy is the
/// empty block list; at most one block per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub strategy_id: String,
    pub domain: Domain,
    pub blocks: Vec<LayerBlock>,
}

impl Strategy {
    pub fn baseline(domain: Domain) -> Self {
        Self {
            strategy_id: "baseline".into(),
            domain,
            blocks: Vec::new(),
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn layers(&self) -> std::collections::BTreeSet<Layer> {
        self.blocks.iter().map(|b| b.layer).collect()
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        let mut seen = std::collections::BTreeSet::new();
        for block in &self.blocks {
            if !seen.insert(block.layer) {
                return Err(StrategyError::InvalidStrategy(format!(
                    "more than one block for the {} layer",
                    block.layer
                )));
            }
        }
        Ok(())
    }

    /// Blocks in canonical knowledge -> reasoning -> complexity order,
    /// irrespective of authoring order.
    pub fn ordered_blocks(&self) -> Vec<&LayerBlock> {
        let mut blocks: Vec<&LayerBlock> = self.blocks.iter().collect();
        blocks.sort_by_key(|b| b.layer);
        blocks
    }

    pub fn load(path: &Path) -> Result<Self, StrategyError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| StrategyError::InvalidStrategy(format!("{}: {e}", path.display())))?;
        let strategy: Strategy = serde_json::from_str(&raw)
            .map_err(|e| StrategyError::InvalidStrategy(format!("{}: {e}", path.display())))?;
        strategy.validate()?;
        Ok(strategy)
    }
}

/// Per-domain material the templates draw from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainProfile {
    pub domain: Domain,
    pub label_list: Vec<String>,
    #[serde(default)]
    pub domain_terms: Vec<String>,
    #[serde(default)]
    pub confusion_pairs: Vec<(String, String)>,
    #[serde(default)]
    pub anti_bias_notes: Vec<String>,
}

impl DomainProfile {
    pub fn load(path: &Path) -> Result<Self, StrategyError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| StrategyError::InvalidStrategy(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| StrategyError::InvalidStrategy(format!("{}: {e}", path.display())))
    }

    fn slot_value(&self, slot: &str, case: Option<&CaseRecord>) -> Option<String> {
        match slot {
            "label_list" => Some(self.label_list.join(", ")),
            "domain_terms" => Some(self.domain_terms.join(", ")),
            "confusion_pairs" => Some(
                self.confusion_pairs
                    .iter()
                    .map(|(a, b)| format!("{a} vs {b}"))
                    .collect::<Vec<_>>()
                    .join("; "),
            ),
            "anti_bias_notes" => Some(self.anti_bias_notes.join("; ")),
            "domain" => Some(self.domain.to_string()),
            "case_text" => case.map(|c| c.input_text.clone()),
            _ => None,
        }
    }
}

/// A concrete rendered prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub system_text: String,
    pub user_text: String,
    pub strategy_id: String,
    /// FNV-1a 64 hex over (system_text, user_text).
    pub render_hash: String,
}

fn render_template(
    template: &str,
    block_id: &str,
    allow_empty: bool,
    profile: &DomainProfile,
    case: Option<&CaseRecord>,
) -> Result<String, StrategyError> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                if let Some(next) = chars.next() {
                    out.push(next);
                } else {
                    out.push('\\');
                }
            }
            '{' => {
                let mut slot = String::new();
                let mut closed = false;
                for c in chars.by_ref() {
                    if c == '}' {
                        closed = true;
                        break;
                    }
                    slot.push(c);
                }
                if !closed {
                    return Err(StrategyError::UnresolvedSlot {
                        block_id: block_id.to_string(),
                        slot: format!("{slot} (unterminated)"),
                    });
                }
                match profile.slot_value(&slot, case) {
                    Some(value) if !value.is_empty() => out.push_str(&value),
                    Some(_) if allow_empty => {}
                    _ => {
                        return Err(StrategyError::UnresolvedSlot {
                            block_id: block_id.to_string(),
                            slot,
                        });
                    }
                }
            }
            other => out.push(other),
        }
    }
    Ok(out)
}

/// Render a single block against a profile (no case context).
pub fn render_block(block: &LayerBlock, profile: &DomainProfile) -> Result<String, StrategyError> {
    render_template(
        &block.text_template,
        &block.block_id,
        block.allow_empty_slots,
        profile,
        None,
    )
}

fn task_instruction(kind: TaskKind, profile: &DomainProfile) -> String {
    let labels = profile.label_list.join(", ");
    match kind {
        TaskKind::SingleLabel => format!(
            "Classify the following {} document into exactly one category from: {}. \
             Respond with the category name only.",
            profile.domain, labels
        ),
        TaskKind::MultiLabel => format!(
            "Assign every applicable category from: {}. \
             Respond with the category names only, one per line.",
            labels
        ),
        TaskKind::MultipleChoice => "Select the option that correctly completes the text. \
             Respond with the letter of the correct option only."
            .to_string(),
    }
}

const CHOICE_LETTERS: [char; 8] = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H'];

/// Render a strategy into a concrete prompt for one case.
///
/// Blocks land in the system text in fixed knowledge -> reasoning ->
/// complexity order after the bare task instruction; the user text carries
/// the case input (with lettered options for multiple choice).
pub fn compose(
    strategy: &Strategy,
    profile: &DomainProfile,
    case: &CaseRecord,
) -> Result<PromptSpec, StrategyError> {
    strategy.validate()?;
    let mut system = task_instruction(case.task_kind, profile);
    for block in strategy.ordered_blocks() {
        system.push_str("\n\n");
        system.push_str(&render_template(
            &block.text_template,
            &block.block_id,
            block.allow_empty_slots,
            profile,
            Some(case),
        )?);
    }
    let mut user = case.input_text.clone();
    if case.task_kind == TaskKind::MultipleChoice {
        if let Some(choices) = &case.choices {
            user.push_str("\n\nOptions:");
            for (i, choice) in choices.iter().enumerate() {
                let letter = CHOICE_LETTERS.get(i).copied().unwrap_or('?');
                user.push_str(&format!("\n{letter}. {choice}"));
            }
        }
    }
    let render_hash = hashing::hex64(hashing::fnv1a_concat(&[
        system.as_bytes(),
        &[0x1f],
        user.as_bytes(),
    ]));
    Ok(PromptSpec {
        system_text: system,
        user_text: user,
        strategy_id: strategy.strategy_id.clone(),
        render_hash,
    })
}

/// One layer's include/exclude decision when deriving a strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDecision {
    pub layer: Layer,
    pub share: f64,
    pub threshold: f64,
    pub included: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Derivation {
    pub strategy: Strategy,
    pub trace: Vec<LayerDecision>,
}

/// Derive an intervention strategy from an observed error distribution:
/// a layer's block is included iff its share meets the threshold.
///
/// Hard leak guard: the distribution must be tagged as coming from the
/// development split.
pub fn derive_interventions(
    dist: &ErrorDistribution,
    profile: &DomainProfile,
    library: &[LayerBlock],
    threshold: f64,
) -> Result<Derivation, StrategyError> {
    match dist.origin {
        Some(DataOrigin::Development) => {}
        Some(DataOrigin::Evaluation) => return Err(StrategyError::EvalSetContamination),
        None => return Err(StrategyError::OriginUnknown),
    }
    let mut blocks = Vec::new();
    let mut trace = Vec::new();
    let mut letters = String::new();
    for layer in Layer::ALL {
        let share = dist.share(layer);
        let included = share >= threshold;
        trace.push(LayerDecision {
            layer,
            share,
            threshold,
            included,
        });
        if included {
            let block = library
                .iter()
                .find(|b| b.layer == layer)
                .ok_or(StrategyError::MissingLayerBlock(layer))?;
            let mut block = block.clone();
            block.provenance = BlockProvenance::Derived;
            blocks.push(block);
            letters.push(layer.letter().to_ascii_lowercase());
        }
    }
    let strategy_id = if letters.is_empty() {
        format!("derived-none-{}", profile.domain)
    } else {
        format!("derived-{letters}-{}", profile.domain)
    };
    Ok(Derivation {
        strategy: Strategy {
            strategy_id,
            domain: profile.domain,
            blocks,
        },
        trace,
    })
}

/// Baseline, each present single layer, and the full combination; ids are
/// derived deterministically from the parent strategy id.
pub fn ablation_set(strategy: &Strategy) -> Vec<Strategy> {
    let mut out = vec![Strategy::baseline(strategy.domain)];
    let ordered = strategy.ordered_blocks();
    if ordered.len() > 1 {
        for block in &ordered {
            out.push(Strategy {
                strategy_id: format!("{}-{}", strategy.strategy_id, block.layer.letter()),
                domain: strategy.domain,
                blocks: vec![(*block).clone()],
            });
        }
    }
    out.push(strategy.clone());
    out
}

/// Load a block library (JSON array of LayerBlock).
pub fn load_blocks(path: &Path) -> Result<Vec<LayerBlock>, StrategyError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| StrategyError::InvalidStrategy(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| StrategyError::InvalidStrategy(format!("{}: {e}", path.display())))
}
