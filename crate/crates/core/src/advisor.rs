//! Deployment advice from baseline-performance bands, plus a synthetic
//! boundary sweep that maps deltas across a p0 grid.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskKind;
use crate::modelio::{synthetic_outcome, SyntheticProfile};
use crate::stats::{pearson_r, StatsError};
use crate::taxonomy::Layer;

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("GridTooSmall: boundary sweep needs at least 3 p0 grid points, got {0}")]
    GridTooSmall(usize),
    #[error("InvalidPolicy: {0}")]
    InvalidPolicy(String),
    #[error("Stats: {0}")]
    Stats(#[from] StatsError),
    #[error("Model: {0}")]
    Model(#[from] crate::modelio::ModelError),
}

/// Accuracy bands as half-open [lo, hi) intervals; the boundary band
/// closes at 1.0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bands {
    pub optimal: (f64, f64),
    pub diminishing: (f64, f64),
    pub boundary: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvisorPolicy {
    pub bands: Bands,
    #[serde(default = "default_true")]
    pub multi_label_exception: bool,
    #[serde(default = "default_min_pilot")]
    pub min_pilot_cases: u64,
}

fn default_true() -> bool {
    true
}

fn default_min_pilot() -> u64 {
    100
}

impl Default for AdvisorPolicy {
    fn default() -> Self {
        Self {
            bands: Bands {
                optimal: (0.50, 0.70),
                diminishing: (0.70, 0.75),
                boundary: (0.75, 1.0),
            },
            multi_label_exception: true,
            min_pilot_cases: 100,
        }
    }
}

impl AdvisorPolicy {
    pub fn validate(&self) -> Result<(), AdvisorError> {
        let b = &self.bands;
        let contiguous = b.optimal.0 < b.optimal.1
            && b.optimal.1 == b.diminishing.0
            && b.diminishing.0 < b.diminishing.1
            && b.diminishing.1 == b.boundary.0
            && b.boundary.0 < b.boundary.1
            && (b.boundary.1 - 1.0).abs() < 1e-12;
        if !contiguous {
            return Err(AdvisorError::InvalidPolicy(
                "bands must be contiguous, non-overlapping, and end at 1.0".into(),
            ));
        }
        if self.min_pilot_cases < 1 {
            return Err(AdvisorError::InvalidPolicy("min_pilot_cases must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AdvisorError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| AdvisorError::InvalidPolicy(format!("{}: {e}", path.display())))?;
        let policy: AdvisorPolicy = serde_json::from_str(&raw)
            .map_err(|e| AdvisorError::InvalidPolicy(format!("{}: {e}", path.display())))?;
        policy.validate()?;
        Ok(policy)
    }

    fn band(&self, acc: f64) -> Band {
        if acc < self.bands.optimal.0 {
            Band::BelowOptimal
        } else if acc < self.bands.optimal.1 {
            Band::Optimal
        } else if acc < self.bands.diminishing.1 {
            Band::Diminishing
        } else {
            Band::Boundary
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Band {
    BelowOptimal,
    Optimal,
    Diminishing,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictCategory {
    StrongEnhancement,
    LimitedEnhancement,
    BoundaryLimitation,
    ExceptionCase,
    InsufficientPilot,
    BelowBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    Deploy,
    PilotFurther,
    DoNotDeploy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvisorVerdict {
    pub category: VerdictCategory,
    pub recommendation: Recommendation,
    pub rationale: String,
}

/// Fixed decision table over (baseline accuracy band, task kind, pilot
/// size).
///
/// In the boundary band the verdict is task-kind sensitive: multi-label
/// tasks take the exception gate, multiple-choice precision-matching
/// tasks are where the observed degradation lives, and single-label tasks
/// see limited-but-positive enhancement.
pub fn categorize(
    baseline_acc: f64,
    task_kind: TaskKind,
    n_pilot: u64,
    policy: &AdvisorPolicy,
) -> AdvisorVerdict {
    if n_pilot < policy.min_pilot_cases {
        return AdvisorVerdict {
            category: VerdictCategory::InsufficientPilot,
            recommendation: Recommendation::PilotFurther,
            rationale: format!(
                "pilot of {n_pilot} cases is below the minimum {}; extend the pilot before deciding",
                policy.min_pilot_cases
            ),
        };
    }
    let pct = baseline_acc * 100.0;
    match policy.band(baseline_acc) {
        Band::BelowOptimal => AdvisorVerdict {
            category: VerdictCategory::BelowBand,
            recommendation: Recommendation::PilotFurther,
            rationale: format!(
                "baseline {pct:.1}% is below the optimal band floor {:.0}%; the task itself needs work first",
                policy.bands.optimal.0 * 100.0
            ),
        },
        Band::Optimal => AdvisorVerdict {
            category: VerdictCategory::StrongEnhancement,
            recommendation: Recommendation::Deploy,
            rationale: format!(
                "baseline {pct:.1}% sits in the optimal band [{:.0}%, {:.0}%)",
                policy.bands.optimal.0 * 100.0,
                policy.bands.optimal.1 * 100.0
            ),
        },
        Band::Diminishing => AdvisorVerdict {
            category: VerdictCategory::LimitedEnhancement,
            recommendation: Recommendation::PilotFurther,
            rationale: format!(
                "baseline {pct:.1}% is in the diminishing-returns band [{:.0}%, {:.0}%)",
                policy.bands.diminishing.0 * 100.0,
                policy.bands.diminishing.1 * 100.0
            ),
        },
        Band::Boundary => match task_kind {
            TaskKind::MultiLabel if policy.multi_label_exception => AdvisorVerdict {
                category: VerdictCategory::ExceptionCase,
                recommendation: Recommendation::Deploy,
                rationale: format!(
                    "baseline {pct:.1}% is above the boundary threshold, but multi-label structure takes the exception gate"
                ),
            },
            TaskKind::MultipleChoice => AdvisorVerdict {
                category: VerdictCategory::BoundaryLimitation,
                recommendation: Recommendation::DoNotDeploy,
                rationale: format!(
                    "baseline {pct:.1}% is above the boundary threshold on a precision-matching task; intervention risks degradation"
                ),
            },
            _ => AdvisorVerdict {
                category: VerdictCategory::LimitedEnhancement,
                recommendation: Recommendation::PilotFurther,
                rationale: format!(
                    "baseline {pct:.1}% is above the boundary threshold; expect small gains at best on this task shape"
                ),
            },
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandEffect {
    LargeGain,
    SmallGain,
    PossibleDecline,
}

/// Qualitative pre-run expectation for a baseline accuracy, used to
/// annotate plans before any budget is spent.
pub fn predict_band_effect(baseline_acc: f64, policy: &AdvisorPolicy) -> BandEffect {
    match policy.band(baseline_acc) {
        Band::BelowOptimal | Band::Optimal => BandEffect::LargeGain,
        Band::Diminishing => BandEffect::SmallGain,
        Band::Boundary => BandEffect::PossibleDecline,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub p0: f64,
    pub mean_delta_pp: f64,
    pub sd_delta_pp: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Pearson r over (p0, mean delta); absent when degenerate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_r: Option<f64>,
    pub cases_per_point: usize,
}

/// Run the synthetic pipeline across a p0 grid: baseline vs the full
/// three-layer strategy, `cases_per_point` cases per (point, seed).
pub fn boundary_sweep(
    profile_base: &SyntheticProfile,
    p0_grid: &[f64],
    cases_per_point: usize,
    seeds: &[u64],
) -> Result<SweepResult, AdvisorError> {
    if p0_grid.len() < 3 {
        return Err(AdvisorError::GridTooSmall(p0_grid.len()));
    }
    profile_base.validate()?;
    let all_layers: BTreeSet<Layer> = Layer::ALL.into_iter().collect();
    let none: BTreeSet<Layer> = BTreeSet::new();
    let mut rows = Vec::with_capacity(p0_grid.len());
    for &p0 in p0_grid {
        let profile = profile_base.with_base_accuracy(p0);
        let mut deltas = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut base_correct = 0usize;
            let mut enh_correct = 0usize;
            for i in 0..cases_per_point {
                let case_id = format!("sweep-{i:05}");
                if synthetic_outcome(&case_id, &none, &profile, seed).correct {
                    base_correct += 1;
                }
                if synthetic_outcome(&case_id, &all_layers, &profile, seed).correct {
                    enh_correct += 1;
                }
            }
            deltas.push((enh_correct as f64 - base_correct as f64) / cases_per_point as f64 * 100.0);
        }
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let sd = if deltas.len() > 1 {
            (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (deltas.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        rows.push(SweepRow {
            p0,
            mean_delta_pp: mean,
            sd_delta_pp: sd,
            n_seeds: seeds.len(),
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.p0, r.mean_delta_pp)).collect();
    let fitted_r = pearson_r(&points).ok();
    Ok(SweepResult {
        rows,
        fitted_r,
        cases_per_point,
    })
}
