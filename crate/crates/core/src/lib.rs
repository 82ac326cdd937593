//! Harness for hierarchical error-correction experiments on LLM
//! classification tasks: paired baseline-vs-enhanced runs over specialized
//! corpora, a three-layer error taxonomy, error-driven prompt strategy
//! derivation, the paired significance bundle, and baseline-band
//! deployment advice.

pub mod advisor;
pub mod cli;
pub mod corpus;
pub mod hashing;
pub mod modelio;
pub mod report;
pub mod runner;
pub mod stats;
pub mod strategy;
pub mod taxonomy;

pub use advisor::{categorize, boundary_sweep, AdvisorPolicy, AdvisorVerdict};
pub use corpus::{load_dataset, AdapterId, CaseRecord, CaseSet, Domain, LabelSpace, TaskKind};
pub use modelio::{build_provider, cost_estimate, extract_label, ModelConfig, SyntheticProfile};
pub use runner::{paired_outcomes, resume, run_paired, RunInputs, RunPlan, RunResult};
pub use stats::{bonferroni, ci95_delta, effect_sizes, mcnemar, pearson_r, synergy, StatsSummary};
pub use strategy::{ablation_set, compose, derive_interventions, DomainProfile, Strategy};
pub use taxonomy::{classify_error, cross_domain_summary, distribution, reduction_rates, Rubric};
