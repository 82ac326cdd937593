//! Python bindings for the experiment harness: corpus loading and
//! splitting, the paired-significance bundle, the synthetic error model,
//! and deployment advice. Structured results cross the boundary as plain
//! dicts/lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use hec_core::advisor::{self, AdvisorPolicy};
use hec_core::corpus::{self, AdapterId, Domain, LabelSpace, TaskKind};
use hec_core::modelio::{synthetic_outcome, Interference, SyntheticProfile};
use hec_core::stats::{self, Contingency, PairedOutcome};
use hec_core::taxonomy::Layer;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    match v {
        serde_json::Value::Null => Ok(py.None()),
        serde_json::Value::Bool(b) => b.into_py_any(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)
            }
        }
        serde_json::Value::String(s) => s.into_py_any(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(value_err)?;
    json_to_py(py, &v)
}

fn parse_task_kind(s: &str) -> PyResult<TaskKind> {
    match s {
        "single_label" => Ok(TaskKind::SingleLabel),
        "multi_label" => Ok(TaskKind::MultiLabel),
        "multiple_choice" => Ok(TaskKind::MultipleChoice),
        other => Err(PyValueError::new_err(format!(
            "unknown task kind {other:?} (single_label | multi_label | multiple_choice)"
        ))),
    }
}

fn parse_layer(s: &str) -> PyResult<Layer> {
    match s {
        "knowledge" => Ok(Layer::Knowledge),
        "reasoning" => Ok(Layer::Reasoning),
        "complexity" => Ok(Layer::Complexity),
        other => Err(PyValueError::new_err(format!(
            "unknown layer {other:?} (knowledge | reasoning | complexity)"
        ))),
    }
}

fn profile_from_args(
    base_accuracy: f64,
    layer_mix: (f64, f64, f64),
    repair_prob: BTreeMap<String, f64>,
    kappa: f64,
    tau: f64,
) -> PyResult<SyntheticProfile> {
    let mut repairs = BTreeMap::new();
    for (name, p) in repair_prob {
        repairs.insert(parse_layer(&name)?, p);
    }
    let profile = SyntheticProfile {
        base_accuracy,
        layer_mix,
        repair_prob: repairs,
        interference: Interference {
            threshold: tau,
            slope: kappa,
        },
    };
    profile.validate().map_err(value_err)?;
    Ok(profile)
}

/// A normalized case set. Sampling and splitting are seed-deterministic.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct CaseSet {
    inner: corpus::CaseSet,
}

#[pymethods]
impl CaseSet {
    /// Load a source dataset through one of the four adapters
    /// (mtsamples_csv | eurlex_json | hyperpartisan_byarticle |
    /// casehold_csv) with the given label-space file.
    #[staticmethod]
    fn load(path: PathBuf, adapter: &str, labels_path: PathBuf) -> PyResult<Self> {
        let adapter: AdapterId = adapter.parse().map_err(value_err)?;
        let space = LabelSpace::load(&labels_path).map_err(value_err)?;
        let outcome = corpus::load_dataset(&path, adapter, &space).map_err(value_err)?;
        Ok(Self {
            inner: outcome.cases,
        })
    }

    /// Read a case set previously written with write_jsonl.
    #[staticmethod]
    fn read_jsonl(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: corpus::CaseSet::read_jsonl(&path).map_err(value_err)?,
        })
    }

    /// Generate a synthetic single-label case set for offline experiments.
    #[staticmethod]
    #[pyo3(signature = (n, labels, seed=0))]
    fn synthetic(n: usize, labels: Vec<String>, seed: u64) -> PyResult<Self> {
        let space = LabelSpace::new(Domain::Medical, labels, BTreeMap::new()).map_err(value_err)?;
        Ok(Self {
            inner: corpus::synthetic_case_set(n, &space, Domain::Medical, seed),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "CaseSet(len={}, adapter={}, hash={})",
            self.inner.len(),
            self.inner.provenance.adapter,
            self.inner.provenance.content_hash
        )
    }

    #[getter]
    fn content_hash(&self) -> String {
        self.inner.provenance.content_hash.clone()
    }

    #[getter]
    fn split_role(&self) -> Option<String> {
        self.inner.split.map(|r| {
            match r {
                corpus::SplitRole::Development => "development",
                corpus::SplitRole::Evaluation => "evaluation",
            }
            .to_string()
        })
    }

    fn case_ids(&self) -> Vec<String> {
        self.inner.case_ids()
    }

    /// Proportional stratified sample of n cases.
    fn sample(&self, n: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.stratified_sample(n, seed).map_err(value_err)?,
        })
    }

    /// Leak-proof (development, evaluation) split.
    fn split(&self, dev_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (dev, eval) = self
            .inner
            .split_isolated(dev_fraction, seed)
            .map_err(value_err)?;
        Ok((Self { inner: dev }, Self { inner: eval }))
    }

    fn write_jsonl(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_jsonl(&path).map_err(value_err)
    }
}

/// McNemar test for paired binary outcomes: exact binomial below 25
/// discordant pairs, continuity-corrected chi-square otherwise.
#[pyfunction]
fn mcnemar(py: Python<'_>, b: u64, c: u64) -> PyResult<Py<PyAny>> {
    to_py(py, &stats::mcnemar(b, c))
}

/// Full significance bundle over per-case (baseline_correct,
/// enhanced_correct) pairs with Bonferroni adjustment over m comparisons.
#[pyfunction]
#[pyo3(signature = (outcomes, m=1))]
fn paired_stats(py: Python<'_>, outcomes: Vec<(bool, bool)>, m: usize) -> PyResult<Py<PyAny>> {
    let outcomes: Vec<PairedOutcome> = outcomes
        .iter()
        .enumerate()
        .map(|(i, &(b, e))| PairedOutcome {
            case_id: format!("case-{i}"),
            baseline_correct: b,
            enhanced_correct: e,
        })
        .collect();
    to_py(py, &stats::summarize(&outcomes, m).map_err(value_err)?)
}

/// Product-moment correlation over (baseline, delta) points.
#[pyfunction]
fn pearson_r(points: Vec<(f64, f64)>) -> PyResult<f64> {
    stats::pearson_r(&points).map_err(value_err)
}

/// Bonferroni adjustment: min(1, m*p) per value.
#[pyfunction]
fn bonferroni(p_values: Vec<f64>, m: usize) -> PyResult<Vec<f64>> {
    if m < p_values.len() {
        return Err(PyValueError::new_err("m must cover all comparisons"));
    }
    Ok(stats::bonferroni(&p_values, m))
}

/// Combined-minus-sum synergy over per-layer deltas (pp).
#[pyfunction]
fn synergy(
    py: Python<'_>,
    individual: BTreeMap<String, f64>,
    combined: f64,
) -> PyResult<Py<PyAny>> {
    let mut per_layer = BTreeMap::new();
    for (name, delta) in individual {
        per_layer.insert(parse_layer(&name)?, delta);
    }
    to_py(py, &stats::synergy(&per_layer, combined))
}

/// Deployment verdict from baseline accuracy, task kind, and pilot size.
#[pyfunction]
#[pyo3(signature = (baseline_acc, task_kind, n_pilot, policy_path=None))]
fn categorize(
    py: Python<'_>,
    baseline_acc: f64,
    task_kind: &str,
    n_pilot: u64,
    policy_path: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let policy = match policy_path {
        Some(path) => AdvisorPolicy::load(&path).map_err(value_err)?,
        None => AdvisorPolicy::default(),
    };
    let verdict = advisor::categorize(baseline_acc, parse_task_kind(task_kind)?, n_pilot, &policy);
    to_py(py, &verdict)
}

/// One paired synthetic experiment: baseline vs the full three-layer
/// strategy, per-case draws keyed by (case_id, seed).
#[pyfunction]
#[pyo3(signature = (n_cases, seed, base_accuracy, layer_mix, repair_prob, kappa=0.0, tau=0.75))]
fn synthetic_experiment(
    py: Python<'_>,
    n_cases: usize,
    seed: u64,
    base_accuracy: f64,
    layer_mix: (f64, f64, f64),
    repair_prob: BTreeMap<String, f64>,
    kappa: f64,
    tau: f64,
) -> PyResult<Py<PyAny>> {
    let profile = profile_from_args(base_accuracy, layer_mix, repair_prob, kappa, tau)?;
    let all_layers: std::collections::BTreeSet<Layer> = Layer::ALL.into_iter().collect();
    let none = std::collections::BTreeSet::new();
    let outcomes: Vec<PairedOutcome> = (0..n_cases)
        .map(|i| {
            let case_id = format!("syn-{i:05}");
            PairedOutcome {
                baseline_correct: synthetic_outcome(&case_id, &none, &profile, seed).correct,
                enhanced_correct: synthetic_outcome(&case_id, &all_layers, &profile, seed).correct,
                case_id,
            }
        })
        .collect();
    let t = Contingency::from_outcomes(&outcomes);
    let mc = stats::mcnemar(t.b, t.c);
    let doc = serde_json::json!({
        "n": t.n(),
        "baseline_acc": t.baseline_acc(),
        "enhanced_acc": t.enhanced_acc(),
        "delta_pp": t.delta_pp(),
        "p_value": mc.p_value,
        "contingency": t,
    });
    json_to_py(py, &doc)
}

/// Synthetic boundary sweep over a p0 grid; returns rows plus the fitted
/// pearson r.
#[pyfunction]
#[pyo3(signature = (p0_grid, cases_per_point, seeds, base_accuracy=0.6, layer_mix=(0.584, 0.396, 0.020), repair_prob=None, kappa=0.0, tau=0.75))]
#[allow(clippy::too_many_arguments)]
fn boundary_sweep(
    py: Python<'_>,
    p0_grid: Vec<f64>,
    cases_per_point: usize,
    seeds: Vec<u64>,
    base_accuracy: f64,
    layer_mix: (f64, f64, f64),
    repair_prob: Option<BTreeMap<String, f64>>,
    kappa: f64,
    tau: f64,
) -> PyResult<Py<PyAny>> {
    let repair_prob = repair_prob.unwrap_or_else(|| {
        BTreeMap::from([
            ("knowledge".to_string(), 0.55),
            ("reasoning".to_string(), 0.30),
            ("complexity".to_string(), 0.10),
        ])
    });
    let profile = profile_from_args(base_accuracy, layer_mix, repair_prob, kappa, tau)?;
    let result =
        advisor::boundary_sweep(&profile, &p0_grid, cases_per_point, &seeds).map_err(value_err)?;
    to_py(py, &result)
}

#[pymodule]
fn hec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<CaseSet>()?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(paired_stats, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_r, m)?)?;
    m.add_function(wrap_pyfunction!(bonferroni, m)?)?;
    m.add_function(wrap_pyfunction!(synergy, m)?)?;
    m.add_function(wrap_pyfunction!(categorize, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_sweep, m)?)?;
    Ok(())
}
