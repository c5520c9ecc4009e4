//! Python module `dpsu`.
//!
//! Structured results (reports, stats, audit verdicts) cross the boundary as
//! plain dicts built from their JSON form.

use std::collections::{BTreeMap, BTreeSet};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use dpsu_core::ingestion::{self as ing, CorpusFormat, SynthParams};
use dpsu_core::sensitivity::{self as sens, DeletionMode};
use dpsu_core::{
    DpsuError, Mechanism, MechanismConfig, PolicyKind, PrivacyParams, UpdatePolicy, WeightedHistogram,
};

fn to_py(e: DpsuError) -> PyErr {
    match e {
        DpsuError::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_dict<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr<Err = DpsuError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// A set-valued database: user id -> set of items.
#[pyclass(module = "dpsu", frozen)]
struct Database {
    inner: dpsu_core::Database,
}

#[pymethods]
impl Database {
    #[new]
    fn new(sets: BTreeMap<String, BTreeSet<String>>) -> PyResult<Self> {
        let inner = dpsu_core::Database::from_sets(sets).map_err(to_py)?;
        Ok(Database { inner })
    }

    /// Load a JSONL or TSV corpus; format inferred from the extension by default.
    #[staticmethod]
    #[pyo3(signature = (path, format=None, ngram=1))]
    fn load(path: &str, format: Option<&str>, ngram: usize) -> PyResult<Self> {
        let format = match format {
            Some(f) => parse::<CorpusFormat>(f)?,
            None => CorpusFormat::from_path(path.as_ref()),
        };
        let inner = ing::load_corpus(path, format, ngram).map_err(to_py)?;
        Ok(Database { inner })
    }

    /// Synthetic Zipf corpus. `size_mu`/`size_sigma` set the lognormal set-size law.
    #[staticmethod]
    #[pyo3(signature = (n_users, vocab_size, exponent=1.0, seed=0, size_mu=None, size_sigma=None))]
    fn synth(
        n_users: usize,
        vocab_size: usize,
        exponent: f64,
        seed: u64,
        size_mu: Option<f64>,
        size_sigma: Option<f64>,
    ) -> PyResult<Self> {
        let mut params = SynthParams::new(n_users, vocab_size, exponent, seed);
        if let (Some(mu), Some(sigma)) = (size_mu, size_sigma) {
            params = params.with_set_sizes(mu, sigma);
        }
        let inner = ing::synth_zipf_corpus(&params).map_err(to_py)?;
        Ok(Database { inner })
    }

    fn write_tsv(&self, path: &str) -> PyResult<()> {
        ing::write_tsv_file(&self.inner, path).map_err(to_py)
    }

    fn to_dict(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.inner.users().iter().map(|u| (u.user_id.clone(), u.items.clone())).collect()
    }

    fn item_union(&self) -> BTreeSet<String> {
        self.inner.item_union()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Database(users={}, items={})", self.inner.len(), self.inner.item_union().len())
    }
}

#[pyclass(module = "dpsu", frozen, get_all)]
struct Calibration {
    mechanism: String,
    noise: String,
    scale: f64,
    rho: f64,
    gamma: f64,
}

#[pymethods]
impl Calibration {
    fn __repr__(&self) -> String {
        format!(
            "Calibration(mechanism={:?}, scale={}, rho={}, gamma={})",
            self.mechanism, self.scale, self.rho, self.gamma
        )
    }
}

/// Noise scale, threshold ρ and cutoff Γ for a mechanism.
#[pyfunction]
#[pyo3(signature = (mechanism, epsilon, delta, delta0, alpha=0.0))]
fn calibrate(mechanism: &str, epsilon: f64, delta: f64, delta0: usize, alpha: f64) -> PyResult<Calibration> {
    let m: Mechanism = parse(mechanism)?;
    let params = PrivacyParams::new(epsilon, delta).map_err(to_py)?;
    let c = dpsu_core::calibrate(m, &params, delta0, alpha).map_err(to_py)?;
    Ok(Calibration {
        mechanism: m.name().to_owned(),
        noise: format!("{:?}", c.noise_kind).to_lowercase(),
        scale: c.scale,
        rho: c.rho,
        gamma: c.gamma,
    })
}

/// Run the full mechanism; returns the release report as a dict.
#[pyfunction]
#[pyo3(signature = (db, mechanism, epsilon, delta, delta0, alpha=0.0, seed=0, passes=1, experimental=false))]
#[allow(clippy::too_many_arguments)]
fn run_dpsu<'py>(
    py: Python<'py>,
    db: &Database,
    mechanism: &str,
    epsilon: f64,
    delta: f64,
    delta0: usize,
    alpha: f64,
    seed: u64,
    passes: u32,
    experimental: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let params = PrivacyParams::new(epsilon, delta).map_err(to_py)?;
    let config = MechanismConfig::new(parse(mechanism)?, delta0, alpha, seed)
        .with_passes(passes)
        .with_experimental(experimental);
    let report = py
        .detach(|| dpsu_core::run_dpsu(&db.inner, &config, &params))
        .map_err(to_py)?;
    to_dict(py, &report)
}

/// Apply one update of a policy to a histogram dict; returns the new dict.
#[pyfunction]
#[pyo3(signature = (policy, histogram, items, gamma=1.0, delta0=1))]
fn apply_policy(
    policy: &str,
    histogram: BTreeMap<String, f64>,
    items: BTreeSet<String>,
    gamma: f64,
    delta0: usize,
) -> PyResult<BTreeMap<String, f64>> {
    let kind: PolicyKind = parse(policy)?;
    let h = WeightedHistogram::from_pairs(histogram);
    let out = UpdatePolicy::of_kind(kind, gamma, delta0).applied(&h, &items).map_err(to_py)?;
    Ok(out.iter().map(|(k, v)| (k.clone(), v)).collect())
}

#[pyfunction]
#[pyo3(signature = (text, n=1))]
fn tokenize(text: &str, n: usize) -> BTreeSet<String> {
    ing::tokenize(text, n)
}

#[pyfunction]
#[pyo3(signature = (db, thresholds=Vec::new()))]
fn corpus_stats<'py>(py: Python<'py>, db: &Database, thresholds: Vec<usize>) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &ing::corpus_stats(&db.inner, &thresholds))
}

#[pyfunction]
fn k_anonymity<'py>(
    py: Python<'py>,
    db: &Database,
    k: usize,
    released: BTreeSet<String>,
) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &ing::k_anonymity_baseline(&db.inner, k, &released))
}

/// Worst neighbouring-histogram distance of a mechanism's policy on `db`.
/// `sample` limits the deletions to that many users.
#[pyfunction]
#[pyo3(signature = (db, mechanism, epsilon, delta, delta0, alpha=0.0, seed=0, sample=None))]
#[allow(clippy::too_many_arguments)]
fn sensitivity<'py>(
    py: Python<'py>,
    db: &Database,
    mechanism: &str,
    epsilon: f64,
    delta: f64,
    delta0: usize,
    alpha: f64,
    seed: u64,
    sample: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let params = PrivacyParams::new(epsilon, delta).map_err(to_py)?;
    let config = MechanismConfig::new(parse(mechanism)?, delta0, alpha, seed);
    let mode = sample.map_or(DeletionMode::AllUsers, DeletionMode::Sampled);
    let report = py
        .detach(|| sens::mechanism_sensitivity(&db.inner, &config, &params, mode))
        .map_err(to_py)?;
    to_dict(py, &report)
}

#[pyfunction]
#[pyo3(signature = (policy, trials=10_000, seed=0))]
fn audit<'py>(py: Python<'py>, policy: &str, trials: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let kind: PolicyKind = parse(policy)?;
    let verdict = py.detach(|| sens::run_audit(kind, trials, seed)).map_err(to_py)?;
    to_dict(py, &verdict)
}

/// ℓ1 gap of the greedy construction with `n` users and the pivot at `i`.
#[pyfunction]
#[pyo3(signature = (n, i, gamma=None))]
fn greedy_counterexample(n: usize, i: usize, gamma: Option<f64>) -> PyResult<f64> {
    let gamma = gamma.unwrap_or(10.0 * n as f64 + 10.0);
    sens::greedy_counterexample(n, i, gamma).map(|(gap, _)| gap).map_err(to_py)
}

#[pymodule]
fn dpsu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Database>()?;
    m.add_class::<Calibration>()?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(run_dpsu, m)?)?;
    m.add_function(wrap_pyfunction!(apply_policy, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    m.add_function(wrap_pyfunction!(k_anonymity, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_counterexample, m)?)?;
    let names: Vec<&str> = Mechanism::PRIVATE.iter().map(|m| m.name()).collect();
    m.add("MECHANISMS", names)?;
    Ok(())
}
