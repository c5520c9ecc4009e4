//! Experiment grids over mechanisms and hyperparameters.
//!
//! Every cell of a grid is run once per shuffle seed; results are aggregated
//! in a fixed order, so a grid's output depends only on its spec.

mod report;
mod welch;

pub use report::{emit_report, render_report, ReportFormat};
pub use welch::{welch_t_test, WelchTest};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DpsuError, Result};
use crate::ingestion::{load_corpus, synth_zipf_corpus, CorpusFormat, SynthParams};
use crate::model::{Database, Mechanism, MechanismConfig, PrivacyParams};
use crate::release::run_dpsu;

/// Label attached to every grid output.
pub const NON_PRIVATE_LABEL: &str =
    "non-private: hyperparameter sweep; choosing the best cell consumes additional privacy budget";

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "DPSU_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    File {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<CorpusFormat>,
        #[serde(default = "default_ngram")]
        ngram: usize,
    },
    Synthetic(SynthParams),
}

fn default_ngram() -> usize {
    1
}

impl CorpusSource {
    pub fn load(&self) -> Result<Database> {
        match self {
            CorpusSource::File { path, format, ngram } => {
                let format = format.unwrap_or_else(|| CorpusFormat::from_path(path));
                load_corpus(path, format, *ngram)
            }
            CorpusSource::Synthetic(params) => synth_zipf_corpus(params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub corpus: CorpusSource,
    pub mechanisms: Vec<Mechanism>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub delta0s: Vec<usize>,
    pub alphas: Vec<f64>,
    #[serde(default = "default_shuffles")]
    pub shuffles: usize,
    #[serde(default = "default_passes")]
    pub passes: Vec<u32>,
    /// Shuffle `s` runs with seed `base_seed + s`.
    #[serde(default)]
    pub base_seed: u64,
}

fn default_shuffles() -> usize {
    5
}

fn default_passes() -> Vec<u32> {
    vec![1]
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str| DpsuError::invalid(format!("experiment spec: `{name}` is empty"));
        if self.mechanisms.is_empty() {
            return Err(empty("mechanisms"));
        }
        if self.epsilons.is_empty() {
            return Err(empty("epsilons"));
        }
        if self.delta0s.is_empty() {
            return Err(empty("delta0s"));
        }
        if self.alphas.is_empty() {
            return Err(empty("alphas"));
        }
        if self.passes.is_empty() {
            return Err(empty("passes"));
        }
        if self.shuffles < 1 {
            return Err(DpsuError::invalid("experiment spec: shuffles must be at least 1"));
        }
        Ok(())
    }

    /// Cells in output order: mechanism, then ε, Δ0, α, passes.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &mechanism in &self.mechanisms {
            for &epsilon in &self.epsilons {
                for &delta0 in &self.delta0s {
                    for &alpha in &self.alphas {
                        for &passes in &self.passes {
                            cells.push(Cell { mechanism, epsilon, delta0, alpha, passes });
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.shuffles as u64).map(|s| self.base_seed.wrapping_add(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta0: usize,
    pub alpha: f64,
    pub passes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    #[serde(flatten)]
    pub cell: Cell,
    /// Released-set size per shuffle seed, in seed order.
    pub sizes: Vec<usize>,
    pub mean: f64,
    /// Sample standard deviation; 0 with a single shuffle.
    pub sd: f64,
    /// Whether every run of the cell carried the privacy guarantee.
    pub private: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub n_users: usize,
    pub n_items: usize,
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    pub fn cell(&self, mechanism: Mechanism, epsilon: f64, delta0: usize, alpha: f64, passes: u32) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.cell.mechanism == mechanism
                && c.cell.epsilon == epsilon
                && c.cell.delta0 == delta0
                && c.cell.alpha == alpha
                && c.cell.passes == passes
        })
    }
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Worker count from `DPSU_WORKERS`, if set to a positive integer.
pub fn worker_limit() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

/// Runs `f` on a pool capped by `DPSU_WORKERS` (or rayon's default).
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_limit() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| DpsuError::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Loads the corpus and runs the grid.
pub fn run_grid(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let db = spec.corpus.load()?;
    run_grid_on(spec, &db)
}

/// Runs the grid on an already loaded database; `spec.corpus` is ignored.
///
/// A failing run marks its cell with an error and the grid carries on.
/// Multi-pass cells run with the experimental flag and are never private.
pub fn run_grid_on(spec: &ExperimentSpec, db: &Database) -> Result<ExperimentResult> {
    spec.validate()?;
    let cells = spec.cells();
    let seeds = spec.seeds();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();

    let outcomes: Vec<Result<(usize, bool)>> = with_workers(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let cell = &cells[c];
                let params = PrivacyParams::new(cell.epsilon, spec.delta)?;
                let config = MechanismConfig::new(cell.mechanism, cell.delta0, cell.alpha, seed)
                    .with_passes(cell.passes)
                    .with_experimental(cell.passes > 1);
                let report = run_dpsu(db, &config, &params)?;
                Ok((report.released_size, report.private))
            })
            .collect()
    })?;

    let per_cell = seeds.len();
    let results = cells
        .iter()
        .zip(outcomes.chunks(per_cell))
        .map(|(cell, runs)| {
            let error = runs.iter().find_map(|r| r.as_ref().err().map(|e| e.to_string()));
            let ok: Vec<(usize, bool)> = runs.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            let sizes: Vec<usize> = ok.iter().map(|r| r.0).collect();
            let (mean, sd) = mean_sd(&sizes.iter().map(|&s| s as f64).collect::<Vec<_>>());
            CellResult {
                cell: *cell,
                private: error.is_none() && ok.iter().all(|r| r.1),
                sizes,
                mean,
                sd,
                error,
            }
        })
        .collect();

    Ok(ExperimentResult {
        label: NON_PRIVATE_LABEL.to_string(),
        delta: spec.delta,
        seeds,
        n_users: db.len(),
        n_items: db.item_union().len(),
        cells: results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassTest {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta0: usize,
    pub alpha: f64,
    pub single: f64,
    pub double: f64,
    #[serde(flatten)]
    pub test: WelchTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassComparison {
    pub result: ExperimentResult,
    pub tests: Vec<PassTest>,
}

/// Runs the grid with `passes = {1, 2}` and a two-sided Welch test of the
/// released sizes per (mechanism, ε, Δ0, α).
pub fn compare_passes(spec: &ExperimentSpec) -> Result<PassComparison> {
    let db = spec.corpus.load()?;
    compare_passes_on(spec, &db)
}

pub fn compare_passes_on(spec: &ExperimentSpec, db: &Database) -> Result<PassComparison> {
    if spec.shuffles < 2 {
        return Err(DpsuError::invalid("comparing passes needs at least 2 shuffles"));
    }
    let spec = ExperimentSpec { passes: vec![1, 2], ..spec.clone() };
    let result = run_grid_on(&spec, db)?;
    let mut tests = Vec::new();
    for pair in result.cells.chunks(2) {
        let (one, two) = (&pair[0], &pair[1]);
        if one.error.is_some() || two.error.is_some() {
            continue;
        }
        let as_f64 = |c: &CellResult| c.sizes.iter().map(|&s| s as f64).collect::<Vec<_>>();
        tests.push(PassTest {
            mechanism: one.cell.mechanism,
            epsilon: one.cell.epsilon,
            delta0: one.cell.delta0,
            alpha: one.cell.alpha,
            single: one.mean,
            double: two.mean,
            test: welch_t_test(&as_f64(one), &as_f64(two))?,
        });
    }
    Ok(PassComparison { result, tests })
}
