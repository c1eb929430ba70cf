use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use e3ir_core::dataset::{self, CsvSchema, SplitSpec, SyntheticConfig};
use e3ir_core::knapsack::{self, AllocationProblem};
use e3ir_core::metrics::{self, ScoredSample};
use e3ir_core::model::{self, ModelParams};
use e3ir_core::tensor::DenseMatrix;
use e3ir_core::trainer::{self, TrainConfig};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(value_error)
}

type Rows = Vec<Vec<f64>>;

fn nested(m: &DenseMatrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// A randomized-trial dataset.
#[pyclass(name = "Dataset", module = "e3ir", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, schema = "generic"))]
    fn load_csv(path: PathBuf, schema: &str) -> PyResult<Self> {
        let schema: CsvSchema = schema.parse().map_err(value_error)?;
        let inner = dataset::load_csv(&path, &schema).map_err(value_error)?;
        Ok(Self { inner })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        dataset::write_csv(&self.inner, &path).map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_treatments(&self) -> usize {
        self.inner.num_treatments
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        nested(&self.inner.features())
    }

    #[getter]
    fn treatments(&self) -> Vec<usize> {
        self.inner.treatments()
    }

    #[getter]
    fn costs(&self) -> Vec<f64> {
        self.inner.costs()
    }

    #[getter]
    fn revenues(&self) -> Vec<f64> {
        self.inner.revenues()
    }

    /// True `(revenue uplift, cost uplift)`, or None for observational data.
    fn true_uplifts(&self) -> Option<(Rows, Rows)> {
        self.inner.ground_truth.as_ref().map(|t| {
            let (r, c) = t.uplifts();
            (nested(&r), nested(&c))
        })
    }

    /// 70/15/15 train, validation and test split.
    #[pyo3(signature = (seed = 0))]
    fn split(&self, seed: u64) -> PyResult<(Self, Self, Self)> {
        let (a, b, c) = dataset::split(&self.inner, &SplitSpec { seed, ..SplitSpec::default() }).map_err(value_error)?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, d={}, K={})",
            self.inner.len(),
            self.inner.feature_dim,
            self.inner.num_treatments
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n, d, k, noise = 0.5, seed = 0))]
fn generate_synthetic(n: usize, d: usize, k: usize, noise: f64, seed: u64) -> PyResult<PyDataset> {
    let inner = dataset::generate_synthetic(&SyntheticConfig {
        n,
        d,
        k,
        noise_scale: noise,
        seed,
    })
    .map_err(value_error)?;
    Ok(PyDataset { inner })
}

/// Training hyperparameters; keyword overrides use the config-file keys.
#[pyclass(name = "TrainConfig", module = "e3ir", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut inner = TrainConfig::default();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                let key: String = k.extract()?;
                let value = v.str()?.to_string();
                let value = match value.as_str() {
                    "True" => "true".to_string(),
                    "False" => "false".to_string(),
                    _ => value,
                };
                inner.set(&key, &value).map_err(|m| value_error(format!("{key}: {m}")))?;
            }
        }
        inner.validate().map_err(|(k, m)| value_error(format!("{k}: {m}")))?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainConfig::parse_text(text).map_err(value_error)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }
}

#[pyclass(name = "Model", module = "e3ir")]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(&path).map_err(value_error)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&path, &self.inner).map_err(value_error)
    }

    /// `(tau_revenue, tau_cost)`, each `n x (K+1)` with a zero control column.
    fn uplift(&self, features: Vec<Vec<f64>>) -> PyResult<(Rows, Rows)> {
        let u = self.inner.uplift(&matrix(features)?).map_err(value_error)?;
        Ok((nested(&u.tau_revenue), nested(&u.tau_cost)))
    }

    /// Ranking metrics and per-budget EOM as `(name, value)` pairs.
    fn evaluate(&self, data: &PyDataset, budgets: Vec<f64>) -> PyResult<Vec<(String, f64)>> {
        let r = trainer::evaluate(&self.inner, &data.inner, &budgets).map_err(value_error)?;
        let mut out = r.metrics.clone();
        out.push(("control_eom_revenue".into(), r.control.revenue));
        for row in &r.rows {
            out.push((format!("budget.{}.eom_revenue", row.budget), row.eom.revenue));
            out.push((format!("budget.{}.spent", row.budget), row.spent));
        }
        Ok(out)
    }

    /// Optimal treatment index per row under `budget`.
    fn allocate(&self, features: Vec<Vec<f64>>, budget: f64) -> PyResult<Vec<usize>> {
        let u = self.inner.uplift(&matrix(features)?).map_err(value_error)?;
        let p = AllocationProblem::new(u.tau_revenue, u.tau_cost, budget).map_err(value_error)?;
        Ok(knapsack::solve_mckp(&p).choices)
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }
}

/// Returns the best model and per-epoch `(epoch, prediction, lipschitz,
/// allocation, total, validation_qini)` rows.
#[pyfunction]
#[pyo3(signature = (train, valid, config = None))]
#[allow(clippy::type_complexity)]
fn train(
    py: Python<'_>,
    train: &PyDataset,
    valid: &PyDataset,
    config: Option<&PyTrainConfig>,
) -> PyResult<(PyModel, Vec<(usize, f64, f64, f64, f64, f64)>)> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let (tr, va) = (train.inner.clone(), valid.inner.clone());
    let (m, report) = py
        .detach(move || trainer::train(&tr, &va, &cfg))
        .map_err(value_error)?;
    let epochs = report
        .epochs
        .iter()
        .map(|e| (e.epoch, e.prediction, e.lipschitz, e.allocation, e.total, e.validation_qini))
        .collect();
    Ok((PyModel { inner: m }, epochs))
}

/// Optimal choice of at most one option per user; column 0 is control.
/// Returns `(choices, objective, spent, optimal)`.
#[pyfunction]
fn solve_mckp(
    tau_revenue: Vec<Vec<f64>>,
    tau_cost: Vec<Vec<f64>>,
    budget: f64,
) -> PyResult<(Vec<usize>, f64, f64, bool)> {
    let p = AllocationProblem::new(matrix(tau_revenue)?, matrix(tau_cost)?, budget).map_err(value_error)?;
    let s = knapsack::solve_mckp(&p);
    Ok((s.choices, s.objective, s.spent, s.optimal))
}

fn scored(scores: &[f64], treatments: &[usize], costs: &[f64], revenues: &[f64]) -> PyResult<Vec<ScoredSample>> {
    let n = scores.len();
    if treatments.len() != n || costs.len() != n || revenues.len() != n {
        return Err(value_error("scores, treatments, costs and revenues must have equal length"));
    }
    Ok((0..n)
        .map(|i| ScoredSample {
            score: scores[i],
            treatment: treatments[i],
            cost: costs[i],
            revenue: revenues[i],
        })
        .collect())
}

#[pyfunction]
fn auuc(scores: Vec<f64>, treatments: Vec<usize>, costs: Vec<f64>, revenues: Vec<f64>) -> PyResult<f64> {
    metrics::auuc(&scored(&scores, &treatments, &costs, &revenues)?).map_err(value_error)
}

#[pyfunction]
fn qini(scores: Vec<f64>, treatments: Vec<usize>, costs: Vec<f64>, revenues: Vec<f64>) -> PyResult<f64> {
    metrics::qini(&scored(&scores, &treatments, &costs, &revenues)?).map_err(value_error)
}

#[pyfunction]
fn aucc(scores: Vec<f64>, treatments: Vec<usize>, costs: Vec<f64>, revenues: Vec<f64>) -> PyResult<f64> {
    metrics::aucc(&scored(&scores, &treatments, &costs, &revenues)?).map_err(value_error)
}

#[pymodule]
fn e3ir(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(solve_mckp, m)?)?;
    m.add_function(wrap_pyfunction!(auuc, m)?)?;
    m.add_function(wrap_pyfunction!(qini, m)?)?;
    m.add_function(wrap_pyfunction!(aucc, m)?)?;
    Ok(())
}
