//! Python bindings: samples, model specs, fitting, derived reports and
//! simulation studies. Results come back as plain Python lists and dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lbgm::data::{
    load_long_csv, read_long_csv, save_long_csv, validate, LoadOptions, LongitudinalSample,
};
use lbgm::derived::{DerivedReport, DerivedValue};
use lbgm::estimator::{fiml_deviance, parameter_rows, FitOptions};
use lbgm::model::{ModelSpec, OutcomeModelSpec};
use lbgm::simstudy::{generate_dataset, run_study, SimulationDesign, StudyOptions};
use lbgm::LbgmError;

fn to_py(e: LbgmError) -> PyErr {
    match e {
        LbgmError::NotPositiveDefinite { .. }
        | LbgmError::RetriesExhausted { .. }
        | LbgmError::VcovUnavailable => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Long-format longitudinal data for one or two outcomes.
#[pyclass(name = "Sample", module = "lbgm", frozen)]
struct PySample {
    inner: LongitudinalSample,
}

#[pymethods]
impl PySample {
    /// Load a CSV with columns id,outcome,wave,time,value.
    #[staticmethod]
    #[pyo3(signature = (path, drop_values = Vec::new()))]
    fn from_csv(path: &str, drop_values: Vec<f64>) -> PyResult<Self> {
        let opts = LoadOptions {
            drop_values,
            ..LoadOptions::default()
        };
        Ok(Self {
            inner: load_long_csv(path, &opts).map_err(to_py)?,
        })
    }

    /// Build from `(id, outcome, wave, time, value)` tuples.
    #[staticmethod]
    fn from_records(records: Vec<(String, String, usize, f64, f64)>) -> PyResult<Self> {
        let mut text = String::from("id,outcome,wave,time,value\n");
        for (id, outcome, wave, time, value) in records {
            if id.contains([',', '"', '\n']) || outcome.contains([',', '"', '\n']) {
                return Err(PyValueError::new_err("ids and labels may not contain commas or quotes"));
            }
            text.push_str(&format!("{id},{outcome},{wave},{time:?},{value:?}\n"));
        }
        Ok(Self {
            inner: read_long_csv(text.as_bytes(), &LoadOptions::default()).map_err(to_py)?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        save_long_csv(&self.inner, path).map_err(to_py)
    }

    /// Validation problems as strings; empty when the sample is usable.
    fn problems(&self) -> Vec<String> {
        let report = validate(&self.inner);
        report.to_string().lines().map(str::to_string).filter(|l| !l.is_empty()).collect()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn outcomes(&self) -> Vec<String> {
        self.inner.outcome_labels().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Sample(n={}, outcomes={:?})", self.inner.n(), self.inner.outcome_labels())
    }
}

/// Which outcomes to model, their wave counts and scaling intervals.
#[pyclass(name = "ModelSpec", module = "lbgm", frozen)]
struct PyModelSpec {
    inner: ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    /// `outcomes` holds `(label, waves, fixed_interval)` for one or two outcomes.
    #[new]
    #[pyo3(signature = (outcomes, cross_fixed_zero = false))]
    fn new(outcomes: Vec<(String, usize, usize)>, cross_fixed_zero: bool) -> PyResult<Self> {
        let mut inner = ModelSpec::new(
            outcomes
                .into_iter()
                .map(|(label, waves, fixed_interval)| OutcomeModelSpec {
                    label,
                    waves,
                    fixed_interval,
                })
                .collect(),
        )
        .map_err(to_py)?;
        inner.cross_fixed_zero = cross_fixed_zero;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ModelSpec::from_toml_str(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn __repr__(&self) -> String {
        let parts: Vec<String> = self
            .inner
            .outcomes
            .iter()
            .map(|o| format!("({:?}, {}, {})", o.label, o.waves, o.fixed_interval))
            .collect();
        format!("ModelSpec([{}])", parts.join(", "))
    }
}

fn derived_dict<'py>(py: Python<'py>, v: &Option<DerivedValue>) -> PyResult<Bound<'py, PyAny>> {
    match v {
        None => Ok(py.None().into_bound(py)),
        Some(v) => {
            let d = PyDict::new(py);
            d.set_item("estimate", v.estimate)?;
            d.set_item("se", v.se)?;
            d.set_item("pvalue", v.pvalue)?;
            Ok(d.into_any())
        }
    }
}

/// A fitted model.
#[pyclass(name = "FitResult", module = "lbgm", frozen)]
struct PyFitResult {
    inner: lbgm::estimator::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn status(&self) -> &'static str {
        self.inner.status.as_str()
    }

    #[getter]
    fn deviance(&self) -> f64 {
        self.inner.deviance
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn attempts(&self) -> usize {
        self.inner.attempts
    }

    /// Free parameters by name.
    fn estimates<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (name, v) in self.inner.names().iter().zip(self.inner.estimate_vector.iter()) {
            d.set_item(name, *v)?;
        }
        Ok(d)
    }

    /// Standard errors by name; `None` where unavailable.
    fn standard_errors<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (name, v) in self.inner.names().iter().zip(&self.inner.se) {
            d.set_item(name, *v)?;
        }
        Ok(d)
    }

    /// Rows of `parameter, estimate, se, ci_low, ci_high, pvalue`.
    fn parameter_table<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let rows = PyList::empty(py);
        for r in parameter_rows(&self.inner) {
            let d = PyDict::new(py);
            d.set_item("parameter", &r.parameter)?;
            d.set_item("estimate", r.estimate)?;
            d.set_item("se", r.se)?;
            d.set_item("ci_low", r.ci.map(|c| c.0))?;
            d.set_item("ci_high", r.ci.map(|c| c.1))?;
            d.set_item("pvalue", r.pvalue)?;
            rows.append(d)?;
        }
        Ok(rows)
    }

    /// Derived quantities as rows of `panel, quantity, cells`; each cell is a
    /// dict of estimate, se and pvalue, or `None`.
    fn derived<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let report = DerivedReport::from_fit(&self.inner).map_err(to_py)?;
        let rows = PyList::empty(py);
        for r in &report.rows {
            let d = PyDict::new(py);
            d.set_item("panel", &r.panel)?;
            d.set_item("quantity", &r.quantity)?;
            let cells = PyList::empty(py);
            for c in &r.cells {
                cells.append(derived_dict(py, c)?)?;
            }
            d.set_item("cells", cells)?;
            rows.append(d)?;
        }
        Ok(rows)
    }

    /// −2 log-likelihood of `sample` at the given free-parameter values.
    fn deviance_at(&self, sample: &PySample, values: Vec<f64>) -> PyResult<f64> {
        if values.len() != self.inner.layout.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} values, got {}",
                self.inner.layout.len(),
                values.len()
            )));
        }
        let params = self
            .inner
            .layout
            .apply(&nalgebra::DVector::from_vec(values), &self.inner.estimates);
        fiml_deviance(&params, &self.inner.spec, &sample.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult(status={}, deviance={:.4}, parameters={})",
            self.inner.status.as_str(),
            self.inner.deviance,
            self.inner.layout.len()
        )
    }
}

/// Fit a univariate or parallel latent basis growth model by full-information
/// maximum likelihood.
#[pyfunction]
#[pyo3(signature = (sample, spec, max_retries = 10, seed = 0))]
fn fit(py: Python<'_>, sample: &PySample, spec: &PyModelSpec, max_retries: usize, seed: u64) -> PyResult<PyFitResult> {
    let opts = FitOptions {
        max_retries,
        rng_seed: seed,
        ..FitOptions::default()
    };
    let inner = py
        .detach(|| lbgm::estimator::fit(&sample.inner, &spec.inner, &opts))
        .map_err(to_py)?;
    Ok(PyFitResult { inner })
}

/// Population values and measurement schedule for simulation.
#[pyclass(name = "Design", module = "lbgm")]
struct PyDesign {
    inner: SimulationDesign,
}

#[pymethods]
impl PyDesign {
    /// Bivariate ten-wave design with decreasing rates.
    #[staticmethod]
    fn ten_wave_decreasing() -> Self {
        Self {
            inner: SimulationDesign::ten_wave_decreasing(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SimulationDesign::from_toml_str(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn get_n(&self) -> usize {
        self.inner.n
    }

    #[setter]
    fn set_n(&mut self, n: usize) {
        self.inner.n = n;
    }

    /// Model spec matching the design.
    fn model_spec(&self) -> PyModelSpec {
        PyModelSpec {
            inner: self.inner.model_spec(),
        }
    }

    /// Draw one dataset.
    fn generate(&self, seed: u64) -> PyResult<PySample> {
        let g = generate_dataset(&self.inner, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
        Ok(PySample { inner: g.sample })
    }

    fn __repr__(&self) -> String {
        format!(
            "Design(n={}, waves={}, outcomes={})",
            self.inner.n,
            self.inner.waves(),
            self.inner.outcomes.len()
        )
    }
}

/// Run a Monte Carlo study and return its summary: convergence counts and
/// per-parameter metrics.
#[pyfunction]
#[pyo3(signature = (design, reps, seed, parallel = true))]
fn study<'py>(py: Python<'py>, design: &PyDesign, reps: usize, seed: u64, parallel: bool) -> PyResult<Bound<'py, PyDict>> {
    let opts = StudyOptions {
        parallel,
        ..StudyOptions::new(reps, seed)
    };
    let res = py.detach(|| run_study(&design.inner, &opts)).map_err(to_py)?;
    let r = &res.report;
    let out = PyDict::new(py);
    out.set_item("convergence_rate", r.convergence_rate)?;
    out.set_item("attempted", r.attempted)?;
    out.set_item("converged", r.converged)?;
    out.set_item("cap_reached", r.cap_reached)?;
    let metrics = PyList::empty(py);
    for p in &r.parameters {
        let d = PyDict::new(py);
        d.set_item("parameter", &p.parameter)?;
        d.set_item("truth", p.truth)?;
        d.set_item("relative_bias", p.relative_bias)?;
        d.set_item("empirical_se", p.empirical_se)?;
        d.set_item("relative_rmse", p.relative_rmse)?;
        d.set_item("coverage", p.coverage)?;
        d.set_item("absolute", p.absolute)?;
        metrics.append(d)?;
    }
    out.set_item("metrics", metrics)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "lbgm")]
fn lbgm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyDesign>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(study, m)?)?;
    Ok(())
}
