//! Python bindings for the odetune autotuner.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;

use odetune_core::cli::{self, DescArgs, TuneOptions};
use odetune_core::codegen::enumerate_variants;
use odetune_core::descfmt::ValidatedScenario;
use odetune_core::predict::{self, Selection, Strategy};
use odetune_core::store::Store;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(odetune, OdetuneError, PyException);

fn err(e: impl Display) -> PyErr {
    OdetuneError::new_err(e.to_string())
}

/// Validated tuning scenario loaded from description files.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    inner: ValidatedScenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    #[pyo3(signature = (machine, methods, templates_dir, skeletons_dir, ivps = vec![], n = None, n_max = None, cores = vec![], deviation = 5.0))]
    #[allow(clippy::too_many_arguments)]
    fn load(
        machine: PathBuf,
        methods: Vec<PathBuf>,
        templates_dir: PathBuf,
        skeletons_dir: PathBuf,
        ivps: Vec<PathBuf>,
        n: Option<u64>,
        n_max: Option<u64>,
        cores: Vec<u32>,
        deviation: f64,
    ) -> PyResult<Self> {
        let inner = cli::load_scenario(
            &machine,
            &methods,
            &ivps,
            &templates_dir,
            &skeletons_dir,
            n,
            n_max,
            &cores,
            deviation,
        )
        .map_err(err)?;
        Ok(PyScenario { inner })
    }

    #[getter]
    fn machine(&self) -> String {
        self.inner.machine.name.clone()
    }

    #[getter]
    fn cores(&self) -> Vec<u32> {
        self.inner.cores.clone()
    }

    #[getter]
    fn variant_ids(&self) -> Vec<String> {
        enumerate_variants(&self.inner.skeletons, &self.inner.templates)
            .into_iter()
            .map(|v| v.id)
            .collect()
    }

    /// System sizes tuned for `method`.
    fn sizes(&self, method: &str) -> PyResult<Vec<u64>> {
        let m = self
            .inner
            .methods
            .iter()
            .find(|m| m.name == method)
            .ok_or_else(|| PyValueError::new_err(format!("no method `{method}` in scenario")))?;
        Ok(cli::tune::sizes_for(&self.inner, m))
    }
}

/// Prediction store, backed by a JSON file or held in memory.
#[pyclass(name = "Store")]
struct PyStore {
    inner: Store,
}

#[pymethods]
impl PyStore {
    #[new]
    #[pyo3(signature = (path = None))]
    fn new(path: Option<PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => Store::open(&p).map_err(err)?,
            None => Store::in_memory(),
        };
        Ok(PyStore { inner })
    }

    fn save(&self) -> PyResult<()> {
        self.inner.save().map_err(err)
    }

    fn export_csv(&self) -> String {
        self.inner.export_csv()
    }

    fn __len__(&self) -> usize {
        self.inner.predictions().count()
    }
}

#[pyclass(name = "TuneResult", get_all, frozen)]
struct PyTuneResult {
    report_json: String,
    report_text: String,
    ecm_evaluations: usize,
    reused: usize,
    evaluated_kernels: Vec<String>,
    /// `(variant, tau, n, theta)` for every predicted variant.
    predictions: Vec<(String, u32, u64, f64)>,
}

/// Ranks all variants of `scenario`, reusing and filling `store`.
#[pyfunction]
#[pyo3(signature = (scenario, store, barrier_csv = None, out_dir = None))]
fn tune(
    scenario: &PyScenario,
    store: &mut PyStore,
    barrier_csv: Option<&str>,
    out_dir: Option<PathBuf>,
) -> PyResult<PyTuneResult> {
    let barrier_samples = barrier_csv.map(predict::read_barrier_csv).transpose().map_err(err)?;
    let o = cli::tune(&scenario.inner, &mut store.inner, &TuneOptions { barrier_samples, out_dir }).map_err(err)?;
    Ok(PyTuneResult {
        report_json: o.report.to_json(),
        report_text: o.report.to_text(),
        ecm_evaluations: o.stats.ecm_evaluations,
        reused: o.stats.reused,
        evaluated_kernels: o.stats.evaluated_kernels.into_iter().collect(),
        predictions: o
            .predictions
            .into_iter()
            .map(|p| (p.variant, p.tau, p.n, p.theta))
            .collect(),
    })
}

/// C source of one variant.
#[pyfunction]
#[pyo3(signature = (method, templates_dir, skeletons_dir, variant, n, ivp = None))]
fn variant_source(
    method: PathBuf,
    templates_dir: PathBuf,
    skeletons_dir: PathBuf,
    variant: &str,
    n: u64,
    ivp: Option<PathBuf>,
) -> PyResult<String> {
    let desc = DescArgs {
        methods: vec![method],
        ivps: ivp.into_iter().collect(),
        templates_dir,
        skeletons_dir,
        n: Some(n),
    };
    cli::variant_source(&desc, variant).map_err(err)
}

/// Runtime in seconds of one kernel execution.
#[pyfunction]
fn kernel_runtime(alpha: f64, beta: f64, delta: f64, frequency: f64) -> PyResult<f64> {
    predict::kernel_runtime(alpha, beta, delta, frequency).map_err(err)
}

/// Predicted ranking and the variants within the deviation of the best.
#[pyclass(name = "Selection", frozen)]
struct PySelection {
    inner: Selection,
}

#[pymethods]
impl PySelection {
    #[getter]
    fn ranking(&self) -> Vec<(String, f64)> {
        self.inner.ranking.iter().map(|r| (r.variant.clone(), r.theta)).collect()
    }

    #[getter]
    fn lambda_(&self) -> Vec<String> {
        self.inner.lambda().iter().map(|r| r.variant.clone()).collect()
    }

    #[getter]
    fn deviation(&self) -> f64 {
        self.inner.deviation
    }

    fn with_deviation(&self, deviation: f64) -> PySelection {
        PySelection {
            inner: self.inner.with_deviation(deviation),
        }
    }
}

#[pyfunction]
#[pyo3(signature = (thetas, deviation = 5.0))]
fn rank(thetas: Vec<(String, f64)>, deviation: f64) -> PyResult<PySelection> {
    Ok(PySelection {
        inner: predict::rank_thetas(&thetas, deviation).map_err(err)?,
    })
}

#[pyclass(name = "StrategyOutcome", get_all, frozen)]
struct PyStrategyOutcome {
    strategy: String,
    tested: Vec<String>,
    chosen: String,
    t_step: f64,
    loss: f64,
    overhead: f64,
    t_at: f64,
    gain: f64,
}

/// Simulates one strategy over measured runtimes. `strategy` is one of
/// `BestVariant`, `RunAll`, `OffsitePreselect` and `RandomSelect`.
#[pyfunction]
#[pyo3(signature = (strategy, measured, selection, deviation = 5.0, k = 20, seed = 0))]
fn run_strategy(
    strategy: &str,
    measured: BTreeMap<String, f64>,
    selection: &PySelection,
    deviation: f64,
    k: usize,
    seed: u64,
) -> PyResult<PyStrategyOutcome> {
    let s = match strategy {
        "BestVariant" => Strategy::BestVariant,
        "RunAll" => Strategy::RunAll,
        "OffsitePreselect" => Strategy::OffsitePreselect(deviation),
        "RandomSelect" => Strategy::RandomSelect { k },
        other => return Err(PyValueError::new_err(format!("unknown strategy `{other}`"))),
    };
    let o = predict::run_strategy(s, &measured, &selection.inner, seed).map_err(err)?;
    Ok(PyStrategyOutcome {
        strategy: o.strategy,
        tested: o.tested,
        chosen: o.chosen,
        t_step: o.t_step,
        loss: o.loss,
        overhead: o.overhead,
        t_at: o.t_at,
        gain: o.gain,
    })
}

#[pymodule]
fn odetune(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OdetuneError", m.py().get_type::<OdetuneError>())?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyStore>()?;
    m.add_class::<PyTuneResult>()?;
    m.add_class::<PySelection>()?;
    m.add_class::<PyStrategyOutcome>()?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(variant_source, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_runtime, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(run_strategy, m)?)?;
    Ok(())
}
