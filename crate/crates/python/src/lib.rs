//! Python bindings: datasets, fitting, projection, evaluation, bounds and
//! the synthetic sweep.

use std::path::PathBuf;

use mda_core::bounds::{self, BoundConstants, TraceGram};
use mda_core::data::{self, CsvSchema, Instance, MultiDomainDataset, Preprocess, SyntheticSpec};
use mda_core::eigsolver::{ComponentRule, HyperParams, DEFAULT_EPSILON};
use mda_core::harness::{self, Grid, SweepOptions};
use mda_core::kernel::{self, Bandwidth};
use mda_core::pipeline::{self, FitOptions, MdaModel};
use mda_core::{model_io, MdaError};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn err(e: MdaError) -> PyErr {
    match e.root() {
        MdaError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn rows(m: &mda_core::pipeline::ProjectedData) -> Vec<Vec<f64>> {
    m.rows.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_preprocess(s: &str) -> PyResult<Preprocess> {
    s.parse().map_err(err)
}

/// Labeled (or unlabeled) instances from several domains.
#[pyclass(name = "Dataset", module = "mda", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: MultiDomainDataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from feature rows and per-row domain and label names.
    /// Pass `labels=None` for an unlabeled set.
    #[new]
    #[pyo3(signature = (features, domains, labels=None))]
    fn new(features: Vec<Vec<f64>>, domains: Vec<String>, labels: Option<Vec<String>>) -> PyResult<Self> {
        let n = features.len();
        if domains.len() != n || labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(PyValueError::new_err("features, domains and labels must have the same length"));
        }
        let dim = features.first().map_or(0, Vec::len);
        let mut domain_names: Vec<String> = Vec::new();
        let mut label_names: Vec<String> = Vec::new();
        let intern = |names: &mut Vec<String>, v: &str| match names.iter().position(|x| x == v) {
            Some(i) => i,
            None => {
                names.push(v.to_string());
                names.len() - 1
            }
        };
        let mut instances = Vec::with_capacity(n);
        for (i, f) in features.into_iter().enumerate() {
            let domain = intern(&mut domain_names, &domains[i]);
            let label = labels.as_ref().map_or(0, |l| intern(&mut label_names, &l[i]));
            instances.push(Instance { features: f, label, domain });
        }
        let inner = match labels {
            Some(_) => MultiDomainDataset::new(instances, dim, domain_names, label_names),
            None => MultiDomainDataset::unlabeled(instances, dim, domain_names),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, domain_column="domain", label_column=Some("label")))]
    fn from_csv(path: PathBuf, domain_column: &str, label_column: Option<&str>) -> PyResult<Self> {
        let schema = CsvSchema {
            domain_column: domain_column.to_string(),
            label_column: label_column.map(str::to_string),
            feature_columns: None,
        };
        Ok(Self {
            inner: data::load_csv(&path, &schema).map_err(err)?,
        })
    }

    /// Draws every domain of the built-in three-domain benchmark.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn table2(seed: u64) -> PyResult<Self> {
        let spec = SyntheticSpec {
            seed,
            ..data::table2_preset()
        };
        Ok(Self {
            inner: spec.generate().map_err(err)?,
        })
    }

    /// Draws from a generator description given as JSON.
    #[staticmethod]
    #[pyo3(signature = (spec_json, seed=None))]
    fn synthetic(spec_json: &str, seed: Option<u64>) -> PyResult<Self> {
        let mut spec: SyntheticSpec =
            serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        if let Some(s) = seed {
            spec.seed = s;
        }
        Ok(Self {
            inner: spec.generate().map_err(err)?,
        })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        data::write_csv(&self.inner, &path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, dim={}, domains={}, classes={})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.num_domains(),
            self.inner.num_classes()
        )
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn labeled(&self) -> bool {
        self.inner.is_labeled()
    }

    #[getter]
    fn domain_names(&self) -> Vec<String> {
        self.inner.domain_names().to_vec()
    }

    #[getter]
    fn label_names(&self) -> Vec<String> {
        self.inner.label_names().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|i| self.inner.features(i).to_vec()).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    #[getter]
    fn domains(&self) -> Vec<usize> {
        self.inner.domains()
    }

    #[getter]
    fn counts(&self) -> Vec<Vec<usize>> {
        self.inner.counts().to_vec()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    fn select_domains(&self, domains: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.select_domains(&domains).map_err(err)?,
        })
    }

    fn standardize_domains(&self) -> Self {
        Self {
            inner: self.inner.standardize_domains(),
        }
    }

    /// Median squared pairwise distance, the bandwidth scale.
    fn median_heuristic(&self) -> PyResult<f64> {
        kernel::median_heuristic(&self.inner).map_err(err)
    }
}

/// A fitted transformation.
#[pyclass(name = "Model", module = "mda")]
pub struct PyModel {
    inner: MdaModel,
}

fn constants(
    delta: f64,
    lipschitz_loss: f64,
    loss_bound: f64,
    kernel_bound_x: f64,
    kernel_bound_x_prime: f64,
    kernel_bound_gamma: f64,
    lipschitz_feature_map: f64,
) -> BoundConstants {
    BoundConstants {
        lipschitz_loss,
        loss_bound,
        kernel_bound_x,
        kernel_bound_x_prime,
        kernel_bound_gamma,
        lipschitz_feature_map,
        delta,
    }
}

#[pymethods]
impl PyModel {
    /// Reads a model written by `save` or by the command-line tool.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model_io::read_model(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model_io::write_model(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.bandwidth().sigma()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.projection().eigenvalues.iter().copied().collect()
    }

    #[getter]
    fn coefficients(&self) -> Vec<Vec<f64>> {
        let b = &self.inner.projection().b;
        b.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn hyperparams<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, self.inner.hyperparams())
    }

    fn measures<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, self.inner.measures())
    }

    /// Projected training instances, one row per instance.
    fn transform_train(&self) -> Vec<Vec<f64>> {
        rows(&pipeline::transform_train(&self.inner))
    }

    /// Projected target instances, one row per instance.
    fn transform(&self, target: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&pipeline::transform_target(&self.inner, &target.inner).map_err(err)?))
    }

    /// 1NN accuracy on a labeled target set, optionally with bounds.
    #[pyo3(signature = (target, with_bounds=false, delta=0.05))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        target: &PyDataset,
        with_bounds: bool,
        delta: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let k = BoundConstants {
            delta,
            ..BoundConstants::default()
        };
        let target = target
            .inner
            .relabel_to(self.inner.train().label_names())
            .map_err(err)?;
        let rec = harness::evaluate_model(&self.inner, &target, with_bounds, &k).map_err(err)?;
        serialize(py, &rec)
    }

    #[pyo3(signature = (delta=0.05, lipschitz_loss=1.0, loss_bound=1.0, kernel_bound_x=1.0,
        kernel_bound_x_prime=1.0, kernel_bound_gamma=1.0, lipschitz_feature_map=1.0, trace_gram="centered"))]
    #[allow(clippy::too_many_arguments)]
    fn bounds<'py>(
        &self,
        py: Python<'py>,
        delta: f64,
        lipschitz_loss: f64,
        loss_bound: f64,
        kernel_bound_x: f64,
        kernel_bound_x_prime: f64,
        kernel_bound_gamma: f64,
        lipschitz_feature_map: f64,
        trace_gram: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let which = match trace_gram {
            "centered" => TraceGram::Centered,
            "raw" => TraceGram::Raw,
            other => return Err(PyValueError::new_err(format!("unknown trace_gram {other:?}"))),
        };
        let k = constants(
            delta,
            lipschitz_loss,
            loss_bound,
            kernel_bound_x,
            kernel_bound_x_prime,
            kernel_bound_gamma,
            lipschitz_feature_map,
        );
        serialize(py, &bounds::bound_report(&self.inner, &k, which).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Model(n={}, q={}, sigma={})", self.inner.train().len(), self.inner.q(), self.inner.bandwidth().sigma())
    }
}

/// Fits a model. `sigma` is a bandwidth or `None` for
/// `sigma_multiplier` times the median heuristic of the preprocessed data.
/// `components` fixes the dimension; otherwise `energy` decides it.
#[pyfunction]
#[pyo3(signature = (data, sigma=None, sigma_multiplier=1.0, beta=0.5, alpha=1.0, gamma=1.0,
    epsilon=DEFAULT_EPSILON, components=None, energy=0.96, preprocess="none",
    center_before_scatter=false, scale_train=true))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    sigma: Option<f64>,
    sigma_multiplier: f64,
    beta: f64,
    alpha: f64,
    gamma: f64,
    epsilon: f64,
    components: Option<usize>,
    energy: f64,
    preprocess: &str,
    center_before_scatter: bool,
    scale_train: bool,
) -> PyResult<PyModel> {
    let options = FitOptions {
        center_before_scatter,
        scale_train,
        preprocess: parse_preprocess(preprocess)?,
    };
    let sigma = match sigma {
        Some(s) => s,
        None => sigma_multiplier * kernel::median_heuristic(&options.preprocess.apply(&data.inner)).map_err(err)?,
    };
    let hp = HyperParams {
        alpha,
        beta,
        gamma,
        epsilon,
        rule: components.map_or(ComponentRule::Energy(energy), ComponentRule::Fixed),
    };
    let train = data.inner.clone();
    let model = py
        .detach(move || Bandwidth::new(sigma).and_then(|bw| pipeline::fit_with(&train, bw, &hp, options)))
        .map_err(err)?;
    Ok(PyModel { inner: model })
}

#[pyfunction]
#[pyo3(signature = (tr_bkb, n, delta=0.05, lipschitz_loss=1.0, loss_bound=1.0, kernel_bound_x=1.0,
    kernel_bound_x_prime=1.0, kernel_bound_gamma=1.0, lipschitz_feature_map=1.0))]
#[allow(clippy::too_many_arguments)]
fn excess_risk_bound(
    tr_bkb: f64,
    n: usize,
    delta: f64,
    lipschitz_loss: f64,
    loss_bound: f64,
    kernel_bound_x: f64,
    kernel_bound_x_prime: f64,
    kernel_bound_gamma: f64,
    lipschitz_feature_map: f64,
) -> PyResult<f64> {
    let k = constants(
        delta,
        lipschitz_loss,
        loss_bound,
        kernel_bound_x,
        kernel_bound_x_prime,
        kernel_bound_gamma,
        lipschitz_feature_map,
    );
    bounds::excess_risk_bound(tr_bkb, n, &k).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (tr_bkb, m, n_bar, delta=0.05, lipschitz_loss=1.0, loss_bound=1.0, kernel_bound_x=1.0,
    kernel_bound_x_prime=1.0, kernel_bound_gamma=1.0, lipschitz_feature_map=1.0))]
#[allow(clippy::too_many_arguments)]
fn generalization_bound(
    tr_bkb: f64,
    m: usize,
    n_bar: f64,
    delta: f64,
    lipschitz_loss: f64,
    loss_bound: f64,
    kernel_bound_x: f64,
    kernel_bound_x_prime: f64,
    kernel_bound_gamma: f64,
    lipschitz_feature_map: f64,
) -> PyResult<f64> {
    let k = constants(
        delta,
        lipschitz_loss,
        loss_bound,
        kernel_bound_x,
        kernel_bound_x_prime,
        kernel_bound_gamma,
        lipschitz_feature_map,
    );
    bounds::generalization_bound(tr_bkb, m, n_bar, &k).map_err(err)
}

/// Synthetic validate/test sweep on the built-in benchmark. Returns
/// `(records, summary)`; records are dicts in grid enumeration order.
#[pyfunction]
#[pyo3(signature = (seed=0, grid="reduced", target_domain=2, preprocess="domain_zscore", prior=None))]
fn sweep_table2<'py>(
    py: Python<'py>,
    seed: u64,
    grid: &str,
    target_domain: usize,
    preprocess: &str,
    prior: Option<(usize, Vec<f64>, usize)>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let grid = match grid {
        "reduced" => Grid::reduced(),
        "full" => Grid::full(),
        json => serde_json::from_str(json)
            .map_err(|e| PyValueError::new_err(format!("grid must be reduced, full or a JSON grid: {e}")))?,
    };
    let mut spec = data::table2_preset();
    if let Some((domain, p, total)) = prior {
        let d = spec
            .domains
            .get(domain)
            .ok_or_else(|| PyValueError::new_err(format!("no domain {domain}")))?;
        spec.domains[domain] = data::apply_prior(d, &p, total).map_err(err)?;
    }
    let mut opts = SweepOptions::default();
    opts.fit.preprocess = parse_preprocess(preprocess)?;
    let result = py
        .detach(move || harness::run_synthetic(&grid, &spec, target_domain, seed, opts))
        .map_err(err)?;
    Ok((serialize(py, &result.records)?, to_py(py, &result.summary())?))
}

#[pymodule]
fn mda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(excess_risk_bound, m)?)?;
    m.add_function(wrap_pyfunction!(generalization_bound, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_table2, m)?)?;
    m.add("DEFAULT_EPSILON", DEFAULT_EPSILON)?;
    Ok(())
}
