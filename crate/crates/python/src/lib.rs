//! Python bindings for the natsel library.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use natsel::analysis;
use natsel::config::{ExperimentConfig, Overrides};
use natsel::data::{self, SamplerKind};
use natsel::imageops::{self, GridLayout};
use natsel::model::{self, Classifier, ClassifierConfig};
use natsel::nscore::{self, Normalization};
use natsel::runner;
use natsel::weighting::{self, Strategy, WeightingConfig};

fn err(e: natsel::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn layout(rows: usize, cols: usize) -> PyResult<GridLayout> {
    GridLayout::new(rows, cols).map_err(err)
}

fn strategy(name: &str) -> PyResult<Strategy> {
    match name {
        "ns_ws" => Ok(Strategy::NsWs),
        "ns_lf" => Ok(Strategy::NsLf),
        "uniform" => Ok(Strategy::Uniform),
        "focal_like" => Ok(Strategy::FocalLike),
        _ => Err(PyValueError::new_err(format!("unknown strategy `{name}`"))),
    }
}

/// Dense row-major array of f64 with an explicit shape.
#[pyclass(name = "Tensor", module = "natsel_py", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: natsel::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: natsel::Tensor::new(shape, data).map_err(err)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

fn wrap(t: natsel::Tensor) -> PyTensor {
    PyTensor { inner: t }
}

/// Small MLP classifier over HWC images.
#[pyclass(name = "Classifier", module = "natsel_py")]
struct PyClassifier {
    inner: Classifier,
}

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (height, width, channels, classes, hidden = vec![64], seed = 0))]
    fn new(height: usize, width: usize, channels: usize, classes: usize, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let inner = Classifier::new(ClassifierConfig {
            height,
            width,
            channels,
            hidden,
            conv: None,
            classes,
            init_seed: seed,
        })
        .map_err(err)?;
        Ok(PyClassifier { inner })
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn param_hash(&self) -> String {
        self.inner.param_hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Class probabilities for one `[H, W, C]` image.
    fn predict_proba(&self, image: &PyTensor) -> PyResult<Vec<f64>> {
        let z = self.inner.forward(&image.inner).map_err(err)?;
        Ok(model::softmax(&z).map_err(err)?.into_data())
    }

    /// Scores a batch of images in groups of `rows * cols`.
    #[pyo3(signature = (images, labels, rows = 2, cols = 2))]
    fn ns_scores(&self, py: Python<'_>, images: Vec<PyTensor>, labels: Vec<usize>, rows: usize, cols: usize) -> PyResult<Py<PyAny>> {
        let imgs: Vec<&natsel::Tensor> = images.iter().map(|t| &t.inner).collect();
        let channels = self.inner.config().channels;
        let r = nscore::batch_ns_scores(&imgs, &labels, &self.inner, layout(rows, cols)?, &Normalization::identity(channels))
            .map_err(err)?;
        let d = pyo3::types::PyDict::new(py);
        d.set_item("raw", r.raw)?;
        d.set_item("score", r.score)?;
        d.set_item("group", r.group)?;
        d.set_item("inferences", r.inferences)?;
        Ok(d.into_any().unbind())
    }
}

#[pyfunction]
fn stitch(images: Vec<PyTensor>, rows: usize, cols: usize) -> PyResult<PyTensor> {
    let imgs: Vec<&natsel::Tensor> = images.iter().map(|t| &t.inner).collect();
    imageops::stitch(&imgs, layout(rows, cols)?).map(wrap).map_err(err)
}

#[pyfunction]
fn crop_cell(stitched: &PyTensor, rows: usize, cols: usize, row: usize, col: usize) -> PyResult<PyTensor> {
    imageops::crop_cell(&stitched.inner, layout(rows, cols)?, row, col).map(wrap).map_err(err)
}

#[pyfunction]
fn resize(image: &PyTensor, height: usize, width: usize) -> PyResult<PyTensor> {
    imageops::bilinear_resize(&image.inner, height, width).map(wrap).map_err(err)
}

#[pyfunction]
fn normalize_scores(raw: Vec<f64>) -> Vec<f64> {
    nscore::normalize_scores(&raw)
}

#[pyfunction]
#[pyo3(signature = (scores, sigma, rho, strategy = None, gamma = 2.0))]
fn compute_weights(scores: Vec<f64>, sigma: f64, rho: f64, strategy: Option<&str>, gamma: f64) -> PyResult<Vec<f64>> {
    let mut cfg = WeightingConfig::affine(sigma, rho);
    if let Some(s) = strategy {
        cfg.strategy = self::strategy(s)?;
    }
    cfg.gamma = gamma;
    cfg.validate().map_err(err)?;
    weighting::compute_weights(&scores, &cfg).map_err(err)
}

#[pyfunction]
fn longtail_counts(n_max: usize, classes: usize, imbalance_factor: f64) -> PyResult<Vec<usize>> {
    data::longtail_counts(n_max, classes, imbalance_factor).map_err(err)
}

#[pyfunction]
fn class_sampling_probs(counts: Vec<usize>, kind: &str, epoch: usize, total: usize) -> PyResult<Vec<f64>> {
    let kind = match kind {
        "instance_uniform" => SamplerKind::InstanceUniform,
        "cbs" => SamplerKind::Cbs,
        "srs" => SamplerKind::Srs,
        "pbs" => SamplerKind::Pbs,
        _ => return Err(PyValueError::new_err(format!("unknown sampler `{kind}`"))),
    };
    data::class_sampling_probs(&counts, kind, epoch, total).map_err(err)
}

/// Returns `(r, slope, intercept)` of the least-squares line.
#[pyfunction]
fn linear_correlation(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = analysis::linear_correlation(&xs, &ys).map_err(err)?;
    Ok((f.r, f.slope, f.intercept))
}

#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    analysis::spearman(&xs, &ys).map_err(err)
}

/// Per-class box statistics; `None` for classes without samples.
#[pyfunction]
fn ns_distribution(scores: Vec<f64>, labels: Vec<usize>, classes: usize) -> PyResult<Vec<Option<HashMap<String, f64>>>> {
    let stats = analysis::ns_distribution(&scores, &labels, classes).map_err(err)?;
    Ok(stats
        .into_iter()
        .map(|s| {
            s.map(|s| {
                HashMap::from([
                    ("count".to_string(), s.count as f64),
                    ("mean".to_string(), s.mean),
                    ("median".to_string(), s.median),
                    ("q1".to_string(), s.q1),
                    ("q3".to_string(), s.q3),
                    ("min".to_string(), s.min),
                    ("max".to_string(), s.max),
                ])
            })
        })
        .collect())
}

/// Trains every seed of a TOML config. Returns `{metric: (mean, std, n)}`.
#[pyfunction]
#[pyo3(signature = (config_path, output_dir = None, seeds = None))]
fn run_experiment(
    py: Python<'_>,
    config_path: PathBuf,
    output_dir: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
) -> PyResult<HashMap<String, (f64, f64, usize)>> {
    let mut cfg = ExperimentConfig::load(&config_path).map_err(err)?;
    cfg.apply(&Overrides {
        seeds,
        output_dir,
        ..Default::default()
    })
    .map_err(err)?;
    let summary = py.detach(|| runner::run_experiment(&cfg)).map_err(err)?;
    Ok(summary.aggregate.into_iter().map(|r| (r.metric, (r.mean, r.std, r.n))).collect())
}

#[pymodule]
fn natsel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(stitch, m)?)?;
    m.add_function(wrap_pyfunction!(crop_cell, m)?)?;
    m.add_function(wrap_pyfunction!(resize, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_scores, m)?)?;
    m.add_function(wrap_pyfunction!(compute_weights, m)?)?;
    m.add_function(wrap_pyfunction!(longtail_counts, m)?)?;
    m.add_function(wrap_pyfunction!(class_sampling_probs, m)?)?;
    m.add_function(wrap_pyfunction!(linear_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(ns_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
