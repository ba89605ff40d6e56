//! Python bindings: simulated and UCR datasets, training entry points,
//! classifiers with checkpoints, and the loss and diffusion primitives.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use cdnet::classifier::{BaseClassifier, TrainConfig};
use cdnet::dataio::{load_dataset, save_dataset, split_paths, Dataset, LabeledSeries};
use cdnet::diffusion;
use cdnet::eval::{self, Checkpoint};
use cdnet::losses;
use cdnet::simgen::{generate_sim_dataset, Knob, SimConfig};
use cdnet::tensor::{Tape, Var};
use cdnet::CdnetError;

fn py_err(e: CdnetError) -> PyErr {
    match e {
        CdnetError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for cdnet::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Converts any serializable value into plain Python objects via JSON.
fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn split_values(series: &[LabeledSeries]) -> Vec<Vec<f64>> {
    series.iter().map(|s| s.values.clone()).collect()
}

fn split_labels(series: &[LabeledSeries]) -> Vec<u8> {
    series.iter().map(|s| s.label).collect()
}

/// A binary dataset with train and test splits.
#[pyclass(name = "Dataset", module = "cdnet_py", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Loads `<name>_TRAIN.tsv` and `<name>_TEST.tsv` from `data_dir`.
    #[staticmethod]
    #[pyo3(signature = (data_dir, name, normalize = true))]
    fn load(data_dir: PathBuf, name: &str, normalize: bool) -> PyResult<Self> {
        let (train, test) = split_paths(&data_dir, name);
        Ok(Self {
            inner: load_dataset(name, &train, &test, normalize).py()?,
        })
    }

    fn save(&self, data_dir: PathBuf) -> PyResult<(PathBuf, PathBuf)> {
        save_dataset(&self.inner, &data_dir).py()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn series_len(&self) -> PyResult<usize> {
        self.inner.series_len().py()
    }

    #[getter]
    fn train_values(&self) -> Vec<Vec<f64>> {
        split_values(&self.inner.train)
    }

    #[getter]
    fn train_labels(&self) -> Vec<u8> {
        split_labels(&self.inner.train)
    }

    #[getter]
    fn test_values(&self) -> Vec<Vec<f64>> {
        split_values(&self.inner.test)
    }

    #[getter]
    fn test_labels(&self) -> Vec<u8> {
        split_labels(&self.inner.test)
    }

    /// Original label strings for binary labels 0 and 1.
    #[getter]
    fn label_names(&self) -> (String, String) {
        let m = &self.inner.label_map;
        (m.original(0).to_owned(), m.original(1).to_owned())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, train={}, test={})",
            self.inner.name,
            self.inner.train.len(),
            self.inner.test.len()
        )
    }
}

/// Training hyperparameters. Keyword arguments override the defaults.
#[pyclass(name = "TrainConfig", module = "cdnet_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

fn merge_json(base: &TrainConfig, overrides: serde_json::Value) -> PyResult<TrainConfig> {
    let mut merged =
        serde_json::to_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (Some(target), serde_json::Value::Object(src)) = (merged.as_object_mut(), overrides) else {
        return Err(PyValueError::new_err("config overrides must be a mapping"));
    };
    for (k, v) in src {
        if !target.contains_key(&k) {
            return Err(PyValueError::new_err(format!("unknown config key {k:?}")));
        }
        if let (Some(inner), serde_json::Value::Object(nested)) =
            (target.get_mut(&k).and_then(|t| t.as_object_mut()), &v)
        {
            for (nk, nv) in nested {
                inner.insert(nk.clone(), nv.clone());
            }
        } else {
            target.insert(k, v);
        }
    }
    let config: TrainConfig =
        serde_json::from_value(merged).map_err(|e| PyValueError::new_err(e.to_string()))?;
    config.validate().py()?;
    Ok(config)
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let base = TrainConfig::default();
        let inner = match kwargs {
            None => base,
            Some(kw) => {
                let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
                let value = serde_json::from_str(&text)
                    .map_err(|e| PyValueError::new_err(e.to_string()))?;
                merge_json(&base, value)?
            }
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: merge_json(&TrainConfig::default(), value)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig({})",
            serde_json::to_string(&self.inner).unwrap_or_default()
        )
    }
}

fn config_or_default(config: Option<&PyTrainConfig>) -> TrainConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// A trained small-CNN classifier.
#[pyclass(name = "Classifier", module = "cdnet_py", frozen)]
struct PyClassifier {
    inner: BaseClassifier,
    config: TrainConfig,
}

#[pymethods]
impl PyClassifier {
    /// Returns `(label, [p0, p1])`; equal logits give label 0.
    fn predict(&self, values: Vec<f64>) -> PyResult<(u8, [f64; 2])> {
        let p = self.inner.predict(&values).py()?;
        Ok((p.label, p.probabilities))
    }

    fn logits(&self, values: Vec<f64>) -> PyResult<[f64; 2]> {
        self.inner.logits(&values).py()
    }

    fn embed(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.embed(&values).py()
    }

    /// Test-split accuracy on `dataset`.
    fn accuracy(&self, dataset: &PyDataset) -> PyResult<f64> {
        eval::evaluate(&self.inner, &dataset.inner.test).py()
    }

    fn body_checksum(&self) -> u64 {
        self.inner.body_checksum()
    }

    fn frozen_flags(&self) -> Vec<bool> {
        self.inner.frozen_flags()
    }

    #[getter]
    fn input_len(&self) -> usize {
        self.inner.input_len()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = Checkpoint {
            config: self.config.clone(),
            classifier: Some(self.inner.clone()),
            weights: None,
            chains: None,
        };
        eval::save_checkpoint(&ckpt, &path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = eval::load_checkpoint(&path).py()?;
        let inner = ckpt.classifier.ok_or_else(|| {
            PyValueError::new_err(format!("{} holds no classifier", path.display()))
        })?;
        Ok(Self {
            inner,
            config: ckpt.config,
        })
    }
}

#[pyfunction]
#[pyo3(signature = (noise_level = 0, similarity_level = 5, multimodality_level = 5, n_per_class = 50, length = 128, patterns_per_sample = 3, max_delay = 0.2, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    noise_level: u8,
    similarity_level: u8,
    multimodality_level: u8,
    n_per_class: usize,
    length: usize,
    patterns_per_sample: usize,
    max_delay: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let config = SimConfig {
        noise_level,
        similarity_level,
        multimodality_level,
        n_per_class,
        length,
        patterns_per_sample,
        max_delay,
        seed,
    };
    Ok(PyDataset {
        inner: generate_sim_dataset(&config).py()?.dataset,
    })
}

/// Trains the cross-entropy baseline.
#[pyfunction]
#[pyo3(signature = (dataset, config = None, seed = 0))]
fn train_baseline(
    py: Python<'_>,
    dataset: &PyDataset,
    config: Option<&PyTrainConfig>,
    seed: u64,
) -> PyResult<PyClassifier> {
    let config = TrainConfig {
        seed,
        ..config_or_default(config)
    };
    let inner = py
        .detach(|| eval::run_baseline(&dataset.inner, &config, seed))
        .py()?;
    Ok(PyClassifier { inner, config })
}

/// Runs the full CDNet pipeline. Returns the classifier and the per-epoch
/// pretraining log as dicts.
#[pyfunction]
#[pyo3(signature = (dataset, config = None, seed = 0))]
fn train_cdnet<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: Option<&PyTrainConfig>,
    seed: u64,
) -> PyResult<(PyClassifier, Bound<'py, PyAny>)> {
    let config = TrainConfig {
        seed,
        ..config_or_default(config)
    };
    let art = py
        .detach(|| eval::run_cdnet(&dataset.inner, &config, seed))
        .py()?;
    let log = to_python(py, &art.pretrain_log)?;
    Ok((
        PyClassifier {
            inner: art.classifier,
            config,
        },
        log,
    ))
}

/// Baseline versus CDNet over `seeds`; returns the comparison as a dict.
#[pyfunction]
#[pyo3(signature = (dataset, config = None, seeds = vec![0]))]
fn compare<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: Option<&PyTrainConfig>,
    seeds: Vec<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = config_or_default(config);
    let cmp = py
        .detach(|| eval::compare_methods(&dataset.inner, &config, None, &seeds))
        .py()?;
    to_python(py, &cmp)
}

/// Sweeps one simulation knob (`noise`, `similarity` or `multimodality`).
#[pyfunction]
#[pyo3(signature = (knob, levels, seeds = vec![0, 1, 2], config = None))]
fn sweep<'py>(
    py: Python<'py>,
    knob: &str,
    levels: Vec<u8>,
    seeds: Vec<u64>,
    config: Option<&PyTrainConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let knob: Knob = knob.parse().py()?;
    let config = config_or_default(config);
    let result = py
        .detach(|| eval::sweep_levels(knob, &levels, &SimConfig::default(), &config, &seeds))
        .py()?;
    to_python(py, &result.rows)
}

/// `accuracy[m][d]` with `None` for missing entries.
#[pyfunction]
fn rank_methods<'py>(
    py: Python<'py>,
    methods: Vec<String>,
    datasets: Vec<String>,
    accuracy: Vec<Vec<Option<f64>>>,
) -> PyResult<Bound<'py, PyAny>> {
    let table = eval::rank_methods(&methods, &datasets, &accuracy).py()?;
    to_python(py, &table)
}

#[pyfunction]
fn forward_step(
    x_prev: Vec<f64>,
    partner: Vec<f64>,
    beta: f64,
    noise: Vec<f64>,
) -> PyResult<Vec<f64>> {
    diffusion::forward_step(&x_prev, &partner, beta, &noise).py()
}

fn constants(tape: &mut Tape, rows: &[Vec<f64>]) -> PyResult<Vec<Var>> {
    rows.iter()
        .map(|r| tape.constant(&[r.len()], r.clone()).py())
        .collect()
}

#[pyfunction]
#[pyo3(signature = (anchor, positives, negatives, margin = losses::DEFAULT_MARGIN))]
fn triplet_loss(
    anchor: Vec<f64>,
    positives: Vec<Vec<f64>>,
    negatives: Vec<Vec<f64>>,
    margin: f64,
) -> PyResult<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(&[anchor.len()], anchor).py()?;
    let p = constants(&mut tape, &positives)?;
    let n = constants(&mut tape, &negatives)?;
    let l = losses::triplet_loss(&mut tape, a, &p, &n, margin).py()?;
    Ok(tape.scalar(l))
}

#[pyfunction]
#[pyo3(signature = (embeddings, positives, temperature = losses::DEFAULT_TEMPERATURE, epsilon = losses::DEFAULT_SNN_EPSILON))]
fn snn_loss(
    embeddings: Vec<Vec<f64>>,
    positives: Vec<Vec<f64>>,
    temperature: f64,
    epsilon: f64,
) -> PyResult<f64> {
    let mut tape = Tape::new();
    let e = constants(&mut tape, &embeddings)?;
    let p = constants(&mut tape, &positives)?;
    let l = losses::snn_loss(&mut tape, &e, &p, temperature, epsilon).py()?;
    Ok(tape.scalar(l))
}

/// `class_probs[i]` is the probability vector of sample `i`.
#[pyfunction]
fn ce_loss(class_probs: Vec<Vec<f64>>, labels: Vec<u8>) -> PyResult<f64> {
    let mut tape = Tape::new();
    let p = constants(&mut tape, &class_probs)?;
    let l = losses::ce_loss(&mut tape, &p, &labels).py()?;
    Ok(tape.scalar(l))
}

#[pyfunction]
#[pyo3(signature = (l_ce, l_snn, l_triplet, log_sigmas = [0.0; 3]))]
fn composite_loss(l_ce: f64, l_snn: f64, l_triplet: f64, log_sigmas: [f64; 3]) -> f64 {
    losses::composite_value([l_ce, l_snn, l_triplet], log_sigmas)
}

#[pymodule]
fn cdnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(train_cdnet, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(rank_methods, m)?)?;
    m.add_function(wrap_pyfunction!(forward_step, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(snn_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(composite_loss, m)?)?;
    Ok(())
}
