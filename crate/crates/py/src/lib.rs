//! Python bindings: dataset generation and I/O, training, evaluation, post-processing,
//! composition and the command-line dispatcher. Rasters cross the boundary as flat row-major
//! lists (`H·W` labels or `H·W·3` floats).

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;

use grabar::compositor::{self, CloseShape, PostprocessConfig};
use grabar::dataset::{self, ForegroundMask, ObjectSpec, SampleTuple, TriMask};
use grabar::evaluation;
use grabar::model::{init_params, NetworkConfig, Networks};
use grabar::nn::{Gradients, ParameterSet};
use grabar::training::{self, Checkpoint, OptimizerState, Phase, RunOptions, TrainConfig, TrainData};
use grabar::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::EmptyDataset(_) => PyValueError::new_err(e.to_string()),
        Error::MissingFile(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn postprocess_config(median: usize, close: usize, disk: bool) -> PostprocessConfig {
    PostprocessConfig {
        median_kernel: median,
        close_kernel: close,
        close_shape: if disk { CloseShape::Disk } else { CloseShape::Square },
    }
}

fn fg(h: usize, w: usize, values: Vec<u8>) -> PyResult<ForegroundMask> {
    ForegroundMask::from_values(h, w, values).map_err(to_py)
}

fn tri(h: usize, w: usize, labels: Vec<u8>) -> PyResult<TriMask> {
    TriMask::from_labels(h, w, labels).map_err(to_py)
}

/// One hand/object tuple with its ground-truth tri-class mask.
#[pyclass(name = "Sample", module = "grabar")]
struct PySample {
    inner: SampleTuple,
}

#[pymethods]
impl PySample {
    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn object_name(&self) -> String {
        self.inner.meta.object_name.clone()
    }

    #[getter]
    fn pose_id(&self) -> String {
        self.inner.meta.pose_id.clone()
    }

    #[getter]
    fn seen(&self) -> bool {
        self.inner.meta.seen
    }

    fn hand_image(&self) -> Vec<f32> {
        self.inner.hand_image.pixels().to_vec()
    }

    fn object_render(&self) -> Vec<f32> {
        self.inner.object_render.pixels().to_vec()
    }

    fn hand_fg(&self) -> Vec<u8> {
        self.inner.hand_fg.values().to_vec()
    }

    fn object_fg(&self) -> Vec<u8> {
        self.inner.object_fg.values().to_vec()
    }

    fn gt(&self) -> Vec<u8> {
        self.inner.gt.labels().to_vec()
    }

    fn overlap(&self) -> Vec<u8> {
        self.inner.overlap().values().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sample({}/{}, {}x{})",
            self.inner.meta.object_name,
            self.inner.meta.pose_id,
            self.inner.height(),
            self.inner.width()
        )
    }
}

fn unwrap_samples(samples: &[PyRef<'_, PySample>]) -> Vec<SampleTuple> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

/// Network configuration plus parameters; a trained checkpoint or a fresh initialization.
#[pyclass(name = "Model", module = "grabar")]
struct PyModel {
    ckpt: Checkpoint,
}

impl PyModel {
    fn nets(&self) -> PyResult<Networks> {
        Networks::bind(&self.ckpt.network, &self.ckpt.params).map_err(to_py)
    }

    fn from_params(params: ParameterSet, network: NetworkConfig) -> Self {
        PyModel {
            ckpt: Checkpoint {
                network,
                train: TrainConfig::default(),
                optimizer: OptimizerState {
                    velocity: Gradients::zeros_like(&params),
                    iteration: 0,
                },
                params,
                total_iterations: 0,
                history: Vec::new(),
            },
        }
    }
}

#[pymethods]
impl PyModel {
    /// Freshly initialized weights with the default architecture.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn init(seed: u64) -> PyResult<Self> {
        let network = NetworkConfig::default();
        let params = init_params(&network, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
        Ok(Self::from_params(params, network))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            ckpt: Checkpoint::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(to_py)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.ckpt.iteration()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.ckpt.params.scalar_count()
    }

    /// `total` loss per completed step.
    fn loss_history(&self) -> Vec<f64> {
        self.ckpt.history.iter().map(|r| r.breakdown.total).collect()
    }

    /// Argmax tri-class mask (`H·W` labels), optionally post-processed.
    #[pyo3(signature = (sample, postprocess=false))]
    fn predict(&self, sample: PyRef<'_, PySample>, postprocess: bool) -> PyResult<Vec<u8>> {
        let s = &sample.inner;
        let nets = self.nets()?;
        let mut m = evaluation::predict_mask(&nets, &self.ckpt.params, &s.hand_image, &s.hand_fg, &s.object_fg, self.ckpt.train.tint)
            .map_err(to_py)?;
        if postprocess {
            m = compositor::postprocess(&m, &s.hand_fg, &s.object_fg, &PostprocessConfig::default()).map_err(to_py)?;
        }
        Ok(m.labels().to_vec())
    }

    /// Per-object ODSC report as a JSON string.
    #[pyo3(signature = (samples, postprocess=false))]
    fn evaluate(&self, samples: Vec<PyRef<'_, PySample>>, postprocess: bool) -> PyResult<String> {
        let nets = self.nets()?;
        let pp = PostprocessConfig::default();
        let report = evaluation::evaluate(
            &nets,
            &self.ckpt.params,
            &unwrap_samples(&samples),
            postprocess.then_some(&pp),
            self.ckpt.train.tint,
        )
        .map_err(to_py)?;
        Ok(serde_json::to_string(&report).expect("report serializes"))
    }

    /// Runs the directory pipeline; returns the summary as a JSON string.
    fn compose_dir(&self, input_dir: PathBuf, out_dir: PathBuf) -> PyResult<String> {
        let s = compositor::run_pipeline(&input_dir, &self.ckpt, &out_dir, &PostprocessConfig::default(), None).map_err(to_py)?;
        Ok(serde_json::to_string(&s).expect("summary serializes"))
    }
}

#[pyfunction]
fn object_names() -> Vec<&'static str> {
    dataset::object_names().to_vec()
}

#[pyfunction]
#[pyo3(signature = (count, seed=0, objects=None, size=64))]
fn generate_dataset(count: usize, seed: u64, objects: Option<Vec<String>>, size: usize) -> PyResult<Vec<PySample>> {
    let names = objects.unwrap_or_else(|| dataset::object_names().iter().map(|s| s.to_string()).collect());
    let specs: Vec<ObjectSpec> = names.into_iter().map(|o| ObjectSpec::new(o).with_size(size, size)).collect();
    let samples = dataset::generate_dataset(count, seed, &specs).map_err(to_py)?;
    Ok(samples.into_iter().map(|inner| PySample { inner }).collect())
}

#[pyfunction]
fn write_dataset(dir: PathBuf, samples: Vec<PyRef<'_, PySample>>) -> PyResult<()> {
    dataset::write_dataset(&dir, &unwrap_samples(&samples)).map(|_| ()).map_err(to_py)
}

#[pyfunction]
fn read_dataset(dir: PathBuf) -> PyResult<Vec<PySample>> {
    let samples = dataset::read_dataset(&dir).map_err(to_py)?;
    Ok(samples.into_iter().map(|inner| PySample { inner }).collect())
}

/// Segmentation pre-training followed by joint training; no files are written.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (samples, iterations=100, seg_iterations=50, batch_size=8, lr=0.01, seed=0, augment=true))]
fn train(
    py: Python<'_>,
    samples: Vec<PyRef<'_, PySample>>,
    iterations: u64,
    seg_iterations: u64,
    batch_size: usize,
    lr: f64,
    seed: u64,
    augment: bool,
) -> PyResult<PyModel> {
    let data = TrainData {
        synthetic: unwrap_samples(&samples),
        real: Vec::new(),
    };
    let base = TrainConfig {
        batch_size,
        lr0: lr,
        seed,
        augment: if augment {
            dataset::AugmentPolicy::default()
        } else {
            dataset::AugmentPolicy::none()
        },
        ..TrainConfig::default()
    };
    let network = NetworkConfig::default();
    let ckpt = py
        .detach(|| {
            let options = RunOptions {
                network: network.clone(),
                out_dir: None,
                resume: None,
                seg_checkpoint: None,
                stop_after: None,
            };
            let seg_cfg = TrainConfig {
                phase: Phase::SegPretrain,
                iterations: Some(seg_iterations),
                ..base.clone()
            };
            let seg = training::train(&seg_cfg, &data, &options)?;
            let joint_cfg = TrainConfig {
                phase: Phase::Joint,
                iterations: Some(iterations),
                ..base
            };
            training::train(
                &joint_cfg,
                &data,
                &RunOptions {
                    seg_checkpoint: Some(seg),
                    ..options
                },
            )
        })
        .map_err(to_py)?;
    Ok(PyModel { ckpt })
}

/// ODSC of two label maps within an overlap mask.
#[pyfunction]
fn odsc(height: usize, width: usize, pred: Vec<u8>, gt: Vec<u8>, omega: Vec<u8>) -> PyResult<f64> {
    evaluation::odsc(&tri(height, width, pred)?, &tri(height, width, gt)?, &fg(height, width, omega)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (height, width, mask, hand_fg, object_fg, median=3, close=5, disk=true))]
#[allow(clippy::too_many_arguments)]
fn postprocess(
    height: usize,
    width: usize,
    mask: Vec<u8>,
    hand_fg: Vec<u8>,
    object_fg: Vec<u8>,
    median: usize,
    close: usize,
    disk: bool,
) -> PyResult<Vec<u8>> {
    let out = compositor::postprocess(
        &tri(height, width, mask)?,
        &fg(height, width, hand_fg)?,
        &fg(height, width, object_fg)?,
        &postprocess_config(median, close, disk),
    )
    .map_err(to_py)?;
    Ok(out.labels().to_vec())
}

/// Composed frame (`H·W·3` floats) of a sample under `mask`; the hand image is the background.
#[pyfunction]
fn compose(sample: PyRef<'_, PySample>, mask: Vec<u8>) -> PyResult<Vec<f32>> {
    let s = &sample.inner;
    let m = tri(s.height(), s.width(), mask)?;
    let frame = compositor::compose(&s.hand_image, &s.hand_fg, &s.object_render, &s.object_fg, &m, &s.hand_image).map_err(to_py)?;
    Ok(frame.image.pixels().to_vec())
}

/// Finite-difference gradient check: `[(loss, max_rel_error, tolerance, passed)]`.
#[pyfunction]
#[pyo3(signature = (size=8, instances=20, seed=0))]
fn gradcheck(size: usize, instances: usize, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let r = grabar::losses::gradcheck::run_suite(size, instances, seed).map_err(to_py)?;
    Ok(r.entries.into_iter().map(|e| (e.loss, e.max_rel_error, e.tolerance, e.passed)).collect())
}

/// Runs the command-line dispatcher with `argv` (without the program name); returns the exit code.
#[pyfunction]
fn cli(py: Python<'_>, argv: Vec<String>) -> i32 {
    let mut full = vec!["grabar".to_string()];
    full.extend(argv);
    py.detach(|| grabar::cli::dispatch(full))
}

#[pymodule]
fn grabar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyModel>()?;
    m.add("BACKGROUND", dataset::BACKGROUND)?;
    m.add("OBJECT", dataset::OBJECT)?;
    m.add("HAND", dataset::HAND)?;
    m.add_function(wrap_pyfunction!(object_names, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(odsc, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
