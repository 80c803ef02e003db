//! Python bindings: dataset generation, training and reconstruction through
//! the same code paths as the `ircn` command line.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ircn_core::cli::RunConfig;
use ircn_core::geometry::obj::write_obj;
use ircn_core::kv::KeyValue;
use ircn_core::recon::{reconstruct, reconstruct_oracle, EvalReport, ReconConfig};
use ircn_core::synth::dataset::MANIFEST_FILE;
use ircn_core::synth::{build_dataset, DatasetConfig, DatasetManifest, SceneKind, Split};
use ircn_core::train::{load_models, Models, TrainingSet, Trainer};
use ircn_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::Usage(_) | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("unknown split {other:?}"))),
    }
}

/// Applies `section.key` overrides from a Python dict of strings or numbers.
fn run_config(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = v.str()?.to_string();
            config.set(&key, &value).map_err(to_py)?;
        }
    }
    Ok(config)
}

fn report_dict<'py>(py: Python<'py>, report: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for line in report.to_text().lines() {
        if let Some((k, v)) = line.split_once('=') {
            match v.parse::<f64>() {
                Ok(x) => d.set_item(k, x)?,
                Err(_) => d.set_item(k, v)?,
            }
        }
    }
    Ok(d)
}

/// Runs the command line with `args` (without the program name); returns the exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let mut full = vec!["ircn".to_string()];
    full.extend(args);
    py.detach(|| ircn_core::cli::run(full))
}

/// Writes a synthetic dataset to `out`; returns the number of samples.
#[pyfunction]
#[pyo3(signature = (out, n_train=8, n_test=2, resolution=128, seed=0, views=1, kind="body"))]
fn generate_dataset(
    py: Python<'_>,
    out: PathBuf,
    n_train: usize,
    n_test: usize,
    resolution: usize,
    seed: u64,
    views: usize,
    kind: &str,
) -> PyResult<usize> {
    let config = DatasetConfig {
        n_train,
        n_test,
        resolution,
        seed,
        views_per_scene: views,
        kind: SceneKind::parse(kind).map_err(to_py)?,
        ..DatasetConfig::default()
    };
    std::fs::create_dir_all(&out).map_err(|e| PyOSError::new_err(e.to_string()))?;
    let manifest = py.detach(|| build_dataset(&config, &out)).map_err(to_py)?;
    Ok(manifest.entries.len())
}

/// Trained coarse and fine models.
#[pyclass(name = "Models")]
struct PyModels {
    inner: Models,
}

#[pymethods]
impl PyModels {
    /// Loads the best snapshot of a checkpoint (or its final weights).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_models(&path).map_err(to_py)?,
        })
    }

    /// Trains on the train split of `data`; `overrides` maps keys such as
    /// `"train.coarse_epochs"` to values. Returns the models and the
    /// per-epoch mean losses.
    #[staticmethod]
    #[pyo3(signature = (data, overrides=None))]
    fn train(py: Python<'_>, data: PathBuf, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<(Self, Vec<f64>)> {
        let config = run_config(overrides)?.train;
        let result = py.detach(|| -> ircn_core::Result<_> {
            let manifest = DatasetManifest::load(&data.join(MANIFEST_FILE))?;
            let samples = manifest.load_split(&data, Split::Train)?;
            let set = TrainingSet::new(samples, config.model.normals)?;
            let mut trainer = Trainer::new(config)?;
            let reports = trainer.fit(&set, None)?;
            let losses = reports
                .iter()
                .map(|r| r.records.iter().map(|s| s.loss).sum::<f64>() / r.records.len().max(1) as f64)
                .collect();
            Ok((trainer.into_models(), losses))
        });
        let (inner, losses) = result.map_err(to_py)?;
        Ok((Self { inner }, losses))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ircn_core::train::save_models(&self.inner, &path).map_err(to_py)
    }

    /// Reconstructs one sample; writes an OBJ when `obj` is given and
    /// returns the metric report as a dict.
    #[pyo3(signature = (data, index=0, split_name="test", resolution=64, level="multi", obj=None))]
    fn reconstruct<'py>(
        &self,
        py: Python<'py>,
        data: PathBuf,
        index: usize,
        split_name: &str,
        resolution: usize,
        level: &str,
        obj: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let config = ReconConfig {
            resolution,
            level: ircn_core::recon::Predictor::parse(level).map_err(to_py)?,
            ..ReconConfig::default()
        };
        let split = split(split_name)?;
        let r = py
            .detach(|| -> ircn_core::Result<_> {
                let manifest = DatasetManifest::load(&data.join(MANIFEST_FILE))?;
                let entry = manifest
                    .entries(split)
                    .nth(index)
                    .ok_or_else(|| Error::Usage(format!("no sample {index} in the {} split", split.name())))?;
                let sample = manifest.load_entry(&data, entry)?;
                let r = reconstruct(&self.inner, &sample, &config)?;
                if let Some(path) = &obj {
                    write_obj(&r.mesh, path)?;
                }
                Ok(r)
            })
            .map_err(to_py)?;
        report_dict(py, &r.report)
    }
}

/// Report of a reconstruction from the exact occupancy grid of a sample.
#[pyfunction]
#[pyo3(signature = (data, index=0, split_name="test", resolution=64))]
fn reconstruct_perfect<'py>(
    py: Python<'py>,
    data: PathBuf,
    index: usize,
    split_name: &str,
    resolution: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let split = split(split_name)?;
    let config = ReconConfig {
        resolution,
        ..ReconConfig::default()
    };
    let r = py
        .detach(|| -> ircn_core::Result<_> {
            let manifest = DatasetManifest::load(&data.join(MANIFEST_FILE))?;
            let entry = manifest
                .entries(split)
                .nth(index)
                .ok_or_else(|| Error::Usage(format!("no sample {index} in the {} split", split.name())))?;
            reconstruct_oracle(&manifest.load_entry(&data, entry)?, &config)
        })
        .map_err(to_py)?;
    report_dict(py, &r.report)
}

/// Runs the finite-difference suite; returns (all passed, table).
#[pyfunction]
#[pyo3(signature = (seeds=ircn_core::gradcheck::SEEDS))]
fn gradcheck(py: Python<'_>, seeds: u64) -> PyResult<(bool, String)> {
    let report = py.detach(|| ircn_core::gradcheck::run_all(seeds)).map_err(to_py)?;
    Ok((report.all_passed(), report.to_table()))
}

#[pymodule]
fn ircn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_perfect, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_class::<PyModels>()?;
    Ok(())
}
