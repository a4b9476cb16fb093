//! Python bindings: fit, load, query and update a streaming recommender.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use spectrec_core::spectral::{explain, leading_items};
use spectrec_core::{
    run_suites, Checkpoint, Dataset, Error, Format, FrequencyWeights, IdMap, InteractionEvent, LoadOptions,
    ModelConfig, Recommender, VerifyOptions,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn config_from(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<ModelConfig> {
    let mut config = ModelConfig::default();
    if let Some(map) = overrides {
        for (key, value) in map.iter() {
            let key: String = key.extract()?;
            let text = match value.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => value.str()?.to_string(),
            };
            config.set(&key, &text).map_err(py_err)?;
        }
    }
    config.validate().map_err(py_err)?;
    Ok(config)
}

fn lookup(ids: &IdMap, id: &str, kind: &str) -> PyResult<usize> {
    ids.get(id).ok_or_else(|| PyKeyError::new_err(format!("unknown {kind} {id:?}")))
}

/// Existing index of `id`, or a fresh spare row when capacity remains.
fn resolve_for_write(ids: &mut IdMap, id: &str, capacity: usize, kind: &str) -> PyResult<usize> {
    if let Some(index) = ids.get(id) {
        return Ok(index);
    }
    if ids.len() >= capacity {
        return Err(PyValueError::new_err(format!("no spare {kind} rows left for {id:?}")));
    }
    Ok(ids.intern(id))
}

/// A fitted model together with its external id maps.
#[pyclass(module = "spectrec")]
struct Model {
    inner: Checkpoint,
}

#[pymethods]
impl Model {
    /// Fits on the first `train_frac` of a chronologically sorted event file.
    #[staticmethod]
    #[pyo3(signature = (path, format = "canonical", config = None, train_frac = 1.0, min_item_count = 0))]
    fn fit(
        path: PathBuf,
        format: &str,
        config: Option<&Bound<'_, PyDict>>,
        train_frac: f64,
        min_item_count: usize,
    ) -> PyResult<Self> {
        let format: Format = format.parse().map_err(py_err)?;
        let config = config_from(config)?;
        if !(train_frac > 0.0 && train_frac <= 1.0) {
            return Err(PyValueError::new_err(format!("train_frac {train_frac} outside (0, 1]")));
        }
        let options = LoadOptions {
            min_item_count,
            ..LoadOptions::default()
        };
        let data = Dataset::load(&path, format, options).map_err(py_err)?;
        let n_train = (train_frac * data.events.len() as f64).floor() as usize;
        let model = Recommender::fit(
            &config,
            data.n_users() + config.spare_users,
            data.n_items() + config.spare_items,
            data.t_max(),
            &data.events[..n_train],
        )
        .map_err(py_err)?;
        Ok(Model {
            inner: Checkpoint {
                model,
                users: data.users,
                items: data.items,
            },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: Checkpoint::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn version(&self) -> u64 {
        self.inner.model.version()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.model.factors().rank()
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.users.len()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.items.len()
    }

    /// Top `n` `(item, score)` pairs. `weights` rescales each latent frequency.
    #[pyo3(signature = (user, n = 10, weights = None, exclude_seen = None))]
    fn recommend(
        &self,
        user: &str,
        n: usize,
        weights: Option<Vec<f64>>,
        exclude_seen: Option<bool>,
    ) -> PyResult<Vec<(String, f64)>> {
        let u = lookup(&self.inner.users, user, "user")?;
        // Neutral weights take the same path as explicit ones so both agree bit for bit.
        let weights = match weights {
            Some(c) => FrequencyWeights::new(c).map_err(py_err)?,
            None => FrequencyWeights::ones(self.inner.model.factors().rank()),
        };
        let exclude = exclude_seen.unwrap_or(self.inner.model.config().exclude_seen);
        let ranked = self.inner.model.recommend(u, n, Some(&weights), exclude).map_err(py_err)?;
        Ok(ranked.into_iter().map(|(i, s)| (self.inner.items.label(i), s)).collect())
    }

    /// Fused scores for every item, indexed like `items()`.
    fn scores(&self, user: &str) -> PyResult<Vec<f64>> {
        let u = lookup(&self.inner.users, user, "user")?;
        Ok(self.inner.model.scores(u, None).map_err(py_err)?.as_slice().to_vec())
    }

    fn items(&self) -> Vec<String> {
        self.inner.items.ids().to_vec()
    }

    fn users(&self) -> Vec<String> {
        self.inner.users.ids().to_vec()
    }

    /// Ingests one event and returns the new model version. Unknown ids take
    /// spare rows when the model was fitted with any.
    fn observe(&mut self, user: &str, item: &str, timestamp: f64) -> PyResult<u64> {
        let model_users = self.inner.model.n_users();
        let model_items = self.inner.model.n_items();
        let mut users = self.inner.users.clone();
        let mut items = self.inner.items.clone();
        let u = resolve_for_write(&mut users, user, model_users, "user")?;
        let i = resolve_for_write(&mut items, item, model_items, "item")?;
        let observation = self
            .inner
            .model
            .observe(&InteractionEvent::new(u, i, timestamp))
            .map_err(py_err)?;
        self.inner.users = users;
        self.inner.items = items;
        Ok(observation.version)
    }

    /// History items of `user` closest to `item` in interest space.
    #[pyo3(signature = (user, item, n = 3))]
    fn explain(&self, user: &str, item: &str, n: usize) -> PyResult<Vec<(String, f64)>> {
        let u = lookup(&self.inner.users, user, "user")?;
        let i = lookup(&self.inner.items, item, "item")?;
        let model = &self.inner.model;
        let similar = explain(&model.view(), model.store(), u, i, n, model.config().explain_similarity)
            .map_err(py_err)?;
        Ok(similar.into_iter().map(|(h, s)| (self.inner.items.label(h), s)).collect())
    }

    /// `(singular_value, [(item, loading), ...])` per latent frequency.
    #[pyo3(signature = (n_items = 3))]
    fn frequencies(&self, n_items: usize) -> PyResult<Vec<(f64, Vec<(String, f64)>)>> {
        let factors = self.inner.model.factors();
        (0..factors.rank())
            .map(|j| {
                let items = leading_items(factors, j, n_items)
                    .map_err(py_err)?
                    .into_iter()
                    .map(|i| (self.inner.items.label(i), factors.v[(i, j)]))
                    .collect();
                Ok((factors.s[j], items))
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(users={}, items={}, rank={}, version={})",
            self.n_users(),
            self.n_items(),
            self.rank(),
            self.version()
        )
    }
}

/// Runs the randomized correctness suites and returns one dict per suite.
#[pyfunction]
#[pyo3(signature = (size = 12, trials = 20, seed = 0, inject_fault = false))]
fn verify<'py>(py: Python<'py>, size: usize, trials: usize, seed: u64, inject_fault: bool) -> PyResult<Bound<'py, PyList>> {
    let report = run_suites(&VerifyOptions {
        size,
        trials,
        seed,
        inject_fault,
    })
    .map_err(py_err)?;
    let out = PyList::empty(py);
    for suite in &report.suites {
        let d = PyDict::new(py);
        d.set_item("name", &suite.name)?;
        d.set_item("passed", suite.passed())?;
        d.set_item("trials", suite.trials)?;
        d.set_item("failures", suite.failures)?;
        d.set_item("inconclusive", suite.inconclusive)?;
        d.set_item("max_residual", suite.max_residual)?;
        d.set_item("tolerance", suite.tolerance)?;
        out.append(d)?;
    }
    Ok(out)
}

#[pymodule]
fn spectrec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
