//! Python bindings: latent operators, training, checkpoints and evaluation.
//! Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ogan::data::sample_prior;
use ogan::eval::{self, EvalOptions};
use ogan::gradsuite;
use ogan::ndnum::{streams, Rng, Tensor};
use ogan::ortho;
use ogan::trainer::{self, MetricsRow, TrainConfig, TrainError};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn to_tensor(rows: Vec<Vec<f32>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(value_err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f32>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn metrics_dict<'py>(py: Python<'py>, row: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", row.iter)?;
    d.set_item("loss_E", row.loss_e)?;
    d.set_item("loss_G", row.loss_g)?;
    d.set_item("rho", row.rho)?;
    d.set_item("score_real", row.score_real)?;
    d.set_item("score_fake", row.score_fake)?;
    d.set_item("std_code_real", row.std_code_real)?;
    Ok(d)
}

#[pyfunction]
fn avg(v: Vec<f64>) -> PyResult<f64> {
    ortho::avg(&v).map_err(value_err)
}

#[pyfunction(name = "std")]
fn std_dev(v: Vec<f64>) -> PyResult<f64> {
    ortho::std(&v).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (v, eps = ortho::DEFAULT_EPS))]
fn normalize(v: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    ortho::normalize(&v, eps).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (z, z_hat, eps = ortho::DEFAULT_EPS))]
fn pearson(z: Vec<f64>, z_hat: Vec<f64>, eps: f64) -> PyResult<f64> {
    ortho::pearson(&z, &z_hat, eps).map_err(value_err)
}

#[pyfunction]
fn normalized_mse(z: Vec<f64>, z_hat: Vec<f64>) -> PyResult<f64> {
    ortho::normalized_mse(&z, &z_hat).map_err(value_err)
}

/// Runs the gradient-check suite; returns `(passed, checks, max_rel_err)`.
#[pyfunction]
#[pyo3(signature = (tolerance = gradsuite::DEFAULT_TOLERANCE, seed = 1))]
fn gradcheck(tolerance: f64, seed: u64) -> PyResult<(bool, usize, f64)> {
    let entries = gradsuite::full_suite(seed, tolerance).map_err(value_err)?;
    let worst = entries.iter().map(|e| e.report.max_rel_err).fold(0.0, f64::max);
    Ok((entries.iter().all(|e| e.report.pass), entries.len(), worst))
}

/// Trains the discriminator-only oracle and returns its correlation with
/// the closed-form log density ratio on a 121-point grid over [−3, 3].
#[pyfunction]
#[pyo3(signature = (steps = 5000, seed = 0))]
fn oracle_correlation(steps: usize, seed: u64) -> PyResult<f64> {
    let cfg = eval::OracleConfig {
        steps,
        seed,
        ..Default::default()
    };
    let d = eval::train_oracle_discriminator(&cfg).map_err(value_err)?;
    let check = eval::density_ratio_check(eval::scalar_fn(&d), cfg.p, cfg.q, &eval::uniform_grid(-3.0, 3.0, 121));
    Ok(check.correlation)
}

/// Trains from a JSON config to completion; returns the final checkpoint.
#[pyfunction]
#[pyo3(signature = (config_json, seed = None, out = None))]
fn train(config_json: &str, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<Checkpoint> {
    let mut config = TrainConfig::from_json(config_json).map_err(train_err)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.out_dir = o;
    }
    let outcome = trainer::train_loop(&config).map_err(train_err)?;
    Ok(Checkpoint(outcome.checkpoint))
}

/// Full training state at one iteration.
#[pyclass(frozen)]
struct Checkpoint(trainer::Checkpoint);

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        trainer::load_checkpoint(&path).map(Self).map_err(train_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::save_checkpoint(&self.0, &path).map_err(train_err)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.0.iteration
    }

    #[getter]
    fn config_json(&self) -> String {
        self.0.config.to_json()
    }

    /// `n` generator samples from the evaluation stream of `seed`
    /// (default: the training seed).
    #[pyo3(signature = (n, seed = None))]
    fn sample(&self, n: usize, seed: Option<u64>) -> PyResult<Vec<Vec<f32>>> {
        let mut rng = Rng::new(seed.unwrap_or(self.0.config.seed)).fork(streams::EVAL);
        let z = sample_prior(&mut rng, n, self.0.config.n_z);
        Ok(to_rows(&self.0.nets.generator.forward(&z).map_err(value_err)?))
    }

    fn encode(&self, x: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        Ok(to_rows(&self.0.nets.encoder.forward(&to_tensor(x)?).map_err(value_err)?))
    }

    /// `G(𝒩(E(x)))` per row.
    fn reconstruct(&self, x: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        let nets = &self.0.nets;
        let x_hat = eval::reconstruction(&nets.encoder, &nets.generator, &to_tensor(x)?).map_err(value_err)?;
        Ok(to_rows(&x_hat))
    }

    fn interpolate(&self, a: Vec<f32>, b: Vec<f32>, steps: usize) -> PyResult<Vec<Vec<f32>>> {
        let nets = &self.0.nets;
        let path = eval::interpolate(&nets.encoder, &nets.generator, &a, &b, steps).map_err(value_err)?;
        Ok(to_rows(&path))
    }

    #[pyo3(signature = (samples = eval::DEFAULT_EVAL_SAMPLES))]
    fn evaluate<'py>(&self, py: Python<'py>, samples: usize) -> PyResult<Bound<'py, PyDict>> {
        let opts = EvalOptions {
            samples,
            ..Default::default()
        };
        let r = eval::evaluate_checkpoint(&self.0, opts).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("iteration", r.iteration)?;
        d.set_item("recon_rho", r.recon_rho)?;
        d.set_item("latent_avg", r.latent_avg)?;
        d.set_item("latent_std", r.latent_std)?;
        d.set_item("modes_covered", r.modes_covered)?;
        d.set_item("coverage_fractions", r.coverage_fractions)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint(iteration={}, variant={:?})",
            self.0.iteration,
            self.0.config.variant.name()
        )
    }
}

/// Step-by-step access to the alternating optimizer.
#[pyclass]
struct Trainer(trainer::Trainer);

#[pymethods]
impl Trainer {
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        let config = TrainConfig::from_json(config_json).map_err(train_err)?;
        trainer::Trainer::new(config).map(Self).map_err(train_err)
    }

    #[staticmethod]
    fn from_checkpoint(ckpt: &Checkpoint) -> PyResult<Self> {
        trainer::Trainer::from_checkpoint(ckpt.0.clone()).map(Self).map_err(train_err)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.0.iteration()
    }

    /// One encoder step and one generator step; returns that iteration's metrics.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let row = self.0.train_step().map_err(train_err)?;
        metrics_dict(py, &row)
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint(self.0.checkpoint())
    }
}

#[pymodule]
fn pyogan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(avg, m)?)?;
    m.add_function(wrap_pyfunction!(std_dev, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_mse, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Checkpoint>()?;
    m.add_class::<Trainer>()?;
    Ok(())
}
