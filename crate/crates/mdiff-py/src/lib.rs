//! Python bindings for the motion diffusion crate. Matrices cross the
//! boundary as `list[list[float]]` (rows = frames), sample sets as
//! `list[list[list[float]]]`.

use mdiff::diffusion::{self, PredictionSet};
use mdiff::metrics;
use mdiff::motion::synth_kinematic_chain;
use mdiff::nn::{ConditionEmbedding, DiffusionModel, NetworkConfig};
use mdiff::refine::{RefineConfig, Refiner as CoreRefiner};
use mdiff::schedule::{NoiseSchedule, ScheduleSpec};
use mdiff::{checkpoint, rng};
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: mdiff::error::Error) -> PyErr {
    match e {
        mdiff::error::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_array(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what} must not be empty")));
    }
    let w = rows[0].len();
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err(format!("{what} rows have uneven lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), w), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn to_set(samples: &[Vec<Vec<f64>>], obs_id: usize) -> PyResult<PredictionSet> {
    let arrays = samples
        .iter()
        .map(|s| to_array(s, "sample"))
        .collect::<PyResult<Vec<_>>>()?;
    PredictionSet::new(obs_id, arrays).map_err(err)
}

/// Linear variance schedule plus its cached products.
#[pyclass]
struct Schedule {
    spec: ScheduleSpec,
    inner: NoiseSchedule,
}

#[pymethods]
impl Schedule {
    #[new]
    fn new(k_max: usize, beta_1: f64, beta_k: f64) -> PyResult<Self> {
        let spec = ScheduleSpec { k_max, beta_1, beta_k };
        let inner = spec.build().map_err(err)?;
        Ok(Schedule { spec, inner })
    }

    #[getter]
    fn k_max(&self) -> usize {
        self.inner.k_max()
    }

    fn betas(&self) -> Vec<f64> {
        (1..=self.inner.k_max()).map(|k| self.inner.beta(k)).collect()
    }

    fn alpha_bar(&self, k: usize) -> PyResult<f64> {
        if k == 0 || k > self.inner.k_max() {
            return Err(PyValueError::new_err(format!(
                "step {} outside 1..={}",
                k,
                self.inner.k_max()
            )));
        }
        Ok(self.inner.alpha_bar(k))
    }

    /// (signal, noise) scale pair of the closed-form forward marginal.
    fn marginal_coefficients(&self, k: usize) -> PyResult<(f64, f64)> {
        if k == 0 || k > self.inner.k_max() {
            return Err(PyValueError::new_err(format!(
                "step {} outside 1..={}",
                k,
                self.inner.k_max()
            )));
        }
        Ok(self.inner.marginal_coefficients(k))
    }
}

/// Condition vector produced by the past encoder.
#[pyclass]
struct Condition {
    inner: ConditionEmbedding,
}

#[pymethods]
impl Condition {
    fn values(&self) -> Vec<f64> {
        self.inner.as_row().row(0).to_vec()
    }
}

/// Conditional noise-prediction network with its past encoder.
#[pyclass]
struct Diffusion {
    model: DiffusionModel,
}

#[pymethods]
impl Diffusion {
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (num_joints, obs_frames, fut_frames, joint_dim, d_model, n_heads, n_spatial_layers, n_temporal_layers, d_cond, use_spatial_transformer, seed))]
    fn init(
        num_joints: usize,
        obs_frames: usize,
        fut_frames: usize,
        joint_dim: usize,
        d_model: usize,
        n_heads: usize,
        n_spatial_layers: usize,
        n_temporal_layers: usize,
        d_cond: usize,
        use_spatial_transformer: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = NetworkConfig {
            num_joints,
            obs_frames,
            fut_frames,
            joint_dim,
            d_model,
            n_heads,
            n_spatial_layers,
            n_temporal_layers,
            d_cond,
            use_spatial_transformer,
        };
        let model = DiffusionModel::init(cfg, seed).map_err(err)?;
        Ok(Diffusion { model })
    }

    /// Read a diffusion checkpoint; returns (model, schedule).
    #[staticmethod]
    fn load(path: &str) -> PyResult<(Self, Schedule)> {
        let (model, inner, spec) = checkpoint::load_diffusion(path.as_ref()).map_err(err)?;
        Ok((Diffusion { model }, Schedule { spec, inner }))
    }

    fn save(&self, path: &str, schedule: &Schedule) -> PyResult<()> {
        checkpoint::save_diffusion(path.as_ref(), &self.model, &schedule.spec).map_err(err)
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(self.model.cfg()).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn num_params(&self) -> usize {
        self.model.params().num_scalars()
    }

    fn encode_past(&self, observed: Vec<Vec<f64>>) -> PyResult<Condition> {
        let obs = to_array(&observed, "observed window")?;
        Ok(Condition { inner: self.model.encode_past(&obs).map_err(err)? })
    }

    fn predict_noise(&self, xk: Vec<Vec<f64>>, k: usize, cond: &Condition) -> PyResult<Vec<Vec<f64>>> {
        let x = to_array(&xk, "noisy window")?;
        Ok(to_rows(&self.model.predict_noise(&x, k, &cond.inner).map_err(err)?))
    }

    /// Run the full reverse chain `n` times; deterministic in (seed, obs_id).
    fn sample(
        &self,
        schedule: &Schedule,
        cond: &Condition,
        n: usize,
        seed: u64,
        obs_id: usize,
    ) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let cfg = self.model.cfg();
        let dims = (cfg.fut_frames, 3 * cfg.num_joints);
        let set = diffusion::sample(&schedule.inner, &self.model, &cond.inner, n, seed, obs_id, dims)
            .map_err(err)?;
        Ok(set.samples.iter().map(to_rows).collect())
    }
}

/// Residual graph-convolutional sample refiner.
#[pyclass]
struct Refiner {
    inner: CoreRefiner,
}

#[pymethods]
impl Refiner {
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (num_joints, fut_frames, d_cond, n_layers, hidden, lambda, gamma, sigma, seed))]
    fn init(
        num_joints: usize,
        fut_frames: usize,
        d_cond: usize,
        n_layers: usize,
        hidden: usize,
        lambda: f64,
        gamma: f64,
        sigma: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = RefineConfig { n_layers, hidden, lambda, gamma, sigma };
        let inner = CoreRefiner::init(cfg, num_joints, fut_frames, d_cond, seed).map_err(err)?;
        Ok(Refiner { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, _) = checkpoint::load_refiner(path.as_ref()).map_err(err)?;
        Ok(Refiner { inner })
    }

    fn refine(
        &self,
        samples: Vec<Vec<Vec<f64>>>,
        cond: &Condition,
    ) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let set = to_set(&samples, 0)?;
        let out = self.inner.refine(&set, &cond.inner).map_err(err)?;
        Ok(out.samples.iter().map(to_rows).collect())
    }
}

#[pyfunction]
fn forward_diffuse(
    schedule: &Schedule,
    x0: Vec<Vec<f64>>,
    k: usize,
    eps: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let x0 = to_array(&x0, "clean window")?;
    let eps = to_array(&eps, "noise")?;
    let state = diffusion::forward_diffuse(&schedule.inner, &x0, k, &eps).map_err(err)?;
    Ok(to_rows(&state.data))
}

#[pyfunction]
fn prior_kl(schedule: &Schedule, x0: Vec<Vec<f64>>) -> PyResult<f64> {
    let x0 = to_array(&x0, "clean window")?;
    Ok(diffusion::prior_kl(&schedule.inner, &x0))
}

#[pyfunction]
fn apd(samples: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    if samples.len() < 2 {
        return Ok(0.0);
    }
    Ok(metrics::apd(&to_set(&samples, 0)?))
}

#[pyfunction]
fn ade(samples: Vec<Vec<Vec<f64>>>, gt: Vec<Vec<f64>>) -> PyResult<f64> {
    let gt = to_array(&gt, "ground truth")?;
    metrics::ade(&to_set(&samples, 0)?, &gt).map_err(err)
}

#[pyfunction]
fn fde(samples: Vec<Vec<Vec<f64>>>, gt: Vec<Vec<f64>>) -> PyResult<f64> {
    let gt = to_array(&gt, "ground truth")?;
    metrics::fde(&to_set(&samples, 0)?, &gt).map_err(err)
}

#[pyfunction]
fn mmade(samples: Vec<Vec<Vec<f64>>>, group: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let set = to_set(&samples, 0)?;
    let arrays = group
        .iter()
        .map(|g| to_array(g, "group member"))
        .collect::<PyResult<Vec<_>>>()?;
    let refs: Vec<&Array2<f64>> = arrays.iter().collect();
    metrics::mmade(&set, &refs).map_err(err)
}

#[pyfunction]
fn mmfde(samples: Vec<Vec<Vec<f64>>>, group: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let set = to_set(&samples, 0)?;
    let arrays = group
        .iter()
        .map(|g| to_array(g, "group member"))
        .collect::<PyResult<Vec<_>>>()?;
    let refs: Vec<&Array2<f64>> = arrays.iter().collect();
    metrics::mmfde(&set, &refs).map_err(err)
}

#[pyfunction]
fn multimodal_groups(last_frames: Vec<Vec<f64>>, delta: f64) -> Vec<Vec<usize>> {
    let frames: Vec<Array1<f64>> = last_frames.into_iter().map(Array1::from_vec).collect();
    metrics::multimodal_groups(&frames, delta)
}

#[pyfunction]
fn zero_velocity(observed: Vec<Vec<f64>>, horizon: usize) -> PyResult<Vec<Vec<f64>>> {
    let obs = to_array(&observed, "observed window")?;
    Ok(to_rows(&metrics::zero_velocity_prediction(&obs, horizon)))
}

#[pyfunction]
fn synth_chain(num_joints: usize, num_frames: usize, seed: u64) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let seq = synth_kinematic_chain(num_joints, num_frames, seed).map_err(err)?;
    Ok((seq.fps, to_rows(&seq.frames)))
}

#[pyfunction]
fn fold_seed(seed: u64, tags: Vec<u64>) -> u64 {
    rng::fold_seed(seed, &tags)
}

#[pymodule]
fn mdiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Schedule>()?;
    m.add_class::<Condition>()?;
    m.add_class::<Diffusion>()?;
    m.add_class::<Refiner>()?;
    m.add_function(wrap_pyfunction!(forward_diffuse, m)?)?;
    m.add_function(wrap_pyfunction!(prior_kl, m)?)?;
    m.add_function(wrap_pyfunction!(apd, m)?)?;
    m.add_function(wrap_pyfunction!(ade, m)?)?;
    m.add_function(wrap_pyfunction!(fde, m)?)?;
    m.add_function(wrap_pyfunction!(mmade, m)?)?;
    m.add_function(wrap_pyfunction!(mmfde, m)?)?;
    m.add_function(wrap_pyfunction!(multimodal_groups, m)?)?;
    m.add_function(wrap_pyfunction!(zero_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(synth_chain, m)?)?;
    m.add_function(wrap_pyfunction!(fold_seed, m)?)?;
    Ok(())
}
