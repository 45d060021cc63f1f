//! Forward diffusion, the denoising objective, and ancestral sampling.
//!
//! Future windows are `[f x 3J]` arrays. The forward process at step `k`
//! (1-based) has the closed form
//! `X^k = sqrt(alpha_bar_k) X^0 + sqrt(1 - alpha_bar_k) eps`,
//! and one reverse step maps `X^k` to
//! `(X^k - beta_k / sqrt(1 - alpha_bar_k) * eps_hat) / sqrt(alpha_k)`
//! plus `sqrt(beta_k) z`, with `z = 0` on the final step.

use crate::autodiff::{Tape, V};
use crate::error::{Error, Result};
use crate::nn::{Bound, ConditionEmbedding, DiffusionModel};
use crate::rng::{self, ns};
use crate::schedule::NoiseSchedule;
use ndarray::Array2;
use rand_distr::{Distribution as _, StandardNormal};
use std::collections::BTreeMap;

/// A window part-way through the diffusion chain. `k` counts remaining
/// steps: `k_max` is pure noise, `0` is a finished sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub k: usize,
    pub data: Array2<f64>,
}

impl DiffusionState {
    pub fn new(k: usize, data: Array2<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite diffusion state at step {k}"
            )));
        }
        Ok(DiffusionState { k, data })
    }
}

/// Anything that can predict the noise component of a noisy window.
pub trait NoisePredictor {
    fn predict(
        &self,
        xk: &Array2<f64>,
        k: usize,
        cond: &ConditionEmbedding,
    ) -> Result<Array2<f64>>;
}

impl NoisePredictor for DiffusionModel {
    fn predict(
        &self,
        xk: &Array2<f64>,
        k: usize,
        cond: &ConditionEmbedding,
    ) -> Result<Array2<f64>> {
        self.predict_noise(xk, k, cond)
    }
}

fn check_step(schedule: &NoiseSchedule, k: usize) -> Result<()> {
    if k < 1 || k > schedule.k_max() {
        return Err(Error::usage(format!(
            "diffusion step {k} out of range 1..={}",
            schedule.k_max()
        )));
    }
    Ok(())
}

/// Jump straight from clean data to step `k` using the given noise draw.
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    x0: &Array2<f64>,
    k: usize,
    eps: &Array2<f64>,
) -> Result<DiffusionState> {
    check_step(schedule, k)?;
    if x0.dim() != eps.dim() {
        return Err(Error::data(format!(
            "noise shape {:?} does not match data shape {:?}",
            eps.dim(),
            x0.dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("non-finite input window"));
    }
    let ab = schedule.alpha_bar(k);
    let data = x0 * ab.sqrt() + eps * (1.0 - ab).sqrt();
    DiffusionState::new(k, data)
}

/// Single reverse (denoising) step. `z` supplies the stochastic part; it is
/// ignored on the final step (`k == 1`), which is deterministic.
pub fn reverse_step(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    state: &DiffusionState,
    cond: &ConditionEmbedding,
    z: &Array2<f64>,
) -> Result<DiffusionState> {
    let k = state.k;
    check_step(schedule, k)?;
    if z.dim() != state.data.dim() {
        return Err(Error::data(format!(
            "z shape {:?} does not match state shape {:?}",
            z.dim(),
            state.data.dim()
        )));
    }
    let eps_hat = predictor.predict(&state.data, k, cond)?;
    if eps_hat.dim() != state.data.dim() {
        return Err(Error::data(format!(
            "predictor returned shape {:?}, expected {:?}",
            eps_hat.dim(),
            state.data.dim()
        )));
    }
    let beta = schedule.beta(k);
    let coef = beta / (1.0 - schedule.alpha_bar(k)).sqrt();
    let mut data = (&state.data - &(eps_hat * coef)) / schedule.alpha(k).sqrt();
    if k > 1 {
        data = data + z * beta.sqrt();
    }
    DiffusionState::new(k - 1, data)
}

/// Denoising objective for one window and one step draw:
/// squared error between the injected and predicted noise, summed over all
/// coordinates.
pub fn simplified_loss(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    x0: &Array2<f64>,
    cond: &ConditionEmbedding,
    k: usize,
    eps: &Array2<f64>,
) -> Result<f64> {
    let state = forward_diffuse(schedule, x0, k, eps)?;
    let eps_hat = predictor.predict(&state.data, k, cond)?;
    Ok(eps
        .iter()
        .zip(eps_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Tape-level version of [`simplified_loss`] for training: conditions on the
/// observed window and differentiates through encoder and predictor.
pub fn loss_node(
    model: &DiffusionModel,
    schedule: &NoiseSchedule,
    t: &Tape,
    b: &Bound,
    observed: &Array2<f64>,
    future: &Array2<f64>,
    k: usize,
    eps: &Array2<f64>,
) -> Result<V> {
    let cond = model.encode_past_node(t, b, observed)?;
    let state = forward_diffuse(schedule, future, k, eps)?;
    let xk = t.leaf(state.data);
    let pred = model.predict_noise_node(t, b, xk, k, cond)?;
    let d = t.sub(t.leaf(eps.clone()), pred);
    Ok(t.sum_sq(d))
}

/// KL divergence between the forward marginal at the last step,
/// `N(sqrt(alpha_bar_K) x0, (1 - alpha_bar_K) I)`, and the standard normal
/// sampling prior, summed over coordinates. Small values mean the chain is
/// long enough to wash out the data.
pub fn prior_kl(schedule: &NoiseSchedule, x0: &Array2<f64>) -> f64 {
    let ab = schedule.alpha_bar(schedule.k_max());
    let var = 1.0 - ab;
    let d = x0.len() as f64;
    let sq: f64 = x0.iter().map(|v| v * v).sum();
    0.5 * (d * (var - 1.0 - var.ln()) + ab * sq)
}

/// A batch of sampled futures for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub obs_id: usize,
    pub samples: Vec<Array2<f64>>,
}

impl PredictionSet {
    pub fn new(obs_id: usize, samples: Vec<Array2<f64>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("prediction set must hold at least one sample"));
        }
        let dim = samples[0].dim();
        for (i, s) in samples.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::data(format!(
                    "sample {i} has shape {:?}, expected {:?}",
                    s.dim(),
                    dim
                )));
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric(format!("non-finite sample {i}")));
            }
        }
        Ok(PredictionSet { obs_id, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draw `n` futures by ancestral sampling. Each chain uses an independent
/// RNG substream of (`seed`, observation id, chain index), so results do not
/// depend on evaluation order.
pub fn sample(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    cond: &ConditionEmbedding,
    n: usize,
    seed: u64,
    obs_id: usize,
    dims: (usize, usize),
) -> Result<PredictionSet> {
    Ok(sample_traced(schedule, predictor, cond, n, seed, obs_id, dims, &[])?.0)
}

/// Like [`sample`], additionally capturing every chain's state at the
/// requested step indices (e.g. to watch diversity shrink as k falls).
#[allow(clippy::too_many_arguments)]
pub fn sample_traced(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    cond: &ConditionEmbedding,
    n: usize,
    seed: u64,
    obs_id: usize,
    dims: (usize, usize),
    capture: &[usize],
) -> Result<(PredictionSet, BTreeMap<usize, Vec<Array2<f64>>>)> {
    if n == 0 {
        return Err(Error::usage("sample count must be at least 1"));
    }
    let mut trace: BTreeMap<usize, Vec<Array2<f64>>> = BTreeMap::new();
    let want: std::collections::BTreeSet<usize> = capture.iter().cloned().collect();
    for k in &want {
        if *k > schedule.k_max() {
            return Err(Error::usage(format!(
                "capture step {k} exceeds k_max {}",
                schedule.k_max()
            )));
        }
    }
    let mut samples = Vec::with_capacity(n);
    for chain in 0..n {
        let mut r = rng::substream(seed, &[ns::SAMPLE, obs_id as u64, chain as u64]);
        let init =
            Array2::from_shape_fn(dims, |_| StandardNormal.sample(&mut r));
        let mut state = DiffusionState::new(schedule.k_max(), init)?;
        if want.contains(&state.k) {
            trace.entry(state.k).or_default().push(state.data.clone());
        }
        for k in (1..=schedule.k_max()).rev() {
            debug_assert_eq!(state.k, k);
            let z = if k > 1 {
                Array2::from_shape_fn(dims, |_| StandardNormal.sample(&mut r))
            } else {
                Array2::zeros(dims)
            };
            state = reverse_step(schedule, predictor, &state, cond, &z)?;
            if want.contains(&state.k) {
                trace.entry(state.k).or_default().push(state.data.clone());
            }
        }
        samples.push(state.data);
    }
    Ok((PredictionSet::new(obs_id, samples)?, trace))
}
