//! Optimisation loops: Adam, the learning-rate schedule, and the two training
//! stages (noise predictor, then refiner against the frozen predictor).

use crate::checkpoint;
use crate::config::{RefineSection, TrainSection};
use crate::diffusion;
use crate::error::{Error, Result};
use crate::motion::DatasetWindow;
use crate::nn::{gradient, ConditionEmbedding, DiffusionModel, NetworkConfig};
use crate::refine::Refiner;
use crate::rng::{self, ns};
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use ndarray::Array2;
use rand::seq::SliceRandom as _;
use rand::RngExt as _;
use rand_distr::{Distribution, StandardNormal};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam update in place, with bias correction.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hyper: &AdamParams,
    lr: f64,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("non-finite gradient in optimiser step"));
    }
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Learning rate for a 1-based epoch: constant through `decay_start`, then
/// linear down to `decay_floor * lr` at the final epoch.
pub fn lr_at(epoch: usize, cfg: &TrainSection) -> f64 {
    if epoch <= cfg.decay_start || cfg.epochs <= cfg.decay_start {
        return cfg.lr;
    }
    let frac = (epoch - cfg.decay_start) as f64 / (cfg.epochs - cfg.decay_start) as f64;
    cfg.lr * (1.0 - (1.0 - cfg.decay_floor) * frac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wallclock_s: f64,
}

pub fn write_train_log<W: std::io::Write>(mut w: W, rows: &[LogRow]) -> Result<()> {
    writeln!(w, "epoch,loss,lr,wallclock_s")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.3}",
            r.epoch, r.loss, r.lr, r.wallclock_s
        )?;
    }
    Ok(())
}

/// Paths written by a training stage, plus the in-memory log.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub best_path: PathBuf,
    pub last_path: PathBuf,
    pub log_path: PathBuf,
    pub log: Vec<LogRow>,
    pub best_epoch: usize,
}

fn check_windows(windows: &[DatasetWindow], network: &NetworkConfig) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let w = &windows[0].pair;
    let want_obs = (network.obs_frames, 3 * network.num_joints);
    let want_fut = (network.fut_frames, 3 * network.num_joints);
    if w.observed.dim() != want_obs || w.future.dim() != want_fut {
        return Err(Error::data(format!(
            "window shapes {:?}/{:?} do not match network config {:?}/{:?}",
            w.observed.dim(),
            w.future.dim(),
            want_obs,
            want_fut
        )));
    }
    Ok(())
}

fn finish_stage<M>(
    out_dir: &Path,
    stage: &str,
    log: Vec<LogRow>,
    best_epoch: usize,
    save: impl Fn(&Path, &M) -> Result<()>,
    best: &M,
    last: &M,
) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let best_path = out_dir.join(format!("{stage}_best.ckpt"));
    let last_path = out_dir.join(format!("{stage}_last.ckpt"));
    let log_path = out_dir.join(format!("{stage}_log.csv"));
    save(&best_path, best)?;
    save(&last_path, last)?;
    let mut buf = Vec::new();
    write_train_log(&mut buf, &log)?;
    std::fs::write(&log_path, buf)?;
    Ok(TrainArtifacts {
        best_path,
        last_path,
        log_path,
        log,
        best_epoch,
    })
}

/// Train the conditional noise predictor (encoder included) by drawing a
/// step and a noise realisation per window per epoch and descending the
/// prediction error. Saves best/last checkpoints and a CSV log to `out_dir`.
pub fn train_diffusion(
    windows: &[DatasetWindow],
    network: &NetworkConfig,
    spec: &ScheduleSpec,
    tcfg: &TrainSection,
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    check_windows(windows, network)?;
    let schedule = spec.build()?;
    let mut model = DiffusionModel::init(network.clone(), tcfg.seed)?;
    let mut flat = model.params().flatten();
    let mut adam = AdamState::new(flat.len());
    let hyper = AdamParams {
        beta1: tcfg.adam_beta1,
        beta2: tcfg.adam_beta2,
        ..AdamParams::default()
    };

    let start = Instant::now();
    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut best_loss = f64::INFINITY;
    let mut best_flat = flat.clone();
    let mut best_epoch = 0;

    for epoch in 1..=tcfg.epochs {
        let lr = lr_at(epoch, tcfg);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng::substream(tcfg.seed, &[ns::SHUFFLE, epoch as u64]));

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (ci, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let mut grad = vec![0.0; flat.len()];
            for (bi, &idx) in batch.iter().enumerate() {
                let pos = (ci * tcfg.batch_size + bi) as u64;
                let pair = &windows[idx].pair;
                for draw in 0..tcfg.k_draws_per_sample {
                    let mut r = rng::substream(
                        tcfg.seed,
                        &[ns::NOISE, epoch as u64, pos, draw as u64],
                    );
                    let k = r.random_range(1..=schedule.k_max());
                    let eps =
                        Array2::from_shape_fn(pair.future.dim(), |_| StandardNormal.sample(&mut r));
                    let (loss, g) = gradient(model.params(), |t, b| {
                        diffusion::loss_node(&model, &schedule, t, b, &pair.observed, &pair.future, k, &eps)
                    })
                    .map_err(|e| Error::numeric(format!("epoch {epoch}: {e}")))?;
                    loss_sum += loss;
                    loss_count += 1;
                    for (acc, gi) in grad.iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
            }
            let denom = (batch.len() * tcfg.k_draws_per_sample) as f64;
            for gi in grad.iter_mut() {
                *gi /= denom;
            }
            adam_step(&mut flat, &grad, &mut adam, &hyper, lr)
                .map_err(|e| Error::numeric(format!("epoch {epoch}: {e}")))?;
            model.params_mut().assign_flat(&flat)?;
        }

        let mean_loss = loss_sum / loss_count as f64;
        if !mean_loss.is_finite() {
            return Err(Error::numeric(format!(
                "training diverged at epoch {epoch}: loss is not finite"
            )));
        }
        if mean_loss < best_loss {
            best_loss = mean_loss;
            best_flat = flat.clone();
            best_epoch = epoch;
        }
        log.push(LogRow {
            epoch,
            loss: mean_loss,
            lr,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }

    let mut best_model = model.clone();
    best_model.params_mut().assign_flat(&best_flat)?;
    finish_stage(
        out_dir,
        "diffusion",
        log,
        best_epoch,
        |p, m: &DiffusionModel| checkpoint::save_diffusion(p, m, spec),
        &best_model,
        &model,
    )
}

/// Train the refiner against a frozen predictor: each epoch draws fresh
/// futures per observation from the sampler and descends the refinement
/// objective. The predictor's parameters are never touched.
#[allow(clippy::too_many_arguments)]
pub fn train_refiner(
    windows: &[DatasetWindow],
    model: &DiffusionModel,
    schedule: &NoiseSchedule,
    spec: &ScheduleSpec,
    rcfg: &RefineSection,
    seed: u64,
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    check_windows(windows, model.cfg())?;
    if rcfg.n_samples < 2 {
        return Err(Error::usage("refiner training needs at least 2 samples"));
    }
    let net = model.cfg();
    let dims = (net.fut_frames, 3 * net.num_joints);
    let mut refiner = Refiner::init(
        rcfg.refine_config(),
        net.num_joints,
        net.fut_frames,
        net.d_cond,
        seed,
    )?;
    let conditions: Vec<ConditionEmbedding> = windows
        .iter()
        .map(|w| model.encode_past(&w.pair.observed))
        .collect::<Result<_>>()?;

    let mut flat = refiner.params().flatten();
    let mut adam = AdamState::new(flat.len());
    let hyper = AdamParams::default();

    let start = Instant::now();
    let mut log = Vec::with_capacity(rcfg.epochs);
    let mut best_loss = f64::INFINITY;
    let mut best_flat = flat.clone();
    let mut best_epoch = 0;

    for epoch in 1..=rcfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng::substream(
            seed,
            &[ns::REFINE, ns::SHUFFLE, epoch as u64],
        ));
        let sample_seed = rng::fold_seed(seed, &[ns::REFINE, epoch as u64]);

        let mut loss_sum = 0.0;
        for &idx in &order {
            let set = diffusion::sample(
                schedule,
                model,
                &conditions[idx],
                rcfg.n_samples,
                sample_seed,
                idx,
                dims,
            )?;
            let (loss, g) = refiner
                .loss_grad(&set, &conditions[idx], &windows[idx].pair.future)
                .map_err(|e| Error::numeric(format!("epoch {epoch}: {e}")))?;
            loss_sum += loss;
            adam_step(&mut flat, &g, &mut adam, &hyper, rcfg.lr)
                .map_err(|e| Error::numeric(format!("epoch {epoch}: {e}")))?;
            refiner.params_mut().assign_flat(&flat)?;
        }

        let mean_loss = loss_sum / windows.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::numeric(format!(
                "refiner training diverged at epoch {epoch}: loss is not finite"
            )));
        }
        if mean_loss < best_loss {
            best_loss = mean_loss;
            best_flat = flat.clone();
            best_epoch = epoch;
        }
        log.push(LogRow {
            epoch,
            loss: mean_loss,
            lr: rcfg.lr,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }

    let mut best_refiner = refiner.clone();
    best_refiner.params_mut().assign_flat(&best_flat)?;
    finish_stage(
        out_dir,
        "refiner",
        log,
        best_epoch,
        |p, r: &Refiner| checkpoint::save_refiner(p, r, net, spec),
        &best_refiner,
        &refiner,
    )
}
