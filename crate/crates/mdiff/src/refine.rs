//! Sample refinement: a residual graph network over joints that nudges each
//! sampled future towards the data manifold.
//!
//! Every joint is a node whose feature is its whole trajectory plus a
//! projection of the condition embedding. Message passing uses one shared
//! learnable dense adjacency. The output layer starts at zero, so an
//! untrained refiner is the identity.
//!
//! Training minimises, over a set of candidates `Z_i = Y_i + delta(Y_i, C)`:
//! `min_i ||Z_i - X||^2  +  lambda * sum_i ||Z_i - Y_i||^2
//!  +  gamma * (1 / (N (N-1))) * sum_{i != j} exp(-||Z_i - Z_j||^2 / sigma)`
//! — accuracy for the best candidate, anchoring to the sampler's output, and
//! a repulsion term that keeps the set diverse.

use crate::autodiff::{Tape, V};
use crate::diffusion::PredictionSet;
use crate::error::{Error, Result};
use crate::nn::{bind, gradient, Bound, ConditionEmbedding, Init, ParamSet, SpecList};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Residual message-passing layers after the input projection.
    pub n_layers: usize,
    pub hidden: usize,
    /// Weight of the anchor term.
    pub lambda: f64,
    /// Weight of the diversity term.
    pub gamma: f64,
    /// Bandwidth of the repulsion kernel.
    pub sigma: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            n_layers: 12,
            hidden: 256,
            lambda: 0.01,
            gamma: 0.005,
            sigma: 100.0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::usage("refine.hidden must be at least 1"));
        }
        for (name, v) in [
            ("refine.lambda", self.lambda),
            ("refine.gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::usage(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::usage("refine.sigma must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refiner {
    cfg: RefineConfig,
    num_joints: usize,
    fut_frames: usize,
    d_cond: usize,
    params: ParamSet,
}

impl Refiner {
    fn specs(cfg: &RefineConfig, num_joints: usize, fut_frames: usize, d_cond: usize) -> SpecList {
        let (h, tw) = (cfg.hidden, 3 * fut_frames);
        let mut specs: SpecList = Vec::new();
        specs.push(("ref.adj".into(), (num_joints, num_joints), Init::EyeJitter(0.01)));
        specs.push(("ref.cond.w".into(), (d_cond, h), Init::FanIn));
        specs.push(("ref.cond.b".into(), (1, h), Init::Zeros));
        specs.push(("ref.in.w".into(), (tw + h, h), Init::FanIn));
        specs.push(("ref.in.b".into(), (1, h), Init::Zeros));
        for l in 0..cfg.n_layers {
            specs.push((format!("ref.l{l}.w"), (h, h), Init::FanIn));
            specs.push((format!("ref.l{l}.b"), (1, h), Init::Zeros));
        }
        // zero-initialised so refinement starts as the identity
        specs.push(("ref.out.w".into(), (h, tw), Init::Zeros));
        specs.push(("ref.out.b".into(), (1, tw), Init::Zeros));
        specs
    }

    pub fn init(
        cfg: RefineConfig,
        num_joints: usize,
        fut_frames: usize,
        d_cond: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if num_joints == 0 || fut_frames == 0 || d_cond == 0 {
            return Err(Error::usage("refiner dimensions must be at least 1"));
        }
        let params = ParamSet::from_specs(&Self::specs(&cfg, num_joints, fut_frames, d_cond), seed);
        Ok(Refiner {
            cfg,
            num_joints,
            fut_frames,
            d_cond,
            params,
        })
    }

    pub fn from_parts(
        cfg: RefineConfig,
        num_joints: usize,
        fut_frames: usize,
        d_cond: usize,
        params: ParamSet,
    ) -> Result<Self> {
        cfg.validate()?;
        params.conforms(&Self::specs(&cfg, num_joints, fut_frames, d_cond))?;
        Ok(Refiner {
            cfg,
            num_joints,
            fut_frames,
            d_cond,
            params,
        })
    }

    pub fn cfg(&self) -> &RefineConfig {
        &self.cfg
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.num_joints, self.fut_frames, self.d_cond)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// The shared learnable adjacency, `[J x J]`.
    pub fn adjacency(&self) -> &Array2<f64> {
        self.params.get("ref.adj").expect("adjacency registered")
    }

    fn window_dims(&self) -> (usize, usize) {
        (self.fut_frames, 3 * self.num_joints)
    }

    /// Rearrange a `[f x 3J]` window into per-joint trajectory rows
    /// `[J x 3f]` (frame-major within each row).
    fn traj_features(&self, y: &Array2<f64>) -> Array2<f64> {
        let (f, j) = (self.fut_frames, self.num_joints);
        let mut out = Array2::zeros((j, 3 * f));
        for jj in 0..j {
            for fr in 0..f {
                for d in 0..3 {
                    out[(jj, 3 * fr + d)] = y[(fr, 3 * jj + d)];
                }
            }
        }
        out
    }

    /// Graph pass producing the correction for one window; `cproj` is the
    /// already-projected condition row (shared across samples).
    fn delta_node(&self, t: &Tape, b: &Bound, y: &Array2<f64>, cproj: V) -> V {
        let (f, j) = (self.fut_frames, self.num_joints);
        let adj = b.v("ref.adj");
        let feats = t.concat_cols(t.leaf(self.traj_features(y)), t.repeat_rows(cproj, j));
        let mut h = t.tanh(t.add_row(
            t.matmul(t.matmul(adj, feats), b.v("ref.in.w")),
            b.v("ref.in.b"),
        ));
        for l in 0..self.cfg.n_layers {
            let m = t.tanh(t.add_row(
                t.matmul(t.matmul(adj, h), b.v(&format!("ref.l{l}.w"))),
                b.v(&format!("ref.l{l}.b")),
            ));
            h = t.add(h, m);
        }
        let delta_tr = t.add_row(
            t.matmul(t.matmul(adj, h), b.v("ref.out.w")),
            b.v("ref.out.b"),
        ); // [J x 3f]
        // permute joint-major trajectories back into frame rows [f x 3J]
        let stacked = t.reshape(delta_tr, j * f, 3);
        let mut rows = Vec::with_capacity(f * j);
        for fr in 0..f {
            for jj in 0..j {
                rows.push(t.row(stacked, jj * f + fr));
            }
        }
        t.reshape(t.vstack(&rows), f, 3 * j)
    }

    fn check_inputs(&self, set: &PredictionSet, cond: &ConditionEmbedding) -> Result<()> {
        if cond.dim() != self.d_cond {
            return Err(Error::data(format!(
                "condition dim {} does not match refiner d_cond {}",
                cond.dim(),
                self.d_cond
            )));
        }
        for s in &set.samples {
            if s.dim() != self.window_dims() {
                return Err(Error::data(format!(
                    "sample shape {:?} does not match refiner window {:?}",
                    s.dim(),
                    self.window_dims()
                )));
            }
        }
        Ok(())
    }

    fn cproj_node(&self, t: &Tape, b: &Bound, cond: &ConditionEmbedding) -> V {
        let c = t.leaf(cond.as_row().clone());
        t.add_row(t.matmul(c, b.v("ref.cond.w")), b.v("ref.cond.b"))
    }

    /// Apply the learned correction to every sample in the set.
    pub fn refine(&self, set: &PredictionSet, cond: &ConditionEmbedding) -> Result<PredictionSet> {
        self.check_inputs(set, cond)?;
        let t = Tape::new();
        let b = bind(&self.params, &t);
        let cproj = self.cproj_node(&t, &b, cond);
        let mut refined = Vec::with_capacity(set.len());
        for y in &set.samples {
            let delta = self.delta_node(&t, &b, y, cproj);
            let z = t.add(t.leaf(y.clone()), delta);
            refined.push(z);
        }
        if let Some(op) = t.fault() {
            return Err(Error::numeric(format!(
                "non-finite value produced by op `{op}`"
            )));
        }
        PredictionSet::new(set.obs_id, refined.into_iter().map(|v| t.value(v)).collect())
    }

    /// Build the training objective on a tape. Needs at least two samples
    /// (the diversity term is undefined otherwise).
    pub fn loss_node(
        &self,
        t: &Tape,
        b: &Bound,
        set: &PredictionSet,
        cond: &ConditionEmbedding,
        future: &Array2<f64>,
    ) -> Result<V> {
        self.check_inputs(set, cond)?;
        if set.len() < 2 {
            return Err(Error::usage(
                "refinement objective needs at least 2 samples",
            ));
        }
        if future.dim() != self.window_dims() {
            return Err(Error::data(format!(
                "future shape {:?} does not match refiner window {:?}",
                future.dim(),
                self.window_dims()
            )));
        }
        let n = set.len();
        let cproj = self.cproj_node(t, b, cond);
        let gt = t.leaf(future.clone());

        let mut zs = Vec::with_capacity(n);
        let mut anchor = None;
        let mut rec = Vec::with_capacity(n);
        for y in &set.samples {
            let delta = self.delta_node(t, b, y, cproj);
            let z = t.add(t.leaf(y.clone()), delta);
            zs.push(z);
            let a = t.sum_sq(delta);
            anchor = Some(match anchor {
                None => a,
                Some(acc) => t.add(acc, a),
            });
            rec.push(t.sum_sq(t.sub(z, gt)));
        }
        // gradient flows only into the best candidate; ties keep the lowest index
        let mut best = 0;
        for (i, r) in rec.iter().enumerate() {
            if t.scalar_value(*r) < t.scalar_value(rec[best]) {
                best = i;
            }
        }
        let mut div = None;
        for i in 0..n {
            for jj in i + 1..n {
                let d2 = t.sum_sq(t.sub(zs[i], zs[jj]));
                let e = t.exp(t.scale(d2, -1.0 / self.cfg.sigma));
                div = Some(match div {
                    None => e,
                    Some(acc) => t.add(acc, e),
                });
            }
        }
        let div = t.scale(div.expect("n >= 2"), 2.0 / (n * (n - 1)) as f64);
        let loss = t.add(rec[best], t.scale(anchor.expect("n >= 1"), self.cfg.lambda));
        Ok(t.add(loss, t.scale(div, self.cfg.gamma)))
    }

    /// Objective value and flat parameter gradient for one observation.
    pub fn loss_grad(
        &self,
        set: &PredictionSet,
        cond: &ConditionEmbedding,
        future: &Array2<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        gradient(&self.params, |t, b| self.loss_node(t, b, set, cond, future))
    }
}
