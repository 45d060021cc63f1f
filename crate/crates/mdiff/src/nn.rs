//! Networks: the past-motion encoder (per-joint embedding, spatial
//! transformer, GRU) and the conditional noise predictor (spatial + temporal
//! transformers with a step encoding), built on the autodiff tape.
//!
//! Parameters live in a [`ParamSet`]: an ordered, named collection of 2-D
//! tensors with a flat-vector view for the optimiser and checkpoints.

use crate::autodiff::{Tape, V};
use crate::error::{Error, Result};
use crate::rng::{self, ns};
use ndarray::Array2;
use rand::RngExt as _;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Shape hyperparameters for the encoder and noise predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Joints per frame (J).
    pub num_joints: usize,
    /// Observed (conditioning) frames per window.
    pub obs_frames: usize,
    /// Future frames to predict per window.
    pub fut_frames: usize,
    /// Per-joint embedding width (c).
    pub joint_dim: usize,
    /// Temporal transformer width.
    pub d_model: usize,
    pub n_heads: usize,
    pub n_spatial_layers: usize,
    pub n_temporal_layers: usize,
    /// GRU hidden size = condition embedding size.
    pub d_cond: usize,
    /// When false, frames are embedded with a single affine map and the
    /// spatial transformer stages are skipped entirely.
    pub use_spatial_transformer: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_joints: 17,
            obs_frames: 25,
            fut_frames: 100,
            joint_dim: 32,
            d_model: 512,
            n_heads: 4,
            n_spatial_layers: 2,
            n_temporal_layers: 2,
            d_cond: 512,
            use_spatial_transformer: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("network.num_joints", self.num_joints),
            ("network.obs_frames", self.obs_frames),
            ("network.fut_frames", self.fut_frames),
            ("network.joint_dim", self.joint_dim),
            ("network.d_model", self.d_model),
            ("network.n_heads", self.n_heads),
            ("network.d_cond", self.d_cond),
        ];
        for (name, v) in pos {
            if v == 0 {
                return Err(Error::usage(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % 4 != 0 {
            return Err(Error::usage("network.d_model must be divisible by 4"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::usage(
                "network.d_model must be divisible by network.n_heads",
            ));
        }
        if self.joint_dim % 2 != 0 {
            return Err(Error::usage("network.joint_dim must be even"));
        }
        if self.use_spatial_transformer && self.joint_dim % self.n_heads != 0 {
            return Err(Error::usage(
                "network.joint_dim must be divisible by network.n_heads",
            ));
        }
        Ok(())
    }

    fn frame_width(&self) -> usize {
        3 * self.num_joints
    }
}

/// How a tensor is filled at initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Uniform in `±1/sqrt(fan_in)` where fan_in = rows.
    FanIn,
    Zeros,
    Ones,
    /// Identity plus uniform jitter of the given half-width (square only).
    EyeJitter(f64),
}

pub(crate) type SpecList = Vec<(String, (usize, usize), Init)>;

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Array2<f64>)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::data(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), value));
        Ok(())
    }

    pub(crate) fn from_specs(specs: &SpecList, seed: u64) -> Self {
        let mut set = ParamSet::new();
        for (i, (name, (rows, cols), init)) in specs.iter().enumerate() {
            let value = match init {
                Init::Zeros => Array2::zeros((*rows, *cols)),
                Init::Ones => Array2::ones((*rows, *cols)),
                Init::FanIn => {
                    let bound = 1.0 / (*rows as f64).sqrt();
                    let mut r = rng::substream(seed, &[ns::INIT, i as u64]);
                    Array2::from_shape_fn((*rows, *cols), |_| r.random_range(-bound..bound))
                }
                Init::EyeJitter(w) => {
                    assert_eq!(rows, cols, "EyeJitter needs a square tensor");
                    let mut r = rng::substream(seed, &[ns::INIT, i as u64]);
                    Array2::from_shape_fn((*rows, *cols), |(a, b)| {
                        (a == b) as u8 as f64 + r.random_range(-*w..*w)
                    })
                }
            };
            set.add(name, value).expect("spec names are unique");
        }
        set
    }

    /// Check that `self` holds exactly the tensors `specs` describes, in
    /// order and with matching shapes.
    pub(crate) fn conforms(&self, specs: &SpecList) -> Result<()> {
        if self.entries.len() != specs.len() {
            return Err(Error::data(format!(
                "parameter count mismatch: expected {}, found {}",
                specs.len(),
                self.entries.len()
            )));
        }
        for ((name, value), (want_name, want_shape, _)) in self.entries.iter().zip(specs) {
            if name != want_name {
                return Err(Error::data(format!(
                    "parameter name mismatch: expected `{want_name}`, found `{name}`"
                )));
            }
            if value.dim() != *want_shape {
                return Err(Error::data(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.dim(),
                    want_shape
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, Array2<f64>)] {
        &self.entries
    }

    pub fn from_entries(entries: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let mut set = ParamSet::new();
        for (name, value) in entries {
            set.add(&name, value)?;
        }
        Ok(set)
    }

    /// All scalars concatenated in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_scalars());
        for (_, v) in &self.entries {
            flat.extend(v.iter());
        }
        flat
    }

    /// Overwrite every tensor from a flat vector in registration order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::data(format!(
                "flat parameter length {} does not match {} scalars",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for (_, v) in &mut self.entries {
            for slot in v.iter_mut() {
                *slot = flat[off];
                off += 1;
            }
        }
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

/// Parameter tensors lifted onto a tape as leaves, looked up by name.
pub struct Bound {
    ids: HashMap<String, V>,
    order: Vec<V>,
}

impl Bound {
    pub fn v(&self, name: &str) -> V {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }
}

/// Put every parameter on the tape.
pub fn bind(params: &ParamSet, tape: &Tape) -> Bound {
    let mut ids = HashMap::new();
    let mut order = Vec::with_capacity(params.len());
    for (name, value) in params.entries() {
        let v = tape.leaf(value.clone());
        ids.insert(name.clone(), v);
        order.push(v);
    }
    Bound { ids, order }
}

/// Evaluate a scalar loss built from bound parameters and return its value
/// together with the gradient as a flat vector aligned with
/// [`ParamSet::flatten`]. Parameters the loss never touches get zero
/// gradient. Non-finite values anywhere in the forward pass abort with a
/// numeric error naming the offending op.
pub fn gradient<F>(params: &ParamSet, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&Tape, &Bound) -> Result<V>,
{
    let tape = Tape::new();
    let bound = bind(params, &tape);
    let out = build(&tape, &bound)?;
    if let Some(op) = tape.fault() {
        return Err(Error::numeric(format!(
            "non-finite value produced by op `{op}`"
        )));
    }
    let value = tape.scalar_value(out);
    let grads = tape.backward(out);
    let mut flat = Vec::with_capacity(params.num_scalars());
    for (slot, (_, p)) in bound.order.iter().zip(params.entries()) {
        match grads.get(*slot) {
            Some(g) => flat.extend(g.iter()),
            None => flat.extend(std::iter::repeat(0.0).take(p.len())),
        }
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite gradient"));
    }
    Ok((value, flat))
}

/// Sinusoidal position code: `sin`/`cos` pairs with geometrically spaced
/// wavelengths (base 10000). `dim` must be even.
pub fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "sinusoid dim must be even");
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        out.push((pos * freq).sin());
        out.push((pos * freq).cos());
    }
    out
}

fn sinusoid_rows(n: usize, dim: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n, dim));
    for i in 0..n {
        for (j, v) in sinusoid(i as f64, dim).into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    a
}

/// Condition vector summarising observed motion; shape `[1 x d_cond]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    row: Array2<f64>,
}

impl ConditionEmbedding {
    pub fn new(row: Array2<f64>) -> Result<Self> {
        if row.nrows() != 1 {
            return Err(Error::data("condition embedding must be a single row"));
        }
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite condition embedding"));
        }
        Ok(ConditionEmbedding { row })
    }

    pub fn dim(&self) -> usize {
        self.row.ncols()
    }

    pub fn as_row(&self) -> &Array2<f64> {
        &self.row
    }
}

/// Post-norm transformer block: multi-head self-attention and a 4x-wide
/// feed-forward, each followed by a residual + layer norm.
fn transformer_block(t: &Tape, b: &Bound, prefix: &str, x: V, dim: usize, heads: usize) -> V {
    let p = |s: &str| b.v(&format!("{prefix}.{s}"));
    let q = t.add_row(t.matmul(x, p("attn.wq")), p("attn.bq"));
    let k = t.add_row(t.matmul(x, p("attn.wk")), p("attn.bk"));
    let v = t.add_row(t.matmul(x, p("attn.wv")), p("attn.bv"));
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut merged = None;
    for h in 0..heads {
        let qh = t.slice_cols(q, h * hd, hd);
        let kh = t.slice_cols(k, h * hd, hd);
        let vh = t.slice_cols(v, h * hd, hd);
        let scores = t.scale(t.matmul(qh, t.transpose(kh)), scale);
        let attn = t.softmax_rows(scores);
        let oh = t.matmul(attn, vh);
        merged = Some(match merged {
            None => oh,
            Some(m) => t.concat_cols(m, oh),
        });
    }
    let proj = t.add_row(t.matmul(merged.unwrap(), p("attn.wo")), p("attn.bo"));
    let y = t.layer_norm(t.add(x, proj), p("ln1.g"), p("ln1.b"));
    let f1 = t.relu(t.add_row(t.matmul(y, p("ffn.w1")), p("ffn.b1")));
    let f2 = t.add_row(t.matmul(f1, p("ffn.w2")), p("ffn.b2"));
    t.layer_norm(t.add(y, f2), p("ln2.g"), p("ln2.b"))
}

fn block_specs(prefix: &str, dim: usize, specs: &mut SpecList) {
    for nm in ["wq", "wk", "wv", "wo"] {
        specs.push((format!("{prefix}.attn.{nm}"), (dim, dim), Init::FanIn));
    }
    for nm in ["bq", "bk", "bv", "bo"] {
        specs.push((format!("{prefix}.attn.{nm}"), (1, dim), Init::Zeros));
    }
    specs.push((format!("{prefix}.ln1.g"), (1, dim), Init::Ones));
    specs.push((format!("{prefix}.ln1.b"), (1, dim), Init::Zeros));
    specs.push((format!("{prefix}.ffn.w1"), (dim, 4 * dim), Init::FanIn));
    specs.push((format!("{prefix}.ffn.b1"), (1, 4 * dim), Init::Zeros));
    specs.push((format!("{prefix}.ffn.w2"), (4 * dim, dim), Init::FanIn));
    specs.push((format!("{prefix}.ffn.b2"), (1, dim), Init::Zeros));
    specs.push((format!("{prefix}.ln2.g"), (1, dim), Init::Ones));
    specs.push((format!("{prefix}.ln2.b"), (1, dim), Init::Zeros));
}

/// Past encoder + conditional noise predictor sharing one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    cfg: NetworkConfig,
    params: ParamSet,
}

impl DiffusionModel {
    fn specs(cfg: &NetworkConfig) -> SpecList {
        let (j, c, d, dc) = (cfg.num_joints, cfg.joint_dim, cfg.d_model, cfg.d_cond);
        let mut specs = Vec::new();
        if cfg.use_spatial_transformer {
            specs.push(("enc.embed.w".into(), (3, c), Init::FanIn));
            specs.push(("enc.embed.b".into(), (1, c), Init::Zeros));
            for l in 0..cfg.n_spatial_layers {
                block_specs(&format!("enc.sp{l}"), c, &mut specs);
            }
        } else {
            specs.push(("enc.flat.w".into(), (3 * j, c), Init::FanIn));
            specs.push(("enc.flat.b".into(), (1, c), Init::Zeros));
        }
        for nm in ["wz", "wr", "wn"] {
            specs.push((format!("enc.gru.{nm}"), (c, dc), Init::FanIn));
        }
        for nm in ["uz", "ur", "un"] {
            specs.push((format!("enc.gru.{nm}"), (dc, dc), Init::FanIn));
        }
        for nm in ["bz", "br", "bn"] {
            specs.push((format!("enc.gru.{nm}"), (1, dc), Init::Zeros));
        }

        if cfg.use_spatial_transformer {
            specs.push(("dec.embed.w".into(), (3, c), Init::FanIn));
            specs.push(("dec.embed.b".into(), (1, c), Init::Zeros));
            for l in 0..cfg.n_spatial_layers {
                block_specs(&format!("dec.sp{l}"), c, &mut specs);
            }
        } else {
            specs.push(("dec.flat.w".into(), (3 * j, c * j), Init::FanIn));
            specs.push(("dec.flat.b".into(), (1, c * j), Init::Zeros));
        }
        specs.push(("dec.cond.w".into(), (dc, d), Init::FanIn));
        specs.push(("dec.cond.b".into(), (1, d), Init::Zeros));
        specs.push(("dec.fuse.w".into(), (c * j + d, d), Init::FanIn));
        specs.push(("dec.fuse.b".into(), (1, d), Init::Zeros));
        for l in 0..cfg.n_temporal_layers {
            block_specs(&format!("dec.tp{l}"), d, &mut specs);
        }
        let h2 = d / 4;
        specs.push(("dec.head.w1".into(), (d, d / 2), Init::FanIn));
        specs.push(("dec.head.b1".into(), (1, d / 2), Init::Zeros));
        specs.push(("dec.head.w2".into(), (d / 2, h2), Init::FanIn));
        specs.push(("dec.head.b2".into(), (1, h2), Init::Zeros));
        specs.push(("dec.head.wp".into(), (h2, j * h2), Init::FanIn));
        specs.push(("dec.head.bp".into(), (1, j * h2), Init::Zeros));
        // zero-initialised so a fresh model predicts exactly zero noise
        specs.push(("dec.head.wo".into(), (h2, 3), Init::Zeros));
        specs.push(("dec.head.bo".into(), (1, 3), Init::Zeros));
        specs
    }

    pub fn init(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = ParamSet::from_specs(&Self::specs(&cfg), seed);
        Ok(DiffusionModel { cfg, params })
    }

    /// Rebuild from checkpointed tensors; shapes and order must match what
    /// [`DiffusionModel::init`] would register for this config.
    pub fn from_parts(cfg: NetworkConfig, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        params.conforms(&Self::specs(&cfg))?;
        Ok(DiffusionModel { cfg, params })
    }

    pub fn cfg(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Embed one frame's joints: `[1 x 3J] -> [J x c]` token matrix (shared
    /// affine per joint) or, without the spatial transformer, a single
    /// `[1 x w]` token via one affine over the whole frame.
    fn frame_token(&self, t: &Tape, b: &Bound, frame: V, dec: bool, pe: Option<V>) -> V {
        let cfg = &self.cfg;
        let side = if dec { "dec" } else { "enc" };
        if cfg.use_spatial_transformer {
            let fj = t.reshape(frame, cfg.num_joints, 3);
            let e = t.add_row(
                t.matmul(fj, b.v(&format!("{side}.embed.w"))),
                b.v(&format!("{side}.embed.b")),
            );
            let mut x = t.add(e, pe.expect("spatial position code"));
            for l in 0..cfg.n_spatial_layers {
                x = transformer_block(t, b, &format!("{side}.sp{l}"), x, cfg.joint_dim, cfg.n_heads);
            }
            x
        } else {
            t.add_row(
                t.matmul(frame, b.v(&format!("{side}.flat.w"))),
                b.v(&format!("{side}.flat.b")),
            )
        }
    }

    /// Build the condition embedding graph from observed frames `[T x 3J]`.
    pub fn encode_past_node(&self, t: &Tape, b: &Bound, observed: &Array2<f64>) -> Result<V> {
        let cfg = &self.cfg;
        if observed.dim() != (cfg.obs_frames, cfg.frame_width()) {
            return Err(Error::data(format!(
                "observed window has shape {:?}, expected ({}, {})",
                observed.dim(),
                cfg.obs_frames,
                cfg.frame_width()
            )));
        }
        let obs = t.leaf(observed.clone());
        let pe = cfg
            .use_spatial_transformer
            .then(|| t.leaf(sinusoid_rows(cfg.num_joints, cfg.joint_dim)));
        let mut pooled = Vec::with_capacity(cfg.obs_frames);
        for fr in 0..cfg.obs_frames {
            let frame = t.row(obs, fr);
            let tok = self.frame_token(t, b, frame, false, pe);
            pooled.push(if cfg.use_spatial_transformer {
                t.mean_rows(tok)
            } else {
                tok
            });
        }
        // GRU over per-frame tokens; final hidden state is the condition.
        let g = |s: &str| b.v(&format!("enc.gru.{s}"));
        let mut h = t.leaf(Array2::zeros((1, cfg.d_cond)));
        for x in pooled {
            let z = t.sigmoid(t.add(
                t.add(t.matmul(x, g("wz")), t.matmul(h, g("uz"))),
                g("bz"),
            ));
            let r = t.sigmoid(t.add(
                t.add(t.matmul(x, g("wr")), t.matmul(h, g("ur"))),
                g("br"),
            ));
            let n = t.tanh(t.add(
                t.add(t.matmul(x, g("wn")), t.mul(r, t.matmul(h, g("un")))),
                g("bn"),
            ));
            // h' = (1 - z) * n + z * h
            h = t.add(n, t.mul(z, t.sub(h, n)));
        }
        Ok(h)
    }

    /// Build the noise prediction graph for a noisy window `xk` (`[f x 3J]`
    /// node) at diffusion step `k`, conditioned on `cond` (`[1 x d_cond]`).
    pub fn predict_noise_node(&self, t: &Tape, b: &Bound, xk: V, k: usize, cond: V) -> Result<V> {
        let cfg = &self.cfg;
        let (f, w) = (cfg.fut_frames, cfg.frame_width());
        if t.shape(xk) != (f, w) {
            return Err(Error::data(format!(
                "noisy window has shape {:?}, expected ({f}, {w})",
                t.shape(xk)
            )));
        }
        if k < 1 {
            return Err(Error::usage("diffusion step k must be at least 1"));
        }
        if t.shape(cond) != (1, cfg.d_cond) {
            return Err(Error::data(format!(
                "condition has shape {:?}, expected (1, {})",
                t.shape(cond),
                cfg.d_cond
            )));
        }
        let (j, c, d) = (cfg.num_joints, cfg.joint_dim, cfg.d_model);

        let pe = cfg
            .use_spatial_transformer
            .then(|| t.leaf(sinusoid_rows(j, c)));
        let mut toks = Vec::with_capacity(f);
        for fr in 0..f {
            let frame = t.row(xk, fr);
            let tok = self.frame_token(t, b, frame, true, pe);
            toks.push(if cfg.use_spatial_transformer {
                t.reshape(tok, 1, j * c)
            } else {
                tok
            });
        }
        let xbar = t.vstack(&toks); // [f x cJ]

        let cproj = t.add_row(t.matmul(cond, b.v("dec.cond.w")), b.v("dec.cond.b"));
        let fused = t.concat_cols(xbar, t.repeat_rows(cproj, f));
        let mut u = t.add_row(t.matmul(fused, b.v("dec.fuse.w")), b.v("dec.fuse.b"));
        u = t.add(u, t.leaf(sinusoid_rows(f, d)));
        let step = sinusoid(k as f64, d);
        u = t.add_row(u, t.leaf(Array2::from_shape_vec((1, d), step).unwrap()));
        for l in 0..cfg.n_temporal_layers {
            u = transformer_block(t, b, &format!("dec.tp{l}"), u, d, cfg.n_heads);
        }

        let h1 = t.relu(t.add_row(t.matmul(u, b.v("dec.head.w1")), b.v("dec.head.b1")));
        let h2 = t.relu(t.add_row(t.matmul(h1, b.v("dec.head.w2")), b.v("dec.head.b2")));
        let pj = t.add_row(t.matmul(h2, b.v("dec.head.wp")), b.v("dec.head.bp"));
        let per_joint = t.reshape(pj, f * j, d / 4);
        let out = t.add_row(
            t.matmul(per_joint, b.v("dec.head.wo")),
            b.v("dec.head.bo"),
        );
        Ok(t.reshape(out, f, w))
    }

    /// Condition embedding for observed frames (value-level wrapper).
    pub fn encode_past(&self, observed: &Array2<f64>) -> Result<ConditionEmbedding> {
        let t = Tape::new();
        let b = bind(&self.params, &t);
        let node = self.encode_past_node(&t, &b, observed)?;
        if let Some(op) = t.fault() {
            return Err(Error::numeric(format!(
                "non-finite value produced by op `{op}`"
            )));
        }
        ConditionEmbedding::new(t.value(node))
    }

    /// Predicted noise for a noisy window (value-level wrapper).
    pub fn predict_noise(
        &self,
        xk: &Array2<f64>,
        k: usize,
        cond: &ConditionEmbedding,
    ) -> Result<Array2<f64>> {
        let t = Tape::new();
        let b = bind(&self.params, &t);
        let xk_node = t.leaf(xk.clone());
        let cond_node = t.leaf(cond.as_row().clone());
        let node = self.predict_noise_node(&t, &b, xk_node, k, cond_node)?;
        if let Some(op) = t.fault() {
            return Err(Error::numeric(format!(
                "non-finite value produced by op `{op}`"
            )));
        }
        Ok(t.value(node))
    }
}
