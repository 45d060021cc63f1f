//! Experiment configuration: one TOML file with sections for data,
//! schedule, network, training, refinement, and evaluation.

use crate::error::{Error, Result};
use crate::nn::NetworkConfig;
use crate::refine::RefineConfig;
use crate::schedule::ScheduleSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of motion text files.
    pub dir: String,
    /// Observed frames per window.
    #[serde(default = "default_t_obs")]
    pub t_obs: usize,
    /// Future frames per window.
    #[serde(default = "default_f_fut")]
    pub f_fut: usize,
    /// Training window stride.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Evaluation window stride; defaults to `t_obs + f_fut` (non-overlapping).
    #[serde(default)]
    pub eval_stride: Option<usize>,
    /// Subtract the root joint trajectory from every joint at load time.
    #[serde(default = "default_center")]
    pub center: bool,
}

fn default_t_obs() -> usize {
    25
}
fn default_f_fut() -> usize {
    100
}
fn default_stride() -> usize {
    1
}
fn default_center() -> bool {
    true
}

impl DataConfig {
    pub fn eval_stride(&self) -> usize {
        self.eval_stride.unwrap_or(self.t_obs + self.f_fut)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epoch after which the learning rate starts its linear decay.
    pub decay_start: usize,
    /// Fraction of the initial rate reached at the final epoch.
    pub decay_floor: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Diffusion steps drawn per window per epoch.
    pub k_draws_per_sample: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 0.0005,
            epochs: 500,
            batch_size: 64,
            decay_start: 100,
            decay_floor: 0.1,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            k_draws_per_sample: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSection {
    pub n_layers: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// Futures sampled per observation (N).
    pub n_samples: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Window stride for refiner training; falls back to `data.stride`.
    /// Refiner epochs re-sample every observation, so a coarser stride here
    /// keeps them affordable without starving the diffusion stage of windows.
    pub stride: Option<usize>,
}

impl Default for RefineSection {
    fn default() -> Self {
        let r = RefineConfig::default();
        RefineSection {
            n_layers: r.n_layers,
            hidden: r.hidden,
            lambda: r.lambda,
            gamma: r.gamma,
            sigma: r.sigma,
            n_samples: 50,
            epochs: 100,
            lr: 0.0005,
            stride: None,
        }
    }
}

impl RefineSection {
    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            n_layers: self.n_layers,
            hidden: self.hidden,
            lambda: self.lambda,
            gamma: self.gamma,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Futures sampled per observation at evaluation time.
    pub n_samples: usize,
    /// Multimodal grouping threshold on final-observed-frame distance.
    pub delta: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_samples: 50,
            delta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub refine: RefineSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.t_obs == 0 || d.f_fut == 0 {
            return Err(Error::usage("data.t_obs and data.f_fut must be at least 1"));
        }
        if d.stride == 0 || d.eval_stride() == 0 {
            return Err(Error::usage("data strides must be at least 1"));
        }
        self.schedule.validate()?;
        self.network.validate()?;
        if self.network.obs_frames != d.t_obs || self.network.fut_frames != d.f_fut {
            return Err(Error::usage(
                "network.obs_frames/fut_frames must match data.t_obs/f_fut",
            ));
        }
        let t = &self.train;
        if t.lr <= 0.0 || !t.lr.is_finite() {
            return Err(Error::usage("train.lr must be positive"));
        }
        if t.epochs == 0 || t.batch_size == 0 || t.k_draws_per_sample == 0 {
            return Err(Error::usage(
                "train.epochs, train.batch_size, train.k_draws_per_sample must be at least 1",
            ));
        }
        if t.decay_start > t.epochs {
            return Err(Error::usage("train.decay_start must not exceed train.epochs"));
        }
        if !(0.0..=1.0).contains(&t.decay_floor) {
            return Err(Error::usage("train.decay_floor must lie in [0, 1]"));
        }
        for (name, b) in [("adam_beta1", t.adam_beta1), ("adam_beta2", t.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::usage(format!("train.{name} must lie in [0, 1)")));
            }
        }
        let r = &self.refine;
        r.refine_config().validate()?;
        if r.n_samples < 2 {
            return Err(Error::usage("refine.n_samples must be at least 2"));
        }
        if r.epochs == 0 {
            return Err(Error::usage("refine.epochs must be at least 1"));
        }
        if r.lr <= 0.0 || !r.lr.is_finite() {
            return Err(Error::usage("refine.lr must be positive"));
        }
        if r.stride == Some(0) {
            return Err(Error::usage("refine.stride must be at least 1"));
        }
        let e = &self.eval;
        if e.n_samples == 0 {
            return Err(Error::usage("eval.n_samples must be at least 1"));
        }
        if e.delta <= 0.0 || !e.delta.is_finite() {
            return Err(Error::usage("eval.delta must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "[data]\ndir = \"data\"\n"
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(minimal()).unwrap();
        assert_eq!(cfg.train.lr, 0.0005);
        assert_eq!(cfg.train.epochs, 500);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.decay_start, 100);
        assert_eq!(cfg.schedule.k_max, 100);
        assert_eq!(cfg.schedule.beta_1, 1e-4);
        assert_eq!(cfg.schedule.beta_k, 0.05);
        assert_eq!(cfg.refine.lambda, 0.01);
        assert_eq!(cfg.refine.gamma, 0.005);
        assert_eq!(cfg.refine.sigma, 100.0);
        assert_eq!(cfg.eval.n_samples, 50);
        assert_eq!(cfg.eval.delta, 0.5);
        assert_eq!(cfg.data.stride, 1);
        assert_eq!(cfg.data.eval_stride(), 125);
    }

    #[test]
    fn missing_required_key_is_named() {
        let err = ExperimentConfig::from_toml("[data]\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dir"), "message should name the key: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_key_is_named() {
        let err =
            ExperimentConfig::from_toml("[data]\ndir = \"d\"\nbogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn section_overrides_apply() {
        let text = r#"
[data]
dir = "synth"
t_obs = 8
f_fut = 16

[schedule]
k_max = 50

[network]
num_joints = 5
obs_frames = 8
fut_frames = 16
joint_dim = 16
d_model = 64
d_cond = 64

[train]
epochs = 40
decay_start = 10

[refine]
n_samples = 10

[eval]
n_samples = 10
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.schedule.k_max, 50);
        assert_eq!(cfg.network.d_model, 64);
        assert_eq!(cfg.refine.n_samples, 10);
        assert_eq!(cfg.data.eval_stride(), 24);
    }

    #[test]
    fn cross_field_validation() {
        let bad = "[data]\ndir = \"d\"\n[train]\nepochs = 5\ndecay_start = 10\n";
        let err = ExperimentConfig::from_toml(bad).unwrap_err();
        assert!(err.to_string().contains("decay_start"), "{err}");

        let mismatched = "[data]\ndir = \"d\"\nt_obs = 8\n";
        let err = ExperimentConfig::from_toml(mismatched).unwrap_err();
        assert!(err.to_string().contains("obs_frames"), "{err}");

        let bad_n = "[data]\ndir = \"d\"\n[refine]\nn_samples = 1\n";
        assert!(ExperimentConfig::from_toml(bad_n).is_err());

        let bad_stride = "[data]\ndir = \"d\"\n[refine]\nstride = 0\n";
        assert!(ExperimentConfig::from_toml(bad_stride).is_err());
    }

    #[test]
    fn refine_stride_falls_back_to_data_stride() {
        let cfg = ExperimentConfig::from_toml(minimal()).unwrap();
        assert_eq!(cfg.refine.stride, None);
        let cfg =
            ExperimentConfig::from_toml("[data]\ndir = \"d\"\n[refine]\nstride = 12\n").unwrap();
        assert_eq!(cfg.refine.stride, Some(12));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(minimal()).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
