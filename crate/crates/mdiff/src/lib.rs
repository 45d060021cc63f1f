pub mod autodiff;
pub mod config;
pub mod diffusion;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod refine;
pub mod rng;
pub mod schedule;
pub mod train;
