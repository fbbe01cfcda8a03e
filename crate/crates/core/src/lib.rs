//! Vessel trajectory prediction from AIS tracks.
//!
//! The pipeline runs `ais` (parse, assemble, label, resample) into
//! `windowing` (fixed-length supervised samples and trajectory-level folds),
//! trains one of the models in `seq2seq` or `baselines` with `training`, and
//! scores forecasts in nautical miles with `evaluation`. `cli` wires the
//! steps into the `seatrack` binary; `synth` generates a branching two-route
//! scenario for experiments without real data.

pub mod ais;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod geo;
pub mod models;
pub mod nn;
pub mod seq2seq;
pub mod synth;
pub mod training;
pub mod windowing;

pub use error::{Error, Result};
