//! Desk-scale vision-language-action policy runtime.
//!
//! A policy is a backbone (raw observation → hidden-state tokens) composed
//! with a pluggable action head (hidden states → normalized action chunk).
//! Both halves are resolved by name from a [`policy::Registry`], trained by
//! [`trainer`], served over the wire by the `vlaforge-server` crate and
//! scored by the simulated benchmarks in [`eval`].

pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod nnet;
pub mod policy;
pub mod profiler;
pub mod rng;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_example, ActionChunk, AuxKind, AuxPrediction, ControlMode, DatasetStatistics,
    DimStats, EmbodimentTag, ImageBuffer, LossReport, Observation, Violation, UNIFIED_ACTION_DIM,
};
