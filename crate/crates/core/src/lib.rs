//! Tail-latency-aware serving-stack tuner.
//!
//! The crate couples a black-box hill-climb controller with two measurement
//! backends: a discrete-event simulator of an LLM serving stack (queueing,
//! batching, speculative decoding) and a closed-loop HTTP load client for
//! OpenAI-compatible servers. The controller maximizes goodput — the rate of
//! requests that meet an explicit p99 latency objective — by evaluating short
//! measurement segments at the current knob vector and its neighbors.

pub mod backend;
pub mod config;
pub mod controller;
pub mod error;
pub mod harness;
pub mod knobs;
pub mod metrics;
pub mod scoring;
pub mod seed;
pub mod simulator;

pub use backend::{Measurement, MeasurementBackend, SimBackend};
pub use config::AppConfig;
pub use controller::{run_tuning, TunerOptions, TuningStep, TuningTrajectory};
pub use error::{Error, Result};
pub use knobs::{KnobDim, KnobSpace, KnobVector};
pub use metrics::{EmaState, RequestTrace, SegmentMetrics};
pub use scoring::{ScoreMode, ScoreWeights};
pub use simulator::SimConfig;
