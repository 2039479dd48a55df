//! Spiking Legendre-memory recurrent network runtime.
//!
//! A self-contained pipeline for classifying raw multi-channel IMU windows
//! with a recurrent spiking network whose memory follows the Legendre
//! state-space recurrence: real-to-spike encoding front end, spiking memory
//! cell, surrogate-gradient training, global magnitude pruning with
//! fine-tuning, synaptic-operation accounting, latency benchmarking, and a
//! bit-exact checkpoint format. Everything is seeded and deterministic:
//! the same seed produces byte-identical artifacts regardless of thread
//! count.

pub mod bench;
pub mod checkpoint;
pub mod compress;
pub mod config;
pub mod data;
pub mod encoder;
mod engine;
mod error;
pub mod grad;
pub mod l2mu;
pub mod lmu_math;
pub mod neuron;
mod real;
pub mod tensor;
pub mod train;

pub use engine::ParamId;
pub use error::{Error, Result};
pub use real::Real;
