//! Human-centric visual token graphs for action recognition.
//!
//! Everything numeric lives here: a dense tensor type with a reverse-mode
//! gradient tape, joint-guided and even token sampling, attention-based post
//! calibration, channel-wise topology-refinement graph blocks, the full model
//! zoo (single-stream, ensemble, unified fusion), a synthetic benchmark
//! generator, and the SGD training loop. The crate is `no_std` + `alloc`;
//! file formats and the CLI live in the companion `pan-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod blocks;
pub mod calibration;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod topology;
pub mod trainer;

pub use error::CoreError;
pub use graph::{Graph, NodeId};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;
