//! RGB-D salient object detection with bilateral attention.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autograd`]: dense tensors, conv/pool/resample kernels,
//!   and a tape-based reverse-mode differentiator; [`gradcheck`] compares it
//!   with central finite differences.
//! - [`backbone`], [`attention`], [`network`]: the two-stream encoder, the
//!   bilateral attention residual modules, and the top-down decoder.
//! - [`training`]: deep-supervised loss, Adam, and the training loop.
//! - [`metrics`]: MAE, PR curve, F-measure, S-measure and E-measure.
//! - [`dataio`]: image and manifest I/O, synthetic data, checkpoints.
//! - [`cost`]: parameter/MAC accounting and throughput measurement.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature (on by default) is enabled.

pub mod attention;
pub mod autograd;
pub mod backbone;
pub mod config;
pub mod cost;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod par;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{CheckpointError, Error, Result};
pub use network::{Model, NetConfig};
pub use tensor::{ConvSpec, Tensor};
