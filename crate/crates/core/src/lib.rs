//! Recurrent encoder-decoder toolkit for video frame anomaly scoring.
//!
//! The crate implements a small family of gated recurrent cells with analytic
//! backpropagation through time, a stacked encoder-decoder that reconstructs
//! short frame cuboids, training with several losses and optimizers, and
//! reconstruction-error based anomaly scoring (regularity curves, ROC, AUC,
//! EER). Everything is plain `f64` with deterministic reduction orders, so a
//! fixed seed reproduces runs bit for bit.
//!
//! With the default `parallel` feature, per-sample work inside minibatches,
//! evaluation and sweeps fans out over a rayon pool; disabling the feature
//! falls back to equivalent sequential loops with identical results.

pub mod batchnorm;
pub(crate) mod blob;
pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod seed;
pub mod svg;
pub mod tensor;

pub use cells::{CellGrads, CellKind, CellParams, CellState};
pub use error::{Error, Result};
pub use network::{Model, NetworkConfig};
pub use optim::{EpochRecord, LossKind, OptimizerKind, TrainConfig};
pub use tensor::{ActivationKind, Tensor};
