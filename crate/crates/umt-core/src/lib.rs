//! Cross-domain object detection with an EMA mean-teacher engine, built
//! small enough to run end to end on a laptop CPU in minutes.
//!
//! The crate is organised around five subsystems:
//!
//! * [`geometry`] — boxes, IoU, NMS and greedy detection/ground-truth matching.
//! * [`detector`] — a tiny two-stage detector (dense anchor grid, RPN-style
//!   proposal head, ROI classification/regression heads and a confidence
//!   side-branch) with hand-derived analytic gradients.
//! * [`synth`] — the synthetic two-domain shapes benchmark and the parametric
//!   invertible domain translator.
//! * [`engine`] — EMA teacher maintenance, augmentation, pseudo-label
//!   selection, distillation objectives and the training loop.
//! * [`eval`] — VOC-style AP/mAP, IoU sweeps, detection-error taxonomy and
//!   the teacher bias diagnostic.

// Indexed loops over parallel buffers are the clearest form for the
// hand-written numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod detector;
pub mod engine;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod rng;
pub mod synth;

use thiserror::Error as ThisError;

/// Crate-wide error type. Variants are grouped so callers (notably the CLI)
/// can map them onto exit codes without string matching.
#[derive(Debug, ThisError)]
pub enum Error {
    /// Invalid configuration or invalid arguments to an operation.
    #[error("configuration error: {0}")]
    Config(String),
    /// A required artifact (dataset, checkpoint, ...) is missing or unreadable.
    #[error("missing prerequisite: {0}")]
    MissingArtifact(String),
    /// A loss term became non-finite during optimisation.
    #[error("non-finite value in term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },
    /// Checkpoint/architecture digest mismatch.
    #[error("architecture digest mismatch: checkpoint has {found:#018x}, expected {expected:#018x}")]
    DigestMismatch { found: u64, expected: u64 },
    /// Malformed on-disk data (checkpoint, raw tensor, annotations, ...).
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn missing(msg: impl Into<String>) -> Self {
        Error::MissingArtifact(msg.into())
    }

    pub fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
