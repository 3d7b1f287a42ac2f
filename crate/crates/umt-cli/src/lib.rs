//! Library surface of the experiment CLI, exposed so integration tests can
//! drive commands directly.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use umt_core::Error;

/// Process exit code for an error, per the documented contract:
/// 2 configuration, 3 missing prerequisite, 4 numerical failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::DigestMismatch { .. } => 2,
        Error::MissingArtifact(_) => 3,
        Error::NonFinite { .. } => 4,
        _ => 1,
    }
}
