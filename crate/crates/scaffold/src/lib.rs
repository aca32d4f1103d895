//! Files, checkpoints and the training driver around `scaffold-core`.
//!
//! The [`cli`] module backs the `scaffold` binary; [`pipeline`] exposes the
//! same operations as functions.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod fixture;
pub mod pipeline;
pub mod report;

pub use error::AppError;
