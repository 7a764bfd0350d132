//! Experiment harness for the open-book excess-decay machinery.

pub mod cli;
pub mod config;
pub mod decay;
pub mod decomposition;
pub mod error;
pub mod fixtures;
pub mod formats;
pub mod holder;
pub mod manifest;
pub mod profiles;
pub mod whitney;

pub use error::{LabError, Result};
