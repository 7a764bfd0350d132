#![no_std]
//! Numerical kernels for open books, unbalanced transport, excesses and
//! Q-valued Dirichlet problems on the half-ball.

extern crate alloc;

pub mod dirichlet;
mod error;
pub mod excess;
pub mod geometry;
pub mod math;
pub mod measures;
pub mod qvalued;
mod simplex;
pub mod transport;

pub use error::{Error, Result};
