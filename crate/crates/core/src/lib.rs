//! Simulation and complexity analysis of distributed gradient descent under
//! a parameter-server model with stragglers.
//!
//! One engine covers plain distributed GD, gradient coding (GC), lazily
//! aggregated gradients (LAG), grouped GD (G-GD), and their combinations
//! LAGC and G-LAG. Every scheme is a [`engine::SchemeConfig`] preset.

pub mod analysis;
pub mod coding;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod gradient;
pub mod selection;
pub mod timing;

pub use error::{Error, Result};
