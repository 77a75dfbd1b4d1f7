//! Toy-model laboratory for studying how representation geometry shapes
//! adversarial vulnerability: synthetic argmax tasks, bottleneck models,
//! PGD and closed-form attacks, geometry/transfer metrics, and a modular
//! addition study with frequency-space attack analysis.

pub mod attacks;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod modular;
pub mod numerics;
pub mod synthgen;
pub mod toymodel;

pub use error::{Error, Result};
