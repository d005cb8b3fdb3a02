//! Efficiency and convexity of semantic category systems.

pub mod circle;
pub mod convexity;
pub mod error;
pub mod generators;
pub mod hull;
pub mod ib;
pub mod info;
pub mod model;
pub mod stats;
pub mod synthetic;
pub mod wcs;

pub use error::{Error, Result};
