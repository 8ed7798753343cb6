//! Hybrid inference network for minute-resolution prediction of rare
//! intraoperative events from multichannel physiological time series.

pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};
