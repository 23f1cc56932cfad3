//! Post-outage load surge analysis.
//!
//! The pipeline runs bottom-up: [`synth`] generates a city with planted surge
//! physics, [`metrics`] recovers per-event surge ratios from meter traces,
//! [`empirics`] and [`causal`] analyse them, [`estimator`] learns a
//! component-aware surge model, and [`projection`] / [`mitigation`] run the
//! city-scale restoration Monte Carlo.

pub mod binio;
pub mod causal;
pub mod empirics;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod mitigation;
pub mod numfmt;
pub mod projection;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
