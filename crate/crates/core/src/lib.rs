//! Decomposes an offshore wind installation campaign from the AIS track of
//! its jackup vessel: turbine locations by K-means, per-turbine installation
//! times with uncertainty brackets, harbor stays, transit time and summary
//! statistics.

pub mod analytics;
pub mod clustering;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod nmea;
pub mod pipeline;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
