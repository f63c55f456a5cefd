use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline errors. Each variant is attributed to the stage that raised it so
/// the CLI can map it onto an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("nmea: {0}")]
    Nmea(#[from] crate::nmea::NmeaError),

    #[error("ingest: missing column {column:?} in header")]
    MissingColumn { column: String },

    #[error("ingest: trajectory built from mixed MMSIs ({first} and {other})")]
    MixedMmsi { first: u32, other: u32 },

    #[error("ingest: {0}")]
    Ingest(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("clustering: {0}")]
    Infeasible(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(
        "inconsistent time budget: installation {installation_h:.3} h + harbor {harbor_h:.3} h \
         exceeds window {window_h:.3} h"
    )]
    Inconsistent {
        window_h: f64,
        installation_h: f64,
        harbor_h: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the shape of the configuration or by
    /// internally inconsistent results, as opposed to unreadable input.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Inconsistent { .. }
                | Error::Infeasible(_)
                | Error::MixedMmsi { .. }
        )
    }
}
