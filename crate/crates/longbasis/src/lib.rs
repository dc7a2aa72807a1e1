//! File formats, configuration, the parallel scenario driver and the
//! command-line pipeline around `longbasis-core`.

pub mod config;
pub mod driver;
pub mod error;
pub mod panel_csv;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod store;

pub use error::{PipelineError, Result};
