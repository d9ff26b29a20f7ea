//! Batch CLI and local HTTP/JSON service around the transition-ensemble
//! engine.

pub mod api;
pub mod cli;
pub mod error;
pub mod state;

pub use api::router;
pub use state::{AppState, ServeConfig};
