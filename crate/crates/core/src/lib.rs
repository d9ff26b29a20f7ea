//! Transition-ensemble analysis engine.
//!
//! Loads ensembles of atomic state-to-state transitions, turns per-atom
//! feature changes into whitened descriptors and a distance matrix, builds
//! and reduces a ward hierarchy, aligns groups of transitions, derives
//! per-atom strain glyphs and group displacement fields, and persists
//! analyst sessions with hierarchical export.

pub mod bonds;
pub mod cluster;
pub mod descriptors;
pub mod error;
pub mod extxyz;
pub mod ingest;
pub mod model;
pub mod npy;

pub use error::{Error, Result};
pub mod alignment;
pub mod export;
pub mod field;
pub mod pipeline;
pub mod session;
pub mod strain;
pub mod synth;
