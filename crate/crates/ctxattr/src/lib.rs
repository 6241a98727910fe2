//! Context-attribution harness: validates segmentation datasets, synthesizes
//! context variants, runs or ingests attributions, and reports how much of
//! each map falls on the object versus its context.

pub mod cli;
pub mod config;
pub mod error;
pub mod fixture;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result, Stage};
