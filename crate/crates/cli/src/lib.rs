//! Command-line harness around `prune-core`: run configuration, batch
//! execution, replay, aggregate reports and SVG renders.

pub mod commands;
pub mod config;
pub mod report;
pub mod svg;
