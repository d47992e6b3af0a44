//! Localization with switched-antenna uniform rectangular arrays.
//!
//! The pipeline runs in stages: simulate a time-division CSI capture
//! ([`sim`]), recover full phase-aligned snapshots ([`calib`]), estimate
//! angles of arrival per array ([`aoa`]) and fuse arrays into a position
//! ([`fusion`]). [`scenario`] drives the stages from a TOML description.

use std::path::PathBuf;

pub mod aoa;
pub mod calib;
pub mod formats;
pub mod fusion;
pub mod geometry;
pub mod report;
pub mod scenario;
pub mod sim;

/// Any pipeline failure, tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("scenario: {0}")]
    Scenario(#[from] scenario::ScenarioError),
    #[error("simulate: {0}")]
    Simulate(#[from] sim::SimError),
    #[error("calibrate: {0}")]
    Calibrate(#[from] calib::CalibError),
    #[error("aoa: {0}")]
    Aoa(#[from] aoa::AoaError),
    #[error("locate: {0}")]
    Locate(#[from] fusion::FusionError),
    #[error("format: {0}")]
    Format(#[from] formats::FormatError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}
