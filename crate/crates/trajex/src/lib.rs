//! Trajectory extraction from infrastructure camera and radar detection logs.
//!
//! The pipeline ingests timestamped detection streams, fuses them with a
//! hybrid IoU / nearest-neighbor Kalman tracker operating in road
//! coordinates, smooths finished tracks with an RTS smoother and exports
//! per-vehicle trajectories. A deterministic scenario simulator and a
//! distance-indexed error evaluation suite close the loop for testing
//! against known ground truth.

pub mod evaluation;
pub mod geometry;
pub mod ingest;
pub mod kalman;
pub mod manifest;
pub mod pipeline;
pub mod postprocess;
pub mod simulator;
pub mod tracker;
pub mod types;
