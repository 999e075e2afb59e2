//! End-to-end extraction: detection logs in, smoothed trajectories out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::SensorMode;
use crate::geometry::{FootprintParams, FrameTransform, GeometryError, Homography};
use crate::ingest::{
    filter_roi, merge_streams, CameraDetection, IngestError, Measurement, RadarDetection,
    RegionOfInterest,
};
use crate::postprocess::{smooth_all, PostprocessError, SmoothedTrajectory};
use crate::tracker::{Track, TrackEvent, Tracker, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Everything the extraction stage needs beyond the input logs.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub tracker: TrackerConfig,
    pub footprint: FootprintParams,
    /// Optional Road-frame polygon; measurements outside it are dropped.
    pub roi: Option<Vec<[f64; 2]>>,
}

#[derive(Debug)]
pub struct ExtractionOutput {
    pub trajectories: Vec<SmoothedTrajectory>,
    pub kept_tracks: Vec<Track>,
    pub discarded_tracks: Vec<Track>,
    pub events: Vec<TrackEvent>,
}

/// Run the full tracker + smoother over one pair of logs. `mode` selects
/// which sensor streams participate; the logs must each be time-sorted.
pub fn run_extraction(
    cam: Vec<CameraDetection>,
    radar: Vec<RadarDetection>,
    homography: &Homography,
    setup_to_road: &FrameTransform,
    cfg: &ExtractConfig,
    mode: SensorMode,
) -> Result<ExtractionOutput, PipelineError> {
    let cam = if mode == SensorMode::Radar { Vec::new() } else { cam };
    let radar = if mode == SensorMode::Camera { Vec::new() } else { radar };

    let mut merged = merge_streams(cam, radar);
    if let Some(vertices) = &cfg.roi {
        let roi = RegionOfInterest::new(vertices.clone())?;
        merged = filter_roi(merged, &roi, homography, setup_to_road)?;
    }

    let mut tracker = Tracker::new(
        cfg.tracker.clone(),
        homography.clone(),
        *setup_to_road,
        cfg.footprint,
    )?;
    let mut events = Vec::new();
    for batch in batches_by_timestamp(&merged) {
        events.extend(tracker.step(batch)?);
    }
    let mut result = tracker.finalize();
    events.append(&mut result.events);

    let trajectories = smooth_all(&result.kept, &cfg.tracker)?;
    Ok(ExtractionOutput {
        trajectories,
        kept_tracks: result.kept,
        discarded_tracks: result.discarded,
        events,
    })
}

/// Split a time-sorted measurement sequence into maximal runs sharing one
/// exact timestamp.
pub fn batches_by_timestamp(measurements: &[Measurement]) -> impl Iterator<Item = &[Measurement]> {
    let mut rest = measurements;
    std::iter::from_fn(move || {
        let first = rest.first()?;
        let t = first.t();
        let n = rest.iter().take_while(|m| m.t() == t).count();
        let (batch, tail) = rest.split_at(n);
        rest = tail;
        Some(batch)
    })
}
