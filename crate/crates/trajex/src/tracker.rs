//! Hybrid IoU / Kalman multi-object tracker.
//!
//! Detections are matched to tracks in image space (IoU against the track's
//! last box) and in road space (nearest neighbor against the Kalman
//! prediction); either criterion admits a match. Unmatched tracks coast on
//! predictions until a keep-alive threshold expires, which bridges short
//! detection dropouts without fragmenting tracks or switching identities.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    apply_homography, footprint_point, iou, BoundingBox, FootprintParams, FrameTransform,
    GeometryError, Homography,
};
use crate::ingest::{CameraDetection, Measurement, MeasurementData, RadarDetection};
use crate::kalman::{predict, update_full, update_position, KalmanError, KalmanState};
use crate::types::VehicleClass;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("timestamp regression: batch at {batch} behind tracker time {now}")]
    TimestampRegression { batch: f64, now: f64 },
    #[error("batch timestamps differ within one step")]
    MixedBatchTimestamps,
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

/// Tracker tuning knobs. All fields are optional in the JSON form and fall
/// back to these defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Seconds an unmatched track coasts before being finished.
    pub keep_alive: f64,
    /// Minimum IoU for an image-space match.
    pub iou_threshold: f64,
    /// Road-space gating distance in meters.
    pub road_gate: f64,
    /// White-noise-acceleration intensity, m^2/s^3.
    pub process_noise_intensity: f64,
    /// Camera position measurement std dev (x, y), meters.
    pub r_cam_sigma: [f64; 2],
    /// Radar measurement std dev (x, y, vx, vy).
    pub r_radar_sigma: [f64; 4],
    /// Initial position variance for new tracks, m^2.
    pub init_pos_var: f64,
    /// Initial velocity variance for camera-initialized tracks, (m/s)^2.
    pub init_vel_var_camera: f64,
    /// Initial velocity variance for radar-initialized tracks, (m/s)^2.
    pub init_vel_var_radar: f64,
    /// Minimum duration for a track to be kept at finalize, seconds.
    pub min_track_duration: f64,
    /// Minimum detection count for a track to be kept at finalize.
    pub min_track_detections: usize,
    /// Speed below which the last heading is held, m/s.
    pub heading_speed_floor: f64,
}

impl Default for TrackerConfig {
    fn default() -> TrackerConfig {
        TrackerConfig {
            keep_alive: 0.5,
            iou_threshold: 0.3,
            road_gate: 2.5,
            process_noise_intensity: 0.5,
            r_cam_sigma: [1.0, 0.15],
            r_radar_sigma: [0.3, 0.5, 0.2, 0.3],
            init_pos_var: 1.0,
            init_vel_var_camera: 100.0,
            init_vel_var_radar: 1.0,
            min_track_duration: 1.0,
            min_track_detections: 10,
            heading_speed_floor: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.keep_alive <= 0.0 {
            return Err(TrackerError::InvalidConfig("keep_alive must be > 0".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(TrackerError::InvalidConfig(
                "iou_threshold must be in (0, 1)".into(),
            ));
        }
        let variances = [
            self.process_noise_intensity,
            self.r_cam_sigma[0],
            self.r_cam_sigma[1],
            self.r_radar_sigma[0],
            self.r_radar_sigma[1],
            self.r_radar_sigma[2],
            self.r_radar_sigma[3],
            self.init_pos_var,
            self.init_vel_var_camera,
            self.init_vel_var_radar,
            self.road_gate,
        ];
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(TrackerError::InvalidConfig(
                "noise parameters must be finite and > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn r_cam(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&Vector2::new(
            self.r_cam_sigma[0].powi(2),
            self.r_cam_sigma[1].powi(2),
        ))
    }

    pub fn r_radar(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::new(
            self.r_radar_sigma[0].powi(2),
            self.r_radar_sigma[1].powi(2),
            self.r_radar_sigma[2].powi(2),
            self.r_radar_sigma[3].powi(2),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    Camera,
    Radar,
}

/// One stored filtering step, the input to the RTS smoother.
#[derive(Debug, Clone)]
pub struct HistoryEntry {
    pub t: f64,
    pub sensor: SensorKind,
    pub raw: MeasurementData,
    pub state: KalmanState,
}

/// A live or finished object hypothesis.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    pub state_time: f64,
    pub last_box: Option<BoundingBox>,
    pub last_update_time: f64,
    pub creation_time: f64,
    pub history: Vec<HistoryEntry>,
    pub class_votes: [f64; 4],
    pub length_samples: Vec<(f64, f64)>,
    pub width_samples: Vec<(f64, f64)>,
    pub height_samples: Vec<(f64, f64)>,
    pub matched_iou_sum: f64,
    pub matched_iou_count: u64,
    pub max_detection_gap: f64,
    pub last_heading: Option<f64>,
}

impl Track {
    pub fn duration(&self) -> f64 {
        self.last_update_time - self.creation_time
    }

    pub fn detection_count(&self) -> usize {
        self.history.len()
    }

    fn refresh_heading(&mut self, floor: f64) {
        let v = self.state.velocity();
        if v.norm() >= floor {
            self.last_heading = Some(v.y.atan2(v.x));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackEventKind {
    Created,
    Updated,
    Coasted,
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEvent {
    pub kind: TrackEventKind,
    pub track_id: u64,
    pub t: f64,
}

/// Greedy globally-nearest-first assignment of detections to tracks on
/// Euclidean distance. Pairs beyond `gate` stay unassigned; each side is
/// used at most once. Returns, per detection, the matched track index.
pub fn greedy_nearest(
    det_pos: &[[f64; 2]],
    track_pos: &[[f64; 2]],
    gate: f64,
) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in det_pos.iter().enumerate() {
        for (j, t) in track_pos.iter().enumerate() {
            let dist = (d[0] - t[0]).hypot(d[1] - t[1]);
            if dist <= gate {
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut det_used = vec![false; det_pos.len()];
    let mut track_used = vec![false; track_pos.len()];
    let mut out = vec![None; det_pos.len()];
    for (_, i, j) in pairs {
        if !det_used[i] && !track_used[j] {
            det_used[i] = true;
            track_used[j] = true;
            out[i] = Some(j);
        }
    }
    out
}

/// One admissible camera-detection / track pairing with its score.
#[derive(Debug, Clone, Copy)]
struct CameraCandidate {
    det: usize,
    track: usize,
    iou: f64,
    dist: f64,
}

/// Greedy camera matching: a pair is admissible if the IoU against the
/// track's last box reaches the threshold OR the road distance is within the
/// gate; tracks without a box (radar-only so far) match on distance alone.
/// Admissible pairs are taken by higher IoU, then smaller distance.
pub fn match_camera(
    det_points: &[[f64; 2]],
    det_boxes: &[BoundingBox],
    track_points: &[[f64; 2]],
    track_boxes: &[Option<BoundingBox>],
    cfg: &TrackerConfig,
) -> Vec<Option<usize>> {
    let mut cands: Vec<CameraCandidate> = Vec::new();
    for (i, (dp, db)) in det_points.iter().zip(det_boxes.iter()).enumerate() {
        for (j, (tp, tb)) in track_points.iter().zip(track_boxes.iter()).enumerate() {
            let dist = (dp[0] - tp[0]).hypot(dp[1] - tp[1]);
            let iou_v = tb.as_ref().map(|b| iou(db, b)).unwrap_or(0.0);
            if iou_v >= cfg.iou_threshold || dist <= cfg.road_gate {
                cands.push(CameraCandidate {
                    det: i,
                    track: j,
                    iou: iou_v,
                    dist,
                });
            }
        }
    }
    cands.sort_by(|a, b| {
        b.iou
            .partial_cmp(&a.iou)
            .unwrap()
            .then(a.dist.partial_cmp(&b.dist).unwrap())
            .then(a.det.cmp(&b.det))
            .then(a.track.cmp(&b.track))
    });
    let mut det_used = vec![false; det_points.len()];
    let mut track_used = vec![false; track_points.len()];
    let mut out = vec![None; det_points.len()];
    for c in cands {
        if !det_used[c.det] && !track_used[c.track] {
            det_used[c.det] = true;
            track_used[c.track] = true;
            out[c.det] = Some(c.track);
        }
    }
    out
}

/// Result of finalizing a tracker run.
#[derive(Debug)]
pub struct FinalizeResult {
    pub kept: Vec<Track>,
    pub discarded: Vec<Track>,
    pub events: Vec<TrackEvent>,
}

pub struct Tracker {
    cfg: TrackerConfig,
    homography: Homography,
    setup_to_road: FrameTransform,
    footprint: FootprintParams,
    live: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    now: Option<f64>,
}

impl Tracker {
    pub fn new(
        cfg: TrackerConfig,
        homography: Homography,
        setup_to_road: FrameTransform,
        footprint: FootprintParams,
    ) -> Result<Tracker, TrackerError> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            homography,
            setup_to_road,
            footprint,
            live: Vec::new(),
            finished: Vec::new(),
            next_id: 0,
            now: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn live_tracks(&self) -> &[Track] {
        &self.live
    }

    /// Process one batch of measurements sharing a single timestamp.
    pub fn step(&mut self, batch: &[Measurement]) -> Result<Vec<TrackEvent>, TrackerError> {
        let Some(first) = batch.first() else {
            return Ok(Vec::new());
        };
        let t = first.t();
        if batch.iter().any(|m| m.t() != t) {
            return Err(TrackerError::MixedBatchTimestamps);
        }
        if let Some(now) = self.now {
            if t < now {
                return Err(TrackerError::TimestampRegression { batch: t, now });
            }
        }

        let mut events = Vec::new();

        // 1. Predict all live tracks to the batch time.
        for track in &mut self.live {
            let dt = t - track.state_time;
            if dt > 0.0 {
                track.state = predict(&track.state, dt, self.cfg.process_noise_intensity);
                track.state_time = t;
            }
        }

        let radar_dets: Vec<&RadarDetection> = batch
            .iter()
            .filter_map(|m| match &m.data {
                MeasurementData::Radar(r) => Some(r),
                _ => None,
            })
            .collect();
        let camera_dets: Vec<&CameraDetection> = batch
            .iter()
            .filter_map(|m| match &m.data {
                MeasurementData::Camera(c) => Some(c),
                _ => None,
            })
            .collect();

        let mut updated: Vec<bool> = vec![false; self.live.len()];

        // 2a. Radar matching on road-frame nearest neighbor.
        let radar_points: Vec<[f64; 2]> = radar_dets
            .iter()
            .map(|r| {
                let (x, y) = self.setup_to_road.apply_xy(r.x, r.y);
                [x, y]
            })
            .collect();
        let track_points: Vec<[f64; 2]> = self
            .live
            .iter()
            .map(|tr| [tr.state.mean.x, tr.state.mean.y])
            .collect();
        let radar_assignment = greedy_nearest(&radar_points, &track_points, self.cfg.road_gate);
        let mut unmatched_radar: Vec<usize> = Vec::new();
        for (i, assigned) in radar_assignment.iter().enumerate() {
            match assigned {
                Some(j) => {
                    self.update_track_radar(*j, radar_dets[i], radar_points[i], t)?;
                    updated[*j] = true;
                    events.push(TrackEvent {
                        kind: TrackEventKind::Updated,
                        track_id: self.live[*j].id,
                        t,
                    });
                }
                None => unmatched_radar.push(i),
            }
        }

        // 2b. Camera matching via IoU and road distance.
        let mut cam_points: Vec<[f64; 2]> = Vec::with_capacity(camera_dets.len());
        let mut cam_boxes: Vec<BoundingBox> = Vec::with_capacity(camera_dets.len());
        let mut cam_kept: Vec<usize> = Vec::new();
        for (i, c) in camera_dets.iter().enumerate() {
            let fp = footprint_point(&c.bbox, None, &self.footprint);
            match apply_homography(&self.homography, fp) {
                Ok(p) => {
                    cam_points.push([p.x, p.y]);
                    cam_boxes.push(c.bbox);
                    cam_kept.push(i);
                }
                Err(GeometryError::PointAtInfinity) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let track_points: Vec<[f64; 2]> = self
            .live
            .iter()
            .map(|tr| [tr.state.mean.x, tr.state.mean.y])
            .collect();
        let track_boxes: Vec<Option<BoundingBox>> =
            self.live.iter().map(|tr| tr.last_box).collect();
        let cam_assignment = match_camera(
            &cam_points,
            &cam_boxes,
            &track_points,
            &track_boxes,
            &self.cfg,
        );
        let mut unmatched_camera: Vec<usize> = Vec::new();
        for (k, assigned) in cam_assignment.iter().enumerate() {
            let det = camera_dets[cam_kept[k]];
            match assigned {
                Some(j) => {
                    self.update_track_camera(*j, det, t)?;
                    updated[*j] = true;
                    events.push(TrackEvent {
                        kind: TrackEventKind::Updated,
                        track_id: self.live[*j].id,
                        t,
                    });
                }
                None => unmatched_camera.push(cam_kept[k]),
            }
        }

        // 3. Unmatched detections create tracks.
        for i in unmatched_radar {
            let id = self.create_track_radar(radar_dets[i], radar_points[i], t);
            events.push(TrackEvent {
                kind: TrackEventKind::Created,
                track_id: id,
                t,
            });
        }
        for (k, i) in cam_kept.iter().enumerate() {
            if !unmatched_camera.contains(i) {
                continue;
            }
            let id = self.create_track_camera(camera_dets[*i], cam_points[k], t);
            events.push(TrackEvent {
                kind: TrackEventKind::Created,
                track_id: id,
                t,
            });
        }

        // 4. Keep-alive bookkeeping: finish expired tracks, coast the rest.
        let mut still_live = Vec::with_capacity(self.live.len());
        for (j, track) in self.live.drain(..).enumerate() {
            let stale = t - track.last_update_time;
            if stale > self.cfg.keep_alive {
                events.push(TrackEvent {
                    kind: TrackEventKind::Finished,
                    track_id: track.id,
                    t,
                });
                self.finished.push(track);
            } else {
                if j < updated.len() && !updated[j] && track.last_update_time < t {
                    events.push(TrackEvent {
                        kind: TrackEventKind::Coasted,
                        track_id: track.id,
                        t,
                    });
                }
                still_live.push(track);
            }
        }
        self.live = still_live;
        self.now = Some(t);
        Ok(events)
    }

    fn update_track_radar(
        &mut self,
        j: usize,
        det: &RadarDetection,
        road_pos: [f64; 2],
        t: f64,
    ) -> Result<(), TrackerError> {
        let (vx, vy) = self.setup_to_road.apply_vector(det.vx, det.vy);
        let z = Vector4::new(road_pos[0], road_pos[1], vx, vy);
        let track = &mut self.live[j];
        track.state = update_full(&track.state, z, self.cfg.r_radar())?;
        let gap = t - track.last_update_time;
        track.max_detection_gap = track.max_detection_gap.max(gap);
        track.last_update_time = t;
        let dist = det.position().radial_distance();
        track.length_samples.push((det.length, dist));
        track.width_samples.push((det.width, dist));
        track.height_samples.push((det.height, dist));
        track.history.push(HistoryEntry {
            t,
            sensor: SensorKind::Radar,
            raw: MeasurementData::Radar(det.clone()),
            state: track.state.clone(),
        });
        track.refresh_heading(self.cfg.heading_speed_floor);
        Ok(())
    }

    fn update_track_camera(
        &mut self,
        j: usize,
        det: &CameraDetection,
        t: f64,
    ) -> Result<(), TrackerError> {
        let heading = self.live[j].last_heading;
        let fp = footprint_point(&det.bbox, heading, &self.footprint);
        let p = apply_homography(&self.homography, fp)?;
        let z = Vector2::new(p.x, p.y);
        let track = &mut self.live[j];
        if let Some(prev_box) = &track.last_box {
            track.matched_iou_sum += iou(prev_box, &det.bbox);
            track.matched_iou_count += 1;
        }
        track.state = update_position(&track.state, z, self.cfg.r_cam())?;
        let gap = t - track.last_update_time;
        track.max_detection_gap = track.max_detection_gap.max(gap);
        track.last_update_time = t;
        track.last_box = Some(det.bbox);
        track.class_votes[class_index(det.class)] += det.confidence;
        if let Some(w) = det.width_estimate {
            let setup_pt = self.setup_to_road.inverse().apply(p);
            track.width_samples.push((w, setup_pt.radial_distance()));
        }
        track.history.push(HistoryEntry {
            t,
            sensor: SensorKind::Camera,
            raw: MeasurementData::Camera(det.clone()),
            state: track.state.clone(),
        });
        track.refresh_heading(self.cfg.heading_speed_floor);
        Ok(())
    }

    fn new_track(&mut self, state: KalmanState, t: f64, entry: HistoryEntry) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let mut track = Track {
            id,
            state,
            state_time: t,
            last_box: None,
            last_update_time: t,
            creation_time: t,
            history: vec![entry],
            class_votes: [0.0; 4],
            length_samples: Vec::new(),
            width_samples: Vec::new(),
            height_samples: Vec::new(),
            matched_iou_sum: 0.0,
            matched_iou_count: 0,
            max_detection_gap: 0.0,
            last_heading: None,
        };
        track.refresh_heading(self.cfg.heading_speed_floor);
        self.live.push(track);
        id
    }

    fn create_track_radar(&mut self, det: &RadarDetection, road_pos: [f64; 2], t: f64) -> u64 {
        let (vx, vy) = self.setup_to_road.apply_vector(det.vx, det.vy);
        let mean = Vector4::new(road_pos[0], road_pos[1], vx, vy);
        let cov = Matrix4::from_diagonal(&Vector4::new(
            self.cfg.init_pos_var,
            self.cfg.init_pos_var,
            self.cfg.init_vel_var_radar,
            self.cfg.init_vel_var_radar,
        ));
        let state = KalmanState::new(mean, cov);
        let entry = HistoryEntry {
            t,
            sensor: SensorKind::Radar,
            raw: MeasurementData::Radar(det.clone()),
            state: state.clone(),
        };
        let id = self.new_track(state, t, entry);
        let track = self.live.last_mut().unwrap();
        let dist = det.position().radial_distance();
        track.length_samples.push((det.length, dist));
        track.width_samples.push((det.width, dist));
        track.height_samples.push((det.height, dist));
        id
    }

    fn create_track_camera(&mut self, det: &CameraDetection, road_pos: [f64; 2], t: f64) -> u64 {
        let mean = Vector4::new(road_pos[0], road_pos[1], 0.0, 0.0);
        let cov = Matrix4::from_diagonal(&Vector4::new(
            self.cfg.init_pos_var,
            self.cfg.init_pos_var,
            self.cfg.init_vel_var_camera,
            self.cfg.init_vel_var_camera,
        ));
        let state = KalmanState::new(mean, cov);
        let entry = HistoryEntry {
            t,
            sensor: SensorKind::Camera,
            raw: MeasurementData::Camera(det.clone()),
            state: state.clone(),
        };
        let id = self.new_track(state, t, entry);
        let track = self.live.last_mut().unwrap();
        track.last_box = Some(det.bbox);
        track.class_votes[class_index(det.class)] += det.confidence;
        id
    }

    /// Finish all live tracks and split the result into kept and discarded
    /// (too short or too few detections) tracks.
    pub fn finalize(mut self) -> FinalizeResult {
        let t = self.now.unwrap_or(0.0);
        let mut events = Vec::new();
        for track in self.live.drain(..) {
            events.push(TrackEvent {
                kind: TrackEventKind::Finished,
                track_id: track.id,
                t,
            });
            self.finished.push(track);
        }
        let (kept, discarded) = self.finished.drain(..).partition(|tr: &Track| {
            tr.duration() >= self.cfg.min_track_duration
                && tr.detection_count() >= self.cfg.min_track_detections
        });
        FinalizeResult {
            kept,
            discarded,
            events,
        }
    }
}

pub fn class_index(c: VehicleClass) -> usize {
    match c {
        VehicleClass::Car => 0,
        VehicleClass::Bus => 1,
        VehicleClass::Truck => 2,
        VehicleClass::Motorcycle => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn make_tracker(cfg: TrackerConfig) -> Tracker {
        Tracker::new(
            cfg,
            Homography::identity(Frame::Image, Frame::Road),
            FrameTransform::identity(Frame::Setup, Frame::Road),
            FootprintParams::default(),
        )
        .unwrap()
    }

    fn radar_meas(t: f64, x: f64, y: f64, vx: f64, vy: f64) -> Measurement {
        Measurement {
            sensor_id: 1,
            data: MeasurementData::Radar(crate::ingest::RadarDetection {
                t,
                x,
                y,
                vx,
                vy,
                length: 4.5,
                width: 1.8,
                height: 1.5,
            }),
        }
    }

    fn camera_meas(t: f64, u_center: f64, v_bottom: f64, w: f64, h: f64) -> Measurement {
        Measurement {
            sensor_id: 0,
            data: MeasurementData::Camera(crate::ingest::CameraDetection {
                t,
                bbox: BoundingBox::from_corners(
                    u_center - w / 2.0,
                    v_bottom - h,
                    u_center + w / 2.0,
                    v_bottom,
                )
                .unwrap(),
                class: VehicleClass::Car,
                confidence: 0.9,
                width_estimate: None,
            }),
        }
    }

    #[test]
    fn radar_detection_creates_track_with_velocity() {
        let mut tracker = make_tracker(TrackerConfig::default());
        let events = tracker.step(&[radar_meas(0.0, 100.0, 2.0, -25.0, 0.1)]).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, TrackEventKind::Created);
        let track = &tracker.live_tracks()[0];
        assert_abs_diff_eq!(track.state.mean.z, -25.0, epsilon = 1e-12);
        assert_abs_diff_eq!(track.state.mean.w, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn keep_alive_threshold_finishes_track() {
        let mut tracker = make_tracker(TrackerConfig::default());
        tracker.step(&[radar_meas(1.0, 50.0, 0.0, -20.0, 0.0)]).unwrap();
        // Another object far away at t = 1.6; the first track is now stale by
        // 0.6 s > 0.5 s keep-alive.
        let events = tracker.step(&[radar_meas(1.6, 500.0, 0.0, -20.0, 0.0)]).unwrap();
        assert!(events
            .iter()
            .any(|e| e.kind == TrackEventKind::Finished && e.track_id == 0));
        assert_eq!(tracker.live_tracks().len(), 1);
    }

    #[test]
    fn coasted_event_within_keep_alive() {
        let mut tracker = make_tracker(TrackerConfig::default());
        tracker.step(&[radar_meas(1.0, 50.0, 0.0, -20.0, 0.0)]).unwrap();
        let events = tracker.step(&[radar_meas(1.2, 500.0, 0.0, -20.0, 0.0)]).unwrap();
        assert!(events
            .iter()
            .any(|e| e.kind == TrackEventKind::Coasted && e.track_id == 0));
        assert_eq!(tracker.live_tracks().len(), 2);
    }

    #[test]
    fn timestamp_regression_rejected() {
        let mut tracker = make_tracker(TrackerConfig::default());
        tracker.step(&[radar_meas(1.0, 50.0, 0.0, -20.0, 0.0)]).unwrap();
        assert!(matches!(
            tracker.step(&[radar_meas(0.5, 50.0, 0.0, -20.0, 0.0)]),
            Err(TrackerError::TimestampRegression { .. })
        ));
    }

    #[test]
    fn greedy_nearest_examples() {
        // No tracks: everything unassigned.
        let out = greedy_nearest(&[[5.0, 0.0]], &[], 2.5);
        assert_eq!(out, vec![None]);

        // Nearest within gate wins.
        let out = greedy_nearest(&[[5.0, 0.0]], &[[5.5, 0.0], [9.0, 0.0]], 2.5);
        assert_eq!(out, vec![Some(0)]);
    }

    /// Brute-force assignment oracle: enumerate all gate-feasible one-to-one
    /// assignments, minimize total distance. Greedy must always respect gate
    /// and uniqueness, and must agree with the optimum when the optimum is
    /// greedy-reachable (checked via total cost on well-separated layouts).
    #[test]
    fn greedy_nearest_vs_brute_force() {
        fn brute_force_best(
            dets: &[[f64; 2]],
            tracks: &[[f64; 2]],
            gate: f64,
        ) -> (f64, usize) {
            // Returns (min total distance, max cardinality) over assignments
            // that maximize cardinality first.
            fn recurse(
                i: usize,
                dets: &[[f64; 2]],
                tracks: &[[f64; 2]],
                gate: f64,
                used: &mut Vec<bool>,
            ) -> (usize, f64) {
                if i == dets.len() {
                    return (0, 0.0);
                }
                // Option: leave detection i unassigned.
                let mut best = recurse(i + 1, dets, tracks, gate, used);
                for j in 0..tracks.len() {
                    if used[j] {
                        continue;
                    }
                    let d = (dets[i][0] - tracks[j][0]).hypot(dets[i][1] - tracks[j][1]);
                    if d > gate {
                        continue;
                    }
                    used[j] = true;
                    let (c, cost) = recurse(i + 1, dets, tracks, gate, used);
                    used[j] = false;
                    let cand = (c + 1, cost + d);
                    if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        best = cand;
                    }
                }
                best
            }
            let mut used = vec![false; tracks.len()];
            let (card, cost) = recurse(0, dets, tracks, gate, &mut used);
            (cost, card)
        }

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..50 {
            let gate = 2.5;
            let n = 5;
            let mut dets = Vec::new();
            let mut tracks = Vec::new();
            // Well-separated layout every other case; cluttered otherwise.
            let spread = if case % 2 == 0 { 20.0 } else { 4.0 };
            for i in 0..n {
                let base = [i as f64 * spread, 0.0];
                tracks.push(base);
                dets.push([
                    base[0] + rng.gen_range(-1.5..1.5),
                    base[1] + rng.gen_range(-1.5..1.5),
                ]);
            }
            let assignment = greedy_nearest(&dets, &tracks, gate);

            // Gate and uniqueness always hold.
            let mut seen = std::collections::HashSet::new();
            let mut greedy_cost = 0.0;
            let mut greedy_card = 0;
            for (i, a) in assignment.iter().enumerate() {
                if let Some(j) = a {
                    assert!(seen.insert(*j), "track used twice");
                    let d = (dets[i][0] - tracks[*j][0]).hypot(dets[i][1] - tracks[*j][1]);
                    assert!(d <= gate);
                    greedy_cost += d;
                    greedy_card += 1;
                }
            }

            let (best_cost, best_card) = brute_force_best(&dets, &tracks, gate);
            assert!(greedy_card <= best_card);
            if case % 2 == 0 {
                // Separated: greedy is optimal.
                assert_eq!(greedy_card, best_card);
                assert_abs_diff_eq!(greedy_cost, best_cost, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn camera_match_by_iou() {
        let b = BoundingBox::from_corners(0.0, 0.0, 10.0, 10.0).unwrap();
        let out = match_camera(
            &[[100.0, 100.0]],
            &[b],
            &[[0.0, 0.0]],
            &[Some(b)],
            &TrackerConfig::default(),
        );
        // IoU 1.0 wins despite a 141 m road distance.
        assert_eq!(out, vec![Some(0)]);
    }

    #[test]
    fn camera_match_fails_both_criteria() {
        let det_box = BoundingBox::from_corners(0.0, 0.0, 10.0, 10.0).unwrap();
        let track_box = BoundingBox::from_corners(500.0, 500.0, 510.0, 510.0).unwrap();
        let out = match_camera(
            &[[0.0, 0.0]],
            &[det_box],
            &[[50.0, 0.0]],
            &[Some(track_box)],
            &TrackerConfig::default(),
        );
        assert_eq!(out, vec![None]);
    }

    #[test]
    fn camera_match_rescued_by_kalman_distance() {
        let det_box = BoundingBox::from_corners(0.0, 0.0, 10.0, 10.0).unwrap();
        let stale_box = BoundingBox::from_corners(500.0, 500.0, 510.0, 510.0).unwrap();
        let out = match_camera(
            &[[10.0, 0.0]],
            &[det_box],
            &[[10.8, 0.0]],
            &[Some(stale_box)],
            &TrackerConfig::default(),
        );
        // IoU is 0 but the 0.8 m road distance is inside the gate.
        assert_eq!(out, vec![Some(0)]);
    }

    /// 0.3 s camera dropout: the track coasts on Kalman predictions and the
    /// stale-box IoU failure is rescued by the road-distance criterion.
    #[test]
    fn dropout_does_not_fragment_track() {
        let mut tracker = make_tracker(TrackerConfig::default());
        let fps = 30.0;
        let speed = 20.0; // px == m under the identity homography
        let mut created = 0;
        for k in 0..120 {
            let t = k as f64 / fps;
            if (2.0..2.3).contains(&t) {
                continue; // dropout window
            }
            let u = 10.0 + speed * t;
            let events = tracker.step(&[camera_meas(t, u, 50.0, 10.0, 10.0)]).unwrap();
            created += events
                .iter()
                .filter(|e| e.kind == TrackEventKind::Created)
                .count();
        }
        assert_eq!(created, 1, "dropout must not fragment the track");
        assert_eq!(tracker.live_tracks().len(), 1);
    }

    #[test]
    fn detection_consumed_once_per_step() {
        let mut tracker = make_tracker(TrackerConfig::default());
        tracker.step(&[radar_meas(0.0, 50.0, 0.0, -20.0, 0.0)]).unwrap();
        // One detection near the track: it must be matched, not also create.
        let events = tracker.step(&[radar_meas(0.1, 48.0, 0.0, -20.0, 0.0)]).unwrap();
        let n_created = events
            .iter()
            .filter(|e| e.kind == TrackEventKind::Created)
            .count();
        let n_updated = events
            .iter()
            .filter(|e| e.kind == TrackEventKind::Updated)
            .count();
        assert_eq!((n_created, n_updated), (0, 1));
    }

    #[test]
    fn finalize_discards_short_tracks() {
        let mut tracker = make_tracker(TrackerConfig::default());
        for k in 0..3 {
            let t = k as f64 * 0.1;
            tracker
                .step(&[radar_meas(t, 50.0 - 2.0 * t, 0.0, -20.0, 0.0)])
                .unwrap();
        }
        let result = tracker.finalize();
        assert!(result.kept.is_empty());
        assert_eq!(result.discarded.len(), 1);
        assert_eq!(result.events.len(), 1);
        assert_eq!(result.events[0].kind, TrackEventKind::Finished);
    }

    #[test]
    fn finalize_empty_tracker() {
        let tracker = make_tracker(TrackerConfig::default());
        let result = tracker.finalize();
        assert!(result.kept.is_empty());
        assert!(result.discarded.is_empty());
    }

    #[test]
    fn covariance_stays_spd_and_contracts() {
        let mut tracker = make_tracker(TrackerConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = 0.0;
        let mut x = 150.0;
        for _ in 0..100 {
            let prior = tracker.live_tracks().first().map(|tr| {
                predict(
                    &tr.state,
                    t - tr.state_time,
                    tracker.config().process_noise_intensity,
                )
            });
            tracker
                .step(&[radar_meas(
                    t,
                    x + rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.2..0.2),
                    -20.0,
                    0.0,
                )])
                .unwrap();
            let track = &tracker.live_tracks()[0];
            let cov = track.state.cov;
            assert!((cov - cov.transpose()).norm() < 1e-9);
            for e in cov.symmetric_eigenvalues().iter() {
                assert!(*e > 0.0, "covariance eigenvalue {e}");
            }
            if let Some(prior) = prior {
                let diff = prior.cov - cov;
                for e in diff.symmetric_eigenvalues().iter() {
                    assert!(*e > -1e-9, "update increased covariance: {e}");
                }
            }
            t += 1.0 / 15.0;
            x -= 20.0 / 15.0;
        }
    }

    #[test]
    fn deterministic_event_sequence() {
        let run = || {
            let mut tracker = make_tracker(TrackerConfig::default());
            let mut all = Vec::new();
            for k in 0..50 {
                let t = k as f64 * 0.1;
                let batch = vec![
                    radar_meas(t, 100.0 - 20.0 * t, 0.0, -20.0, 0.0),
                    radar_meas(t, 150.0 - 22.0 * t, 3.5, -22.0, 0.0),
                ];
                all.extend(tracker.step(&batch).unwrap());
            }
            all
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrackerConfig::default();
        cfg.iou_threshold = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrackerConfig::default();
        cfg.keep_alive = 0.0;
        assert!(cfg.validate().is_err());
        let json: TrackerConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(json.keep_alive, 0.5);
        let json: TrackerConfig = serde_json::from_str(r#"{"road_gate": 3.0}"#).unwrap();
        assert_eq!(json.road_gate, 3.0);
        assert_eq!(json.iou_threshold, 0.3);
    }
}
