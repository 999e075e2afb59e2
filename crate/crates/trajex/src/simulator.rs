//! Deterministic scenario generator: ground-truth highway trajectories plus
//! noisy camera and radar detection logs in the same formats the ingest
//! module reads. Serves as the test oracle replacing real sensors.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Frame, GeometryError, Homography};
use crate::ingest::{CameraDetection, RadarDetection};
use crate::types::{StateSample, VehicleClass};

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("invalid lane geometry: {0}")]
    InvalidLaneGeometry(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("ground truth CSV line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
}

/// Piecewise-constant-acceleration speed profile parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedProfileConfig {
    pub min_speed: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub max_segments: usize,
}

impl Default for SpeedProfileConfig {
    fn default() -> SpeedProfileConfig {
        SpeedProfileConfig {
            min_speed: 18.0,
            max_speed: 30.0,
            max_accel: 1.5,
            max_segments: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Scenario length, seconds.
    pub duration: f64,
    /// Lane centerlines as polylines in the Setup frame; vehicles travel from
    /// the first point toward the last.
    pub lanes: Vec<Vec<[f64; 2]>>,
    /// Vehicle arrivals per minute per lane.
    pub arrival_rate: f64,
    /// When set, exactly this many vehicles with staggered entry times
    /// replace the Poisson arrival process.
    pub vehicle_count: Option<usize>,
    pub speed: SpeedProfileConfig,
    pub camera_rate: f64,
    pub radar_rate: f64,
    /// Pixel noise (sigma_u, sigma_v) applied as a whole-box shift.
    pub camera_noise_px: [f64; 2],
    pub camera_false_negative: f64,
    /// Clutter detections per second.
    pub camera_false_positive_rate: f64,
    pub confidence_mean: f64,
    pub confidence_concentration: f64,
    /// (sigma_x, sigma_y, sigma_v) in meters / m/s.
    pub radar_noise: [f64; 3],
    /// Systematic offset added to every radar position, Setup frame.
    pub radar_bias: [f64; 2],
    pub radar_dim_noise: f64,
    pub radar_max_range: f64,
    /// Camera visibility window in radial Setup distance.
    pub appear_distance: f64,
    pub disappear_distance: f64,
    /// Radar clock minus camera clock, seconds; radar records are stamped
    /// `true_time + clock_offset`.
    pub clock_offset: f64,
    /// When set, each vehicle's camera detections are suppressed for this
    /// many seconds starting at mid-visibility.
    pub forced_dropout: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> ScenarioConfig {
        ScenarioConfig {
            seed: 0,
            duration: 60.0,
            lanes: default_lanes(),
            arrival_rate: 4.0,
            vehicle_count: None,
            speed: SpeedProfileConfig::default(),
            camera_rate: 30.0,
            radar_rate: 15.0,
            // Box-regression jitter; vertical jitter is kept sub-pixel
            // because the shallow viewing angle amplifies it into meters of
            // along-road error at long range.
            camera_noise_px: [1.0, 0.4],
            camera_false_negative: 0.05,
            camera_false_positive_rate: 0.1,
            confidence_mean: 0.91,
            confidence_concentration: 100.0,
            radar_noise: [0.25, 0.4, 0.15],
            radar_bias: [0.0, 0.0],
            radar_dim_noise: 0.1,
            radar_max_range: 200.0,
            appear_distance: 135.0,
            disappear_distance: 35.0,
            clock_offset: 0.0,
            forced_dropout: None,
        }
    }
}

/// Two through lanes plus one merge lane joining from the right.
pub fn default_lanes() -> Vec<Vec<[f64; 2]>> {
    vec![
        vec![[230.0, 0.0], [-20.0, 0.0]],
        vec![[230.0, 3.5], [-20.0, 3.5]],
        vec![
            [230.0, -7.0],
            [150.0, -7.0],
            [120.0, -5.2],
            [100.0, -3.7],
            [90.0, -3.5],
            [-20.0, -3.5],
        ],
    ]
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: &str| Err(SimulatorError::InvalidConfig(m.into()));
        if !(self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if self.camera_rate <= 0.0 || self.radar_rate <= 0.0 {
            return bad("sensor rates must be positive");
        }
        if self.arrival_rate < 0.0 {
            return bad("arrival_rate must be non-negative");
        }
        if self.camera_noise_px.iter().any(|s| *s < 0.0)
            || self.radar_noise.iter().any(|s| *s < 0.0)
            || self.radar_dim_noise < 0.0
        {
            return bad("noise sigmas must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.camera_false_negative) {
            return bad("camera_false_negative must be in [0, 1]");
        }
        if self.camera_false_positive_rate < 0.0 {
            return bad("camera_false_positive_rate must be non-negative");
        }
        if !(0.0 < self.confidence_mean && self.confidence_mean < 1.0)
            || self.confidence_concentration <= 0.0
        {
            return bad("confidence model requires mean in (0,1) and positive concentration");
        }
        if self.appear_distance <= self.disappear_distance || self.disappear_distance <= 0.0 {
            return bad("visibility interval requires 0 < disappear < appear");
        }
        if self.radar_max_range < 0.0 {
            return bad("radar_max_range must be non-negative");
        }
        if self.speed.min_speed <= 0.0
            || self.speed.max_speed < self.speed.min_speed
            || self.speed.max_accel < 0.0
            || self.speed.max_segments == 0
        {
            return bad("speed profile requires 0 < min <= max, accel >= 0, segments >= 1");
        }
        if self.lanes.is_empty() {
            return Err(SimulatorError::InvalidLaneGeometry("no lanes".into()));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            Polyline::new(lane).map_err(|e| {
                SimulatorError::InvalidLaneGeometry(format!("lane {i}: {e}"))
            })?;
        }
        Ok(())
    }
}

/// A polyline with cumulative arc length, queried by distance along it.
#[derive(Debug, Clone)]
struct Polyline {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl Polyline {
    fn new(points: &[[f64; 2]]) -> Result<Polyline, String> {
        if points.len() < 2 {
            return Err("needs at least two points".into());
        }
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if d < 1e-9 {
                return Err("zero-length segment".into());
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Polyline {
            points: points.to_vec(),
            cumulative,
        })
    }

    fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point and unit tangent at arc length `s` (clamped to the line).
    fn at(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let s = s.clamp(0.0, self.total_length());
        let seg = match self
            .cumulative
            .iter()
            .rposition(|c| *c <= s)
        {
            Some(i) if i + 1 < self.points.len() => i,
            _ => self.points.len() - 2,
        };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let f = (s - self.cumulative[seg]) / len;
        let tangent = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        (
            [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])],
            tangent,
        )
    }
}

/// One simulated vehicle: lane, entry time and closed-form speed profile.
#[derive(Debug, Clone)]
pub struct VehicleSpec {
    pub id: u64,
    pub class: VehicleClass,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub entry_time: f64,
    pub lane: usize,
    pub initial_speed: f64,
    /// (duration, acceleration) segments; constant speed afterwards.
    pub segments: Vec<(f64, f64)>,
}

impl VehicleSpec {
    /// Arc position and speed at `tau` seconds after entry, closed form.
    fn arc_state(&self, tau: f64) -> (f64, f64) {
        let mut s = 0.0;
        let mut v = self.initial_speed;
        let mut remaining = tau;
        for &(dur, a) in &self.segments {
            let dt = remaining.min(dur);
            s += v * dt + 0.5 * a * dt * dt;
            v += a * dt;
            remaining -= dt;
            if remaining <= 0.0 {
                return (s, v);
            }
        }
        (s + v * remaining, v)
    }
}

/// Ground truth for one vehicle: reference samples at 100 Hz, Setup frame.
#[derive(Debug, Clone)]
pub struct GroundTruthTrajectory {
    pub id: u64,
    pub class: VehicleClass,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub samples: Vec<StateSample>,
}

pub const REFERENCE_RATE: f64 = 100.0;

/// A fully instantiated scenario: the config plus its deterministic vehicle
/// population. All sensor logs derive from the same closed-form kinematics.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub vehicles: Vec<VehicleSpec>,
    lanes: Vec<Polyline>,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_VEHICLES: u64 = 0;
const STREAM_CAMERA_NOISE: u64 = 1;
const STREAM_CAMERA_DROPOUT: u64 = 2;
const STREAM_CLUTTER: u64 = 3;
const STREAM_CONFIDENCE: u64 = 4;
const STREAM_RADAR: u64 = 5;

fn class_dims(class: VehicleClass) -> (f64, f64, f64) {
    match class {
        VehicleClass::Car => (4.5, 1.8, 1.5),
        VehicleClass::Bus => (12.0, 2.5, 3.2),
        VehicleClass::Truck => (7.5, 2.5, 2.8),
        VehicleClass::Motorcycle => (2.2, 0.8, 1.4),
    }
}

fn sample_class(rng: &mut ChaCha8Rng) -> VehicleClass {
    let u: f64 = rng.gen();
    if u < 0.70 {
        VehicleClass::Car
    } else if u < 0.85 {
        VehicleClass::Truck
    } else if u < 0.95 {
        VehicleClass::Bus
    } else {
        VehicleClass::Motorcycle
    }
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Scenario, SimulatorError> {
        cfg.validate()?;
        let lanes: Vec<Polyline> = cfg
            .lanes
            .iter()
            .map(|l| Polyline::new(l).unwrap())
            .collect();
        let mut rng = rng_stream(cfg.seed, STREAM_VEHICLES);
        let mut vehicles = Vec::new();
        let mut next_id = 0u64;
        // Per-lane leader speed and entry time, for headway enforcement.
        let mut lane_state: Vec<Option<(f64, f64)>> = vec![None; lanes.len()];

        let mut push_vehicle =
            |lane: usize, entry: f64, rng: &mut ChaCha8Rng, lane_state: &mut Vec<Option<(f64, f64)>>| {
                let class = sample_class(rng);
                let (bl, bw, bh) = class_dims(class);
                let length = bl + rng.gen_range(-0.2..0.2);
                let width = bw + rng.gen_range(-0.1..0.1);
                let height = bh + rng.gen_range(-0.1..0.1);
                let mut speed = rng.gen_range(cfg.speed.min_speed..=cfg.speed.max_speed);
                let mut entry = entry;
                if let Some((leader_entry, leader_speed)) = lane_state[lane] {
                    // Never enter closer than 4 s behind or faster than the
                    // leader, so same-lane vehicles cannot overlap.
                    entry = entry.max(leader_entry + 4.0);
                    speed = speed.min(leader_speed);
                }
                let n_seg = rng.gen_range(1..=cfg.speed.max_segments);
                let mut segments = Vec::with_capacity(n_seg);
                let mut v = speed;
                for _ in 0..n_seg {
                    let dur = rng.gen_range(2.0..6.0);
                    let target = rng.gen_range(cfg.speed.min_speed..=cfg.speed.max_speed);
                    let a = ((target - v) / dur)
                        .clamp(-cfg.speed.max_accel, cfg.speed.max_accel);
                    segments.push((dur, a));
                    v += a * dur;
                }
                lane_state[lane] = Some((entry, speed));
                let spec = VehicleSpec {
                    id: next_id,
                    class,
                    length,
                    width,
                    height,
                    entry_time: entry,
                    lane,
                    initial_speed: speed,
                    segments,
                };
                next_id += 1;
                spec
            };

        if let Some(count) = cfg.vehicle_count {
            let spacing = cfg.duration / (count.max(1) as f64 + 1.0);
            for i in 0..count {
                let lane = i % lanes.len();
                let entry = i as f64 * spacing;
                let v = push_vehicle(lane, entry, &mut rng, &mut lane_state);
                vehicles.push(v);
            }
        } else if cfg.arrival_rate > 0.0 {
            let mean_gap = 60.0 / cfg.arrival_rate;
            for lane in 0..lanes.len() {
                let mut t = 0.0;
                loop {
                    t += -mean_gap * (1.0 - rng.gen::<f64>()).ln();
                    if t >= cfg.duration {
                        break;
                    }
                    let v = push_vehicle(lane, t, &mut rng, &mut lane_state);
                    vehicles.push(v);
                }
            }
        }
        vehicles.sort_by(|a, b| a.entry_time.partial_cmp(&b.entry_time).unwrap());
        Ok(Scenario {
            cfg,
            vehicles,
            lanes,
        })
    }

    /// Exact kinematic state of one vehicle at absolute time `t`, or `None`
    /// before entry / after leaving the lane.
    pub fn state_at(&self, vehicle: &VehicleSpec, t: f64) -> Option<StateSample> {
        let tau = t - vehicle.entry_time;
        if tau < 0.0 {
            return None;
        }
        let lane = &self.lanes[vehicle.lane];
        let (s, speed) = vehicle.arc_state(tau);
        if s > lane.total_length() {
            return None;
        }
        let (p, tangent) = lane.at(s);
        Some(StateSample {
            t,
            x: p[0],
            y: p[1],
            vx: speed * tangent[0],
            vy: speed * tangent[1],
            theta: tangent[1].atan2(tangent[0]),
        })
    }

    /// Reference trajectories sampled on the global 100 Hz grid.
    pub fn ground_truth(&self) -> Vec<GroundTruthTrajectory> {
        let dt = 1.0 / REFERENCE_RATE;
        self.vehicles
            .iter()
            .map(|v| {
                let mut samples = Vec::new();
                let first = (v.entry_time / dt).ceil() as u64;
                for k in first.. {
                    let t = k as f64 * dt;
                    if t > self.cfg.duration {
                        break;
                    }
                    match self.state_at(v, t) {
                        Some(s) => samples.push(s),
                        None if samples.is_empty() => continue,
                        None => break,
                    }
                }
                GroundTruthTrajectory {
                    id: v.id,
                    class: v.class,
                    length: v.length,
                    width: v.width,
                    height: v.height,
                    samples,
                }
            })
            .collect()
    }

    /// The exact road-to-image projection used to synthesize camera boxes:
    /// a pinhole camera at the Setup origin, 6 m above the road, looking
    /// down the positive x axis (focal length 1000 px, principal point
    /// (960, 540)). Only defined for x > 0.
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        (960.0 + 1000.0 * y / x, 540.0 + 6000.0 / x)
    }

    /// The exact inverse of [`Self::project`] as a homography. (The forward
    /// direction is not expressible in the normalized homography type: its
    /// lower-right entry vanishes because the image plane contains the
    /// camera center's vertical.)
    pub fn image_to_road(&self) -> Homography {
        let m = nalgebra::Matrix3::new(
            0.0, 0.0, 6000.0, //
            6.0, 0.0, -5760.0, //
            0.0, 1.0, -540.0,
        );
        Homography::from_matrix(m, Frame::Image, Frame::Road).expect("projection is invertible")
    }

    /// Image-to-road correspondences consistent with [`Self::project`], for
    /// calibrating the extraction pipeline the same way field setups are:
    /// from marked reference points.
    pub fn calibration_correspondences(&self) -> crate::geometry::CorrespondenceSet {
        let road_points = [
            [40.0, -8.0],
            [40.0, 8.0],
            [80.0, -4.0],
            [80.0, 5.0],
            [130.0, -8.0],
            [130.0, 8.0],
            [200.0, 0.0],
            [60.0, 2.0],
        ];
        let pairs = road_points
            .iter()
            .map(|p| {
                let (u, v) = self.project(p[0], p[1]);
                [[u, v], [p[0], p[1]]]
            })
            .collect();
        crate::geometry::CorrespondenceSet {
            source_frame: Frame::Image,
            target_frame: Frame::Road,
            pairs,
        }
    }

    /// Time at which a vehicle first comes within `distance` (radially), on
    /// the reference grid; used to place forced dropout windows.
    fn first_time_within(&self, vehicle: &VehicleSpec, distance: f64) -> Option<f64> {
        let dt = 1.0 / REFERENCE_RATE;
        let first = (vehicle.entry_time / dt).ceil() as u64;
        for k in first.. {
            let t = k as f64 * dt;
            if t > self.cfg.duration {
                return None;
            }
            match self.state_at(vehicle, t) {
                Some(s) if s.radial_distance() <= distance => return Some(t),
                Some(_) => continue,
                None => continue,
            }
        }
        None
    }

    /// Synthesize the camera detection log (true detections plus clutter),
    /// sorted by timestamp.
    pub fn camera_log(&self) -> Vec<CameraDetection> {
        let cfg = &self.cfg;
        let mut rng_noise = rng_stream(cfg.seed, STREAM_CAMERA_NOISE);
        let mut rng_drop = rng_stream(cfg.seed, STREAM_CAMERA_DROPOUT);
        let mut rng_conf = rng_stream(cfg.seed, STREAM_CONFIDENCE);
        let conf_dist = Beta::new(
            cfg.confidence_mean * cfg.confidence_concentration,
            (1.0 - cfg.confidence_mean) * cfg.confidence_concentration,
        )
        .expect("validated confidence model");
        let noise_u = gaussian(cfg.camera_noise_px[0]);
        let noise_v = gaussian(cfg.camera_noise_px[1]);

        let mid = 0.5 * (cfg.appear_distance + cfg.disappear_distance);
        let dropout_windows: Vec<Option<(f64, f64)>> = self
            .vehicles
            .iter()
            .map(|v| {
                cfg.forced_dropout.and_then(|dur| {
                    self.first_time_within(v, mid).map(|t0| (t0, t0 + dur))
                })
            })
            .collect();

        let mut out: Vec<CameraDetection> = Vec::new();
        let mut k = 0u64;
        loop {
            let t = k as f64 / cfg.camera_rate;
            if t > cfg.duration {
                break;
            }
            k += 1;
            for (vi, v) in self.vehicles.iter().enumerate() {
                let Some(s) = self.state_at(v, t) else { continue };
                let d = s.radial_distance();
                if s.x <= 0.0 || d < cfg.disappear_distance || d > cfg.appear_distance {
                    continue;
                }
                if let Some((w0, w1)) = dropout_windows[vi] {
                    if t >= w0 && t < w1 {
                        continue;
                    }
                }
                if cfg.camera_false_negative > 0.0
                    && rng_drop.gen::<f64>() < cfg.camera_false_negative
                {
                    continue;
                }
                let (u, vv) = self.project(s.x, s.y);
                let du = draw(&noise_u, &mut rng_noise);
                let dv = draw(&noise_v, &mut rng_noise);
                // Pixel box: footprint point at the bottom-edge center, size
                // from the pinhole scale 1/x.
                let w_px = 1000.0 * v.width / s.x;
                let h_px = 1000.0 * v.height / s.x;
                let bbox = crate::geometry::BoundingBox::from_corners(
                    u - 0.5 * w_px + du,
                    vv - h_px + dv,
                    u + 0.5 * w_px + du,
                    vv + dv,
                )
                .expect("positive box extent");
                out.push(CameraDetection {
                    t,
                    bbox,
                    class: v.class,
                    confidence: conf_dist.sample(&mut rng_conf),
                    width_estimate: Some(v.width),
                });
            }
        }

        // Poisson clutter, uniform over time and the visible road band.
        let expected = cfg.camera_false_positive_rate * cfg.duration;
        if expected > 0.0 {
            let mut rng_clutter = rng_stream(cfg.seed, STREAM_CLUTTER);
            let n = Poisson::new(expected).unwrap().sample(&mut rng_clutter) as u64;
            for _ in 0..n {
                let t = rng_clutter.gen::<f64>() * cfg.duration;
                let d = rng_clutter.gen_range(cfg.disappear_distance..cfg.appear_distance);
                let y = rng_clutter.gen_range(-8.0..8.0);
                let (u, vv) = self.project(d, y);
                let w_px = 1000.0 * 1.8 / d;
                let h_px = 1000.0 * 1.5 / d;
                let bbox = crate::geometry::BoundingBox::from_corners(
                    u - 0.5 * w_px,
                    vv - h_px,
                    u + 0.5 * w_px,
                    vv,
                )
                .unwrap();
                out.push(CameraDetection {
                    t,
                    bbox,
                    class: VehicleClass::Car,
                    confidence: conf_dist.sample(&mut rng_clutter),
                    width_estimate: None,
                });
            }
        }
        out.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        out
    }

    /// Synthesize the radar detection log, stamped on the (possibly offset)
    /// radar clock.
    pub fn radar_log(&self) -> Vec<RadarDetection> {
        let cfg = &self.cfg;
        let mut rng = rng_stream(cfg.seed, STREAM_RADAR);
        let noise_x = gaussian(cfg.radar_noise[0]);
        let noise_y = gaussian(cfg.radar_noise[1]);
        let noise_v = gaussian(cfg.radar_noise[2]);
        let noise_dim = gaussian(cfg.radar_dim_noise);
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let t = k as f64 / cfg.radar_rate;
            if t > cfg.duration {
                break;
            }
            k += 1;
            for v in &self.vehicles {
                let Some(s) = self.state_at(v, t) else { continue };
                if s.x <= 0.0 || s.radial_distance() > cfg.radar_max_range {
                    continue;
                }
                out.push(RadarDetection {
                    t: t + cfg.clock_offset,
                    x: s.x + cfg.radar_bias[0] + draw(&noise_x, &mut rng),
                    y: s.y + cfg.radar_bias[1] + draw(&noise_y, &mut rng),
                    vx: s.vx + draw(&noise_v, &mut rng),
                    vy: s.vy + draw(&noise_v, &mut rng),
                    length: (v.length + draw(&noise_dim, &mut rng)).max(0.5),
                    width: (v.width + draw(&noise_dim, &mut rng)).max(0.3),
                    height: (v.height + draw(&noise_dim, &mut rng)).max(0.3),
                });
            }
        }
        out
    }
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).unwrap())
    } else {
        None
    }
}

fn draw(dist: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        Some(d) => d.sample(rng),
        None => 0.0,
    }
}

/// Ground truth CSV: one row per 100 Hz sample, floats at 6 decimals.
pub fn render_gt_csv(gts: &[GroundTruthTrajectory]) -> String {
    let mut out = String::from("# frame: setup\n");
    out.push_str("vehicle_id,class,length,width,height,t,x,y,vx,vy,theta\n");
    for gt in gts {
        for s in &gt.samples {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                gt.id, gt.class.name(), gt.length, gt.width, gt.height,
                s.t, s.x, s.y, s.vx, s.vy, s.theta
            ));
        }
    }
    out
}

pub fn parse_gt_csv(input: &str) -> Result<Vec<GroundTruthTrajectory>, SimulatorError> {
    let mut out: Vec<GroundTruthTrajectory> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.starts_with("vehicle_id") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(SimulatorError::MalformedCsv {
                line: line_no,
                reason: format!("expected 11 fields, got {}", fields.len()),
            });
        }
        let f = |s: &str| -> Result<f64, SimulatorError> {
            s.parse().map_err(|_| SimulatorError::MalformedCsv {
                line: line_no,
                reason: format!("bad float {s:?}"),
            })
        };
        let id: u64 = fields[0].parse().map_err(|_| SimulatorError::MalformedCsv {
            line: line_no,
            reason: format!("bad vehicle id {:?}", fields[0]),
        })?;
        let class = VehicleClass::parse(fields[1]).ok_or_else(|| SimulatorError::MalformedCsv {
            line: line_no,
            reason: format!("unknown class {:?}", fields[1]),
        })?;
        let sample = StateSample {
            t: f(fields[5])?,
            x: f(fields[6])?,
            y: f(fields[7])?,
            vx: f(fields[8])?,
            vy: f(fields[9])?,
            theta: f(fields[10])?,
        };
        match out.last_mut() {
            Some(last) if last.id == id => last.samples.push(sample),
            _ => out.push(GroundTruthTrajectory {
                id,
                class,
                length: f(fields[2])?,
                width: f(fields[3])?,
                height: f(fields[4])?,
                samples: vec![sample],
            }),
        }
    }
    Ok(out)
}

/// Camera log as JSON lines, matching the ingest schema.
pub fn render_camera_jsonl(dets: &[CameraDetection]) -> String {
    let mut out = String::new();
    for d in dets {
        let width = d
            .width_estimate
            .map(|w| format!("{w:.9}"))
            .unwrap_or_else(|| "null".into());
        out.push_str(&format!(
            "{{\"t\":{:.9},\"box\":[{:.9},{:.9},{:.9},{:.9}],\"class\":\"{}\",\"conf\":{:.9},\"width\":{}}}\n",
            d.t, d.bbox.p1.u, d.bbox.p1.v, d.bbox.p2.u, d.bbox.p2.v,
            d.class.name(), d.confidence, width
        ));
    }
    out
}

/// Radar log as JSON lines, matching the ingest schema.
pub fn render_radar_jsonl(dets: &[RadarDetection]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(&format!(
            "{{\"t\":{:.9},\"x\":{:.9},\"y\":{:.9},\"vx\":{:.9},\"vy\":{:.9},\"len\":{:.9},\"wid\":{:.9},\"hgt\":{:.9}}}\n",
            d.t, d.x, d.y, d.vx, d.vy, d.length, d.width, d.height
        ));
    }
    out
}

/// A noise-free single-vehicle config used widely in tests: one straight
/// lane, constant `speed`, no dropouts, no clutter, no clock offset.
pub fn noise_free_single_vehicle(seed: u64, speed: f64, duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        duration,
        lanes: vec![vec![[230.0, 0.0], [-20.0, 0.0]]],
        vehicle_count: Some(1),
        speed: SpeedProfileConfig {
            min_speed: speed,
            max_speed: speed,
            max_accel: 0.0,
            max_segments: 1,
        },
        camera_noise_px: [0.0, 0.0],
        camera_false_negative: 0.0,
        camera_false_positive_rate: 0.0,
        radar_noise: [0.0, 0.0, 0.0],
        radar_dim_noise: 0.0,
        clock_offset: 0.0,
        forced_dropout: None,
        ..ScenarioConfig::default()
    }
}
