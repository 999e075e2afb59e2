//! Ground-truth evaluation: distance-indexed error curves, bias and standard
//! deviation aggregation across runs, de-biasing, sensor-mode comparison and
//! run summary statistics.

use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::postprocess::SmoothedTrajectory;
use crate::simulator::GroundTruthTrajectory;
use crate::tracker::{SensorKind, Track};
use crate::types::{angle_diff, wrap_angle, StateSample};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("time {t} outside trajectory range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("reference never reaches distance {0} m")]
    NoCrossing(f64),
    #[error("reference crosses distance {d} m {} times", times.len())]
    MultipleCrossings { d: f64, times: Vec<f64> },
    #[error("runs disagree on the evaluation grid")]
    GridMismatch,
    #[error("empty sample series")]
    EmptySeries,
}

/// Evaluated quantities, in fixed row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    X,
    Y,
    Vx,
    Vy,
    Theta,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::X,
        Quantity::Y,
        Quantity::Vx,
        Quantity::Vy,
        Quantity::Theta,
    ];

    pub fn index(self) -> usize {
        match self {
            Quantity::X => 0,
            Quantity::Y => 1,
            Quantity::Vx => 2,
            Quantity::Vy => 3,
            Quantity::Theta => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::X => "x",
            Quantity::Y => "y",
            Quantity::Vx => "vx",
            Quantity::Vy => "vy",
            Quantity::Theta => "theta",
        }
    }

    fn of(self, s: &StateSample) -> f64 {
        match self {
            Quantity::X => s.x,
            Quantity::Y => s.y,
            Quantity::Vx => s.vx,
            Quantity::Vy => s.vy,
            Quantity::Theta => s.theta,
        }
    }
}

/// Linear interpolation between the two bracketing samples; the heading is
/// interpolated along the shortest arc.
pub fn interpolate_measurement(
    samples: &[StateSample],
    t: f64,
) -> Result<StateSample, EvaluationError> {
    if samples.is_empty() {
        return Err(EvaluationError::EmptySeries);
    }
    let lo = samples[0].t;
    let hi = samples[samples.len() - 1].t;
    let eps = 1e-9;
    if t < lo - eps || t > hi + eps {
        return Err(EvaluationError::OutOfRange { t, lo, hi });
    }
    let t = t.clamp(lo, hi);
    let i = samples.partition_point(|s| s.t <= t);
    if i == 0 {
        return Ok(samples[0]);
    }
    if i == samples.len() {
        return Ok(samples[samples.len() - 1]);
    }
    let a = &samples[i - 1];
    let b = &samples[i];
    let span = b.t - a.t;
    if span <= 0.0 {
        return Ok(*a);
    }
    let f = (t - a.t) / span;
    Ok(StateSample {
        t,
        x: a.x + f * (b.x - a.x),
        y: a.y + f * (b.y - a.y),
        vx: a.vx + f * (b.vx - a.vx),
        vy: a.vy + f * (b.vy - a.vy),
        theta: wrap_angle(a.theta + f * angle_diff(b.theta, a.theta)),
    })
}

/// All times at which the reference's radial distance crosses `d`, linearly
/// interpolated between bracketing samples.
pub fn distance_crossings(samples: &[StateSample], d: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let r: Vec<f64> = samples.iter().map(|s| s.radial_distance() - d).collect();
    for i in 0..samples.len() {
        if r[i] == 0.0 {
            if i == 0 || r[i - 1] != 0.0 {
                out.push(samples[i].t);
            }
            continue;
        }
        if i + 1 < samples.len() && r[i] * r[i + 1] < 0.0 {
            let f = r[i] / (r[i] - r[i + 1]);
            out.push(samples[i].t + f * (samples[i + 1].t - samples[i].t));
        }
    }
    out
}

/// The single time at which the reference passes distance `d`. Multiple
/// crossings are an error carrying all times; callers that tolerate them use
/// the first and flag the run.
pub fn distance_to_time(samples: &[StateSample], d: f64) -> Result<f64, EvaluationError> {
    let times = distance_crossings(samples, d);
    match times.len() {
        0 => Err(EvaluationError::NoCrossing(d)),
        1 => Ok(times[0]),
        _ => Err(EvaluationError::MultipleCrossings { d, times }),
    }
}

/// Uniform distance grid over [lo, hi] with the given step, inclusive.
pub fn make_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// Per-run, per-quantity reference/measured/error values on a distance grid.
#[derive(Debug, Clone)]
pub struct RunErrors {
    pub run_id: usize,
    pub grid: Vec<f64>,
    pub reference: [Vec<f64>; 5],
    pub measured: [Vec<f64>; 5],
    pub errors: [Vec<f64>; 5],
    /// True when any grid distance was crossed more than once; the first
    /// crossing was used.
    pub flagged: bool,
}

/// Evaluate error = reference - measured at the time the reference passes
/// each grid distance. Heading errors are wrapped to (-pi, pi].
pub fn error_curve(
    run_id: usize,
    reference: &[StateSample],
    measured: &[StateSample],
    grid: &[f64],
) -> Result<RunErrors, EvaluationError> {
    let mut out = RunErrors {
        run_id,
        grid: grid.to_vec(),
        reference: Default::default(),
        measured: Default::default(),
        errors: Default::default(),
        flagged: false,
    };
    for &d in grid {
        let t = match distance_to_time(reference, d) {
            Ok(t) => t,
            Err(EvaluationError::MultipleCrossings { times, .. }) => {
                out.flagged = true;
                times[0]
            }
            Err(e) => return Err(e),
        };
        let r = interpolate_measurement(reference, t)?;
        let m = interpolate_measurement(measured, t)?;
        for q in Quantity::ALL {
            let (rv, mv) = (q.of(&r), q.of(&m));
            let e = if q == Quantity::Theta {
                angle_diff(rv, mv)
            } else {
                rv - mv
            };
            out.reference[q.index()].push(rv);
            out.measured[q.index()].push(mv);
            out.errors[q.index()].push(e);
        }
    }
    Ok(out)
}

/// Error curves for a batch of (reference, measured) runs; parallel across
/// runs when the `parallel` feature is on, with run ids fixed by input order.
pub fn error_curves(
    pairs: &[(&[StateSample], &[StateSample])],
    grid: &[f64],
) -> Result<Vec<RunErrors>, EvaluationError> {
    #[cfg(feature = "parallel")]
    {
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, (r, m))| error_curve(i, r, m, grid))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairs
            .iter()
            .enumerate()
            .map(|(i, (r, m))| error_curve(i, r, m, grid))
            .collect()
    }
}

/// Distance-indexed bias and standard deviation per quantity, plus their
/// interval means over the grid.
#[derive(Debug, Clone)]
pub struct BiasTable {
    pub grid: Vec<f64>,
    pub mu: [Vec<f64>; 5],
    pub sigma: [Vec<f64>; 5],
    pub interval_bias: [f64; 5],
    pub interval_std: [f64; 5],
}

impl BiasTable {
    /// Bias for one quantity, linearly interpolated at distance `d` and
    /// clamped to the grid ends.
    pub fn bias_at(&self, q: Quantity, d: f64) -> f64 {
        let grid = &self.grid;
        let mu = &self.mu[q.index()];
        if d <= grid[0] {
            return mu[0];
        }
        if d >= grid[grid.len() - 1] {
            return mu[mu.len() - 1];
        }
        let i = grid.partition_point(|g| *g <= d);
        let f = (d - grid[i - 1]) / (grid[i] - grid[i - 1]);
        mu[i - 1] + f * (mu[i] - mu[i - 1])
    }
}

/// Per-distance mean error and population standard deviation (divisor N)
/// across runs, plus interval means.
pub fn aggregate_bias_std(runs: &[RunErrors]) -> Result<BiasTable, EvaluationError> {
    let first = runs.first().ok_or(EvaluationError::EmptySeries)?;
    let grid = first.grid.clone();
    if runs.iter().any(|r| r.grid != grid) {
        return Err(EvaluationError::GridMismatch);
    }
    let n = runs.len() as f64;
    let mut table = BiasTable {
        grid: grid.clone(),
        mu: Default::default(),
        sigma: Default::default(),
        interval_bias: [0.0; 5],
        interval_std: [0.0; 5],
    };
    for q in 0..5 {
        for di in 0..grid.len() {
            let mean: f64 = runs.iter().map(|r| r.errors[q][di]).sum::<f64>() / n;
            let var: f64 = runs
                .iter()
                .map(|r| {
                    let e = r.errors[q][di] - mean;
                    e * e
                })
                .sum::<f64>()
                / n;
            table.mu[q].push(mean);
            table.sigma[q].push(var.sqrt());
        }
        let g = grid.len() as f64;
        table.interval_bias[q] = table.mu[q].iter().sum::<f64>() / g;
        table.interval_std[q] = table.sigma[q].iter().sum::<f64>() / g;
    }
    Ok(table)
}

/// Add the distance-indexed mean error back onto a measured trajectory
/// (error is defined as reference minus measured).
pub fn debias(samples: &[StateSample], table: &BiasTable) -> Vec<StateSample> {
    samples
        .iter()
        .map(|s| {
            let d = s.radial_distance();
            StateSample {
                t: s.t,
                x: s.x + table.bias_at(Quantity::X, d),
                y: s.y + table.bias_at(Quantity::Y, d),
                vx: s.vx + table.bias_at(Quantity::Vx, d),
                vy: s.vy + table.bias_at(Quantity::Vy, d),
                theta: wrap_angle(s.theta + table.bias_at(Quantity::Theta, d)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensorMode {
    Camera,
    Radar,
    Fused,
}

impl SensorMode {
    pub const ALL: [SensorMode; 3] = [SensorMode::Camera, SensorMode::Radar, SensorMode::Fused];

    pub fn name(self) -> &'static str {
        match self {
            SensorMode::Camera => "camera",
            SensorMode::Radar => "radar",
            SensorMode::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Option<SensorMode> {
        match s {
            "camera" => Some(SensorMode::Camera),
            "radar" => Some(SensorMode::Radar),
            "fused" => Some(SensorMode::Fused),
            _ => None,
        }
    }
}

/// Interval-mean bias and standard deviation per quantity and sensor mode.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub entries: Vec<(SensorMode, [f64; 5], [f64; 5])>,
}

impl ComparisonTable {
    pub fn new(tables: &[(SensorMode, &BiasTable)]) -> ComparisonTable {
        ComparisonTable {
            entries: tables
                .iter()
                .map(|(m, t)| (*m, t.interval_bias, t.interval_std))
                .collect(),
        }
    }

    pub fn get(&self, mode: SensorMode, q: Quantity) -> Option<(f64, f64)> {
        self.entries
            .iter()
            .find(|(m, _, _)| *m == mode)
            .map(|(_, bias, std)| (bias[q.index()], std[q.index()]))
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("quantity,mode,bias,std\n");
        for q in Quantity::ALL {
            for (mode, bias, std) in &self.entries {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6}\n",
                    q.name(),
                    mode.name(),
                    bias[q.index()],
                    std[q.index()]
                ));
            }
        }
        out
    }

    /// Aligned text table, one quantity per row, "bias (std)" per mode.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<8}", "quantity"));
        for (mode, _, _) in &self.entries {
            out.push_str(&format!("{:>16}", mode.name()));
        }
        out.push('\n');
        for q in Quantity::ALL {
            out.push_str(&format!("{:<8}", q.name()));
            for (_, bias, std) in &self.entries {
                let cell = format!("{:.2} ({:.2})", bias[q.index()], std[q.index()]);
                out.push_str(&format!("{cell:>16}"));
            }
            out.push('\n');
        }
        out
    }
}

/// High-level tracking statistics over finished tracks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryStats {
    pub track_count: usize,
    pub tracks_per_minute: f64,
    pub mean_detections_per_track: f64,
    pub mean_confidence: f64,
    pub mean_matched_iou: f64,
    pub max_consecutive_gap: f64,
}

pub fn summary_stats(tracks: &[Track], duration: f64) -> SummaryStats {
    if tracks.is_empty() {
        return SummaryStats::default();
    }
    let track_count = tracks.len();
    let detections: usize = tracks.iter().map(|t| t.detection_count()).sum();
    let mut conf_sum = 0.0;
    let mut conf_count = 0usize;
    for t in tracks {
        for h in &t.history {
            if h.sensor == SensorKind::Camera {
                if let crate::ingest::MeasurementData::Camera(c) = &h.raw {
                    conf_sum += c.confidence;
                    conf_count += 1;
                }
            }
        }
    }
    let iou_sum: f64 = tracks.iter().map(|t| t.matched_iou_sum).sum();
    let iou_count: u64 = tracks.iter().map(|t| t.matched_iou_count).sum();
    SummaryStats {
        track_count,
        tracks_per_minute: if duration > 0.0 {
            track_count as f64 * 60.0 / duration
        } else {
            0.0
        },
        mean_detections_per_track: detections as f64 / track_count as f64,
        mean_confidence: if conf_count > 0 {
            conf_sum / conf_count as f64
        } else {
            0.0
        },
        mean_matched_iou: if iou_count > 0 {
            iou_sum / iou_count as f64
        } else {
            0.0
        },
        max_consecutive_gap: tracks
            .iter()
            .map(|t| t.max_detection_gap)
            .fold(0.0, f64::max),
    }
}

pub fn render_summary(s: &SummaryStats) -> String {
    format!(
        "tracks: {}\ntracks_per_minute: {:.2}\nmean_detections_per_track: {:.1}\n\
         mean_confidence: {:.3}\nmean_matched_iou: {:.3}\nmax_consecutive_gap_s: {:.3}\n",
        s.track_count,
        s.tracks_per_minute,
        s.mean_detections_per_track,
        s.mean_confidence,
        s.mean_matched_iou,
        s.max_consecutive_gap
    )
}

/// Per-run errors CSV: distance plus ref/measured/error per quantity.
pub fn render_errors_csv(run: &RunErrors) -> String {
    let mut out = String::from("d");
    for q in Quantity::ALL {
        out.push_str(&format!(",{0}_ref,{0}_me,{0}_er", q.name()));
    }
    out.push('\n');
    for (di, d) in run.grid.iter().enumerate() {
        out.push_str(&format!("{d:.6}"));
        for q in Quantity::ALL {
            out.push_str(&format!(
                ",{:.6},{:.6},{:.6}",
                run.reference[q.index()][di],
                run.measured[q.index()][di],
                run.errors[q.index()][di]
            ));
        }
        out.push('\n');
    }
    out
}

/// Aggregated bias/std CSV: distance plus mu/sigma per quantity.
pub fn render_bias_std_csv(table: &BiasTable) -> String {
    let mut out = String::from("d");
    for q in Quantity::ALL {
        out.push_str(&format!(",{0}_mu,{0}_sigma", q.name()));
    }
    out.push('\n');
    for (di, d) in table.grid.iter().enumerate() {
        out.push_str(&format!("{d:.6}"));
        for q in Quantity::ALL {
            out.push_str(&format!(
                ",{:.6},{:.6}",
                table.mu[q.index()][di],
                table.sigma[q.index()][di]
            ));
        }
        out.push('\n');
    }
    out
}

/// Greedy unique association of extracted trajectories to reference vehicles
/// by temporal-spatial overlap: the score counts 10 Hz probe times in the
/// overlapping window at which the positions agree within 3 m.
pub fn associate_tracks(
    references: &[GroundTruthTrajectory],
    trajectories: &[SmoothedTrajectory],
) -> Vec<Option<usize>> {
    let mut scores: Vec<(usize, usize, usize)> = Vec::new();
    for (gi, gt) in references.iter().enumerate() {
        if gt.samples.is_empty() {
            continue;
        }
        for (ti, traj) in trajectories.iter().enumerate() {
            if traj.samples.is_empty() {
                continue;
            }
            let lo = gt.samples[0].t.max(traj.samples[0].t);
            let hi = gt.samples[gt.samples.len() - 1]
                .t
                .min(traj.samples[traj.samples.len() - 1].t);
            if hi <= lo {
                continue;
            }
            let mut score = 0usize;
            let mut t = lo;
            while t <= hi {
                if let (Ok(g), Ok(m)) = (
                    interpolate_measurement(&gt.samples, t),
                    interpolate_measurement(&traj.samples, t),
                ) {
                    if (g.x - m.x).hypot(g.y - m.y) < 3.0 {
                        score += 1;
                    }
                }
                t += 0.1;
            }
            if score > 0 {
                scores.push((score, gi, ti));
            }
        }
    }
    scores.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; references.len()];
    let mut used = vec![false; trajectories.len()];
    for (_, gi, ti) in scores {
        if out[gi].is_none() && !used[ti] {
            out[gi] = Some(ti);
            used[ti] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample(t: f64, x: f64, y: f64, vx: f64, vy: f64, theta: f64) -> StateSample {
        StateSample { t, x, y, vx, vy, theta }
    }

    /// Straight approach along x from `x0` at speed toward the origin.
    fn approach(x0: f64, speed: f64, duration: f64, dt: f64) -> Vec<StateSample> {
        let n = (duration / dt) as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                sample(t, x0 - speed * t, 0.0, -speed, 0.0, std::f64::consts::PI)
            })
            .collect()
    }

    #[test]
    fn interpolation_examples() {
        let s = vec![
            sample(0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            sample(1.0, 10.0, 2.0, 10.0, 2.0, 0.1),
        ];
        // Exact sample time.
        let a = interpolate_measurement(&s, 1.0).unwrap();
        assert_eq!(a.x, 10.0);
        // Linear midpoint.
        let b = interpolate_measurement(&s, 0.4).unwrap();
        assert_abs_diff_eq!(b.x, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.y, 0.8, epsilon = 1e-12);
        // Out of range.
        assert!(matches!(
            interpolate_measurement(&s, 2.0),
            Err(EvaluationError::OutOfRange { .. })
        ));
    }

    #[test]
    fn heading_interpolates_on_the_circle() {
        let s = vec![
            sample(0.0, 0.0, 0.0, 0.0, 0.0, 179.0_f64.to_radians()),
            sample(1.0, 0.0, 0.0, 0.0, 0.0, -179.0_f64.to_radians()),
        ];
        let mid = interpolate_measurement(&s, 0.5).unwrap();
        assert_abs_diff_eq!(mid.theta, std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn distance_to_time_examples() {
        let samples = approach(200.0, 20.0, 9.0, 0.01);
        assert_abs_diff_eq!(distance_to_time(&samples, 135.0).unwrap(), 3.25, epsilon = 1e-9);
        assert!(matches!(
            distance_to_time(&samples, 250.0),
            Err(EvaluationError::NoCrossing(_))
        ));
    }

    #[test]
    fn distance_to_time_plug_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x0 = rng.gen_range(150.0..250.0);
            let speed = rng.gen_range(10.0..35.0);
            let samples = approach(x0, speed, (x0 - 20.0) / speed, 0.01);
            let d = rng.gen_range(40.0..130.0);
            let t = distance_to_time(&samples, d).unwrap();
            let at = interpolate_measurement(&samples, t).unwrap();
            assert_abs_diff_eq!(at.radial_distance(), d, epsilon = 1e-6);
        }
    }

    #[test]
    fn multiple_crossings_are_flagged() {
        // Drive in, then back out: distance 50 crossed twice.
        let mut samples = approach(100.0, 20.0, 3.0, 0.01);
        let turn = *samples.last().unwrap();
        for k in 1..=300 {
            let t = turn.t + k as f64 * 0.01;
            samples.push(sample(t, turn.x + 20.0 * (t - turn.t), 0.0, 20.0, 0.0, 0.0));
        }
        match distance_to_time(&samples, 50.0) {
            Err(EvaluationError::MultipleCrossings { times, .. }) => assert_eq!(times.len(), 2),
            other => panic!("expected MultipleCrossings, got {other:?}"),
        }
        let grid = vec![50.0, 60.0];
        let run = error_curve(0, &samples, &samples, &grid).unwrap();
        assert!(run.flagged);
    }

    #[test]
    fn error_curve_identity_and_constant_offset() {
        let reference = approach(200.0, 20.0, 9.0, 0.01);
        let grid = make_grid(35.0, 135.0, 1.0);
        let run = error_curve(0, &reference, &reference, &grid).unwrap();
        for q in 0..5 {
            assert!(run.errors[q].iter().all(|e| e.abs() < 1e-12));
        }
        // measured = reference + 0.3 in x -> error is -0.3 (reference minus
        // measured).
        let shifted: Vec<StateSample> = reference
            .iter()
            .map(|s| StateSample { x: s.x + 0.3, ..*s })
            .collect();
        let run = error_curve(0, &reference, &shifted, &grid).unwrap();
        for e in &run.errors[0] {
            assert_abs_diff_eq!(*e, -0.3, epsilon = 1e-9);
        }
    }

    /// Direct re-evaluation of the error definition, without the grid
    /// machinery, against a noisy measured series.
    #[test]
    fn error_curve_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reference = approach(200.0, 22.0, 8.0, 0.01);
        let measured: Vec<StateSample> = approach(200.0, 22.0, 8.0, 1.0 / 15.0)
            .iter()
            .map(|s| StateSample {
                x: s.x + rng.gen_range(-0.5..0.5),
                y: s.y + rng.gen_range(-0.5..0.5),
                ..*s
            })
            .collect();
        let grid = make_grid(35.0, 135.0, 1.0);
        let run = error_curve(0, &reference, &measured, &grid).unwrap();
        for (di, &d) in grid.iter().enumerate() {
            // Closed-form crossing time for the linear approach.
            let t = (200.0 - d) / 22.0;
            let r = interpolate_measurement(&reference, t).unwrap();
            let m = interpolate_measurement(&measured, t).unwrap();
            assert_abs_diff_eq!(run.errors[0][di], r.x - m.x, epsilon = 1e-9);
            assert_abs_diff_eq!(run.errors[1][di], r.y - m.y, epsilon = 1e-9);
        }
    }

    #[test]
    fn error_curve_shift_equivariance() {
        let reference = approach(200.0, 20.0, 9.0, 0.01);
        let measured = approach(200.0, 20.0, 9.0, 1.0 / 15.0);
        let grid = make_grid(35.0, 135.0, 5.0);
        let base = error_curve(0, &reference, &measured, &grid).unwrap();
        for c in [0.1, -2.0, 7.5] {
            let shifted: Vec<StateSample> = measured
                .iter()
                .map(|s| StateSample { y: s.y + c, ..*s })
                .collect();
            let run = error_curve(0, &reference, &shifted, &grid).unwrap();
            for di in 0..grid.len() {
                assert_abs_diff_eq!(run.errors[1][di], base.errors[1][di] - c, epsilon = 1e-12);
            }
        }
    }

    fn runs_with_errors(errs: &[f64]) -> Vec<RunErrors> {
        errs.iter()
            .enumerate()
            .map(|(i, e)| RunErrors {
                run_id: i,
                grid: vec![50.0],
                reference: Default::default(),
                measured: Default::default(),
                errors: [vec![*e], vec![*e], vec![*e], vec![*e], vec![*e]],
                flagged: false,
            })
            .collect()
    }

    #[test]
    fn population_divisor_sigma() {
        // Two runs with errors 1 and 3: mu = 2, sigma = 1 (divisor N).
        let table = aggregate_bias_std(&runs_with_errors(&[1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(table.mu[0][0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(table.sigma[0][0], 1.0, epsilon = 1e-15);
        // Identical constant error: sigma = 0.
        let table = aggregate_bias_std(&runs_with_errors(&[0.7, 0.7, 0.7])).unwrap();
        assert_abs_diff_eq!(table.mu[0][0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(table.sigma[0][0], 0.0, epsilon = 1e-12);
    }

    /// Streaming (Welford) mean/variance oracle.
    #[test]
    fn aggregation_matches_streaming_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = make_grid(35.0, 135.0, 1.0);
        let runs: Vec<RunErrors> = (0..10)
            .map(|i| RunErrors {
                run_id: i,
                grid: grid.clone(),
                reference: Default::default(),
                measured: Default::default(),
                errors: std::array::from_fn(|_| {
                    grid.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()
                }),
                flagged: false,
            })
            .collect();
        let table = aggregate_bias_std(&runs).unwrap();
        for q in 0..5 {
            for di in 0..grid.len() {
                let mut mean = 0.0;
                let mut m2 = 0.0;
                for (k, r) in runs.iter().enumerate() {
                    let x = r.errors[q][di];
                    let delta = x - mean;
                    mean += delta / (k + 1) as f64;
                    m2 += delta * (x - mean);
                }
                let sigma = (m2 / runs.len() as f64).sqrt();
                assert_abs_diff_eq!(table.mu[q][di], mean, epsilon = 1e-12);
                assert_abs_diff_eq!(table.sigma[q][di], sigma, epsilon = 1e-12);
                // Algebraic identity: sigma^2 + mu^2 = mean of squares.
                let msq: f64 = runs.iter().map(|r| r.errors[q][di].powi(2)).sum::<f64>()
                    / runs.len() as f64;
                assert_abs_diff_eq!(
                    table.sigma[q][di].powi(2) + table.mu[q][di].powi(2),
                    msq,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let mut runs = runs_with_errors(&[1.0, 2.0]);
        runs[1].grid = vec![60.0];
        assert!(matches!(
            aggregate_bias_std(&runs),
            Err(EvaluationError::GridMismatch)
        ));
    }

    #[test]
    fn debias_examples() {
        let measured = approach(200.0, 20.0, 9.0, 1.0 / 15.0);
        let grid = make_grid(35.0, 135.0, 1.0);
        // Zero table: unchanged.
        let zero = BiasTable {
            grid: grid.clone(),
            mu: std::array::from_fn(|_| vec![0.0; grid.len()]),
            sigma: std::array::from_fn(|_| vec![0.0; grid.len()]),
            interval_bias: [0.0; 5],
            interval_std: [0.0; 5],
        };
        assert_eq!(debias(&measured, &zero), measured);
        // Constant bias -0.3 in x shifts every x by -0.3.
        let mut table = zero.clone();
        table.mu[0] = vec![-0.3; grid.len()];
        let corrected = debias(&measured, &table);
        for (c, m) in corrected.iter().zip(&measured) {
            assert_abs_diff_eq!(c.x, m.x - 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn debias_removes_injected_offset() {
        // Reference runs with a distance-dependent systematic x offset.
        let grid = make_grid(35.0, 135.0, 1.0);
        let reference = approach(200.0, 20.0, 9.5, 0.01);
        let offset = |d: f64| 0.4 + 0.002 * (d - 85.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let measured_runs: Vec<Vec<StateSample>> = (0..10)
            .map(|_| {
                approach(200.0, 20.0, 9.5, 1.0 / 15.0)
                    .iter()
                    .map(|s| StateSample {
                        x: s.x + offset(s.radial_distance()) + rng.gen_range(-0.05..0.05),
                        ..*s
                    })
                    .collect()
            })
            .collect();
        let pairs: Vec<(&[StateSample], &[StateSample])> = measured_runs
            .iter()
            .map(|m| (reference.as_slice(), m.as_slice()))
            .collect();
        let runs = error_curves(&pairs, &grid).unwrap();
        let table = aggregate_bias_std(&runs).unwrap();
        assert!(table.interval_bias[0] < -0.3, "offset visible as bias");

        // Debias each run, re-evaluate: interval-mean |bias| < 0.02 m.
        let corrected: Vec<Vec<StateSample>> =
            measured_runs.iter().map(|m| debias(m, &table)).collect();
        let pairs: Vec<(&[StateSample], &[StateSample])> = corrected
            .iter()
            .map(|m| (reference.as_slice(), m.as_slice()))
            .collect();
        let redo = aggregate_bias_std(&error_curves(&pairs, &grid).unwrap()).unwrap();
        assert!(
            redo.interval_bias[0].abs() < 0.02,
            "residual bias {}",
            redo.interval_bias[0]
        );
    }

    #[test]
    fn comparison_table_fixture() {
        let grid = vec![50.0];
        let table_for = |bias: [f64; 5], std: [f64; 5]| BiasTable {
            grid: grid.clone(),
            mu: std::array::from_fn(|q| vec![bias[q]]),
            sigma: std::array::from_fn(|q| vec![std[q]]),
            interval_bias: bias,
            interval_std: std,
        };
        let camera = table_for(
            [-0.56, 0.04, -0.15, 0.00, 0.7],
            [0.50, 0.10, 0.73, 0.17, 2.7],
        );
        let radar = table_for(
            [0.08, -0.11, -0.04, 0.01, 0.2],
            [0.29, 0.24, 0.16, 0.12, 1.4],
        );
        let fused = table_for(
            [-0.06, -0.06, -0.05, 0.01, 0.4],
            [0.29, 0.11, 0.19, 0.10, 1.6],
        );
        let cmp = ComparisonTable::new(&[
            (SensorMode::Camera, &camera),
            (SensorMode::Radar, &radar),
            (SensorMode::Fused, &fused),
        ]);
        assert_eq!(cmp.get(SensorMode::Fused, Quantity::X), Some((-0.06, 0.29)));
        let text = cmp.render_text();
        let expected = "\
quantity          camera           radar           fused
x           -0.56 (0.50)     0.08 (0.29)    -0.06 (0.29)
y            0.04 (0.10)    -0.11 (0.24)    -0.06 (0.11)
vx          -0.15 (0.73)    -0.04 (0.16)    -0.05 (0.19)
vy           0.00 (0.17)     0.01 (0.12)     0.01 (0.10)
theta        0.70 (2.70)     0.20 (1.40)     0.40 (1.60)
";
        assert_eq!(text, expected);
        let csv = cmp.render_csv();
        assert!(csv.starts_with("quantity,mode,bias,std\n"));
        assert!(csv.contains("x,fused,-0.060000,0.290000\n"));
    }

    #[test]
    fn identical_inputs_give_identical_rows() {
        let table = BiasTable {
            grid: vec![50.0],
            mu: std::array::from_fn(|_| vec![0.1]),
            sigma: std::array::from_fn(|_| vec![0.2]),
            interval_bias: [0.1; 5],
            interval_std: [0.2; 5],
        };
        let cmp = ComparisonTable::new(&[
            (SensorMode::Camera, &table),
            (SensorMode::Radar, &table),
            (SensorMode::Fused, &table),
        ]);
        for q in Quantity::ALL {
            let rows: Vec<_> = SensorMode::ALL
                .iter()
                .map(|m| cmp.get(*m, q).unwrap())
                .collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn summary_examples() {
        assert_eq!(summary_stats(&[], 30.0), SummaryStats::default());
        // 10 tracks in 30 s -> 20 per minute.
        let tracks: Vec<Track> = (0..10)
            .map(|i| Track {
                id: i,
                state: crate::kalman::KalmanState::new(
                    nalgebra::Vector4::zeros(),
                    nalgebra::Matrix4::identity(),
                ),
                state_time: 0.0,
                last_box: None,
                last_update_time: 1.0,
                creation_time: 0.0,
                history: Vec::new(),
                class_votes: [0.0; 4],
                length_samples: Vec::new(),
                width_samples: Vec::new(),
                height_samples: Vec::new(),
                matched_iou_sum: 0.89 * 3.0,
                matched_iou_count: 3,
                max_detection_gap: 0.2,
                last_heading: None,
            })
            .collect();
        let s = summary_stats(&tracks, 30.0);
        assert_abs_diff_eq!(s.tracks_per_minute, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean_matched_iou, 0.89, epsilon = 1e-12);
        assert_abs_diff_eq!(s.max_consecutive_gap, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn csv_renderers_shape() {
        let reference = approach(200.0, 20.0, 9.0, 0.01);
        let grid = make_grid(35.0, 135.0, 10.0);
        let run = error_curve(0, &reference, &reference, &grid).unwrap();
        let csv = render_errors_csv(&run);
        assert!(csv.starts_with("d,x_ref,x_me,x_er,y_ref"));
        assert_eq!(csv.lines().count(), grid.len() + 1);
        let table = aggregate_bias_std(&[run]).unwrap();
        let csv = render_bias_std_csv(&table);
        assert!(csv.starts_with("d,x_mu,x_sigma,y_mu"));
        assert_eq!(csv.lines().count(), grid.len() + 1);
    }
}
