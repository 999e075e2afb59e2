//! Post-processing of finished tracks: RTS smoothing, class and dimension
//! aggregation, heading extraction and trajectory export.

use std::io::{BufRead, Write};

use nalgebra::Matrix4;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::geometry::{Frame, GeometryError, TransformRegistry};
use crate::kalman::{process_noise, symmetrize, transition_matrix, KalmanState};
use crate::tracker::{Track, TrackerConfig};
use crate::types::{wrap_angle, StateSample, VehicleClass};

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("track {0} too short to smooth (needs >= 2 filtered states)")]
    TooShort(u64),
    #[error("backward recursion hit a singular predicted covariance")]
    SingularCovariance,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("trajectory CSV line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
}

/// Final per-object output: class, aggregated dimensions and the smoothed
/// state sequence in a declared frame.
#[derive(Debug, Clone)]
pub struct SmoothedTrajectory {
    pub track_id: u64,
    pub class: Option<VehicleClass>,
    pub length: Option<f64>,
    pub width: Option<f64>,
    pub height: Option<f64>,
    pub frame: Frame,
    pub samples: Vec<StateSample>,
}

/// Rauch-Tung-Striebel backward recursion over stored forward-pass states.
/// `entries` are (timestamp, filtered state) pairs in time order; `q` is the
/// process noise intensity used during the forward pass.
pub fn rts_smooth_states(
    entries: &[(f64, KalmanState)],
    q: f64,
) -> Result<Vec<KalmanState>, PostprocessError> {
    let n = entries.len();
    let mut smoothed: Vec<KalmanState> = Vec::with_capacity(n);
    smoothed.resize(n, entries[n - 1].1.clone());
    smoothed[n - 1] = entries[n - 1].1.clone();
    for k in (0..n - 1).rev() {
        let (t_k, ref filt) = entries[k];
        let (t_next, _) = entries[k + 1];
        let dt = t_next - t_k;
        let f = transition_matrix(dt);
        let pred_mean = f * filt.mean;
        let pred_cov = symmetrize(f * filt.cov * f.transpose() + process_noise(dt, q));
        let pred_inv = pred_cov
            .try_inverse()
            .ok_or(PostprocessError::SingularCovariance)?;
        let gain: Matrix4<f64> = filt.cov * f.transpose() * pred_inv;
        let next = &smoothed[k + 1];
        let mean = filt.mean + gain * (next.mean - pred_mean);
        let cov = symmetrize(filt.cov + gain * (next.cov - pred_cov) * gain.transpose());
        smoothed[k] = KalmanState::new(mean, cov);
    }
    Ok(smoothed)
}

/// Heading from velocity with a speed floor: below the floor the previous
/// heading is held (initially 0).
pub fn heading_series(velocities: &[(f64, f64)], floor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(velocities.len());
    let mut prev = 0.0;
    for &(vx, vy) in velocities {
        if vx.hypot(vy) >= floor {
            prev = vy.atan2(vx);
        }
        out.push(prev);
    }
    out
}

/// Smooth one finished track into a trajectory in the Road frame.
pub fn rts_smooth(track: &Track, cfg: &TrackerConfig) -> Result<SmoothedTrajectory, PostprocessError> {
    if track.history.len() < 2 {
        return Err(PostprocessError::TooShort(track.id));
    }
    let entries: Vec<(f64, KalmanState)> = track
        .history
        .iter()
        .map(|h| (h.t, h.state.clone()))
        .collect();
    let smoothed = rts_smooth_states(&entries, cfg.process_noise_intensity)?;

    // Camera and radar updates at the same timestamp produce duplicate
    // entries; keep the later one, which incorporates both measurements.
    let mut kept: Vec<(f64, KalmanState)> = Vec::with_capacity(smoothed.len());
    for (i, s) in smoothed.into_iter().enumerate() {
        let t = entries[i].0;
        if let Some(last) = kept.last_mut() {
            if last.0 == t {
                last.1 = s;
                continue;
            }
        }
        kept.push((t, s));
    }

    let velocities: Vec<(f64, f64)> = kept.iter().map(|(_, s)| (s.mean.z, s.mean.w)).collect();
    let headings = heading_series(&velocities, cfg.heading_speed_floor);
    let samples = kept
        .iter()
        .zip(headings)
        .map(|((t, s), theta)| StateSample {
            t: *t,
            x: s.mean.x,
            y: s.mean.y,
            vx: s.mean.z,
            vy: s.mean.w,
            theta: wrap_angle(theta),
        })
        .collect();

    Ok(SmoothedTrajectory {
        track_id: track.id,
        class: aggregate_class(track),
        length: aggregate_dimension(&track.length_samples, DEFAULT_TRIM_MIN_COUNT),
        width: aggregate_dimension(&track.width_samples, DEFAULT_TRIM_MIN_COUNT),
        height: aggregate_dimension(&track.height_samples, DEFAULT_TRIM_MIN_COUNT),
        frame: Frame::Road,
        samples,
    })
}

/// Smooth all tracks; parallel across tracks when the `parallel` feature is
/// enabled.
pub fn smooth_all(
    tracks: &[Track],
    cfg: &TrackerConfig,
) -> Result<Vec<SmoothedTrajectory>, PostprocessError> {
    #[cfg(feature = "parallel")]
    {
        tracks.par_iter().map(|t| rts_smooth(t, cfg)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        tracks.iter().map(|t| rts_smooth(t, cfg)).collect()
    }
}

/// Class with the highest confidence-weighted vote sum; ties broken by the
/// fixed order car > truck > bus > motorcycle. Radar-only tracks have no
/// votes and return `None` (exported as "unknown").
pub fn aggregate_class(track: &Track) -> Option<VehicleClass> {
    let mut best: Option<(VehicleClass, f64)> = None;
    for class in VehicleClass::ALL {
        let votes = track.class_votes[crate::tracker::class_index(class)];
        if votes <= 0.0 {
            continue;
        }
        best = match best {
            None => Some((class, votes)),
            Some((bc, bv)) => {
                if votes > bv || (votes == bv && class.vote_priority() > bc.vote_priority()) {
                    Some((class, votes))
                } else {
                    Some((bc, bv))
                }
            }
        };
    }
    best.map(|(c, _)| c)
}

pub const DEFAULT_TRIM_MIN_COUNT: usize = 5;

/// Aggregate one dimension from (value, distance-to-setup) samples: when at
/// least `trim_min_count` samples exist, drop the single min and max value,
/// then take the mean weighted by 1 / (distance + 1 m).
pub fn aggregate_dimension(samples: &[(f64, f64)], trim_min_count: usize) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut used: Vec<(f64, f64)> = samples.to_vec();
    if used.len() >= trim_min_count {
        let (min_idx, _) = used
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
            .unwrap();
        used.swap_remove(min_idx);
        let (max_idx, _) = used
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
            .unwrap();
        used.swap_remove(max_idx);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, d) in used {
        let w = 1.0 / (d + 1.0);
        num += w * v;
        den += w;
    }
    Some(num / den)
}

/// Write trajectories as CSV, transformed into `target_frame`. Floats are
/// fixed at 6 decimals so repeated runs produce identical bytes.
pub fn export_trajectories<W: Write>(
    trajs: &[SmoothedTrajectory],
    target_frame: Frame,
    registry: &TransformRegistry,
    config_digest: &str,
    out: &mut W,
) -> Result<(), PostprocessError> {
    let frame_name = frame_name(target_frame);
    writeln!(out, "# frame: {frame_name}")?;
    writeln!(out, "# config: {config_digest}")?;
    writeln!(out, "track_id,class,length,width,height,t,x,y,vx,vy,theta")?;
    for traj in trajs {
        let transform = registry.resolve(traj.frame, target_frame)?;
        let class = traj.class.map(|c| c.name()).unwrap_or("unknown");
        let dim = |d: Option<f64>| d.map(|v| format!("{v:.6}")).unwrap_or_default();
        let (length, width, height) = (dim(traj.length), dim(traj.width), dim(traj.height));
        for s in &traj.samples {
            let (x, y) = transform.apply_xy(s.x, s.y);
            let (vx, vy) = transform.apply_vector(s.vx, s.vy);
            // Skip the wrap for identity rotations: a stored angle that
            // rounds to just above pi must re-export byte-identically.
            let theta = if transform.rotation == 0.0 {
                s.theta
            } else {
                wrap_angle(s.theta + transform.rotation)
            };
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                traj.track_id, class, length, width, height, s.t, x, y, vx, vy, theta
            )?;
        }
    }
    Ok(())
}

fn frame_name(f: Frame) -> &'static str {
    match f {
        Frame::Image => "image",
        Frame::Road => "road",
        Frame::Setup => "setup",
        Frame::Map => "map",
    }
}

/// Parse a trajectory CSV written by [`export_trajectories`].
pub fn parse_trajectories_csv<R: BufRead>(
    input: R,
) -> Result<(Frame, Vec<SmoothedTrajectory>), PostprocessError> {
    let mut frame = Frame::Road;
    let mut trajs: Vec<SmoothedTrajectory> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if let Some(rest) = line.strip_prefix("# frame: ") {
            frame = match rest.trim() {
                "image" => Frame::Image,
                "road" => Frame::Road,
                "setup" => Frame::Setup,
                "map" => Frame::Map,
                other => {
                    return Err(PostprocessError::MalformedCsv {
                        line: line_no,
                        reason: format!("unknown frame {other:?}"),
                    })
                }
            };
            continue;
        }
        if line.starts_with('#') || line.starts_with("track_id") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(PostprocessError::MalformedCsv {
                line: line_no,
                reason: format!("expected 11 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64, PostprocessError> {
            s.parse().map_err(|_| PostprocessError::MalformedCsv {
                line: line_no,
                reason: format!("bad float {s:?}"),
            })
        };
        let track_id: u64 = fields[0].parse().map_err(|_| PostprocessError::MalformedCsv {
            line: line_no,
            reason: format!("bad track id {:?}", fields[0]),
        })?;
        let class = VehicleClass::parse(fields[1]);
        let opt_f = |s: &str| -> Result<Option<f64>, PostprocessError> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse_f(s).map(Some)
            }
        };
        let sample = StateSample {
            t: parse_f(fields[5])?,
            x: parse_f(fields[6])?,
            y: parse_f(fields[7])?,
            vx: parse_f(fields[8])?,
            vy: parse_f(fields[9])?,
            theta: parse_f(fields[10])?,
        };
        match trajs.last_mut() {
            Some(last) if last.track_id == track_id => last.samples.push(sample),
            _ => trajs.push(SmoothedTrajectory {
                track_id,
                class,
                length: opt_f(fields[2])?,
                width: opt_f(fields[3])?,
                height: opt_f(fields[4])?,
                frame,
                samples: vec![sample],
            }),
        }
    }
    for t in &mut trajs {
        t.frame = frame;
    }
    Ok((frame, trajs))
}
