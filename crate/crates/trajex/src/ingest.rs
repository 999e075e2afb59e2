//! Parsing, validation, ROI filtering and time-ordering of camera and radar
//! detection logs.
//!
//! Logs are JSONL, one detection per line. Parsing is total: every line is
//! either a detection or a reported error with its line number.

use std::io::BufRead;

use serde::Deserialize;
use thiserror::Error;

use crate::geometry::{
    apply_homography, footprint_point, BoundingBox, FootprintParams, Frame, GeometryError,
    Homography, PlanePoint,
};
use crate::types::VehicleClass;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("region of interest invalid: {0}")]
    InvalidRoi(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One camera observation: a classified bounding box with confidence and an
/// optional metric width estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraDetection {
    pub t: f64,
    pub bbox: BoundingBox,
    pub class: VehicleClass,
    pub confidence: f64,
    pub width_estimate: Option<f64>,
}

/// One radar observation: position and velocity in the Setup frame plus
/// object dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarDetection {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl RadarDetection {
    pub fn position(&self) -> PlanePoint {
        PlanePoint::new(self.x, self.y, Frame::Setup)
    }
}

/// A measurement from either sensor, tagged with a source sensor id.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub sensor_id: u32,
    pub data: MeasurementData,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementData {
    Camera(CameraDetection),
    Radar(RadarDetection),
}

impl Measurement {
    pub fn t(&self) -> f64 {
        match &self.data {
            MeasurementData::Camera(c) => c.t,
            MeasurementData::Radar(r) => r.t,
        }
    }

    pub fn is_radar(&self) -> bool {
        matches!(self.data, MeasurementData::Radar(_))
    }
}

/// Result of parsing one log: accepted detections in timestamp order,
/// rejected lines, and whether a stable re-sort was necessary.
#[derive(Debug, Default)]
pub struct ParseOutcome<T> {
    pub detections: Vec<T>,
    pub rejected: Vec<IngestError>,
    pub resorted: bool,
}

#[derive(Deserialize)]
struct CameraRecord {
    t: f64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class: String,
    conf: f64,
    #[serde(default)]
    width: Option<f64>,
}

#[derive(Deserialize)]
struct RadarRecord {
    t: f64,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    len: f64,
    wid: f64,
    hgt: f64,
}

fn camera_from_record(r: CameraRecord) -> Result<CameraDetection, String> {
    if !r.t.is_finite() {
        return Err("timestamp not finite".into());
    }
    if !(0.0..=1.0).contains(&r.conf) {
        return Err(format!("confidence {} outside [0, 1]", r.conf));
    }
    let class = VehicleClass::parse(&r.class).ok_or_else(|| format!("unknown class {:?}", r.class))?;
    let bbox = BoundingBox::from_corners(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3])
        .map_err(|e| e.to_string())?;
    if let Some(w) = r.width {
        if !(w.is_finite() && w > 0.0) {
            return Err(format!("width estimate {w} not positive"));
        }
    }
    Ok(CameraDetection {
        t: r.t,
        bbox,
        class,
        confidence: r.conf,
        width_estimate: r.width,
    })
}

fn radar_from_record(r: RadarRecord) -> Result<RadarDetection, String> {
    if !r.t.is_finite() {
        return Err("timestamp not finite".into());
    }
    for (name, v) in [("x", r.x), ("y", r.y), ("vx", r.vx), ("vy", r.vy)] {
        if !v.is_finite() {
            return Err(format!("{name} not finite"));
        }
    }
    for (name, v) in [("len", r.len), ("wid", r.wid), ("hgt", r.hgt)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(format!("{name} = {v} must be > 0"));
        }
    }
    Ok(RadarDetection {
        t: r.t,
        x: r.x,
        y: r.y,
        vx: r.vx,
        vy: r.vy,
        length: r.len,
        width: r.wid,
        height: r.hgt,
    })
}

fn parse_jsonl<T, R, F, P>(stream: R, parse: F) -> Result<ParseOutcome<T>, IngestError>
where
    R: BufRead,
    P: for<'de> Deserialize<'de>,
    F: Fn(P) -> Result<T, String>,
{
    let mut out = ParseOutcome {
        detections: Vec::new(),
        rejected: Vec::new(),
        resorted: false,
    };
    for (idx, line) in stream.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Result<P, _> = serde_json::from_str(&line);
        match rec {
            Ok(rec) => match parse(rec) {
                Ok(det) => out.detections.push(det),
                Err(reason) => out.rejected.push(IngestError::MalformedRecord {
                    line: line_no,
                    reason,
                }),
            },
            Err(e) => out.rejected.push(IngestError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

fn ensure_sorted<T>(out: &mut ParseOutcome<T>, key: fn(&T) -> f64) {
    let sorted = out
        .detections
        .windows(2)
        .all(|w| key(&w[0]) <= key(&w[1]));
    if !sorted {
        out.resorted = true;
        out.detections
            .sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
    }
}

/// Parse a camera JSONL log. Non-monotonic timestamps trigger a stable sort
/// and are flagged via `resorted`.
pub fn parse_camera_log<R: BufRead>(stream: R) -> Result<ParseOutcome<CameraDetection>, IngestError> {
    let mut out = parse_jsonl(stream, camera_from_record)?;
    ensure_sorted(&mut out, |d| d.t);
    Ok(out)
}

/// Parse a radar JSONL log.
pub fn parse_radar_log<R: BufRead>(stream: R) -> Result<ParseOutcome<RadarDetection>, IngestError> {
    let mut out = parse_jsonl(stream, radar_from_record)?;
    ensure_sorted(&mut out, |d| d.t);
    Ok(out)
}

/// A polygonal region of interest in the Road frame.
#[derive(Debug, Clone)]
pub struct RegionOfInterest {
    vertices: Vec<[f64; 2]>,
}

impl RegionOfInterest {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<RegionOfInterest, IngestError> {
        if vertices.len() < 3 {
            return Err(IngestError::InvalidRoi("fewer than 3 vertices".into()));
        }
        let mut area = 0.0;
        for i in 0..vertices.len() {
            let a = vertices[i];
            let b = vertices[(i + 1) % vertices.len()];
            area += a[0] * b[1] - b[0] * a[1];
        }
        if area.abs() < 1e-12 {
            return Err(IngestError::InvalidRoi("polygon has zero area".into()));
        }
        if Self::self_intersects(&vertices) {
            return Err(IngestError::InvalidRoi("polygon self-intersects".into()));
        }
        Ok(RegionOfInterest { vertices })
    }

    fn self_intersects(v: &[[f64; 2]]) -> bool {
        let n = v.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // Skip adjacent edges (they share a vertex).
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                if segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                    return true;
                }
            }
        }
        false
    }

    /// Point-in-polygon (ray casting), boundary counts as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let v = &self.vertices;
        let n = v.len();
        // Boundary check first.
        for i in 0..n {
            if point_on_segment([x, y], v[i], v[(i + 1) % n]) {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            if (v[i][1] > y) != (v[j][1] > y) {
                let xi = v[j][0]
                    + (y - v[j][1]) / (v[i][1] - v[j][1]) * (v[i][0] - v[j][0]);
                if x < xi {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], p: [f64; 2], q: [f64; 2]| {
        (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])
    };
    let d1 = cross(a, b, c);
    let d2 = cross(a, b, d);
    let d3 = cross(c, d, a);
    let d4 = cross(c, d, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn point_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if cross.abs() > 1e-9 {
        return false;
    }
    let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
    (0.0..=len2).contains(&dot)
}

/// Keep only measurements whose Road-frame point lies inside (or on) the
/// polygon. Camera detections are projected through the homography at their
/// uncompensated footprint point; radar detections are mapped Setup -> Road.
pub fn filter_roi(
    measurements: Vec<Measurement>,
    roi: &RegionOfInterest,
    h: &Homography,
    setup_to_road: &crate::geometry::FrameTransform,
) -> Result<Vec<Measurement>, GeometryError> {
    let params = FootprintParams::default();
    let mut kept = Vec::with_capacity(measurements.len());
    for m in measurements {
        let inside = match &m.data {
            MeasurementData::Camera(c) => {
                let fp = footprint_point(&c.bbox, None, &params);
                match apply_homography(h, fp) {
                    Ok(p) => roi.contains(p.x, p.y),
                    Err(GeometryError::PointAtInfinity) => false,
                    Err(e) => return Err(e),
                }
            }
            MeasurementData::Radar(r) => {
                let (x, y) = setup_to_road.apply_xy(r.x, r.y);
                roi.contains(x, y)
            }
        };
        if inside {
            kept.push(m);
        }
    }
    Ok(kept)
}

/// Merge individually time-sorted camera and radar streams into one globally
/// non-decreasing sequence. Ties are broken radar-before-camera so velocity
/// information arrives first for track initialization.
pub fn merge_streams(cam: Vec<CameraDetection>, radar: Vec<RadarDetection>) -> Vec<Measurement> {
    let mut out = Vec::with_capacity(cam.len() + radar.len());
    let mut ci = cam.into_iter().peekable();
    let mut ri = radar.into_iter().peekable();
    loop {
        match (ci.peek(), ri.peek()) {
            (Some(c), Some(r)) => {
                if r.t <= c.t {
                    out.push(Measurement {
                        sensor_id: 1,
                        data: MeasurementData::Radar(ri.next().unwrap()),
                    });
                } else {
                    out.push(Measurement {
                        sensor_id: 0,
                        data: MeasurementData::Camera(ci.next().unwrap()),
                    });
                }
            }
            (Some(_), None) => out.push(Measurement {
                sensor_id: 0,
                data: MeasurementData::Camera(ci.next().unwrap()),
            }),
            (None, Some(_)) => out.push(Measurement {
                sensor_id: 1,
                data: MeasurementData::Radar(ri.next().unwrap()),
            }),
            (None, None) => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FrameTransform;
    use std::io::Cursor;

    #[test]
    fn parse_camera_empty_and_valid() {
        let out = parse_camera_log(Cursor::new("")).unwrap();
        assert!(out.detections.is_empty());
        assert!(out.rejected.is_empty());

        let log = concat!(
            r#"{"t": 0.1, "box": [10, 10, 20, 30], "class": "car", "conf": 0.9, "width": 1.8}"#,
            "\n",
            r#"{"t": 0.2, "box": [11, 10, 21, 30], "class": "truck", "conf": 0.8, "width": null}"#,
            "\n",
            r#"{"t": 0.3, "box": [12, 10, 22, 30], "class": "bus", "conf": 0.7}"#,
            "\n",
        );
        let out = parse_camera_log(Cursor::new(log)).unwrap();
        assert_eq!(out.detections.len(), 3);
        assert!(!out.resorted);
        assert_eq!(out.detections[0].width_estimate, Some(1.8));
        assert_eq!(out.detections[1].width_estimate, None);
        assert!(out.detections.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn parse_camera_rejects_bad_confidence() {
        let log = r#"{"t": 0.1, "box": [10, 10, 20, 30], "class": "car", "conf": 1.7}"#;
        let out = parse_camera_log(Cursor::new(log)).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(out.rejected.len(), 1);
        match &out.rejected[0] {
            IngestError::MalformedRecord { line, .. } => assert_eq!(*line, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn parse_is_total() {
        let log = concat!(
            r#"{"t": 0.1, "box": [10, 10, 20, 30], "class": "car", "conf": 0.9}"#,
            "\n",
            "not json\n",
            r#"{"t": 0.2, "box": [10, 10, 5, 30], "class": "car", "conf": 0.9}"#,
            "\n",
        );
        let out = parse_camera_log(Cursor::new(log)).unwrap();
        assert_eq!(out.detections.len() + out.rejected.len(), 3);
    }

    #[test]
    fn parse_radar_rejects_negative_height() {
        let log = r#"{"t": 1.0, "x": 5.0, "y": 1.0, "vx": -20.0, "vy": 0.0, "len": 4.5, "wid": 1.8, "hgt": -1.0}"#;
        let out = parse_radar_log(Cursor::new(log)).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(out.rejected.len(), 1);
    }

    #[test]
    fn parse_radar_empty() {
        let out = parse_radar_log(Cursor::new("")).unwrap();
        assert!(out.detections.is_empty());
    }

    #[test]
    fn nonmonotonic_timestamps_resorted() {
        let log = concat!(
            r#"{"t": 0.3, "x": 1.0, "y": 0.0, "vx": 0.0, "vy": 0.0, "len": 4.0, "wid": 2.0, "hgt": 1.5}"#,
            "\n",
            r#"{"t": 0.1, "x": 2.0, "y": 0.0, "vx": 0.0, "vy": 0.0, "len": 4.0, "wid": 2.0, "hgt": 1.5}"#,
            "\n",
        );
        let out = parse_radar_log(Cursor::new(log)).unwrap();
        assert!(out.resorted);
        assert!(out.detections[0].t < out.detections[1].t);
    }

    fn radar_at(t: f64, x: f64, y: f64) -> RadarDetection {
        RadarDetection {
            t,
            x,
            y,
            vx: 0.0,
            vy: 0.0,
            length: 4.0,
            width: 2.0,
            height: 1.5,
        }
    }

    fn cam_at(t: f64) -> CameraDetection {
        CameraDetection {
            t,
            bbox: BoundingBox::from_corners(0.0, 0.0, 10.0, 10.0).unwrap(),
            class: VehicleClass::Car,
            confidence: 0.9,
            width_estimate: None,
        }
    }

    #[test]
    fn merge_examples() {
        let merged = merge_streams(vec![cam_at(0.1), cam_at(0.3)], vec![radar_at(0.2, 0.0, 0.0)]);
        let ts: Vec<f64> = merged.iter().map(|m| m.t()).collect();
        assert_eq!(ts, vec![0.1, 0.2, 0.3]);

        let merged = merge_streams(vec![cam_at(0.5)], vec![]);
        assert_eq!(merged.len(), 1);

        // Equal timestamps: radar first.
        let merged = merge_streams(vec![cam_at(1.0)], vec![radar_at(1.0, 0.0, 0.0)]);
        assert!(merged[0].is_radar());
        assert!(!merged[1].is_radar());
    }

    #[test]
    fn merge_preserves_multiset() {
        let cams: Vec<_> = (0..10).map(|i| cam_at(i as f64 * 0.07)).collect();
        let radars: Vec<_> = (0..7).map(|i| radar_at(i as f64 * 0.11, i as f64, 0.0)).collect();
        let merged = merge_streams(cams.clone(), radars.clone());
        assert_eq!(merged.len(), 17);
        assert!(merged.windows(2).all(|w| w[0].t() <= w[1].t()));
    }

    #[test]
    fn roi_validation() {
        assert!(RegionOfInterest::new(vec![[0.0, 0.0], [1.0, 0.0]]).is_err());
        assert!(RegionOfInterest::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
        // Bowtie self-intersects.
        assert!(RegionOfInterest::new(vec![
            [0.0, 0.0],
            [2.0, 2.0],
            [2.0, 0.0],
            [0.0, 2.0]
        ])
        .is_err());
        assert!(RegionOfInterest::new(vec![
            [0.0, 0.0],
            [10.0, 0.0],
            [10.0, 10.0],
            [0.0, 10.0]
        ])
        .is_ok());
    }

    #[test]
    fn roi_filter_examples() {
        let roi = RegionOfInterest::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
            .unwrap();
        let h = Homography::identity(Frame::Image, Frame::Road);
        let id = FrameTransform::identity(Frame::Setup, Frame::Road);
        let meas = vec![
            Measurement {
                sensor_id: 1,
                data: MeasurementData::Radar(radar_at(0.0, 5.0, 5.0)),
            },
            Measurement {
                sensor_id: 1,
                data: MeasurementData::Radar(radar_at(0.1, 15.0, 5.0)),
            },
        ];
        let kept = filter_roi(meas.clone(), &roi, &h, &id).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].t(), 0.0);

        // Idempotence.
        let again = filter_roi(kept.clone(), &roi, &h, &id).unwrap();
        assert_eq!(again, kept);

        // Polygon covering everything relevant: unchanged.
        let big = RegionOfInterest::new(vec![
            [-1e6, -1e6],
            [1e6, -1e6],
            [1e6, 1e6],
            [-1e6, 1e6],
        ])
        .unwrap();
        let all = filter_roi(meas.clone(), &big, &h, &id).unwrap();
        assert_eq!(all.len(), meas.len());

        // Disjoint polygon: empty.
        let off = RegionOfInterest::new(vec![
            [100.0, 100.0],
            [110.0, 100.0],
            [110.0, 110.0],
            [100.0, 110.0],
        ])
        .unwrap();
        assert!(filter_roi(meas, &off, &h, &id).unwrap().is_empty());
    }
}
