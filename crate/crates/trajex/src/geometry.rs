//! Coordinate systems, homography estimation, inter-frame similarity
//! transforms and bounding-box geometry.
//!
//! Three plane frames exist next to the image plane: `Road` (defined by the
//! homography correspondences), `Setup` (anchored at the sensor placement)
//! and `Map`. The homography maps image points on the road surface into the
//! `Road` frame; similarity transforms move points between the plane frames.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::wrap_angle;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("too few correspondences: got {got}, need {need}")]
    TooFewCorrespondences { got: usize, need: usize },
    #[error("degenerate correspondence configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point maps to infinity (|w| < 1e-12)")]
    PointAtInfinity,
    #[error("no transform registered between {0:?} and {1:?}")]
    UnknownFrame(Frame, Frame),
    #[error("invalid bounding box: p1 must be strictly above and left of p2")]
    InvalidBox,
}

/// Identifier of a coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Image,
    Road,
    Setup,
    Map,
}

/// A point in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> ImagePoint {
        ImagePoint { u, v }
    }
}

/// A point on a 2D plane, tagged with the frame it lives in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
    pub frame: Frame,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64, frame: Frame) -> PlanePoint {
        PlanePoint { x, y, frame }
    }

    pub fn radial_distance(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }
}

/// Axis-aligned bounding box in image coordinates, `p1` top-left and `p2`
/// bottom-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub p1: ImagePoint,
    pub p2: ImagePoint,
}

impl BoundingBox {
    pub fn new(p1: ImagePoint, p2: ImagePoint) -> Result<BoundingBox, GeometryError> {
        if !(p1.u.is_finite() && p1.v.is_finite() && p2.u.is_finite() && p2.v.is_finite())
            || p1.u >= p2.u
            || p1.v >= p2.v
        {
            return Err(GeometryError::InvalidBox);
        }
        Ok(BoundingBox { p1, p2 })
    }

    pub fn from_corners(u1: f64, v1: f64, u2: f64, v2: f64) -> Result<BoundingBox, GeometryError> {
        BoundingBox::new(ImagePoint::new(u1, v1), ImagePoint::new(u2, v2))
    }

    pub fn width(&self) -> f64 {
        self.p2.u - self.p1.u
    }

    pub fn height(&self) -> f64 {
        self.p2.v - self.p1.v
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.p2.u.min(b.p2.u) - a.p1.u.max(b.p1.u)).max(0.0);
    let ih = (a.p2.v.min(b.p2.v) - a.p1.v.max(b.p1.v)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// A set of point correspondences between two frames, loaded from JSON as
/// `{"source_frame": "...", "target_frame": "...", "pairs": [[[su,sv],[tx,ty]], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub source_frame: Frame,
    pub target_frame: Frame,
    pub pairs: Vec<[[f64; 2]; 2]>,
}

impl CorrespondenceSet {
    pub fn from_json(s: &str) -> Result<CorrespondenceSet, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn has_duplicate_sources(&self) -> bool {
        for i in 0..self.pairs.len() {
            for j in (i + 1)..self.pairs.len() {
                let a = self.pairs[i][0];
                let b = self.pairs[j][0];
                if (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12 {
                    return true;
                }
            }
        }
        false
    }
}

/// Plane-to-plane projective map (3x3, row-major), normalized so h[2][2] = 1.
/// Conventionally maps the image plane into the `Road` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    pub h: Matrix3<f64>,
    pub source_frame: Frame,
    pub target_frame: Frame,
}

impl Homography {
    pub fn from_matrix(
        h: Matrix3<f64>,
        source_frame: Frame,
        target_frame: Frame,
    ) -> Result<Homography, GeometryError> {
        let h = normalize_h(h)?;
        Ok(Homography {
            h,
            source_frame,
            target_frame,
        })
    }

    pub fn identity(source_frame: Frame, target_frame: Frame) -> Homography {
        Homography {
            h: Matrix3::identity(),
            source_frame,
            target_frame,
        }
    }

    pub fn inverse(&self) -> Result<Homography, GeometryError> {
        let inv = self.h.try_inverse().ok_or_else(|| {
            GeometryError::DegenerateConfiguration("homography not invertible".into())
        })?;
        Homography::from_matrix(inv, self.target_frame, self.source_frame)
    }

    /// Apply to a raw (u, v) coordinate, returning (x, y) in the target frame.
    pub fn apply_raw(&self, u: f64, v: f64) -> Result<(f64, f64), GeometryError> {
        let p = self.h * Vector3::new(u, v, 1.0);
        if p.z.abs() < 1e-12 {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok((p.x / p.z, p.y / p.z))
    }
}

fn normalize_h(h: Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let scale = h[(2, 2)];
    if scale.abs() < 1e-15 {
        return Err(GeometryError::DegenerateConfiguration(
            "h[2][2] vanishes, cannot normalize".into(),
        ));
    }
    let h = h / scale;
    if h.determinant().abs() < 1e-12 {
        return Err(GeometryError::DegenerateConfiguration(
            "homography is singular".into(),
        ));
    }
    Ok(h)
}

/// Map an image point on the road surface into the target plane frame.
pub fn apply_homography(h: &Homography, p: ImagePoint) -> Result<PlanePoint, GeometryError> {
    let (x, y) = h.apply_raw(p.u, p.v)?;
    Ok(PlanePoint::new(x, y, h.target_frame))
}

/// Estimate a homography from at least four point correspondences with the
/// normalized DLT (Hartley normalization on both sides, SVD nullspace).
pub fn estimate_homography(c: &CorrespondenceSet) -> Result<Homography, GeometryError> {
    if c.pairs.len() < 4 {
        return Err(GeometryError::TooFewCorrespondences {
            got: c.pairs.len(),
            need: 4,
        });
    }
    if c.has_duplicate_sources() {
        return Err(GeometryError::DegenerateConfiguration(
            "duplicate source points".into(),
        ));
    }
    if c.pairs.len() == 4 && has_collinear_triple(c) {
        return Err(GeometryError::DegenerateConfiguration(
            "three of four source points are collinear".into(),
        ));
    }

    let src: Vec<Vector2<f64>> = c.pairs.iter().map(|p| Vector2::new(p[0][0], p[0][1])).collect();
    let dst: Vec<Vector2<f64>> = c.pairs.iter().map(|p| Vector2::new(p[1][0], p[1][1])).collect();
    let (t_src, src_n) = hartley_normalize(&src);
    let (t_dst, dst_n) = hartley_normalize(&dst);

    let n = src_n.len();
    // At least 9 rows: the thin SVD of a 2n x 9 system with 2n < 9 rows
    // would omit the right singular vector spanning the nullspace. Zero
    // padding rows change neither the singular vectors nor the nullspace.
    let mut a = DMatrix::<f64>::zeros((2 * n).max(9), 9);
    for (i, (s, d)) in src_n.iter().zip(dst_n.iter()).enumerate() {
        let (x, y) = (s.x, s.y);
        let (xp, yp) = (d.x, d.y);
        let r = 2 * i;
        a[(r, 3)] = -x;
        a[(r, 4)] = -y;
        a[(r, 5)] = -1.0;
        a[(r, 6)] = yp * x;
        a[(r, 7)] = yp * y;
        a[(r, 8)] = yp;
        a[(r + 1, 0)] = x;
        a[(r + 1, 1)] = y;
        a[(r + 1, 2)] = 1.0;
        a[(r + 1, 6)] = -xp * x;
        a[(r + 1, 7)] = -xp * y;
        a[(r + 1, 8)] = -xp;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    // The singular values come back unsorted; order them to find the
    // nullspace vector and check that the nullspace is one-dimensional.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[i]
            .partial_cmp(&svd.singular_values[j])
            .unwrap()
    });
    let max_sv = svd.singular_values[order[order.len() - 1]];
    // Second-smallest singular value near zero means the nullspace is not
    // one-dimensional, i.e. the configuration is degenerate.
    if order.len() >= 2 && svd.singular_values[order[1]] < 1e-9 * max_sv.max(1.0) {
        return Err(GeometryError::DegenerateConfiguration(
            "rank-deficient DLT system".into(),
        ));
    }
    let hv = v_t.row(order[0]);
    let hn = Matrix3::new(
        hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8],
    );

    let h = t_dst.try_inverse().expect("normalization invertible") * hn * t_src;
    Homography::from_matrix(h, c.source_frame, c.target_frame)
}

fn has_collinear_triple(c: &CorrespondenceSet) -> bool {
    let pts = &c.pairs;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            for k in (j + 1)..pts.len() {
                let (a, b, p) = (pts[i][0], pts[j][0], pts[k][0]);
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                let scale = ((b[0] - a[0]).hypot(b[1] - a[1]))
                    * ((p[0] - a[0]).hypot(p[1] - a[1]));
                if cross.abs() < 1e-9 * scale.max(1.0) {
                    return true;
                }
            }
        }
    }
    false
}

fn hartley_normalize(pts: &[Vector2<f64>]) -> (Matrix3<f64>, Vec<Vector2<f64>>) {
    let n = pts.len() as f64;
    let centroid = pts.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = pts.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    let t = Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    );
    let out = pts.iter().map(|p| (p - centroid) * s).collect();
    (t, out)
}

/// A 4-DOF similarity transform (rotation, translation, isotropic scale)
/// between two plane frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub rotation: f64,
    pub translation: [f64; 2],
    pub scale: f64,
    pub source_frame: Frame,
    pub target_frame: Frame,
}

impl FrameTransform {
    pub fn identity(source_frame: Frame, target_frame: Frame) -> FrameTransform {
        FrameTransform {
            rotation: 0.0,
            translation: [0.0, 0.0],
            scale: 1.0,
            source_frame,
            target_frame,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == 0.0 && self.translation == [0.0, 0.0] && self.scale == 1.0
    }

    pub fn apply(&self, p: PlanePoint) -> PlanePoint {
        let (x, y) = self.apply_xy(p.x, p.y);
        PlanePoint::new(x, y, self.target_frame)
    }

    pub fn apply_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            self.scale * (c * x - s * y) + self.translation[0],
            self.scale * (s * x + c * y) + self.translation[1],
        )
    }

    /// Rotate and scale a vector quantity (velocity), without translation.
    pub fn apply_vector(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            self.scale * (c * vx - s * vy),
            self.scale * (s * vx + c * vy),
        )
    }

    pub fn inverse(&self) -> FrameTransform {
        let (s, c) = self.rotation.sin_cos();
        let inv_scale = 1.0 / self.scale;
        let tx = -inv_scale * (c * self.translation[0] + s * self.translation[1]);
        let ty = -inv_scale * (-s * self.translation[0] + c * self.translation[1]);
        FrameTransform {
            rotation: wrap_angle(-self.rotation),
            translation: [tx, ty],
            scale: inv_scale,
            source_frame: self.target_frame,
            target_frame: self.source_frame,
        }
    }

    /// Compose `self` after `inner`: the result maps inner.source to
    /// self.target.
    pub fn compose(&self, inner: &FrameTransform) -> FrameTransform {
        let (tx, ty) = self.apply_xy(inner.translation[0], inner.translation[1]);
        FrameTransform {
            rotation: wrap_angle(self.rotation + inner.rotation),
            translation: [tx, ty],
            scale: self.scale * inner.scale,
            source_frame: inner.source_frame,
            target_frame: self.target_frame,
        }
    }
}

/// Least-squares similarity transform from at least two non-identical point
/// correspondences.
pub fn estimate_frame_transform(c: &CorrespondenceSet) -> Result<FrameTransform, GeometryError> {
    if c.pairs.len() < 2 {
        return Err(GeometryError::TooFewCorrespondences {
            got: c.pairs.len(),
            need: 2,
        });
    }
    let n = c.pairs.len() as f64;
    let (mut scx, mut scy, mut tcx, mut tcy) = (0.0, 0.0, 0.0, 0.0);
    for p in &c.pairs {
        scx += p[0][0];
        scy += p[0][1];
        tcx += p[1][0];
        tcy += p[1][1];
    }
    let (scx, scy, tcx, tcy) = (scx / n, scy / n, tcx / n, tcy / n);

    let mut num_c = 0.0; // sum of dot products
    let mut num_s = 0.0; // sum of cross products
    let mut denom = 0.0;
    for p in &c.pairs {
        let (sx, sy) = (p[0][0] - scx, p[0][1] - scy);
        let (tx, ty) = (p[1][0] - tcx, p[1][1] - tcy);
        num_c += sx * tx + sy * ty;
        num_s += sx * ty - sy * tx;
        denom += sx * sx + sy * sy;
    }
    if denom < 1e-12 {
        return Err(GeometryError::DegenerateConfiguration(
            "all source points identical".into(),
        ));
    }
    let a = num_c / denom;
    let b = num_s / denom;
    let scale = (a * a + b * b).sqrt();
    if scale < 1e-12 {
        return Err(GeometryError::DegenerateConfiguration(
            "target points collapse to a single point".into(),
        ));
    }
    let rotation = b.atan2(a);
    let (s, cc) = rotation.sin_cos();
    let tx = tcx - scale * (cc * scx - s * scy);
    let ty = tcy - scale * (s * scx + cc * scy);
    Ok(FrameTransform {
        rotation,
        translation: [tx, ty],
        scale,
        source_frame: c.source_frame,
        target_frame: c.target_frame,
    })
}

/// Parameters of the side-visibility footprint compensation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FootprintParams {
    /// Linear compensation coefficient applied to box width.
    pub coefficient: f64,
    /// View angle above which compensation activates, radians.
    pub activation_threshold: f64,
    /// Direction of the camera optical axis in the Road frame, radians.
    pub optical_axis: f64,
}

impl Default for FootprintParams {
    fn default() -> FootprintParams {
        FootprintParams {
            coefficient: 0.5,
            activation_threshold: 10.0_f64.to_radians(),
            optical_axis: 0.0,
        }
    }
}

/// Lower front center point of a vehicle bounding box: the center of the
/// lower edge, shifted along u when the vehicle is seen at an angle and its
/// side is visible. The shift is linear in box width and the sine of the
/// view angle, signed toward the leading edge.
pub fn footprint_point(
    b: &BoundingBox,
    heading: Option<f64>,
    params: &FootprintParams,
) -> ImagePoint {
    let u = 0.5 * (b.p1.u + b.p2.u);
    let v = b.p2.v;
    let Some(heading) = heading else {
        return ImagePoint::new(u, v);
    };
    // Fold the heading/axis difference to (-pi/2, pi/2]: driving toward or
    // away from the camera both show no side.
    let mut d = wrap_angle(heading - params.optical_axis);
    if d > std::f64::consts::FRAC_PI_2 {
        d -= std::f64::consts::PI;
    } else if d <= -std::f64::consts::FRAC_PI_2 {
        d += std::f64::consts::PI;
    }
    if d.abs() <= params.activation_threshold {
        return ImagePoint::new(u, v);
    }
    ImagePoint::new(u + params.coefficient * b.width() * d.sin(), v)
}

/// Registry of frame transforms; resolves a transform between any two
/// registered frames by chaining (at most one intermediate hop).
#[derive(Debug, Clone, Default)]
pub struct TransformRegistry {
    transforms: Vec<FrameTransform>,
}

impl TransformRegistry {
    pub fn new() -> TransformRegistry {
        TransformRegistry::default()
    }

    pub fn register(&mut self, t: FrameTransform) {
        self.transforms.push(t);
    }

    pub fn resolve(&self, source: Frame, target: Frame) -> Result<FrameTransform, GeometryError> {
        if source == target {
            return Ok(FrameTransform::identity(source, target));
        }
        let mut edges: Vec<FrameTransform> = Vec::new();
        for t in &self.transforms {
            edges.push(*t);
            edges.push(t.inverse());
        }
        for t in &edges {
            if t.source_frame == source && t.target_frame == target {
                return Ok(*t);
            }
        }
        // One intermediate hop is enough for the three plane frames.
        for t1 in &edges {
            if t1.source_frame != source {
                continue;
            }
            for t2 in &edges {
                if t2.source_frame == t1.target_frame && t2.target_frame == target {
                    return Ok(t2.compose(t1));
                }
            }
        }
        Err(GeometryError::UnknownFrame(source, target))
    }
}
