//! Geometric primitives: points, oriented 3D boxes, rectangles, camera
//! projection and box-regression parameterization.
//!
//! Coordinate frame: left-handed camera frame with X right, Y down (along
//! gravity) and Z forward along the viewing direction. Box rotations are
//! yaw-only, about the gravity axis.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Polygon intersections with area below this are treated as empty.
/// Resolves collinear-edge degeneracies in the footprint clipping.
const AREA_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(&'static str),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("rect frames differ: {0:?} vs {1:?}")]
    FrameMismatch(Frame2D, Frame2D),
    #[error("all box corners behind the camera")]
    BehindCamera,
    #[error("invalid calibration: {0}")]
    InvalidCalib(&'static str),
}

/// A 3D point in the camera frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { x, y, z })
    }

    /// Construction without the finiteness check, for hot loops over data
    /// that is already validated.
    pub const fn raw(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(self, o: Point3) -> Point3 {
        Point3::raw(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(self, o: Point3) -> Point3 {
        Point3::raw(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, s: f64) -> Point3 {
        Point3::raw(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::raw(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Frame tag for point clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloudFrame {
    /// Left-handed, X right, Y down (gravity), Z forward.
    CameraLeftHanded,
}

/// An ordered point cloud. May be empty; iteration order is stable.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: CloudFrame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            frame: CloudFrame::CameraLeftHanded,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// An oriented 3D box: center, per-axis size and yaw about the gravity axis.
///
/// `azimuth` is normalized into `[0, 2π)`. Sizes are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub center: Point3,
    /// (sx, sy, sz) extents in meters.
    pub size: [f64; 3],
    /// Rotation about the gravity (Y) axis, radians in [0, 2π).
    pub azimuth: f64,
    pub class_id: Option<u32>,
    pub template_id: Option<u32>,
}

impl OrientedBox3D {
    pub fn new(center: Point3, size: [f64; 3], azimuth: f64) -> Result<Self, GeometryError> {
        if !size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(GeometryError::InvalidBox("sizes must be positive"));
        }
        if !azimuth.is_finite() {
            return Err(GeometryError::InvalidBox("azimuth must be finite"));
        }
        if !(center.x.is_finite() && center.y.is_finite() && center.z.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            center,
            size,
            azimuth: azimuth.rem_euclid(TAU),
            class_id: None,
            template_id: None,
        })
    }

    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = Some(class_id);
        self
    }

    pub fn with_template(mut self, template_id: u32) -> Self {
        self.template_id = Some(template_id);
        self
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// Vertical extent `[y_top, y_bottom]` (Y grows downward, so the bottom
    /// face has the larger coordinate).
    pub fn y_range(&self) -> (f64, f64) {
        let h = self.size[1] * 0.5;
        (self.center.y - h, self.center.y + h)
    }

    /// Footprint corners in the ground plane (x, z), counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (c, s) = (self.azimuth.cos(), self.azimuth.sin());
        let (hx, hz) = (self.size[0] * 0.5, self.size[2] * 0.5);
        let rot = |lx: f64, lz: f64| {
            [
                self.center.x + lx * c + lz * s,
                self.center.z - lx * s + lz * c,
            ]
        };
        [rot(hx, hz), rot(-hx, hz), rot(-hx, -hz), rot(hx, -hz)]
    }

    /// All eight corners.
    pub fn corners(&self) -> [Point3; 8] {
        let fp = self.footprint();
        let (y_top, y_bot) = self.y_range();
        let mut out = [Point3::raw(0.0, 0.0, 0.0); 8];
        for (i, xz) in fp.iter().enumerate() {
            out[i] = Point3::raw(xz[0], y_top, xz[1]);
            out[i + 4] = Point3::raw(xz[0], y_bot, xz[1]);
        }
        out
    }

    /// Whether a world point lies inside the box (boundary inclusive).
    pub fn contains(&self, p: Point3) -> bool {
        let (y_top, y_bot) = self.y_range();
        if p.y < y_top || p.y > y_bot {
            return false;
        }
        let (c, s) = (self.azimuth.cos(), self.azimuth.sin());
        let dx = p.x - self.center.x;
        let dz = p.z - self.center.z;
        // inverse of the footprint rotation
        let lx = dx * c - dz * s;
        let lz = dx * s + dz * c;
        lx.abs() <= self.size[0] * 0.5 && lz.abs() <= self.size[2] * 0.5
    }

    /// For yaw angles at multiples of 90 degrees, the axis-aligned half
    /// extents (hx, hz) of the footprint. `None` for other yaws.
    pub fn aligned_half_extents(&self, tol: f64) -> Option<(f64, f64)> {
        let m = self.azimuth.rem_euclid(PI / 2.0);
        let frac = m.min(PI / 2.0 - m);
        if frac > tol {
            return None;
        }
        // nearest multiple of 90 degrees
        let quarter = (self.azimuth / (PI / 2.0)).round() as i64 % 4;
        if quarter % 2 == 0 {
            Some((self.size[0] * 0.5, self.size[2] * 0.5))
        } else {
            Some((self.size[2] * 0.5, self.size[0] * 0.5))
        }
    }

    /// Same box grown by `margin` meters outward on every face.
    pub fn expanded(&self, margin: f64) -> OrientedBox3D {
        let mut b = *self;
        for s in &mut b.size {
            *s += 2.0 * margin;
        }
        b
    }
}

/// Frame tag for 2D rectangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame2D {
    /// Image pixels, origin top-left.
    Image,
    /// Bird's-eye view, meters in (x, z).
    Bev,
}

/// Axis-aligned rectangle with a frame tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect2D {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub frame: Frame2D,
}

impl Rect2D {
    pub fn new(min: [f64; 2], max: [f64; 2], frame: Frame2D) -> Result<Self, GeometryError> {
        if max[0] < min[0] || max[1] < min[1] {
            return Err(GeometryError::InvalidBox("rect max must be >= min"));
        }
        Ok(Self { min, max, frame })
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Pinhole camera: 3x4 projection matrix plus image bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalib {
    /// Row-major 3x4 projection matrix.
    pub p: [[f64; 4]; 3],
    pub width: u32,
    pub height: u32,
}

impl CameraCalib {
    pub fn new(p: [[f64; 4]; 3], width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCalib("image dimensions must be positive"));
        }
        if !p.iter().flatten().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidCalib("matrix entries must be finite"));
        }
        Ok(Self { p, width, height })
    }

    /// Simple pinhole with focal length `f` and principal point (cu, cv).
    pub fn pinhole(f: f64, cu: f64, cv: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            [[f, 0.0, cu, 0.0], [0.0, f, cv, 0.0], [0.0, 0.0, 1.0, 0.0]],
            width,
            height,
        )
    }

    /// Projects a point; `None` when it lies on or behind the camera plane.
    pub fn project(&self, pt: Point3) -> Option<[f64; 2]> {
        let h = [pt.x, pt.y, pt.z, 1.0];
        let row = |r: &[f64; 4]| r[0] * h[0] + r[1] * h[1] + r[2] * h[2] + r[3];
        let w = row(&self.p[2]);
        if w <= 0.0 {
            return None;
        }
        Some([row(&self.p[0]) / w, row(&self.p[1]) / w])
    }

    /// Image row of the horizon: the projection of the point at infinity
    /// along the viewing direction.
    pub fn horizon_row(&self) -> f64 {
        // direction (0, 0, 1, 0) projects to p[r][2] / p[2][2]
        self.p[1][2] / self.p[2][2]
    }
}

/// Scale-invariant 3D box regression targets: translation normalized by the
/// proposal size, sizes as log-ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget3D {
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
    pub t_sx: f64,
    pub t_sy: f64,
    pub t_sz: f64,
}

// ---------------------------------------------------------------------------
// IoU
// ---------------------------------------------------------------------------

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc.abs() * 0.5
}

/// Sutherland-Hodgman clip of convex `subject` against the half-plane on the
/// left of directed edge (a, b).
fn clip_halfplane(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2], out: &mut Vec<[f64; 2]>) {
    out.clear();
    let n = subject.len();
    for i in 0..n {
        let cur = subject[i];
        let nxt = subject[(i + 1) % n];
        let dc = cross2(a, b, cur);
        let dn = cross2(a, b, nxt);
        if dc >= 0.0 {
            out.push(cur);
        }
        if (dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0) {
            let t = dc / (dc - dn);
            out.push([cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])]);
        }
    }
}

/// Area of the intersection of two convex CCW polygons.
fn convex_intersection_area(subject: &[[f64; 2]; 4], clip: &[[f64; 2]; 4]) -> f64 {
    let mut poly: Vec<[f64; 2]> = subject.to_vec();
    let mut scratch: Vec<[f64; 2]> = Vec::with_capacity(8);
    for i in 0..4 {
        if poly.is_empty() {
            return 0.0;
        }
        clip_halfplane(&poly, clip[i], clip[(i + 1) % 4], &mut scratch);
        std::mem::swap(&mut poly, &mut scratch);
    }
    polygon_area(&poly)
}

/// 3D intersection-over-union for yaw-rotated boxes sharing the gravity axis.
///
/// The intersection is the clipped footprint overlap times the overlap of the
/// vertical extents; exact for this rotation class up to floating point.
pub fn iou_3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let (a_top, a_bot) = a.y_range();
    let (b_top, b_bot) = b.y_range();
    let dy = a_bot.min(b_bot) - a_top.max(b_top);
    if dy <= 0.0 {
        return 0.0;
    }
    let mut footprint = convex_intersection_area(&a.footprint(), &b.footprint());
    if footprint < AREA_EPS {
        footprint = 0.0;
    }
    let inter = footprint * dy;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection-over-union of two rectangles in the same frame.
pub fn iou_2d(a: &Rect2D, b: &Rect2D) -> Result<f64, GeometryError> {
    if a.frame != b.frame {
        return Err(GeometryError::FrameMismatch(a.frame, b.frame));
    }
    let w = a.max[0].min(b.max[0]) - a.min[0].max(b.min[0]);
    let h = a.max[1].min(b.max[1]) - a.min[1].max(b.min[1]);
    if w <= 0.0 || h <= 0.0 {
        return Ok(0.0);
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Bounding rectangle of the eight box corners on the image plane, clipped to
/// the image bounds. Corners behind the camera are skipped; an error is
/// returned only when no corner is visible.
pub fn project_box(b: &OrientedBox3D, calib: &CameraCalib) -> Result<Rect2D, GeometryError> {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    let mut visible = false;
    for corner in b.corners() {
        if let Some(uv) = calib.project(corner) {
            visible = true;
            min[0] = min[0].min(uv[0]);
            min[1] = min[1].min(uv[1]);
            max[0] = max[0].max(uv[0]);
            max[1] = max[1].max(uv[1]);
        }
    }
    if !visible {
        return Err(GeometryError::BehindCamera);
    }
    let (w, h) = (calib.width as f64, calib.height as f64);
    Rect2D::new(
        [min[0].clamp(0.0, w), min[1].clamp(0.0, h)],
        [max[0].clamp(0.0, w), max[1].clamp(0.0, h)],
        Frame2D::Image,
    )
}

/// Minimal axis-aligned rectangle in (x, z) containing the rotated footprint.
pub fn bev_footprint(b: &OrientedBox3D) -> Rect2D {
    let fp = b.footprint();
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for c in fp {
        min[0] = min[0].min(c[0]);
        min[1] = min[1].min(c[1]);
        max[0] = max[0].max(c[0]);
        max[1] = max[1].max(c[1]);
    }
    Rect2D {
        min,
        max,
        frame: Frame2D::Bev,
    }
}

/// Regression targets mapping `proposal` onto `gt`.
pub fn encode_targets(proposal: &OrientedBox3D, gt: &OrientedBox3D) -> RegressionTarget3D {
    let p = proposal.center;
    let g = gt.center;
    RegressionTarget3D {
        t_x: (g.x - p.x) / proposal.size[0],
        t_y: (g.y - p.y) / proposal.size[1],
        t_z: (g.z - p.z) / proposal.size[2],
        t_sx: (gt.size[0] / proposal.size[0]).ln(),
        t_sy: (gt.size[1] / proposal.size[1]).ln(),
        t_sz: (gt.size[2] / proposal.size[2]).ln(),
    }
}

/// Inverse of [`encode_targets`]; the azimuth and ids are carried over from
/// the proposal.
pub fn decode_targets(t: &RegressionTarget3D, proposal: &OrientedBox3D) -> OrientedBox3D {
    let p = proposal.center;
    let mut out = *proposal;
    out.center = Point3::raw(
        p.x + t.t_x * proposal.size[0],
        p.y + t.t_y * proposal.size[1],
        p.z + t.t_z * proposal.size[2],
    );
    out.size = [
        proposal.size[0] * t.t_sx.exp(),
        proposal.size[1] * t.t_sy.exp(),
        proposal.size[2] * t.t_sz.exp(),
    ];
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cube(cx: f64, cy: f64, cz: f64) -> OrientedBox3D {
        OrientedBox3D::new(Point3::raw(cx, cy, cz), [1.0, 1.0, 1.0], 0.0).unwrap()
    }

    #[test]
    fn box_invariants_rejected() {
        assert!(OrientedBox3D::new(Point3::raw(0.0, 0.0, 0.0), [0.0, 1.0, 1.0], 0.0).is_err());
        assert!(OrientedBox3D::new(Point3::raw(0.0, 0.0, 0.0), [1.0, 1.0, 1.0], f64::NAN).is_err());
        // azimuth normalized into [0, 2pi)
        let b = OrientedBox3D::new(Point3::raw(0.0, 0.0, 0.0), [1.0, 1.0, 1.0], -PI).unwrap();
        assert!((b.azimuth - PI).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_identity_and_disjoint() {
        let a = cube(0.0, 0.0, 10.0);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        // disjoint vertical extents
        let b = cube(0.0, 5.0, 10.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
        // disjoint footprints
        let c = cube(8.0, 0.0, 10.0);
        assert_eq!(iou_3d(&a, &c), 0.0);
    }

    #[test]
    fn iou_3d_offset_unit_cubes() {
        let a = cube(0.0, 0.0, 0.0);
        let b = cube(0.5, 0.0, 0.0);
        // intersection 0.5, union 1.5
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_3d(&b, &a) - iou_3d(&a, &b)).abs() < 1e-15);
    }

    #[test]
    fn iou_3d_axis_aligned_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let quarter = if rng.gen_bool(0.5) { 0.0 } else { PI / 2.0 };
            let a = OrientedBox3D::new(
                Point3::raw(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)),
                [rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)],
                quarter,
            )
            .unwrap();
            let b = OrientedBox3D::new(
                Point3::raw(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)),
                [rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)],
                0.0,
            )
            .unwrap();
            let expect = axis_aligned_iou(&a, &b);
            assert!(
                (iou_3d(&a, &b) - expect).abs() < 1e-12,
                "clipped {} vs closed form {}",
                iou_3d(&a, &b),
                expect
            );
        }
    }

    /// Closed-form IoU for boxes whose footprints are axis aligned.
    fn axis_aligned_iou(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
        let ext = |bx: &OrientedBox3D| {
            let (hx, hz) = bx.aligned_half_extents(1e-9).expect("aligned");
            (
                [bx.center.x - hx, bx.center.x + hx],
                bx.y_range(),
                [bx.center.z - hz, bx.center.z + hz],
            )
        };
        let (ax, ay, az) = ext(a);
        let (bx, by, bz) = ext(b);
        let ov = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| (hi1.min(hi2) - lo1.max(lo2)).max(0.0);
        let inter = ov(ax[0], ax[1], bx[0], bx[1])
            * ov(ay.0, ay.1, by.0, by.1)
            * ov(az[0], az[1], bz[0], bz[1]);
        let union = a.volume() + b.volume() - inter;
        inter / union
    }

    /// Monte-Carlo IoU oracle: uniform samples in the joint bounding box,
    /// membership tested by inverse rotation (independent of the clipping
    /// path under test).
    fn mc_iou(a: &OrientedBox3D, b: &OrientedBox3D, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in a.corners().iter().chain(b.corners().iter()) {
            for (i, v) in [c.x, c.y, c.z].iter().enumerate() {
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
        }
        let (mut in_a, mut in_b, mut in_both) = (0u64, 0u64, 0u64);
        for _ in 0..samples {
            let p = Point3::raw(
                rng.gen_range(lo[0]..hi[0]),
                rng.gen_range(lo[1]..hi[1]),
                rng.gen_range(lo[2]..hi[2]),
            );
            let ia = a.contains(p);
            let ib = b.contains(p);
            in_a += ia as u64;
            in_b += ib as u64;
            in_both += (ia && ib) as u64;
        }
        let union = in_a + in_b - in_both;
        if union == 0 {
            0.0
        } else {
            in_both as f64 / union as f64
        }
    }

    #[test]
    fn iou_3d_rotated_pairs_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let a = OrientedBox3D::new(
                Point3::raw(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)),
                [rng.gen_range(1.0..4.0), rng.gen_range(1.0..2.5), rng.gen_range(1.0..3.0)],
                rng.gen_range(0.0..TAU),
            )
            .unwrap();
            let b = OrientedBox3D::new(
                Point3::raw(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)),
                [rng.gen_range(1.0..4.0), rng.gen_range(1.0..2.5), rng.gen_range(1.0..3.0)],
                rng.gen_range(0.0..TAU),
            )
            .unwrap();
            let est = mc_iou(&a, &b, 200_000, &mut rng);
            assert!(
                (iou_3d(&a, &b) - est).abs() < 0.015,
                "exact {} vs mc {}",
                iou_3d(&a, &b),
                est
            );
        }
    }

    #[test]
    fn iou_2d_basics() {
        let r = |x0, y0, x1, y1| Rect2D::new([x0, y0], [x1, y1], Frame2D::Image).unwrap();
        let a = r(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou_2d(&a, &a).unwrap(), 1.0);
        assert_eq!(iou_2d(&a, &r(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let off = r(0.5, 0.0, 1.5, 1.0);
        assert!((iou_2d(&a, &off).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let bev = Rect2D::new([0.0, 0.0], [1.0, 1.0], Frame2D::Bev).unwrap();
        assert!(matches!(iou_2d(&a, &bev), Err(GeometryError::FrameMismatch(_, _))));
    }

    #[test]
    fn project_box_pinhole() {
        let calib = CameraCalib::pinhole(700.0, 600.0, 180.0, 1200, 370).unwrap();
        let b = cube(0.0, 0.0, 10.0);
        let rect = project_box(&b, &calib).unwrap();
        // nearest corners at z = 9.5 dominate the bound
        let du = 0.5 * 700.0 / 9.5;
        assert!((rect.min[0] - (600.0 - du)).abs() < 1e-9);
        assert!((rect.max[0] - (600.0 + du)).abs() < 1e-9);
        assert!((rect.min[1] - (180.0 - du)).abs() < 1e-9);
        assert!((rect.max[1] - (180.0 + du)).abs() < 1e-9);
    }

    #[test]
    fn project_box_clips_to_image() {
        let calib = CameraCalib::pinhole(700.0, 600.0, 180.0, 1200, 370).unwrap();
        // box far to the left straddles the u = 0 border
        let b = OrientedBox3D::new(Point3::raw(-9.0, 0.0, 10.0), [3.0, 1.0, 1.0], 0.0).unwrap();
        let rect = project_box(&b, &calib).unwrap();
        assert_eq!(rect.min[0], 0.0);
        assert!(rect.max[0] > 0.0);
    }

    #[test]
    fn project_box_behind_camera_errors() {
        let calib = CameraCalib::pinhole(700.0, 600.0, 180.0, 1200, 370).unwrap();
        let b = cube(0.0, 0.0, -10.0);
        assert_eq!(project_box(&b, &calib), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn project_box_matches_per_corner_oracle() {
        let calib = CameraCalib::new(
            [
                [721.5, 0.0, 609.6, 44.9],
                [0.0, 721.5, 172.9, 0.2],
                [0.0, 0.0, 1.0, 0.003],
            ],
            1242,
            375,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let b = OrientedBox3D::new(
                Point3::raw(rng.gen_range(-10.0..10.0), rng.gen_range(-1.0..2.0), rng.gen_range(4.0..40.0)),
                [rng.gen_range(0.5..4.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..4.0)],
                rng.gen_range(0.0..TAU),
            )
            .unwrap();
            let rect = project_box(&b, &calib).unwrap();
            // independent per-corner multiply
            let mut min = [f64::INFINITY; 2];
            let mut max = [f64::NEG_INFINITY; 2];
            for c in b.corners() {
                let w = calib.p[2][0] * c.x + calib.p[2][1] * c.y + calib.p[2][2] * c.z + calib.p[2][3];
                if w <= 0.0 {
                    continue;
                }
                let u = (calib.p[0][0] * c.x + calib.p[0][1] * c.y + calib.p[0][2] * c.z + calib.p[0][3]) / w;
                let v = (calib.p[1][0] * c.x + calib.p[1][1] * c.y + calib.p[1][2] * c.z + calib.p[1][3]) / w;
                min[0] = min[0].min(u);
                min[1] = min[1].min(v);
                max[0] = max[0].max(u);
                max[1] = max[1].max(v);
            }
            assert!((rect.min[0] - min[0].clamp(0.0, 1242.0)).abs() < 1e-9);
            assert!((rect.max[1] - max[1].clamp(0.0, 375.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn bev_footprint_cases() {
        let b = OrientedBox3D::new(Point3::raw(0.0, 0.0, 0.0), [4.0, 2.0, 2.0], 0.0).unwrap();
        let r = bev_footprint(&b);
        assert!((r.width() - 4.0).abs() < 1e-12 && (r.height() - 2.0).abs() < 1e-12);

        let b90 = OrientedBox3D::new(Point3::raw(0.0, 0.0, 0.0), [4.0, 2.0, 2.0], PI / 2.0).unwrap();
        let r90 = bev_footprint(&b90);
        assert!((r90.width() - 2.0).abs() < 1e-12 && (r90.height() - 4.0).abs() < 1e-12);

        let sq = OrientedBox3D::new(Point3::raw(0.0, 0.0, 0.0), [2.0, 1.0, 2.0], PI / 4.0).unwrap();
        let rs = bev_footprint(&sq);
        assert!((rs.width() - 2.0 * 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bev_footprint_never_smaller_than_rotated_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let b = OrientedBox3D::new(
                Point3::raw(0.0, 0.0, 0.0),
                [rng.gen_range(0.5..4.0), 1.0, rng.gen_range(0.5..4.0)],
                rng.gen_range(0.0..TAU),
            )
            .unwrap();
            let aabb = bev_footprint(&b).area();
            let fp = b.size[0] * b.size[2];
            assert!(aabb >= fp - 1e-9);
        }
    }

    #[test]
    fn encode_targets_cases() {
        let p = OrientedBox3D::new(Point3::raw(0.0, 0.0, 10.0), [2.0, 2.0, 2.0], 0.0).unwrap();
        let t0 = encode_targets(&p, &p);
        assert_eq!(
            (t0.t_x, t0.t_y, t0.t_z, t0.t_sx, t0.t_sy, t0.t_sz),
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );

        let g = OrientedBox3D::new(Point3::raw(1.0, 0.0, 10.0), [4.0, 2.0, 2.0], 0.0).unwrap();
        let t = encode_targets(&p, &g);
        assert!((t.t_x - 0.5).abs() < 1e-15);
        assert!((t.t_sx - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!((t.t_y, t.t_z, t.t_sy, t.t_sz), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn decode_targets_cases() {
        let p = OrientedBox3D::new(Point3::raw(1.0, -0.5, 8.0), [2.0, 1.5, 3.0], 0.3).unwrap();
        let zero = RegressionTarget3D {
            t_x: 0.0,
            t_y: 0.0,
            t_z: 0.0,
            t_sx: 0.0,
            t_sy: 0.0,
            t_sz: 0.0,
        };
        assert_eq!(decode_targets(&zero, &p), p);

        let t = RegressionTarget3D {
            t_sx: 2.0f64.ln(),
            ..zero
        };
        assert!((decode_targets(&t, &p).size[0] - 4.0).abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = OrientedBox3D> {
            (
                (-20.0..20.0f64, -3.0..3.0f64, 0.1..60.0f64),
                (0.2..6.0f64, 0.2..3.0f64, 0.2..6.0f64),
                0.0..TAU,
            )
                .prop_map(|((x, y, z), (sx, sy, sz), az)| {
                    OrientedBox3D::new(Point3::raw(x, y, z), [sx, sy, sz], az).unwrap()
                })
        }

        proptest! {
            #[test]
            fn iou_3d_symmetric_bounded_and_one_on_self(a in arb_box(), b in arb_box()) {
                let ab = iou_3d(&a, &b);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert!((ab - iou_3d(&b, &a)).abs() < 1e-12);
                prop_assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
            }

            #[test]
            fn regression_targets_round_trip(p in arb_box(), g in arb_box()) {
                let back = decode_targets(&encode_targets(&p, &g), &p);
                for (got, want) in [
                    (back.center.x, g.center.x),
                    (back.center.y, g.center.y),
                    (back.center.z, g.center.z),
                    (back.size[0], g.size[0]),
                    (back.size[1], g.size[1]),
                    (back.size[2], g.size[2]),
                ] {
                    prop_assert!((got - want).abs() / want.abs().max(1.0) < 1e-12);
                }
            }

            #[test]
            fn bev_footprint_covers_rotated_area(b in arb_box()) {
                prop_assert!(bev_footprint(&b).area() >= b.size[0] * b.size[2] - 1e-9);
            }
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..2000 {
            let az = rng.gen_range(0.0..TAU);
            let p = OrientedBox3D::new(
                Point3::raw(rng.gen_range(-20.0..20.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.1..60.0)),
                [rng.gen_range(0.2..6.0), rng.gen_range(0.2..3.0), rng.gen_range(0.2..6.0)],
                az,
            )
            .unwrap();
            let g = OrientedBox3D::new(
                Point3::raw(rng.gen_range(-20.0..20.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.1..60.0)),
                [rng.gen_range(0.2..6.0), rng.gen_range(0.2..3.0), rng.gen_range(0.2..6.0)],
                az,
            )
            .unwrap();
            let back = decode_targets(&encode_targets(&p, &g), &p);
            for (got, want) in [
                (back.center.x, g.center.x),
                (back.center.y, g.center.y),
                (back.center.z, g.center.z),
                (back.size[0], g.size[0]),
                (back.size[1], g.size[1]),
                (back.size[2], g.size[2]),
            ] {
                let denom = want.abs().max(1.0);
                assert!((got - want).abs() / denom < 1e-12);
            }
        }
    }
}
