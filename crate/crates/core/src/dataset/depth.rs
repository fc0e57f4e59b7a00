//! Depth-image back-projection and the 3-channel geometric HHA encoding
//! (disparity, height above ground, angle of the surface normal to
//! gravity).

use super::DataError;
use crate::geometry::{CameraCalib, Point3, PointCloud};
use crate::ground::GroundPlane;
use std::f64::consts::PI;

/// Row-major single-channel image; values <= 0 are invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// How the image samples encode range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthKind {
    /// Samples are metric depth along the optical axis.
    Depth,
    /// Samples are stereo disparity in pixels; depth = focal * baseline /
    /// disparity.
    Disparity { baseline: f64 },
}

/// Fixed channel scaling ranges for [`encode_hha`]: disparity in pixels,
/// height in meters, normal angle in radians.
pub const HHA_RANGES: [(f64, f64); 3] = [(0.0, 64.0), (-1.0, 4.0), (0.0, PI)];

/// Back-projects one pixel. Assumes the projection rows are
/// `[f 0 cu t1; 0 f cv t2; 0 0 1 t3]`.
fn back_project(calib: &CameraCalib, u: f64, v: f64, z: f64) -> Point3 {
    let p = &calib.p;
    let w = z + p[2][3];
    let x = (u * w - p[0][2] * z - p[0][3]) / p[0][0];
    let y = (v * w - p[1][2] * z - p[1][3]) / p[1][1];
    Point3::raw(x, y, z)
}

fn depth_of(sample: f32, kind: DepthKind, focal: f64) -> Option<f64> {
    if !(sample.is_finite() && sample > 0.0) {
        return None;
    }
    match kind {
        DepthKind::Depth => Some(sample as f64),
        DepthKind::Disparity { baseline } => Some(focal * baseline / sample as f64),
    }
}

/// Back-projects every valid pixel through the pinhole model; invalid
/// (zero or negative) samples are skipped.
pub fn depth_to_cloud(
    img: &DepthImage,
    calib: &CameraCalib,
    kind: DepthKind,
) -> Result<PointCloud, DataError> {
    if img.width != calib.width as usize || img.height != calib.height as usize {
        return Err(DataError::DimensionMismatch(format!(
            "image {}x{} vs calibration {}x{}",
            img.width, img.height, calib.width, calib.height
        )));
    }
    if let DepthKind::Disparity { baseline } = kind {
        if !(baseline > 0.0) || !(calib.p[0][0] > 0.0) {
            return Err(DataError::Invalid(
                "disparity mode needs positive focal length and baseline".into(),
            ));
        }
    }
    let mut points = Vec::new();
    for r in 0..img.height {
        for c in 0..img.width {
            if let Some(z) = depth_of(img.at(r, c), kind, calib.p[0][0]) {
                points.push(back_project(calib, c as f64, r as f64, z));
            }
        }
    }
    Ok(PointCloud::new(points))
}

/// 3-channel byte image produced by [`encode_hha`].
#[derive(Debug, Clone, PartialEq)]
pub struct HhaImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl HhaImage {
    pub fn at(&self, row: usize, col: usize) -> [u8; 3] {
        self.data[row * self.width + col]
    }
}

fn scale_to_byte(v: f64, range: (f64, f64)) -> u8 {
    (((v - range.0) / (range.1 - range.0)).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a depth image into disparity, height above the road plane and
/// the angle between the local surface normal (central differences over the
/// back-projected neighborhood) and the upward gravity direction. Invalid
/// pixels, image borders and pixels with invalid neighbors emit 0 in all
/// channels; channels scale linearly over [`HHA_RANGES`].
pub fn encode_hha(
    img: &DepthImage,
    calib: &CameraCalib,
    plane: &GroundPlane,
    baseline: f64,
) -> Result<HhaImage, DataError> {
    if img.width != calib.width as usize || img.height != calib.height as usize {
        return Err(DataError::DimensionMismatch(format!(
            "image {}x{} vs calibration {}x{}",
            img.width, img.height, calib.width, calib.height
        )));
    }
    let focal = calib.p[0][0];
    if !(focal > 0.0 && baseline > 0.0) {
        return Err(DataError::Invalid(
            "HHA needs positive focal length and baseline".into(),
        ));
    }

    // back-project once; None marks invalid pixels
    let pts: Vec<Option<Point3>> = (0..img.height)
        .flat_map(|r| (0..img.width).map(move |c| (r, c)))
        .map(|(r, c)| {
            depth_of(img.at(r, c), DepthKind::Depth, focal)
                .map(|z| back_project(calib, c as f64, r as f64, z))
        })
        .collect();
    let at = |r: usize, c: usize| pts[r * img.width + c];

    let up = Point3::raw(0.0, -1.0, 0.0);
    let mut data = vec![[0u8; 3]; img.width * img.height];
    for r in 0..img.height {
        for c in 0..img.width {
            if r == 0 || c == 0 || r + 1 == img.height || c + 1 == img.width {
                continue; // border sentinel
            }
            let (Some(p), Some(px0), Some(px1), Some(py0), Some(py1)) = (
                at(r, c),
                at(r, c - 1),
                at(r, c + 1),
                at(r - 1, c),
                at(r + 1, c),
            ) else {
                continue; // invalid neighborhood sentinel
            };

            let disparity = focal * baseline / p.z;
            let height = plane.height_along_gravity(p);

            let v1 = px1.sub(px0);
            let v2 = py1.sub(py0);
            let mut n = v1.cross(v2);
            let len = n.norm();
            if len < 1e-12 {
                continue;
            }
            n = n.scale(1.0 / len);
            // orient toward the camera at the origin
            if n.dot(p) > 0.0 {
                n = n.scale(-1.0);
            }
            let angle = n.dot(up).clamp(-1.0, 1.0).acos();

            data[r * img.width + c] = [
                scale_to_byte(disparity, HHA_RANGES[0]),
                scale_to_byte(height, HHA_RANGES[1]),
                scale_to_byte(angle, HHA_RANGES[2]),
            ];
        }
    }
    Ok(HhaImage {
        width: img.width,
        height: img.height,
        data,
    })
}
