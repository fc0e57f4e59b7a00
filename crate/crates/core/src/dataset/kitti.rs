//! KITTI object-benchmark file formats: velodyne point binaries, label text
//! files and calibration files.

use super::{malformed, DataError};
use crate::geometry::{CameraCalib, GeometryError, OrientedBox3D, Point3, PointCloud};
use std::fs;
use std::io::Write;
use std::path::Path;

/// One label line. Dimensions are KITTI order (height, width, length) and
/// the location is the bottom-center of the box in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    /// left, top, right, bottom in pixels.
    pub bbox: [f64; 4],
    /// (h, w, l) meters.
    pub dimensions: [f64; 3],
    /// Bottom-center (x, y, z) meters, camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

/// Fixed class-name mapping used across the artifact.
pub fn class_id_of(kind: &str) -> Option<u32> {
    match kind.to_ascii_lowercase().as_str() {
        "car" => Some(0),
        "pedestrian" => Some(1),
        "cyclist" => Some(2),
        _ => None,
    }
}

pub fn class_name_of(id: u32) -> &'static str {
    match id {
        0 => "Car",
        1 => "Pedestrian",
        2 => "Cyclist",
        _ => "Unknown",
    }
}

impl KittiLabel {
    pub fn is_dont_care(&self) -> bool {
        self.kind.eq_ignore_ascii_case("dontcare")
    }

    /// Internal oriented box: (l, h, w) maps to (sx, sy, sz) and the
    /// bottom-center location is lifted to the box center.
    pub fn to_box(&self) -> Result<OrientedBox3D, GeometryError> {
        let (h, w, l) = (self.dimensions[0], self.dimensions[1], self.dimensions[2]);
        let center = Point3::new(
            self.location[0],
            self.location[1] - h * 0.5,
            self.location[2],
        )?;
        let mut b = OrientedBox3D::new(center, [l, h, w], self.rotation_y)?;
        b.class_id = class_id_of(&self.kind);
        Ok(b)
    }
}

/// Parses a KITTI label file. DontCare lines are parsed and returned; use
/// [`labels_to_gt`] to obtain the ground-truth box list without them.
pub fn read_labels(path: &Path) -> Result<Vec<KittiLabel>, DataError> {
    let text = fs::read_to_string(path)?;
    parse_labels(&text, &path.display().to_string())
}

pub fn parse_labels(text: &str, source_name: &str) -> Result<Vec<KittiLabel>, DataError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(malformed(
                source_name,
                lineno + 1,
                format!("expected 15 or 16 fields, got {}", fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64, DataError> {
            fields[i].parse().map_err(|_| {
                malformed(source_name, lineno + 1, format!("bad number {:?}", fields[i]))
            })
        };
        let label = KittiLabel {
            kind: fields[0].to_string(),
            truncation: num(1)?,
            occlusion: num(2)? as i32,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        };
        if !label.is_dont_care() && label.dimensions.iter().any(|d| *d <= 0.0) {
            return Err(malformed(
                source_name,
                lineno + 1,
                "non-positive dimensions on a real object",
            ));
        }
        out.push(label);
    }
    Ok(out)
}

/// Ground-truth boxes from parsed labels, with DontCare entries excluded.
pub fn labels_to_gt(labels: &[KittiLabel]) -> Vec<(KittiLabel, OrientedBox3D)> {
    labels
        .iter()
        .filter(|l| !l.is_dont_care())
        .filter_map(|l| l.to_box().ok().map(|b| (l.clone(), b)))
        .collect()
}

/// Calibration: camera-2 projection, rectification rotation and the
/// LIDAR-to-camera rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibData {
    pub p2: [[f64; 4]; 3],
    pub r0_rect: [[f64; 3]; 3],
    pub tr_velo_to_cam: [[f64; 4]; 3],
}

impl CalibData {
    /// Identity transforms with a unit projection; handy for fixtures.
    pub fn identity() -> Self {
        let mut r0 = [[0.0; 3]; 3];
        let mut tr = [[0.0; 4]; 3];
        let mut p2 = [[0.0; 4]; 3];
        for i in 0..3 {
            r0[i][i] = 1.0;
            tr[i][i] = 1.0;
            p2[i][i] = 1.0;
        }
        Self {
            p2,
            r0_rect: r0,
            tr_velo_to_cam: tr,
        }
    }

    pub fn camera(&self, width: u32, height: u32) -> Result<CameraCalib, GeometryError> {
        CameraCalib::new(self.p2, width, height)
    }

    /// LIDAR point into the rectified camera frame: R0 * (Tr * [p; 1]).
    pub fn velo_to_cam(&self, p: [f64; 3]) -> Point3 {
        let tr = &self.tr_velo_to_cam;
        let mid = [
            tr[0][0] * p[0] + tr[0][1] * p[1] + tr[0][2] * p[2] + tr[0][3],
            tr[1][0] * p[0] + tr[1][1] * p[1] + tr[1][2] * p[2] + tr[1][3],
            tr[2][0] * p[0] + tr[2][1] * p[1] + tr[2][2] * p[2] + tr[2][3],
        ];
        let r = &self.r0_rect;
        Point3::raw(
            r[0][0] * mid[0] + r[0][1] * mid[1] + r[0][2] * mid[2],
            r[1][0] * mid[0] + r[1][1] * mid[1] + r[1][2] * mid[2],
            r[2][0] * mid[0] + r[2][1] * mid[1] + r[2][2] * mid[2],
        )
    }

    /// Inverse of [`Self::velo_to_cam`]. Stored rectification matrices are
    /// only orthonormal to file precision, so a true inverse is used rather
    /// than the transpose.
    pub fn cam_to_velo(&self, p: Point3) -> [f64; 3] {
        let r_inv = invert3(&self.r0_rect);
        let mid = mat3_mul(&r_inv, [p.x, p.y, p.z]);
        let tr = &self.tr_velo_to_cam;
        let a = [
            [tr[0][0], tr[0][1], tr[0][2]],
            [tr[1][0], tr[1][1], tr[1][2]],
            [tr[2][0], tr[2][1], tr[2][2]],
        ];
        let a_inv = invert3(&a);
        let d = [mid[0] - tr[0][3], mid[1] - tr[1][3], mid[2] - tr[2][3]];
        mat3_mul(&a_inv, d)
    }
}

fn mat3_mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Adjugate-based 3x3 inverse.
fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let ivd = 1.0 / det;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * ivd,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * ivd,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * ivd,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * ivd,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * ivd,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * ivd,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * ivd,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * ivd,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * ivd,
        ],
    ]
}

/// Parses a KITTI calibration file (named rows of matrix entries).
pub fn read_calib(path: &Path) -> Result<CalibData, DataError> {
    let text = fs::read_to_string(path)?;
    parse_calib(&text, &path.display().to_string())
}

pub fn parse_calib(text: &str, source_name: &str) -> Result<CalibData, DataError> {
    let mut p2 = None;
    let mut r0 = None;
    let mut tr = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((name, rest)) = line.split_once(':') else {
            continue;
        };
        let vals: Result<Vec<f64>, DataError> = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    malformed(source_name, lineno + 1, format!("bad number {t:?}"))
                })
            })
            .collect();
        let vals = vals?;
        match name.trim() {
            "P2" => {
                if vals.len() != 12 {
                    return Err(malformed(source_name, lineno + 1, "P2 needs 12 entries"));
                }
                let mut m = [[0.0; 4]; 3];
                for (i, v) in vals.iter().enumerate() {
                    m[i / 4][i % 4] = *v;
                }
                p2 = Some(m);
            }
            "R0_rect" | "R_rect" => {
                if vals.len() != 9 {
                    return Err(malformed(source_name, lineno + 1, "R0_rect needs 9 entries"));
                }
                let mut m = [[0.0; 3]; 3];
                for (i, v) in vals.iter().enumerate() {
                    m[i / 3][i % 3] = *v;
                }
                r0 = Some(m);
            }
            "Tr_velo_to_cam" => {
                if vals.len() != 12 {
                    return Err(malformed(
                        source_name,
                        lineno + 1,
                        "Tr_velo_to_cam needs 12 entries",
                    ));
                }
                let mut m = [[0.0; 4]; 3];
                for (i, v) in vals.iter().enumerate() {
                    m[i / 4][i % 4] = *v;
                }
                tr = Some(m);
            }
            _ => {}
        }
    }
    Ok(CalibData {
        p2: p2.ok_or_else(|| malformed(source_name, 0, "missing P2"))?,
        r0_rect: r0.ok_or_else(|| malformed(source_name, 0, "missing R0_rect"))?,
        tr_velo_to_cam: tr.ok_or_else(|| malformed(source_name, 0, "missing Tr_velo_to_cam"))?,
    })
}

/// Reads a velodyne binary (little-endian f32 quadruples x, y, z,
/// reflectance) and transforms the points into the camera frame. The
/// reflectance is dropped.
pub fn read_velodyne(path: &Path, calib: &CalibData) -> Result<PointCloud, DataError> {
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(DataError::Truncated {
            offset: (bytes.len() - bytes.len() % 16) as u64,
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        points.push(calib.velo_to_cam([f(0), f(1), f(2)]));
    }
    Ok(PointCloud::new(points))
}

/// Writes velodyne records; the inverse of the raw layer of
/// [`read_velodyne`].
pub fn write_velodyne(path: &Path, records: &[[f32; 4]]) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(records.len() * 16);
    for r in records {
        for v in r {
            buf.write_all(&v.to_le_bytes())?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}
