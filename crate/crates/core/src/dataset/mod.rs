//! Dataset plumbing: KITTI-format readers, depth back-projection and HHA
//! encoding, plain PNM fixtures, the seeded synthetic-scene generator and
//! the CSV interchange formats.

mod depth;
mod kitti;
mod pnm;
mod synth;

pub use depth::{depth_to_cloud, encode_hha, DepthImage, DepthKind, HhaImage, HHA_RANGES};
pub use kitti::{
    class_id_of, class_name_of, labels_to_gt, read_calib, read_labels, read_velodyne,
    write_velodyne, CalibData, KittiLabel,
};
pub use pnm::{read_pgm, read_ppm, write_ppm, RgbImage};
pub use synth::{
    generate_synthetic_scene, SynthObjectClass, SyntheticScene, SyntheticSceneSpec,
};

use crate::geometry::{GeometryError, OrientedBox3D, Point3, PointCloud};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("velodyne record truncated at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("{source_name}:{line}: {msg}")]
    Malformed {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("could not place object without overlap after {0} attempts")]
    PlacementFailed(u32),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub(crate) fn malformed(source_name: &str, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Malformed {
        source_name: source_name.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Writes a point cloud as `x,y,z` CSV. Floats use shortest round-trip
/// formatting, so write/read restores values bitwise.
pub fn write_cloud_csv<W: Write>(w: &mut W, cloud: &PointCloud) -> io::Result<()> {
    writeln!(w, "x,y,z")?;
    for p in &cloud.points {
        writeln!(w, "{},{},{}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Reads the cloud CSV written by [`write_cloud_csv`]; the header row is
/// optional.
pub fn read_cloud_csv<R: BufRead>(r: R, source_name: &str) -> Result<PointCloud, DataError> {
    let mut points = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (lineno == 0 && trimmed.starts_with("x,")) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(malformed(source_name, lineno + 1, "expected 3 fields"));
        }
        let mut vals = [0.0f64; 3];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f
                .trim()
                .parse()
                .map_err(|_| malformed(source_name, lineno + 1, format!("bad float {f:?}")))?;
        }
        points.push(Point3::new(vals[0], vals[1], vals[2])?);
    }
    Ok(PointCloud::new(points))
}

/// Writes ground-truth boxes as CSV.
pub fn write_boxes_csv<W: Write>(w: &mut W, boxes: &[OrientedBox3D]) -> io::Result<()> {
    writeln!(w, "cx,cy,cz,sx,sy,sz,azimuth_deg,class")?;
    for b in boxes {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            b.center.x,
            b.center.y,
            b.center.z,
            b.size[0],
            b.size[1],
            b.size[2],
            b.azimuth.to_degrees(),
            b.class_id.map(|c| c.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Reads the box CSV written by [`write_boxes_csv`].
pub fn read_boxes_csv<R: BufRead>(r: R, source_name: &str) -> Result<Vec<OrientedBox3D>, DataError> {
    let mut boxes = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (lineno == 0 && trimmed.starts_with("cx,")) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 8 {
            return Err(malformed(source_name, lineno + 1, "expected 8 fields"));
        }
        let num = |i: usize| -> Result<f64, DataError> {
            fields[i].trim().parse().map_err(|_| {
                malformed(source_name, lineno + 1, format!("bad float {:?}", fields[i]))
            })
        };
        let mut b = OrientedBox3D::new(
            Point3::new(num(0)?, num(1)?, num(2)?)?,
            [num(3)?, num(4)?, num(5)?],
            num(6)?.to_radians(),
        )?;
        let class = fields[7].trim();
        if !class.is_empty() {
            b.class_id = Some(class.parse().map_err(|_| {
                malformed(source_name, lineno + 1, format!("bad class id {class:?}"))
            })?);
        }
        boxes.push(b);
    }
    Ok(boxes)
}

/// Reads the proposal CSV emitted by the sampler back into ranked boxes with
/// energies (used by the evaluation frontend).
pub fn read_proposals_csv<R: BufRead>(
    r: R,
    source_name: &str,
) -> Result<Vec<(OrientedBox3D, f64)>, DataError> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (lineno == 0 && trimmed.starts_with("rank,")) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 11 {
            return Err(malformed(source_name, lineno + 1, "expected 11 fields"));
        }
        let num = |i: usize| -> Result<f64, DataError> {
            fields[i].trim().parse().map_err(|_| {
                malformed(source_name, lineno + 1, format!("bad float {:?}", fields[i]))
            })
        };
        let energy = num(1)?;
        let mut b = OrientedBox3D::new(
            Point3::new(num(2)?, num(3)?, num(4)?)?,
            [num(5)?, num(6)?, num(7)?],
            num(8)?.to_radians(),
        )?;
        let class = fields[9].trim();
        b.class_id = class_id_of(class);
        let template = fields[10].trim();
        if !template.is_empty() {
            b.template_id = template.parse().ok();
        }
        out.push((b, energy));
    }
    Ok(out)
}
