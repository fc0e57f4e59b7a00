//! Seeded synthetic driving scenes: a ground-point carpet, cuboid objects
//! sampled only on their camera-facing faces (so free-space carving behaves
//! as it would with real single-viewpoint depth), optional clutter, and the
//! exact ground-truth boxes.

use super::DataError;
use crate::geometry::{iou_3d, OrientedBox3D, Point3, PointCloud};
use crate::ground::GroundPlane;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

/// Object population of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthObjectClass {
    pub class_id: u32,
    /// Inclusive range of objects per scene.
    pub count_min: usize,
    pub count_max: usize,
    pub size_mean: [f64; 3],
    pub size_sigma: [f64; 3],
}

/// Full scene recipe; every field participates in the seeded determinism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub plane_normal: [f64; 3],
    pub plane_offset: f64,
    pub ground_x: (f64, f64),
    pub ground_z: (f64, f64),
    /// Ground carpet density, points per square meter.
    pub ground_density: f64,
    pub objects: Vec<SynthObjectClass>,
    /// Surface density on visible object faces, points per square meter.
    pub object_density: f64,
    pub placement_x: (f64, f64),
    pub placement_z: (f64, f64),
    /// Azimuths drawn uniformly for planted objects.
    pub azimuths: Vec<f64>,
    /// Gaussian position noise, clamped at three sigma.
    pub noise_sigma: f64,
    /// Clutter points as a fraction of the structured point count.
    pub clutter_fraction: f64,
    /// Maximum 3D IoU tolerated between planted objects before resampling.
    pub overlap_tolerance: f64,
    pub max_attempts: u32,
    /// How far surface samples sit inside the ideal face (meters), so that
    /// voxelization attributes boundary sheets to the box itself rather
    /// than to a neighboring cell.
    pub surface_inset: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            plane_normal: [0.0, -1.0, 0.0],
            plane_offset: 1.65,
            ground_x: (-12.0, 12.0),
            ground_z: (0.0, 55.0),
            ground_density: 15.0,
            objects: vec![SynthObjectClass {
                class_id: 0,
                count_min: 1,
                count_max: 5,
                size_mean: [3.9, 1.6, 1.56],
                size_sigma: [0.08, 0.05, 0.04],
            }],
            object_density: 120.0,
            placement_x: (-8.0, 8.0),
            placement_z: (5.0, 50.0),
            azimuths: vec![0.0, FRAC_PI_2],
            noise_sigma: 0.02,
            clutter_fraction: 0.02,
            overlap_tolerance: 0.0,
            max_attempts: 100,
            surface_inset: 0.1,
        }
    }
}

/// Generator output: the cloud, the exact plane it was built on and the
/// exact planted boxes.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub plane: GroundPlane,
    pub gt_boxes: Vec<OrientedBox3D>,
}

/// Standard normal via Box-Muller.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Noise clamped to +/- 3 sigma, keeping every surface point inside its box
/// inflated by 3 sigma.
fn clamped_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    (gauss(rng) * sigma).clamp(-3.0 * sigma, 3.0 * sigma)
}

fn rotate_local(b: &OrientedBox3D, local: [f64; 3]) -> Point3 {
    let (c, s) = (b.azimuth.cos(), b.azimuth.sin());
    Point3::raw(
        b.center.x + local[0] * c + local[2] * s,
        b.center.y + local[1],
        b.center.z - local[0] * s + local[2] * c,
    )
}

/// Builds the scene for `spec`, identically for identical specs.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene, DataError> {
    if spec.ground_density < 0.0 || spec.object_density < 0.0 || spec.noise_sigma < 0.0 {
        return Err(DataError::Invalid("densities and noise must be non-negative".into()));
    }
    if spec.azimuths.is_empty() && spec.objects.iter().any(|c| c.count_max > 0) {
        return Err(DataError::Invalid("azimuth choice list is empty".into()));
    }
    let plane = GroundPlane::from_normal_offset(
        Point3::new(spec.plane_normal[0], spec.plane_normal[1], spec.plane_normal[2])?,
        spec.plane_offset,
    )
    .map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // plant the objects first so their boxes are independent of densities
    let mut gt_boxes: Vec<OrientedBox3D> = Vec::new();
    for class in &spec.objects {
        let count = rng.gen_range(class.count_min..=class.count_max);
        for _ in 0..count {
            let mut placed = false;
            for _attempt in 0..spec.max_attempts {
                let size = [
                    (class.size_mean[0] + gauss(&mut rng) * class.size_sigma[0]).max(0.05),
                    (class.size_mean[1] + gauss(&mut rng) * class.size_sigma[1]).max(0.05),
                    (class.size_mean[2] + gauss(&mut rng) * class.size_sigma[2]).max(0.05),
                ];
                let x = rng.gen_range(spec.placement_x.0..spec.placement_x.1);
                let z = rng.gen_range(spec.placement_z.0..spec.placement_z.1);
                let azimuth = spec.azimuths[rng.gen_range(0..spec.azimuths.len())];
                let cy = plane.y_at(x, z) - size[1] * 0.5;
                let b = OrientedBox3D::new(Point3::raw(x, cy, z), size, azimuth)?
                    .with_class(class.class_id);
                if gt_boxes.iter().all(|g| iou_3d(g, &b) <= spec.overlap_tolerance) {
                    gt_boxes.push(b);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(DataError::PlacementFailed(spec.max_attempts));
            }
        }
    }

    let mut points = Vec::new();

    // ground carpet
    let area = (spec.ground_x.1 - spec.ground_x.0) * (spec.ground_z.1 - spec.ground_z.0);
    let n_ground = (area * spec.ground_density).round().max(0.0) as usize;
    for _ in 0..n_ground {
        let x = rng.gen_range(spec.ground_x.0..spec.ground_x.1);
        let z = rng.gen_range(spec.ground_z.0..spec.ground_z.1);
        points.push(Point3::raw(
            x + clamped_noise(&mut rng, spec.noise_sigma),
            plane.y_at(x, z) + clamped_noise(&mut rng, spec.noise_sigma),
            z + clamped_noise(&mut rng, spec.noise_sigma),
        ));
    }

    // camera-facing faces of each object
    let camera = Point3::raw(0.0, 0.0, 0.0);
    for b in &gt_boxes {
        for (axis, sign) in [(0usize, 1.0f64), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)]
        {
            let mut normal_local = [0.0; 3];
            normal_local[axis] = sign;
            let inset = spec.surface_inset.min(b.size[axis] * 0.25);
            let mut center_local = [0.0; 3];
            center_local[axis] = sign * (b.size[axis] * 0.5 - inset);

            let face_center = rotate_local(b, center_local);
            let normal_world = rotate_local(b, normal_local).sub(b.center);
            if normal_world.dot(camera.sub(face_center)) <= 0.0 {
                continue; // face looks away from the camera
            }

            let (a1, a2) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let n_face =
                (b.size[a1] * b.size[a2] * spec.object_density).round().max(0.0) as usize;
            for _ in 0..n_face {
                let mut local = center_local;
                local[a1] = rng.gen_range(-0.5..0.5) * b.size[a1];
                local[a2] = rng.gen_range(-0.5..0.5) * b.size[a2];
                let p = rotate_local(b, local);
                points.push(Point3::raw(
                    p.x + clamped_noise(&mut rng, spec.noise_sigma),
                    p.y + clamped_noise(&mut rng, spec.noise_sigma),
                    p.z + clamped_noise(&mut rng, spec.noise_sigma),
                ));
            }
        }
    }

    // uniform clutter above the road
    let n_clutter = (points.len() as f64 * spec.clutter_fraction).round() as usize;
    for _ in 0..n_clutter {
        let x = rng.gen_range(spec.ground_x.0..spec.ground_x.1);
        let z = rng.gen_range(spec.ground_z.0..spec.ground_z.1);
        let road = plane.y_at(x, z);
        points.push(Point3::raw(x, rng.gen_range(road - 3.0..road), z));
    }

    Ok(SyntheticScene {
        cloud: PointCloud::new(points),
        plane,
        gt_boxes,
    })
}
