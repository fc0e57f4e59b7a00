//! Candidate enumeration, exhaustive scoring and greedy NMS.
//!
//! Candidates are placed on the road plane at a fixed (x, z) stride, one box
//! per size template and per orientation in {0, 90} degrees, with two extra
//! planes at road height +/- sigma_road beyond the far-range threshold.
//! Empty boxes are pruned, survivors are scored with the energy model, and
//! greedy NMS emits the top-K diverse proposals.

use crate::energy::{self, ClassModel, EnergyError, PotentialVector, SceneGrids};
use crate::geometry::{
    bev_footprint, iou_2d, project_box, CameraCalib, OrientedBox3D, Point3, PointCloud, Rect2D,
};
use crate::grid::{
    build_height_prior, build_integral, carve_free_space, voxelize, GridError, GridSpec,
};
use crate::ground::{ransac_plane_height_band, GroundError, GroundPlane};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::io::{self, Write};
use std::time::Instant;
use thiserror::Error;

/// Default NMS IoU threshold.
pub const DEFAULT_NMS_DELTA: f64 = 0.75;

/// Default distance beyond which candidates are also sampled on the
/// road +/- sigma planes.
pub const DEFAULT_FAR_THRESHOLD: f64 = 20.0;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("proposal count K must be >= 1")]
    InvalidK,
    #[error("candidate set has not been scored")]
    NotScored,
    #[error("image-space NMS requires camera calibration")]
    MissingCalib,
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Ground(#[from] GroundError),
}

/// Sampled orientation of a candidate box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    Deg0,
    Deg90,
}

impl Orientation {
    pub fn azimuth(self) -> f64 {
        match self {
            Orientation::Deg0 => 0.0,
            Orientation::Deg90 => FRAC_PI_2,
        }
    }
}

/// Which sampling plane a candidate's bottom face rests on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneChoice {
    Road,
    RoadPlusSigma,
    RoadMinusSigma,
}

/// How a candidate was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template_id: u32,
    pub orientation: Orientation,
    pub plane: PlaneChoice,
}

/// Sampled grid-aligned candidate boxes with per-box provenance; energies
/// and potentials are filled by [`score_candidates`].
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub boxes: Vec<OrientedBox3D>,
    pub provenance: Vec<Provenance>,
    pub energies: Vec<f64>,
    pub potentials: Vec<PotentialVector>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn is_scored(&self) -> bool {
        self.energies.len() == self.boxes.len()
    }
}

/// 2D space used for suppression overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NmsMode {
    /// Rectangles projected onto the image plane.
    Image2D,
    /// Axis-aligned footprints in the bird's-eye view.
    Bev2D,
}

/// One emitted proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    /// 1-based rank, best (lowest) energy first.
    pub rank: usize,
    pub energy: f64,
    pub box3d: OrientedBox3D,
    pub provenance: Provenance,
}

/// Ranked, NMS-filtered proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalList {
    pub proposals: Vec<Proposal>,
    pub requested: usize,
    pub nms_mode: NmsMode,
    pub delta: f64,
}

/// Enumerates ground-plane-constrained candidates over the grid extent.
///
/// Positions step at `stride` meters (the voxel size when `None`); every
/// template and both orientations are placed with the box bottom on the road
/// plane. Beyond `far_threshold` meters two additional planes at road height
/// +/- sigma_road are sampled (skipped when sigma_road is zero, where they
/// would duplicate the road plane). Boxes with zero occupancy are pruned,
/// and with calibration present, boxes projecting outside the image are
/// dropped.
pub fn enumerate_candidates(
    model: &ClassModel,
    plane: &GroundPlane,
    spec: &GridSpec,
    occ_integral: &crate::grid::IntegralGrid,
    camera: Option<&CameraCalib>,
    far_threshold: f64,
    stride: Option<f64>,
) -> Result<CandidateSet, SamplerError> {
    model.validate()?;
    let stride = stride.unwrap_or(spec.voxel_size);
    let max = spec.max_corner();
    let nx = ((max.x - spec.origin.x) / stride).round() as usize;
    let nz = ((max.z - spec.origin.z) / stride).round() as usize;

    let mut out = CandidateSet::default();
    let mut plane_buf: Vec<(PlaneChoice, f64)> = Vec::with_capacity(3);

    for iz in 0..nz {
        let z = spec.origin.z + (iz as f64 + 0.5) * stride;
        for ix in 0..nx {
            let x = spec.origin.x + (ix as f64 + 0.5) * stride;
            let y_road = plane.y_at(x, z);

            plane_buf.clear();
            plane_buf.push((PlaneChoice::Road, y_road));
            if z > far_threshold && model.sigma_road > 0.0 {
                plane_buf.push((PlaneChoice::RoadPlusSigma, y_road + model.sigma_road));
                plane_buf.push((PlaneChoice::RoadMinusSigma, y_road - model.sigma_road));
            }

            for (tid, size) in model.templates.iter().enumerate() {
                for orientation in [Orientation::Deg0, Orientation::Deg90] {
                    for &(choice, y_plane) in &plane_buf {
                        let center = Point3::raw(x, y_plane - size[1] * 0.5, z);
                        let Ok(mut b) = OrientedBox3D::new(center, *size, orientation.azimuth())
                        else {
                            continue;
                        };
                        b.template_id = Some(tid as u32);
                        b.class_id = model.class_id;

                        let (occ_sum, _) = occ_integral.box_sum(&b)?;
                        if occ_sum == 0.0 {
                            continue;
                        }
                        if let Some(cam) = camera {
                            match project_box(&b, cam) {
                                Ok(rect) if rect.area() > 0.0 => {}
                                _ => continue,
                            }
                        }
                        out.boxes.push(b);
                        out.provenance.push(Provenance {
                            template_id: tid as u32,
                            orientation,
                            plane: choice,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Scores every candidate with the energy model. Candidate order is
/// preserved and the result is independent of the rayon worker count.
pub fn score_candidates(
    cands: &mut CandidateSet,
    grids: &SceneGrids,
    model: &ClassModel,
    contrast_margin: f64,
) -> Result<(), SamplerError> {
    let scored: Result<Vec<(f64, PotentialVector)>, EnergyError> = cands
        .boxes
        .par_iter()
        .map(|b| energy::energy(grids, b, model, contrast_margin))
        .collect();
    let scored = scored?;
    cands.energies = scored.iter().map(|(e, _)| *e).collect();
    cands.potentials = scored.into_iter().map(|(_, p)| p).collect();
    Ok(())
}

/// Deterministic candidate ordering: energy ascending, ties broken
/// lexicographically on (z, x, template, orientation).
fn candidate_order(cands: &CandidateSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands.energies[a]
            .total_cmp(&cands.energies[b])
            .then_with(|| cands.boxes[a].center.z.total_cmp(&cands.boxes[b].center.z))
            .then_with(|| cands.boxes[a].center.x.total_cmp(&cands.boxes[b].center.x))
            .then_with(|| cands.provenance[a].template_id.cmp(&cands.provenance[b].template_id))
            .then_with(|| cands.provenance[a].orientation.cmp(&cands.provenance[b].orientation))
    });
    order
}

fn suppression_rect(
    b: &OrientedBox3D,
    mode: NmsMode,
    calib: Option<&CameraCalib>,
) -> Result<Option<Rect2D>, SamplerError> {
    match mode {
        NmsMode::Bev2D => Ok(Some(bev_footprint(b))),
        NmsMode::Image2D => {
            let cam = calib.ok_or(SamplerError::MissingCalib)?;
            Ok(project_box(b, cam).ok())
        }
    }
}

/// Greedy non-maximum suppression: repeatedly take the lowest-energy
/// unsuppressed candidate, suppressing everything whose overlap with it
/// reaches `delta` in the chosen 2D space. Candidates that cannot be
/// projected in image mode are dropped.
pub fn greedy_nms(
    cands: &CandidateSet,
    k: usize,
    delta: f64,
    mode: NmsMode,
    calib: Option<&CameraCalib>,
) -> Result<ProposalList, SamplerError> {
    if k == 0 {
        return Err(SamplerError::InvalidK);
    }
    if cands.energies.len() != cands.boxes.len() {
        return Err(SamplerError::NotScored);
    }

    let rects: Vec<Option<Rect2D>> = match mode {
        NmsMode::Image2D if calib.is_none() => return Err(SamplerError::MissingCalib),
        _ => cands
            .boxes
            .iter()
            .map(|b| suppression_rect(b, mode, calib))
            .collect::<Result<_, _>>()?,
    };

    let mut proposals = Vec::new();
    let mut kept_rects: Vec<Rect2D> = Vec::new();
    for idx in candidate_order(cands) {
        if proposals.len() == k {
            break;
        }
        let Some(rect) = rects[idx] else { continue };
        let overlaps = kept_rects
            .iter()
            .any(|kr| iou_2d(&rect, kr).unwrap_or(0.0) >= delta);
        if overlaps {
            continue;
        }
        kept_rects.push(rect);
        proposals.push(Proposal {
            rank: proposals.len() + 1,
            energy: cands.energies[idx],
            box3d: cands.boxes[idx],
            provenance: cands.provenance[idx],
        });
    }
    Ok(ProposalList {
        proposals,
        requested: k,
        nms_mode: mode,
        delta,
    })
}

/// Everything the end-to-end pipeline needs besides the inputs themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposeConfig {
    pub grid_origin: [f64; 3],
    pub voxel_size: f64,
    pub grid_dims: [usize; 3],
    pub k: usize,
    pub delta: f64,
    pub nms_mode: NmsMode,
    pub far_threshold: f64,
    pub contrast_margin: f64,
    /// Candidate stride in meters; the voxel size when `None`.
    pub stride: Option<f64>,
    pub ransac_iterations: usize,
    pub ransac_threshold: f64,
    pub seed: u64,
    /// Road height of the fallback plane when estimation fails.
    pub fallback_road_height: f64,
}

impl Default for ProposeConfig {
    fn default() -> Self {
        Self {
            grid_origin: [-35.0, -2.6, 0.0],
            voxel_size: 0.2,
            grid_dims: [350, 23, 350],
            k: 2000,
            delta: DEFAULT_NMS_DELTA,
            nms_mode: NmsMode::Image2D,
            far_threshold: DEFAULT_FAR_THRESHOLD,
            contrast_margin: energy::DEFAULT_CONTRAST_MARGIN,
            stride: None,
            ransac_iterations: 500,
            ransac_threshold: 0.05,
            seed: 0,
            fallback_road_height: 1.65,
        }
    }
}

impl ProposeConfig {
    pub fn grid_spec(&self) -> Result<GridSpec, GridError> {
        GridSpec::new(
            Point3::raw(self.grid_origin[0], self.grid_origin[1], self.grid_origin[2]),
            self.voxel_size,
            self.grid_dims,
        )
    }
}

/// Per-stage wall-clock timings, milliseconds.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub ground_ms: f64,
    pub voxelize_ms: f64,
    pub free_space_ms: f64,
    pub height_prior_ms: f64,
    pub integrals_ms: f64,
    pub enumerate_ms: f64,
    pub score_ms: f64,
    pub nms_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.ground_ms
            + self.voxelize_ms
            + self.free_space_ms
            + self.height_prior_ms
            + self.integrals_ms
            + self.enumerate_ms
            + self.score_ms
            + self.nms_ms
    }
}

/// Output of the end-to-end pipeline.
#[derive(Debug)]
pub struct ProposeOutcome {
    pub proposals: ProposalList,
    pub plane: GroundPlane,
    /// True when plane estimation failed and the fallback plane was used.
    pub plane_fallback: bool,
    pub candidates_scored: usize,
    pub points_outside_grid: usize,
    pub timings: StageTimings,
}

/// End-to-end proposal generation: ground plane (estimated unless provided),
/// voxel fields, integral accumulators, candidate enumeration, scoring and
/// NMS.
pub fn propose(
    cloud: &PointCloud,
    calib: Option<&CameraCalib>,
    model: &ClassModel,
    plane: Option<GroundPlane>,
    config: &ProposeConfig,
) -> Result<ProposeOutcome, SamplerError> {
    model.validate()?;
    let spec = config.grid_spec()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let mut plane_fallback = false;
    let plane = match plane {
        Some(p) => p,
        None => match ransac_plane_height_band(
            cloud,
            config.ransac_iterations,
            config.ransac_threshold,
            config.seed,
        ) {
            Ok(p) => p,
            Err(err) => {
                log::warn!(
                    "ground-plane estimation failed ({err}); using flat fallback at y = {}",
                    config.fallback_road_height
                );
                plane_fallback = true;
                GroundPlane::flat(config.fallback_road_height)
            }
        },
    };
    timings.ground_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let (occ, points_outside_grid) = voxelize(cloud, spec);
    timings.voxelize_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let free = carve_free_space(&occ, Point3::raw(0.0, 0.0, 0.0))?;
    timings.free_space_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let prior = build_height_prior(&occ, &plane, model.mu_ht, model.sigma_ht)?;
    timings.height_prior_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let mut height_prior = BTreeMap::new();
    height_prior.insert(model.class.clone(), build_integral(&prior));
    let grids = SceneGrids {
        occupancy: build_integral(&occ),
        free_space: build_integral(&free),
        height_prior,
    };
    timings.integrals_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let mut cands = enumerate_candidates(
        model,
        &plane,
        &spec,
        &grids.occupancy,
        calib,
        config.far_threshold,
        config.stride,
    )?;
    timings.enumerate_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    score_candidates(&mut cands, &grids, model, config.contrast_margin)?;
    timings.score_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let proposals = greedy_nms(&cands, config.k, config.delta, config.nms_mode, calib)?;
    timings.nms_ms = t.elapsed().as_secs_f64() * 1e3;

    Ok(ProposeOutcome {
        proposals,
        plane,
        plane_fallback,
        candidates_scored: cands.len(),
        points_outside_grid,
        timings,
    })
}

/// Writes proposals as CSV, one row per proposal. Floats use shortest
/// round-trip formatting so identical runs produce identical bytes.
pub fn write_proposals_csv<W: Write>(
    w: &mut W,
    list: &ProposalList,
    class: &str,
) -> io::Result<()> {
    writeln!(w, "rank,energy,cx,cy,cz,sx,sy,sz,azimuth_deg,class,template_id")?;
    for p in &list.proposals {
        let b = &p.box3d;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.rank,
            p.energy,
            b.center.x,
            b.center.y,
            b.center.z,
            b.size[0],
            b.size[1],
            b.size[2],
            b.azimuth.to_degrees(),
            class,
            p.provenance.template_id,
        )?;
    }
    Ok(())
}

/// Writes proposals as KITTI-style detection lines: projected rectangles
/// with the negated energy as the score (higher is better).
pub fn write_proposals_kitti<W: Write>(
    w: &mut W,
    list: &ProposalList,
    calib: &CameraCalib,
    class: &str,
) -> io::Result<()> {
    for p in &list.proposals {
        let b = &p.box3d;
        let Ok(rect) = project_box(b, calib) else {
            continue;
        };
        // type trunc occl alpha bbox(4) dims(h w l) loc(x y z at bottom) ry score
        writeln!(
            w,
            "{} -1 -1 -10 {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.4} {:.6}",
            class,
            rect.min[0],
            rect.min[1],
            rect.max[0],
            rect.max[1],
            b.size[1],
            b.size[2],
            b.size[0],
            b.center.x,
            b.center.y + b.size[1] * 0.5,
            b.center.z,
            b.azimuth,
            -p.energy,
        )?;
    }
    Ok(())
}
