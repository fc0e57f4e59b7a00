//! The depth-informed potentials and the linear energy that ranks candidate
//! boxes: point-cloud density, free space, height prior and height contrast,
//! each answered in constant time from integral grids. Lower energy is
//! better.

use crate::geometry::{OrientedBox3D, Point3, PointCloud};
use crate::grid::{
    build_height_prior, build_integral, carve_free_space, voxelize, GridError, GridSpec,
    IntegralGrid,
};
use crate::ground::GroundPlane;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Default margin (meters) by which the contrast potential extends a box
/// outward on every face.
pub const DEFAULT_CONTRAST_MARGIN: f64 = 0.6;

/// Guard for the contrast denominator and the cap on the guarded ratio.
const CONTRAST_EPS: f64 = 1e-6;
const CONTRAST_CAP: f64 = 1e3;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("no height-prior grid for class {0:?}")]
    MissingHeightGrid(String),
    #[error("invalid class model: {0}")]
    InvalidModel(&'static str),
}

/// The four potential values for one box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialVector {
    pub phi_pcd: f64,
    pub phi_fs: f64,
    pub phi_ht: f64,
    pub phi_ht_contr: f64,
}

impl PotentialVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.phi_pcd, self.phi_fs, self.phi_ht, self.phi_ht_contr]
    }
}

/// Potential weights, in the same order as [`PotentialVector`].
pub type Weights = [f64; 4];

/// Everything learned per class (or shared across classes): potential
/// weights, size templates, height-prior statistics and the road-height
/// spread used by the far-range sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    /// Class name; "shared" for the class-independent variant.
    pub class: String,
    /// Numeric id carried on sampled boxes; `None` for the shared model.
    pub class_id: Option<u32>,
    pub weights: Weights,
    /// Representative (sx, sy, sz) box sizes in meters.
    pub templates: Vec<[f64; 3]>,
    /// Mean object-center height above the road plane.
    pub mu_ht: f64,
    /// Spread of object-center heights.
    pub sigma_ht: f64,
    /// Spread of box-bottom heights above the road plane.
    pub sigma_road: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ModelProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub training_set_hash: String,
    pub trained_at: String,
}

impl ClassModel {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.templates.is_empty() {
            return Err(EnergyError::InvalidModel("at least one template required"));
        }
        if self
            .templates
            .iter()
            .any(|t| t.iter().any(|s| !(s.is_finite() && *s > 0.0)))
        {
            return Err(EnergyError::InvalidModel("template sizes must be positive"));
        }
        if !(self.sigma_ht.is_finite() && self.sigma_ht > 0.0) {
            return Err(EnergyError::InvalidModel("sigma_ht must be positive"));
        }
        if !(self.sigma_road.is_finite() && self.sigma_road >= 0.0) {
            return Err(EnergyError::InvalidModel("sigma_road must be non-negative"));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(EnergyError::InvalidModel("weights must be finite"));
        }
        Ok(())
    }
}

/// Per-scene integral grids. Occupancy and free space are class independent;
/// height priors are keyed by class name since (mu, sigma) differ per class.
#[derive(Debug)]
pub struct SceneGrids {
    pub occupancy: IntegralGrid,
    pub free_space: IntegralGrid,
    pub height_prior: BTreeMap<String, IntegralGrid>,
}

impl SceneGrids {
    fn height_for(&self, class: &str) -> Result<&IntegralGrid, EnergyError> {
        self.height_prior
            .get(class)
            .ok_or_else(|| EnergyError::MissingHeightGrid(class.to_string()))
    }

    /// Builds all three fields and their accumulators for one scene, with
    /// the height prior keyed by the model's class. Free space is carved
    /// from the camera at the frame origin.
    pub fn build(
        cloud: &PointCloud,
        spec: GridSpec,
        plane: &GroundPlane,
        model: &ClassModel,
    ) -> Result<Self, GridError> {
        let (occ, _) = voxelize(cloud, spec);
        let free = carve_free_space(&occ, Point3::raw(0.0, 0.0, 0.0))?;
        let prior = build_height_prior(&occ, plane, model.mu_ht, model.sigma_ht)?;
        let mut height_prior = BTreeMap::new();
        height_prior.insert(model.class.clone(), build_integral(&prior));
        Ok(Self {
            occupancy: build_integral(&occ),
            free_space: build_integral(&free),
            height_prior,
        })
    }
}

/// Fraction of occupied voxels within the box; 0 when the box covers no
/// in-grid voxels.
pub fn phi_pcd(occ_integral: &IntegralGrid, b: &OrientedBox3D) -> f64 {
    let (sum, count) = occ_integral.box_sum_conservative(b);
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Fraction of non-free voxels within the box (1 minus the free-space
/// fraction); 0 when the box covers no in-grid voxels.
pub fn phi_fs(free_integral: &IntegralGrid, b: &OrientedBox3D) -> f64 {
    let (sum, count) = free_integral.box_sum_conservative(b);
    if count == 0 {
        0.0
    } else {
        1.0 - sum / count as f64
    }
}

/// Mean height-prior value within the box. Clamped: unlike the count-backed
/// fields, the float accumulator can drift past the [0, 1] bounds by a few
/// ulps.
pub fn phi_ht(htprior_integral: &IntegralGrid, b: &OrientedBox3D) -> f64 {
    let (sum, count) = htprior_integral.box_sum_conservative(b);
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).clamp(0.0, 1.0)
    }
}

/// Height-prior contrast between the box and its surroundings: the prior
/// inside the box over the prior gained by expanding each face by `margin`.
///
/// The raw ratio is unbounded (the denominator can be zero or negative when
/// the surroundings carry less prior than the box), so the denominator is
/// floored at a small epsilon and the ratio capped, keeping the feature
/// finite for the linear model.
pub fn phi_ht_contr(htprior_integral: &IntegralGrid, b: &OrientedBox3D, margin: f64) -> f64 {
    let a = phi_ht(htprior_integral, b);
    guarded_contrast(a, || phi_ht(htprior_integral, &b.expanded(margin)))
}

fn guarded_contrast(a: f64, a_plus: impl FnOnce() -> f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    (a / (a_plus() - a).max(CONTRAST_EPS)).min(CONTRAST_CAP)
}

/// All four potentials for one box.
pub fn potentials(
    grids: &SceneGrids,
    b: &OrientedBox3D,
    model: &ClassModel,
    margin: f64,
) -> Result<PotentialVector, EnergyError> {
    let ht = grids.height_for(&model.class)?;
    let a = phi_ht(ht, b);
    Ok(PotentialVector {
        phi_pcd: phi_pcd(&grids.occupancy, b),
        phi_fs: phi_fs(&grids.free_space, b),
        phi_ht: a,
        phi_ht_contr: guarded_contrast(a, || phi_ht(ht, &b.expanded(margin))),
    })
}

/// Weighted sum of the potentials. Inference minimizes this value.
pub fn energy(
    grids: &SceneGrids,
    b: &OrientedBox3D,
    model: &ClassModel,
    margin: f64,
) -> Result<(f64, PotentialVector), EnergyError> {
    let phi = potentials(grids, b, model, margin)?;
    Ok((dot(&model.weights, &phi), phi))
}

/// Energy of a precomputed potential vector under the given weights.
pub fn dot(weights: &Weights, phi: &PotentialVector) -> f64 {
    weights[0] * phi.phi_pcd
        + weights[1] * phi.phi_fs
        + weights[2] * phi.phi_ht
        + weights[3] * phi.phi_ht_contr
}
