//! Everything learned from annotated data: size templates by iterative mode
//! clustering, height and road statistics by Gaussian MLE, and the four
//! potential weights by a cutting-plane structured SVM whose task loss is
//! 1 minus the 3D IoU.

use crate::energy::{dot, ClassModel, PotentialVector, SceneGrids, Weights};
use crate::geometry::{iou_3d, CameraCalib, OrientedBox3D, Point3, PointCloud};
use crate::grid::GridSpec;
use crate::ground::GroundPlane;
use crate::sampler::{enumerate_candidates, score_candidates, SamplerError};
use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{self, Write};
use thiserror::Error;

/// Candidates this close (3D IoU) to a different ground-truth object are
/// left out of a training pair's constraint set.
pub const EXCLUDE_OTHER_GT_IOU: f64 = 0.25;

/// Convergence tolerance of the inner dual coordinate ascent.
const QP_TOLERANCE: f64 = 1e-6;
const QP_MAX_PASSES: usize = 10_000;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("training pair has an empty candidate set")]
    EmptyCandidates,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

// ---------------------------------------------------------------------------
// Size templates
// ---------------------------------------------------------------------------

/// IoU of two box sizes with coincident centers and orientations: the
/// per-axis minimum is the intersection extent.
fn centered_size_iou(a: [f64; 3], b: [f64; 3]) -> f64 {
    let inter: f64 = (0..3).map(|i| a[i].min(b[i])).product();
    let union = a.iter().product::<f64>() + b.iter().product::<f64>() - inter;
    inter / union
}

fn mean_size(sizes: &[[f64; 3]]) -> [f64; 3] {
    let n = sizes.len() as f64;
    let mut m = [0.0; 3];
    for s in sizes {
        for c in 0..3 {
            m[c] += s[c];
        }
    }
    m.map(|v| v / n)
}

/// Clusters ground-truth box sizes into up to three representative
/// templates.
///
/// Sizes are histogrammed at `bin_width` per dimension; the mode bin's
/// centroid anchors a cluster of all sizes whose centered IoU with it
/// exceeds 0.6, the cluster's mean is emitted and its members removed, until
/// fewer than `min_cluster` sizes remain or three templates exist. The
/// result is invariant to the input order.
pub fn fit_templates(
    sizes: &[[f64; 3]],
    min_cluster: usize,
    bin_width: f64,
) -> Result<Vec<[f64; 3]>, LearnError> {
    if sizes.is_empty() {
        return Err(LearnError::EmptyInput);
    }
    // canonical order makes clustering and means permutation invariant
    let mut remaining: Vec<[f64; 3]> = sizes.to_vec();
    remaining.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut templates = Vec::new();
    while remaining.len() >= min_cluster.max(1) && templates.len() < 3 {
        // mode bin of the 3D size histogram; ties resolved to the smallest key
        let mut bins: std::collections::BTreeMap<[i64; 3], Vec<usize>> = Default::default();
        for (i, s) in remaining.iter().enumerate() {
            let key = [
                (s[0] / bin_width).floor() as i64,
                (s[1] / bin_width).floor() as i64,
                (s[2] / bin_width).floor() as i64,
            ];
            bins.entry(key).or_default().push(i);
        }
        let mode = bins
            .values()
            .max_by_key(|v| v.len())
            .expect("non-empty input");
        let anchor = mean_size(&mode.iter().map(|&i| remaining[i]).collect::<Vec<_>>());

        let cluster: Vec<usize> = (0..remaining.len())
            .filter(|&i| centered_size_iou(anchor, remaining[i]) > 0.6)
            .collect();
        // pathological spreads can leave the anchor without matches; fall
        // back to the mode bin itself so the loop always shrinks
        let cluster = if cluster.is_empty() { mode.clone() } else { cluster };

        templates.push(mean_size(
            &cluster.iter().map(|&i| remaining[i]).collect::<Vec<_>>(),
        ));
        let keep: Vec<[f64; 3]> = (0..remaining.len())
            .filter(|i| !cluster.contains(i))
            .map(|i| remaining[i])
            .collect();
        remaining = keep;
    }
    if templates.is_empty() {
        // fewer sizes than min_cluster from the start: collapse to the mean
        templates.push(mean_size(&remaining));
    }
    Ok(templates)
}

// ---------------------------------------------------------------------------
// Height statistics
// ---------------------------------------------------------------------------

/// Gaussian maximum-likelihood estimates: mean and the 1/N standard
/// deviation.
pub fn gaussian_mle(samples: &[f64]) -> Result<(f64, f64), LearnError> {
    if samples.len() < 2 {
        return Err(LearnError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|h| (h - mu) * (h - mu)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// Height of the box center above the road plane, along gravity.
pub fn center_height(b: &OrientedBox3D, plane: &GroundPlane) -> f64 {
    plane.height_along_gravity(b.center)
}

/// Height of the box's bottom-face center above the road plane.
pub fn bottom_height(b: &OrientedBox3D, plane: &GroundPlane) -> f64 {
    let bottom = Point3::raw(b.center.x, b.center.y + b.size[1] * 0.5, b.center.z);
    plane.height_along_gravity(bottom)
}

/// MLE mean and standard deviation of object-center heights above the road
/// plane, measured along gravity.
pub fn fit_height_stats(
    gt_boxes: &[OrientedBox3D],
    plane: &GroundPlane,
) -> Result<(f64, f64), LearnError> {
    let heights: Vec<f64> = gt_boxes.iter().map(|b| center_height(b, plane)).collect();
    gaussian_mle(&heights)
}

/// MLE standard deviation of box-bottom heights above the road plane.
pub fn fit_road_sigma(
    gt_boxes: &[OrientedBox3D],
    plane: &GroundPlane,
) -> Result<f64, LearnError> {
    let heights: Vec<f64> = gt_boxes.iter().map(|b| bottom_height(b, plane)).collect();
    Ok(gaussian_mle(&heights)?.1)
}

// ---------------------------------------------------------------------------
// Structured SVM
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SsvmConfig {
    /// Regularization trade-off; the slack penalty is C divided by the
    /// number of training pairs.
    pub c: f64,
    /// A constraint counts as violated when it exceeds the current slack by
    /// more than this.
    pub tolerance: f64,
    pub max_rounds: usize,
}

impl Default for SsvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-3,
            max_rounds: 100,
        }
    }
}

/// One ground-truth object inside a training scene.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub gt: OrientedBox3D,
    /// The grid-aligned box whose potentials stand in for the ground truth.
    pub gt_snapped: OrientedBox3D,
    pub gt_phi: PotentialVector,
    /// Indices into the scene's candidate list admitted to this pair's
    /// constraint set.
    pub allowed: Vec<usize>,
    /// Task loss (1 - 3D IoU against the original ground truth) parallel to
    /// `allowed`.
    pub losses: Vec<f64>,
}

/// A scene with its cached candidate set, per-candidate potentials and one
/// training pair per ground-truth object.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    pub id: String,
    pub candidates: Vec<OrientedBox3D>,
    pub potentials: Vec<PotentialVector>,
    pub pairs: Vec<TrainingPair>,
}

/// Options for building a [`TrainingScene`] through the sampling pipeline.
#[derive(Debug, Clone)]
pub struct SceneBuildConfig {
    pub far_threshold: f64,
    pub contrast_margin: f64,
    pub stride: Option<f64>,
}

impl Default for SceneBuildConfig {
    fn default() -> Self {
        Self {
            far_threshold: crate::sampler::DEFAULT_FAR_THRESHOLD,
            contrast_margin: crate::energy::DEFAULT_CONTRAST_MARGIN,
            stride: None,
        }
    }
}

/// Snaps a box onto the sampling lattice: center to the nearest voxel
/// center, azimuth to the nearest of 0 or 90 degrees (mod 180).
pub fn snap_box_to_grid(b: &OrientedBox3D, spec: &GridSpec) -> OrientedBox3D {
    let h = spec.voxel_size;
    let snap = |v: f64, o: f64| o + (((v - o) / h - 0.5).round() + 0.5) * h;
    let mut out = *b;
    out.center = Point3::raw(
        snap(b.center.x, spec.origin.x),
        snap(b.center.y, spec.origin.y),
        snap(b.center.z, spec.origin.z),
    );
    let folded = b.azimuth.rem_euclid(PI);
    out.azimuth = if folded < PI / 4.0 || folded > 3.0 * PI / 4.0 {
        0.0
    } else {
        FRAC_PI_2
    };
    out
}

impl TrainingScene {
    /// Runs the sampling pipeline over a scene and caches candidates,
    /// potentials, snapped ground-truth potentials and per-pair loss
    /// vectors.
    pub fn build(
        id: impl Into<String>,
        cloud: &PointCloud,
        plane: &GroundPlane,
        gt_boxes: &[OrientedBox3D],
        model: &ClassModel,
        spec: GridSpec,
        camera: Option<&CameraCalib>,
        cfg: &SceneBuildConfig,
    ) -> Result<Self, LearnError> {
        let grids = SceneGrids::build(cloud, spec, plane, model).map_err(SamplerError::from)?;
        let mut cands = enumerate_candidates(
            model,
            plane,
            &spec,
            &grids.occupancy,
            camera,
            cfg.far_threshold,
            cfg.stride,
        )?;
        score_candidates(&mut cands, &grids, model, cfg.contrast_margin)?;

        let mut pairs = Vec::with_capacity(gt_boxes.len());
        for (gi, gt) in gt_boxes.iter().enumerate() {
            let gt_snapped = snap_box_to_grid(gt, &spec);
            let gt_phi =
                crate::energy::potentials(&grids, &gt_snapped, model, cfg.contrast_margin)
                    .map_err(SamplerError::from)?;
            let mut allowed = Vec::new();
            let mut losses = Vec::new();
            'cands: for (ci, cand) in cands.boxes.iter().enumerate() {
                for (oi, other) in gt_boxes.iter().enumerate() {
                    if oi != gi && iou_3d(other, cand) >= EXCLUDE_OTHER_GT_IOU {
                        continue 'cands;
                    }
                }
                allowed.push(ci);
                losses.push(1.0 - iou_3d(gt, cand));
            }
            pairs.push(TrainingPair {
                gt: *gt,
                gt_snapped,
                gt_phi,
                allowed,
                losses,
            });
        }
        Ok(Self {
            id: id.into(),
            candidates: cands.boxes,
            potentials: cands.potentials,
            pairs,
        })
    }
}

/// Result of the most-violated-constraint search for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MostViolated {
    /// Index into the scene's candidate list.
    pub candidate: usize,
    /// Delta + w.phi(gt) - w.phi(candidate); positive means the margin is
    /// not met without slack.
    pub violation: f64,
}

/// Exhaustively scans the pair's admitted candidates for the constraint with
/// the largest margin violation. Exact because the candidate set is finite.
pub fn loss_augmented_inference(
    scene: &TrainingScene,
    pair: &TrainingPair,
    w: &Weights,
) -> Result<MostViolated, LearnError> {
    if pair.allowed.is_empty() {
        return Err(LearnError::EmptyCandidates);
    }
    let e_gt = dot(w, &pair.gt_phi);
    let mut best = MostViolated {
        candidate: pair.allowed[0],
        violation: f64::NEG_INFINITY,
    };
    for (slot, &ci) in pair.allowed.iter().enumerate() {
        let value = pair.losses[slot] + e_gt - dot(w, &scene.potentials[ci]);
        if value > best.violation {
            best = MostViolated {
                candidate: ci,
                violation: value,
            };
        }
    }
    Ok(best)
}

/// One working-set constraint: the feature gap between a candidate and the
/// snapped ground truth, with its task loss and dual variable.
#[derive(Debug, Clone)]
struct Constraint {
    delta_phi: [f64; 4],
    loss: f64,
    alpha: f64,
}

/// Per-round trace of the cutting-plane loop.
#[derive(Debug, Clone)]
pub struct RoundLog {
    pub round: usize,
    /// Dual objective after the QP re-solve; non-decreasing across rounds.
    pub objective: f64,
    /// Largest (violation - slack) found this round.
    pub max_violation: f64,
    pub working_set_size: usize,
    pub new_constraints: usize,
}

#[derive(Debug, Clone)]
pub struct SsvmResult {
    pub weights: Weights,
    pub converged: bool,
    pub rounds: Vec<RoundLog>,
    /// Final slack per training pair, in scene-then-pair order.
    pub slacks: Vec<f64>,
}

fn phi_gap(cand: &PotentialVector, gt: &PotentialVector) -> [f64; 4] {
    let c = cand.as_array();
    let g = gt.as_array();
    [c[0] - g[0], c[1] - g[1], c[2] - g[2], c[3] - g[3]]
}

fn slack_of(w: &Weights, set: &[Constraint]) -> f64 {
    set.iter()
        .map(|c| c.loss - dot4(w, &c.delta_phi))
        .fold(0.0, f64::max)
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Cutting-plane training of the potential weights.
///
/// Each round adds, per training pair, the most violated constraint (when it
/// exceeds the pair's current slack by more than the tolerance) and re-solves
/// the working-set QP by dual coordinate ascent under the per-pair budget
/// 0 <= sum(alpha) <= C/N. Terminates when a round adds nothing.
pub fn train_ssvm(scenes: &[TrainingScene], cfg: &SsvmConfig) -> Result<SsvmResult, LearnError> {
    let pair_refs: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.pairs.len()).map(move |pi| (si, pi)))
        .collect();
    if pair_refs.is_empty() {
        return Err(LearnError::EmptyInput);
    }
    let n = pair_refs.len();
    let budget = cfg.c / n as f64;

    let mut working: Vec<Vec<Constraint>> = vec![Vec::new(); n];
    let mut w: Weights = [0.0; 4];
    let mut rounds = Vec::new();
    let mut converged = false;

    for round in 0..cfg.max_rounds {
        // most-violated search is independent per pair
        let found: Vec<Result<MostViolated, LearnError>> = pair_refs
            .par_iter()
            .map(|&(si, pi)| loss_augmented_inference(&scenes[si], &scenes[si].pairs[pi], &w))
            .collect();

        let mut new_constraints = 0;
        let mut max_violation = f64::NEG_INFINITY;
        for (k, res) in found.into_iter().enumerate() {
            let mv = res?;
            let (si, pi) = pair_refs[k];
            let pair = &scenes[si].pairs[pi];
            let slack = slack_of(&w, &working[k]);
            let excess = mv.violation - slack;
            max_violation = max_violation.max(excess);
            if excess > cfg.tolerance {
                let slot = pair.allowed.iter().position(|&c| c == mv.candidate).expect(
                    "most-violated candidate is drawn from the allowed set",
                );
                working[k].push(Constraint {
                    delta_phi: phi_gap(&scenes[si].potentials[mv.candidate], &pair.gt_phi),
                    loss: pair.losses[slot],
                    alpha: 0.0,
                });
                new_constraints += 1;
            }
        }

        if new_constraints == 0 {
            converged = true;
            rounds.push(RoundLog {
                round,
                objective: dual_objective(&working, &w),
                max_violation,
                working_set_size: working.iter().map(Vec::len).sum(),
                new_constraints,
            });
            break;
        }

        solve_working_set_qp(&mut working, &mut w, budget);
        rounds.push(RoundLog {
            round,
            objective: dual_objective(&working, &w),
            max_violation,
            working_set_size: working.iter().map(Vec::len).sum(),
            new_constraints,
        });
    }

    let slacks = working.iter().map(|set| slack_of(&w, set)).collect();
    Ok(SsvmResult {
        weights: w,
        converged,
        rounds,
        slacks,
    })
}

fn dual_objective(working: &[Vec<Constraint>], w: &Weights) -> f64 {
    let linear: f64 = working
        .iter()
        .flat_map(|set| set.iter())
        .map(|c| c.alpha * c.loss)
        .sum();
    linear - 0.5 * dot4(w, w)
}

/// Dual coordinate ascent over the working set. `w` is kept equal to the
/// alpha-weighted sum of constraint gaps throughout.
fn solve_working_set_qp(working: &mut [Vec<Constraint>], w: &mut Weights, budget: f64) {
    for _ in 0..QP_MAX_PASSES {
        let mut max_improvement = 0.0f64;
        for set in working.iter_mut() {
            if set.is_empty() {
                continue;
            }
            let mut used: f64 = set.iter().map(|c| c.alpha).sum();
            for j in 0..set.len() {
                let grad = set[j].loss - dot4(w, &set[j].delta_phi);
                let qjj = dot4(&set[j].delta_phi, &set[j].delta_phi);
                // accumulated updates can leave `used` a few ulps past the
                // budget; a negative headroom would invert the clamp bounds
                let headroom = (budget - used).max(0.0);
                let step = if qjj > 1e-12 {
                    (grad / qjj).clamp(-set[j].alpha, headroom)
                } else if grad > 0.0 {
                    headroom
                } else {
                    continue;
                };
                if step == 0.0 {
                    continue;
                }
                let improvement = grad * step - 0.5 * qjj * step * step;
                if improvement <= 0.0 {
                    continue;
                }
                set[j].alpha += step;
                used += step;
                for d in 0..4 {
                    w[d] += step * set[j].delta_phi[d];
                }
                max_improvement = max_improvement.max(improvement);
            }
        }
        if max_improvement < QP_TOLERANCE {
            break;
        }
    }
}

/// Writes the per-round training trace as CSV.
pub fn write_training_log<W: Write>(w: &mut W, result: &SsvmResult) -> io::Result<()> {
    writeln!(w, "round,objective,max_violation,working_set_size,new_constraints")?;
    for r in &result.rounds {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.round, r.objective, r.max_violation, r.working_set_size, r.new_constraints
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic separable construction shared by tests and the acceptance suite
// ---------------------------------------------------------------------------

/// Builds scenes whose ground truth strictly dominates every candidate in
/// density (higher phi_pcd) while carrying strictly less of the free-space
/// feature, so a zero-slack separating weight vector exists.
pub fn separable_scenes(
    n_scenes: usize,
    n_candidates: usize,
    seed: u64,
) -> Vec<TrainingScene> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(n_scenes);
    for s in 0..n_scenes {
        let gt = OrientedBox3D::new(
            Point3::raw(0.0, 1.0, 10.0 + s as f64),
            [3.9, 1.6, 1.56],
            0.0,
        )
        .unwrap();
        let gt_phi = PotentialVector {
            phi_pcd: 0.85,
            phi_fs: 0.10,
            phi_ht: 0.8,
            phi_ht_contr: 5.0,
        };
        let mut candidates = Vec::with_capacity(n_candidates);
        let mut potentials = Vec::with_capacity(n_candidates);
        let mut losses = Vec::with_capacity(n_candidates);
        for _ in 0..n_candidates {
            let near = rng.gen_bool(0.1);
            let (dx, dz) = if near {
                (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4))
            } else {
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                (side * rng.gen_range(2.0..20.0), rng.gen_range(-15.0..15.0))
            };
            let cand = OrientedBox3D::new(
                Point3::raw(gt.center.x + dx, gt.center.y, gt.center.z + dz),
                [3.9, 1.6, 1.56],
                if rng.gen_bool(0.5) { 0.0 } else { FRAC_PI_2 },
            )
            .unwrap();
            // strict dominance gaps
            let phi = if near {
                PotentialVector {
                    phi_pcd: rng.gen_range(0.55..0.75),
                    phi_fs: rng.gen_range(0.20..0.40),
                    phi_ht: rng.gen_range(0.5..0.8),
                    phi_ht_contr: rng.gen_range(1.0..5.0),
                }
            } else {
                PotentialVector {
                    phi_pcd: rng.gen_range(0.02..0.45),
                    phi_fs: rng.gen_range(0.45..0.95),
                    phi_ht: rng.gen_range(0.0..0.6),
                    phi_ht_contr: rng.gen_range(0.0..3.0),
                }
            };
            losses.push(1.0 - iou_3d(&gt, &cand));
            candidates.push(cand);
            potentials.push(phi);
        }
        let allowed = (0..candidates.len()).collect();
        scenes.push(TrainingScene {
            id: format!("separable-{s}"),
            candidates,
            potentials,
            pairs: vec![TrainingPair {
                gt,
                gt_snapped: gt,
                gt_phi,
                allowed,
                losses,
            }],
        });
    }
    scenes
}
