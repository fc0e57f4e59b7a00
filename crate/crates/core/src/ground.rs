//! Road-plane estimation: superpixel features, a one-hidden-layer ground
//! classifier and RANSAC plane fitting over classified points.

use crate::geometry::{CameraCalib, Point3, PointCloud};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Input dimensionality of the ground classifier (and its hidden width).
pub const FEATURE_DIM: usize = 22;

/// Classification cutoff above which a point is a RANSAC candidate.
pub const GROUND_PROB_CUTOFF: f64 = 0.5;

/// Height band (meters below the camera, Y down) used by the classifier-free
/// fallback when selecting road candidates.
pub const FALLBACK_HEIGHT_BAND: (f64, f64) = (1.0, 2.2);

#[derive(Debug, Error, PartialEq)]
pub enum GroundError {
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input length mismatch: {0}")]
    LengthMismatch(&'static str),
    #[error("training set must contain both classes")]
    SingleClass,
    #[error("need at least {needed} candidate points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("all plane hypotheses were degenerate")]
    DegenerateHypotheses,
    #[error("plane normal is degenerate or vertical")]
    DegeneratePlane,
    #[error("training set is empty")]
    EmptyInput,
}

/// Estimated road plane: unit normal pointing upward (negative Y in the
/// Y-down frame) and offset with `n . p + offset = 0` on the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Point3,
    pub offset: f64,
    pub inlier_count: usize,
    pub rms_inlier_dist: f64,
}

impl GroundPlane {
    pub fn from_normal_offset(normal: Point3, offset: f64) -> Result<Self, GroundError> {
        let len = normal.norm();
        if !(len.is_finite() && len > 1e-12) || !offset.is_finite() {
            return Err(GroundError::DegeneratePlane);
        }
        let mut n = normal.scale(1.0 / len);
        let mut d = offset / len;
        if n.y.abs() < 1e-12 {
            return Err(GroundError::DegeneratePlane);
        }
        if n.y > 0.0 {
            n = n.scale(-1.0);
            d = -d;
        }
        Ok(Self {
            normal: n,
            offset: d,
            inlier_count: 0,
            rms_inlier_dist: 0.0,
        })
    }

    /// Horizontal plane at road height `y_road` (below the camera).
    pub fn flat(y_road: f64) -> Self {
        Self {
            normal: Point3::raw(0.0, -1.0, 0.0),
            offset: y_road,
            inlier_count: 0,
            rms_inlier_dist: 0.0,
        }
    }

    /// Perpendicular signed distance, positive above the plane.
    pub fn signed_distance(&self, p: Point3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Signed distance measured along the gravity axis, positive above.
    pub fn height_along_gravity(&self, p: Point3) -> f64 {
        self.signed_distance(p) / -self.normal.y
    }

    /// Plane height (y coordinate) at ground position (x, z).
    pub fn y_at(&self, x: f64, z: f64) -> f64 {
        (self.normal.x * x + self.normal.z * z + self.offset) / -self.normal.y
    }
}

/// Per-superpixel appearance and geometry statistics, exactly
/// [`FEATURE_DIM`] values.
///
/// Layout: mean RGB (0..3), mean pixel position (3..5), mean 3D position
/// (5..8), local-plane pitch (8) and roll (9), above-horizon flag (10),
/// RGB standard deviation (11..14), 3D standard deviation (14..17),
/// reserved zeros (17..22).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpixelFeature {
    pub id: u32,
    pub values: [f64; FEATURE_DIM],
    /// Set when the local plane fit had fewer than 3 points or was singular;
    /// pitch and roll are zeroed in that case.
    pub degenerate_fit: bool,
}

/// Computes one feature vector per superpixel id, ascending by id.
pub fn extract_superpixel_features(
    cloud: &PointCloud,
    colors: &[[f64; 3]],
    labels: &[u32],
    calib: &CameraCalib,
    horizon_row: f64,
) -> Result<Vec<SuperpixelFeature>, GroundError> {
    if colors.len() != cloud.len() || labels.len() != cloud.len() {
        return Err(GroundError::LengthMismatch(
            "colors and labels must match the cloud length",
        ));
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, id) in labels.iter().enumerate() {
        groups.entry(*id).or_default().push(i);
    }

    let mut out = Vec::with_capacity(groups.len());
    for (id, idxs) in groups {
        let n = idxs.len() as f64;
        let mut f = [0.0f64; FEATURE_DIM];

        let mut mean_rgb = [0.0; 3];
        let mut mean_p3 = [0.0; 3];
        for &i in &idxs {
            for c in 0..3 {
                mean_rgb[c] += colors[i][c];
            }
            let p = cloud.points[i];
            mean_p3[0] += p.x;
            mean_p3[1] += p.y;
            mean_p3[2] += p.z;
        }
        for c in 0..3 {
            mean_rgb[c] /= n;
            mean_p3[c] /= n;
        }

        let mut mean_uv = [0.0; 2];
        let mut projected = 0usize;
        for &i in &idxs {
            if let Some(uv) = calib.project(cloud.points[i]) {
                mean_uv[0] += uv[0];
                mean_uv[1] += uv[1];
                projected += 1;
            }
        }
        if projected > 0 {
            mean_uv[0] /= projected as f64;
            mean_uv[1] /= projected as f64;
        }

        let mut var_rgb = [0.0; 3];
        let mut var_p3 = [0.0; 3];
        for &i in &idxs {
            for c in 0..3 {
                var_rgb[c] += (colors[i][c] - mean_rgb[c]).powi(2);
            }
            let p = cloud.points[i];
            var_p3[0] += (p.x - mean_p3[0]).powi(2);
            var_p3[1] += (p.y - mean_p3[1]).powi(2);
            var_p3[2] += (p.z - mean_p3[2]).powi(2);
        }

        let (pitch, roll, degenerate) = fit_local_plane(&cloud.points, &idxs);

        f[0..3].copy_from_slice(&mean_rgb);
        f[3..5].copy_from_slice(&mean_uv);
        f[5..8].copy_from_slice(&mean_p3);
        f[8] = pitch;
        f[9] = roll;
        f[10] = if mean_uv[1] < horizon_row { 1.0 } else { 0.0 };
        for c in 0..3 {
            f[11 + c] = (var_rgb[c] / n).sqrt();
            f[14 + c] = (var_p3[c] / n).sqrt();
        }
        // slots 17..22 reserved, zero

        out.push(SuperpixelFeature {
            id,
            values: f,
            degenerate_fit: degenerate,
        });
    }
    Ok(out)
}

/// Least-squares plane y = a x + b z + c over the selected points; returns
/// (pitch, roll, degenerate). Pitch and roll are the tilt of the upward
/// plane normal about the X and Z camera axes.
fn fit_local_plane(points: &[Point3], idxs: &[usize]) -> (f64, f64, bool) {
    if idxs.len() < 3 {
        return (0.0, 0.0, true);
    }
    // normal equations for [a, b, c]
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for &i in idxs {
        let p = points[i];
        let row = [p.x, p.z, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += row[r] * row[c];
            }
            rhs[r] += row[r] * p.y;
        }
    }
    match solve3(m, rhs) {
        Some([a, b, _c]) => (b.atan(), a.atan(), false),
        None => (0.0, 0.0, true),
    }
}

/// Gaussian elimination with partial pivoting for a 3x3 system.
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..3 {
            let f = m[row][col] / m[col][col];
            for c in col..3 {
                m[row][c] -= f * m[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for c in (row + 1)..3 {
            acc -= m[row][c] * x[c];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// One-hidden-layer tanh network with a sigmoid output, 22 -> 22 -> 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundClassifier {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Hidden weights, row-major `[hidden][input]`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output weights, one per hidden unit.
    pub w2: Vec<f64>,
    pub b2: f64,
    pub seed: u64,
    pub epochs_trained: usize,
    pub learning_rate: f64,
    pub final_loss: Option<f64>,
}

/// Analytic gradients of the cross-entropy loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GroundClassifier {
    /// Seeded uniform initialization scaled by the fan-in.
    pub fn random_init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (FEATURE_DIM as f64).sqrt();
        let w1 = (0..FEATURE_DIM * FEATURE_DIM)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        let w2 = (0..FEATURE_DIM).map(|_| rng.gen_range(-scale..scale)).collect();
        Self {
            input_dim: FEATURE_DIM,
            hidden_dim: FEATURE_DIM,
            w1,
            b1: vec![0.0; FEATURE_DIM],
            w2,
            b2: 0.0,
            seed,
            epochs_trained: 0,
            learning_rate: 0.0,
            final_loss: None,
        }
    }

    pub fn zeroed() -> Self {
        Self {
            input_dim: FEATURE_DIM,
            hidden_dim: FEATURE_DIM,
            w1: vec![0.0; FEATURE_DIM * FEATURE_DIM],
            b1: vec![0.0; FEATURE_DIM],
            w2: vec![0.0; FEATURE_DIM],
            b2: 0.0,
            seed: 0,
            epochs_trained: 0,
            learning_rate: 0.0,
            final_loss: None,
        }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden_dim)
            .map(|h| {
                let mut z = self.b1[h];
                for (i, xi) in x.iter().enumerate() {
                    z += self.w1[h * self.input_dim + i] * xi;
                }
                z.tanh()
            })
            .collect()
    }

    /// Ground probability for a single feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64, GroundError> {
        if x.len() != self.input_dim {
            return Err(GroundError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let h = self.hidden(x);
        let z = self.b2 + self.w2.iter().zip(&h).map(|(w, hv)| w * hv).sum::<f64>();
        Ok(sigmoid(z))
    }

    /// Mean cross-entropy over a labeled batch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[bool]) -> Result<f64, GroundError> {
        if xs.len() != ys.len() {
            return Err(GroundError::LengthMismatch("features vs labels"));
        }
        if xs.is_empty() {
            return Err(GroundError::EmptyInput);
        }
        let mut acc = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let p = self.predict(x)?.clamp(1e-12, 1.0 - 1e-12);
            acc -= if *y { p.ln() } else { (1.0 - p).ln() };
        }
        Ok(acc / xs.len() as f64)
    }

    /// Loss and analytic gradients over a labeled batch.
    pub fn loss_gradient(&self, xs: &[Vec<f64>], ys: &[bool]) -> Result<(f64, Gradients), GroundError> {
        if xs.len() != ys.len() {
            return Err(GroundError::LengthMismatch("features vs labels"));
        }
        if xs.is_empty() {
            return Err(GroundError::EmptyInput);
        }
        let n = xs.len() as f64;
        let mut g = Gradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: 0.0,
        };
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            if x.len() != self.input_dim {
                return Err(GroundError::DimensionMismatch {
                    expected: self.input_dim,
                    got: x.len(),
                });
            }
            let h = self.hidden(x);
            let z = self.b2 + self.w2.iter().zip(&h).map(|(w, hv)| w * hv).sum::<f64>();
            let p = sigmoid(z);
            let t = if *y { 1.0 } else { 0.0 };
            loss -= (if *y { p } else { 1.0 - p }).clamp(1e-12, 1.0).ln();

            let dz = (p - t) / n; // sigmoid + cross-entropy
            g.b2 += dz;
            for (k, hv) in h.iter().enumerate() {
                g.w2[k] += dz * hv;
                let dh = dz * self.w2[k] * (1.0 - hv * hv);
                g.b1[k] += dh;
                for (i, xi) in x.iter().enumerate() {
                    g.w1[k * self.input_dim + i] += dh * xi;
                }
            }
        }
        Ok((loss / n, g))
    }
}

/// Full-batch gradient-descent training, deterministic per seed. The
/// returned classifier carries the best (lowest-loss) weights seen, so its
/// loss never exceeds the loss at initialization.
pub fn train_ground_classifier(
    xs: &[Vec<f64>],
    ys: &[bool],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(GroundClassifier, Vec<f64>), GroundError> {
    if xs.is_empty() {
        return Err(GroundError::EmptyInput);
    }
    if !(ys.contains(&true) && ys.contains(&false)) {
        return Err(GroundError::SingleClass);
    }
    let mut clf = GroundClassifier::random_init(seed);
    clf.learning_rate = learning_rate;

    let mut history = Vec::with_capacity(epochs + 1);
    let mut best = clf.clone();
    let mut best_loss = clf.loss(xs, ys)?;
    history.push(best_loss);

    for _ in 0..epochs {
        let (_, g) = clf.loss_gradient(xs, ys)?;
        for (w, dw) in clf.w1.iter_mut().zip(&g.w1) {
            *w -= learning_rate * dw;
        }
        for (b, db) in clf.b1.iter_mut().zip(&g.b1) {
            *b -= learning_rate * db;
        }
        for (w, dw) in clf.w2.iter_mut().zip(&g.w2) {
            *w -= learning_rate * dw;
        }
        clf.b2 -= learning_rate * g.b2;

        let loss = clf.loss(xs, ys)?;
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = clf.clone();
        }
    }
    best.epochs_trained = epochs;
    best.learning_rate = learning_rate;
    best.final_loss = Some(best_loss);
    Ok((best, history))
}

/// Batch forward pass over raw feature rows.
pub fn classify_ground(clf: &GroundClassifier, rows: &[Vec<f64>]) -> Result<Vec<f64>, GroundError> {
    rows.iter().map(|r| clf.predict(r)).collect()
}

/// Seeded RANSAC plane fit over the points whose weight exceeds
/// [`GROUND_PROB_CUTOFF`] (all points when `point_weights` is `None`).
///
/// The best 3-point hypothesis by inlier count (ties to the earliest
/// hypothesis) is refined by a total-least-squares fit over its inliers.
pub fn ransac_plane(
    cloud: &PointCloud,
    point_weights: Option<&[f64]>,
    iterations: usize,
    inlier_threshold: f64,
    seed: u64,
) -> Result<GroundPlane, GroundError> {
    if let Some(w) = point_weights {
        if w.len() != cloud.len() {
            return Err(GroundError::LengthMismatch("weights vs cloud"));
        }
    }
    let candidates: Vec<usize> = (0..cloud.len())
        .filter(|&i| point_weights.map_or(true, |w| w[i] > GROUND_PROB_CUTOFF))
        .collect();
    if candidates.len() < 3 {
        return Err(GroundError::TooFewPoints {
            needed: 3,
            got: candidates.len(),
        });
    }

    let pts = &cloud.points;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Point3, f64)> = None; // (inliers, normal, offset)

    for _ in 0..iterations {
        let a = candidates[rng.gen_range(0..candidates.len())];
        let b = candidates[rng.gen_range(0..candidates.len())];
        let c = candidates[rng.gen_range(0..candidates.len())];
        if a == b || b == c || a == c {
            continue;
        }
        let n = pts[b].sub(pts[a]).cross(pts[c].sub(pts[a]));
        let len = n.norm();
        if len < 1e-12 {
            continue; // collinear sample
        }
        let n = n.scale(1.0 / len);
        let d = -n.dot(pts[a]);
        let inliers = candidates
            .iter()
            .filter(|&&i| (n.dot(pts[i]) + d).abs() <= inlier_threshold)
            .count();
        if best.map_or(true, |(bc, _, _)| inliers > bc) {
            best = Some((inliers, n, d));
        }
    }

    let (_, n0, d0) = best.ok_or(GroundError::DegenerateHypotheses)?;

    // least-squares refit over the hypothesis inliers
    let inlier_pts: Vec<Point3> = candidates
        .iter()
        .map(|&i| pts[i])
        .filter(|p| (n0.dot(*p) + d0).abs() <= inlier_threshold)
        .collect();
    let (n_fit, d_fit) = fit_plane_tls(&inlier_pts).ok_or(GroundError::DegenerateHypotheses)?;
    let mut plane = GroundPlane::from_normal_offset(n_fit, d_fit)?;

    let mut count = 0usize;
    let mut sq = 0.0;
    for &i in &candidates {
        let dist = plane.signed_distance(pts[i]);
        if dist.abs() <= inlier_threshold {
            count += 1;
            sq += dist * dist;
        }
    }
    plane.inlier_count = count;
    plane.rms_inlier_dist = if count > 0 { (sq / count as f64).sqrt() } else { 0.0 };
    Ok(plane)
}

/// Classifier-free plane estimation: candidates pre-filtered to the road
/// height band, for LIDAR-only and synthetic pipelines.
pub fn ransac_plane_height_band(
    cloud: &PointCloud,
    iterations: usize,
    inlier_threshold: f64,
    seed: u64,
) -> Result<GroundPlane, GroundError> {
    let weights: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| {
            if p.y >= FALLBACK_HEIGHT_BAND.0 && p.y <= FALLBACK_HEIGHT_BAND.1 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    ransac_plane(cloud, Some(&weights), iterations, inlier_threshold, seed)
}

/// Total-least-squares plane: centroid plus the smallest covariance
/// eigenvector.
fn fit_plane_tls(pts: &[Point3]) -> Option<(Point3, f64)> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mut c = Point3::raw(0.0, 0.0, 0.0);
    for p in pts {
        c = c.add(*p);
    }
    c = c.scale(1.0 / n);
    let mut cov = [[0.0f64; 3]; 3];
    for p in pts {
        let d = p.sub(c);
        let v = [d.x, d.y, d.z];
        for r in 0..3 {
            for s in 0..3 {
                cov[r][s] += v[r] * v[s];
            }
        }
    }
    let normal = smallest_eigenvector_sym3(cov)?;
    let nv = Point3::raw(normal[0], normal[1], normal[2]);
    if nv.norm() < 1e-12 {
        return None;
    }
    Some((nv, -nv.dot(c)))
}

/// Jacobi eigenvalue iteration on a symmetric 3x3 matrix; returns the unit
/// eigenvector of the smallest eigenvalue.
fn smallest_eigenvector_sym3(mut a: [[f64; 3]; 3]) -> Option<[f64; 3]> {
    let mut v = [[0.0f64; 3]; 3];
    for i in 0..3 {
        v[i][i] = 1.0;
    }
    for _ in 0..60 {
        // largest off-diagonal element
        let mut p = 0;
        let mut q = 1;
        let mut max = a[0][1].abs();
        for (i, j) in [(0usize, 2usize), (1, 2)] {
            if a[i][j].abs() > max {
                max = a[i][j].abs();
                p = i;
                q = j;
            }
        }
        if max < 1e-14 {
            break;
        }
        let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let cos = 1.0 / (t * t + 1.0).sqrt();
        let sin = t * cos;
        for k in 0..3 {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = cos * akp - sin * akq;
            a[k][q] = sin * akp + cos * akq;
        }
        for k in 0..3 {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = cos * apk - sin * aqk;
            a[q][k] = sin * apk + cos * aqk;
        }
        for k in 0..3 {
            let (vkp, vkq) = (v[k][p], v[k][q]);
            v[k][p] = cos * vkp - sin * vkq;
            v[k][q] = sin * vkp + cos * vkq;
        }
    }
    let eigs = [a[0][0], a[1][1], a[2][2]];
    let mut min_i = 0;
    for i in 1..3 {
        if eigs[i] < eigs[min_i] {
            min_i = i;
        }
    }
    if !eigs[min_i].is_finite() {
        return None;
    }
    Some([v[0][min_i], v[1][min_i], v[2][min_i]])
}
