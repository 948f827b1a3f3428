//! Neighbor view selection for a reference image.
//!
//! Candidate pairs are scored from the sparse model alone: a pair survives
//! when a small synthetic camera motion produces enough projection parallax
//! (`tau`), and survivors are ranked by `zeta`, which trades off co-visible
//! point count, baseline, and principal-axis angle.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{perturb_point, project, Camera};
use crate::scene_io::SparseModel;

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("no shared points between the image pair")]
    EmptySupport,
    #[error("image {0} has no usable neighbor views")]
    NoNeighbors(u32),
    #[error("image {0} is not in the model")]
    UnknownImage(u32),
}

/// Pairwise statistics between a reference and one source image.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub source_id: u32,
    /// Mean projection displacement under the synthetic perturbation, pixels.
    pub tau: f64,
    /// Distance between camera centers, world units.
    pub baseline: f64,
    /// Angle between the principal axes, radians.
    pub angle: f64,
    /// Number of co-visible sparse points.
    pub shared_count: usize,
    /// Selection score; lower is better.
    pub zeta: f64,
}

/// Mean displacement, in source pixels, between the projections of each
/// shared point and of its perturbation away from the reference center:
/// `(1/|A|) Σ ‖proj(X̂) - proj(X)‖` with `X̂ = (1 + eps) X - eps C_i`.
/// Points that do not project in front of the source camera are skipped.
pub fn displacement_tau(
    cam_i: &Camera,
    cam_j: &Camera,
    shared_points: &[Vector3<f64>],
    eps: f64,
) -> Result<f64, SelectError> {
    let c_i = cam_i.center();
    let mut sum = 0.0;
    let mut used = 0usize;
    for x in shared_points {
        let moved = perturb_point(x, &c_i, eps);
        let (p, z) = match project(cam_j, x) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let (p_hat, z_hat) = match project(cam_j, &moved) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if z <= 0.0 || z_hat <= 0.0 {
            continue;
        }
        sum += (p_hat - p).norm();
        used += 1;
    }
    if used == 0 {
        return Err(SelectError::EmptySupport);
    }
    Ok(sum / used as f64)
}

/// Selection score `min(baseline, 0.1) * min(angle, 0.05) / shared_count`;
/// the truncations keep any single large term from dominating.
pub fn score_zeta(stats: &PairStats) -> Result<f64, SelectError> {
    if stats.shared_count == 0 {
        return Err(SelectError::EmptySupport);
    }
    Ok(stats.baseline.min(0.1) * stats.angle.min(0.05) / stats.shared_count as f64)
}

/// World positions of the sparse points tracked by both images.
pub fn shared_points(model: &SparseModel, id_a: u32, id_b: u32) -> Vec<Vector3<f64>> {
    let tracked: BTreeMap<u64, BTreeSet<u32>> = model
        .points
        .iter()
        .map(|(pid, p)| (*pid, p.track.iter().map(|(img, _)| *img).collect()))
        .collect();
    model
        .points
        .values()
        .filter(|p| {
            let t = &tracked[&p.id];
            t.contains(&id_a) && t.contains(&id_b)
        })
        .map(|p| p.position)
        .collect()
}

/// Full statistics for one candidate pair; `None` when either image is
/// missing or the pair shares no points.
pub fn pair_stats(
    model: &SparseModel,
    ref_id: u32,
    src_id: u32,
    eps: f64,
) -> Option<PairStats> {
    let cam_i = model.camera(ref_id)?;
    let cam_j = model.camera(src_id)?;
    let shared = shared_points(model, ref_id, src_id);
    if shared.is_empty() {
        return None;
    }
    let tau = displacement_tau(&cam_i, &cam_j, &shared, eps).ok()?;
    let axis_i = cam_i.r.transpose() * Vector3::z();
    let axis_j = cam_j.r.transpose() * Vector3::z();
    let angle = axis_i.dot(&axis_j).clamp(-1.0, 1.0).acos();
    let mut stats = PairStats {
        source_id: src_id,
        tau,
        baseline: (cam_i.center() - cam_j.center()).norm(),
        angle,
        shared_count: shared.len(),
        zeta: 0.0,
    };
    stats.zeta = score_zeta(&stats).ok()?;
    Some(stats)
}

/// Chooses up to `k` source images for `ref_id`: pairs with parallax below
/// `t_tau` or without shared points are dropped, the rest are ordered by
/// ascending `zeta` (ties by image id).
pub fn select_neighbors(
    model: &SparseModel,
    ref_id: u32,
    t_tau: f64,
    eps: f64,
    k: usize,
) -> Result<Vec<u32>, SelectError> {
    if !model.images.contains_key(&ref_id) {
        return Err(SelectError::UnknownImage(ref_id));
    }
    let mut survivors: Vec<PairStats> = model
        .images
        .keys()
        .filter(|&&id| id != ref_id)
        .filter_map(|&id| pair_stats(model, ref_id, id, eps))
        .filter(|s| s.tau >= t_tau)
        .collect();
    survivors.sort_by(|a, b| {
        a.zeta
            .partial_cmp(&b.zeta)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.source_id.cmp(&b.source_id))
    });
    survivors.truncate(k);
    if survivors.is_empty() {
        return Err(SelectError::NoNeighbors(ref_id));
    }
    Ok(survivors.into_iter().map(|s| s.source_id).collect())
}
