//! Cross-view geometric consistency filtering of depth/normal maps.
//!
//! A reference pixel survives when its plane, re-expressed in enough source
//! views, agrees with what those views estimated on their own: relative
//! depth, normal angle, and forward-backward reprojection all within
//! tolerance.

use std::collections::BTreeMap;

use nalgebra::Vector2;

use crate::geometry::{back_project, project, Camera, PlaneHypothesis};
use crate::matcher::DepthNormalMap;

/// Tolerances of the pairwise check and the support count a pixel needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConfig {
    /// Maximum relative depth difference.
    pub rel_depth_tol: f64,
    /// Maximum angle between the transported and the stored normal.
    pub angle_tol_deg: f64,
    /// Maximum forward-backward reprojection error in reference pixels.
    pub reproj_tol_px: f64,
    /// Number of consistent source views a pixel needs to survive.
    pub min_support: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            rel_depth_tol: 0.02,
            angle_tol_deg: 30.0,
            reproj_tol_px: 1.0,
            min_support: 2,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> bool {
        self.rel_depth_tol > 0.0
            && self.angle_tol_deg > 0.0
            && self.reproj_tol_px > 0.0
            && self.min_support >= 1
    }
}

/// Why a pixel failed the pairwise check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inconsistency {
    /// The pixel projects outside the source view or onto invalid pixels.
    OutOfView,
    Depth,
    Normal,
    Reprojection,
}

/// Bilinear depth at `(x, y)` with weights renormalized over the valid
/// corner pixels; `None` when no valid corner carries weight.
fn interpolate_valid_depth(map: &DepthNormalMap, x: f64, y: f64) -> Option<f64> {
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(map.width() - 1);
    let y1 = (y0 + 1).min(map.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut weight = 0.0;
    let mut acc = 0.0;
    for (px, py, w) in [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ] {
        if map.is_valid(px, py) {
            weight += w;
            acc += w * map.depth(px, py);
        }
    }
    (weight > 1e-12).then(|| acc / weight)
}

/// Checks one reference hypothesis at pixel `x` against the map of one
/// source view.
///
/// The hypothesis is lifted to 3D, projected into the source, and compared
/// with the source's own estimate there: bilinear depth over valid pixels,
/// normal from the rounded coordinate. The forward-backward test then lifts
/// the source's surface point and projects it back into the reference.
pub fn check_pair(
    cam_i: &Camera,
    cam_j: &Camera,
    x: &Vector2<f64>,
    hyp_i: &PlaneHypothesis,
    map_j: &DepthNormalMap,
    cfg: &ConsistencyConfig,
) -> Result<(), Inconsistency> {
    let Ok(point) = back_project(cam_i, x, hyp_i.depth) else {
        return Err(Inconsistency::OutOfView);
    };
    let Ok((x_j, d_ij)) = project(cam_j, &point) else {
        return Err(Inconsistency::OutOfView);
    };
    let max_x = map_j.width() as f64 - 1.0;
    let max_y = map_j.height() as f64 - 1.0;
    if d_ij <= 0.0 || x_j.x < 0.0 || x_j.y < 0.0 || x_j.x > max_x || x_j.y > max_y {
        return Err(Inconsistency::OutOfView);
    }
    let Some(d_j) = interpolate_valid_depth(map_j, x_j.x, x_j.y) else {
        return Err(Inconsistency::OutOfView);
    };
    let (rx, ry) = (x_j.x.round() as usize, x_j.y.round() as usize);
    if !map_j.is_valid(rx, ry) {
        return Err(Inconsistency::OutOfView);
    }
    if (d_ij - d_j).abs() / d_j >= cfg.rel_depth_tol {
        return Err(Inconsistency::Depth);
    }
    let n_ij = cam_j.r * cam_i.r.transpose() * hyp_i.normal;
    let angle = n_ij.dot(&map_j.normal(rx, ry)).clamp(-1.0, 1.0).acos();
    if angle >= cfg.angle_tol_deg.to_radians() {
        return Err(Inconsistency::Normal);
    }
    let Ok(surface) = back_project(cam_j, &x_j, d_j) else {
        return Err(Inconsistency::Reprojection);
    };
    match project(cam_i, &surface) {
        Ok((x_back, z)) if z > 0.0 && (x_back - x).norm() < cfg.reproj_tol_px => Ok(()),
        _ => Err(Inconsistency::Reprojection),
    }
}

/// Filters the reference map: a pixel keeps its hypothesis only when at
/// least `min_support` source views confirm it. Source maps are read as
/// they are, so filtering every image of a scene uses the unfiltered inputs
/// throughout and is order-independent.
pub fn filter_map(
    ref_id: u32,
    neighbors: &[u32],
    cams: &BTreeMap<u32, Camera>,
    maps: &BTreeMap<u32, DepthNormalMap>,
    cfg: &ConsistencyConfig,
    c_max: f64,
) -> DepthNormalMap {
    let cam_i = &cams[&ref_id];
    let ref_map = &maps[&ref_id];
    let mut out = ref_map.clone();
    for y in 0..ref_map.height() {
        for x in 0..ref_map.width() {
            let Some(hyp) = ref_map.hypothesis(x, y) else {
                continue;
            };
            let pixel = Vector2::new(x as f64, y as f64);
            let support = neighbors
                .iter()
                .filter(|&&j| check_pair(cam_i, &cams[&j], &pixel, &hyp, &maps[&j], cfg).is_ok())
                .count();
            if support < cfg.min_support {
                out.invalidate(x, y, c_max);
            }
        }
    }
    out
}
