//! Depth completion for pixels rejected by the consistency filter.
//!
//! Texture-less surfaces rarely survive photometric matching: their windows
//! carry no variance, every candidate plane scores at the cost cap, and the
//! consistency filter drops them. This module rebuilds such regions from the
//! structure around them. Scanline fits extend reconstructed depths across
//! each hole from four directions, a pairwise-smooth labeling decoded by
//! message passing on a half-resolution grid picks one candidate per pixel,
//! and normals are recomputed from the completed depth field.

mod trw;

pub use trw::{decode_map, GridGraph, GridNode};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{Camera, PlaneHypothesis};
use crate::matcher::{
    aggregate_cost, zncc_mapped, DepthNormalMap, MatchConfig, MatchScene, RefWindow, ViewMatch,
};

/// Parameters of the completion stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiConfig {
    /// Scales the matching cost inside the data weight
    /// `(c_max - cost) / kappa1 + kappa2`.
    pub kappa1: f64,
    /// Offset of the data weight; keeps it positive for cap-cost pixels.
    pub kappa2: f64,
    /// Base of the smoothness weight `(kappa3 - min(1, Δd / d))²`.
    pub kappa3: f64,
    /// Number of nearby reconstructed pixels pooled into each scanline fit.
    pub fit_support: usize,
    /// Full forward/backward sweeps of the message-passing decoder.
    pub trw_iterations: u32,
}

impl Default for PhiConfig {
    fn default() -> Self {
        Self {
            kappa1: 4.0,
            kappa2: 0.5,
            kappa3: 2.0,
            fit_support: 6,
            trw_iterations: 1,
        }
    }
}

impl PhiConfig {
    pub fn validate(&self) -> bool {
        self.kappa1 > 0.0
            && self.kappa2 > 0.0
            && self.kappa3 >= 1.0
            && self.fit_support >= 2
            && self.trw_iterations >= 1
    }
}

/// Scanline family (or origin) a candidate depth came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisSource {
    /// The pixel kept its own reconstructed depth.
    Reconstructed,
    Horizontal,
    Vertical,
    /// Down-right diagonal.
    DiagonalDown,
    /// Up-right diagonal.
    DiagonalUp,
}

/// One candidate depth for a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub depth: f64,
    pub source: HypothesisSource,
}

/// Candidate depths per pixel: reconstructed pixels keep exactly their own
/// depth, holes collect up to one scanline fit per direction, and pixels no
/// fit reaches stay empty.
#[derive(Debug, Clone)]
pub struct HypothesisSet {
    width: usize,
    height: usize,
    lists: Vec<Vec<Hypothesis>>,
}

impl HypothesisSet {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> &[Hypothesis] {
        &self.lists[y * self.width + x]
    }
}

const DIRECTIONS: [(HypothesisSource, (i64, i64)); 4] = [
    (HypothesisSource::Horizontal, (1, 0)),
    (HypothesisSource::Vertical, (0, 1)),
    (HypothesisSource::DiagonalDown, (1, 1)),
    (HypothesisSource::DiagonalUp, (1, -1)),
];

/// Start pixels of every maximal line with step `(dx, dy)`.
fn line_starts(w: i64, h: i64, dx: i64, dy: i64) -> Vec<(i64, i64)> {
    match (dx, dy) {
        (1, 0) => (0..h).map(|y| (0, y)).collect(),
        (0, 1) => (0..w).map(|x| (x, 0)).collect(),
        (1, 1) => (0..h)
            .map(|y| (0, y))
            .chain((1..w).map(|x| (x, 0)))
            .collect(),
        (1, -1) => (0..h)
            .map(|y| (0, y))
            .chain((1..w).map(|x| (x, h - 1)))
            .collect(),
        _ => unreachable!("unsupported scanline step"),
    }
}

/// Fills `out` with the `k` entries of `line` (sorted by coordinate) nearest
/// to `t0`, preferring the lower coordinate on distance ties.
fn nearest_points(line: &[(f64, f64)], t0: f64, k: usize, out: &mut Vec<(f64, f64)>) {
    out.clear();
    let mut right = line.partition_point(|&(t, _)| t < t0);
    let mut left = right;
    while out.len() < k {
        let l_dist = (left > 0).then(|| t0 - line[left - 1].0);
        let r_dist = (right < line.len()).then(|| line[right].0 - t0);
        match (l_dist, r_dist) {
            (Some(l), Some(r)) if l <= r => {
                left -= 1;
                out.push(line[left]);
            }
            (Some(_), Some(_)) | (None, Some(_)) => {
                out.push(line[right]);
                right += 1;
            }
            (Some(_), None) => {
                left -= 1;
                out.push(line[left]);
            }
            (None, None) => break,
        }
    }
}

/// Least-squares affine depth over `points`, evaluated at `t0`. Coordinates
/// are centered on `t0`, so the evaluation is the fitted intercept. Returns
/// `None` for degenerate point sets and non-positive or non-finite depths.
fn affine_fit_at(points: &[(f64, f64)], t0: f64) -> Option<f64> {
    let n = points.len() as f64;
    let mut st = 0.0;
    let mut sd = 0.0;
    let mut stt = 0.0;
    let mut std = 0.0;
    for &(t, d) in points {
        let tc = t - t0;
        st += tc;
        sd += d;
        stt += tc * tc;
        std += tc * d;
    }
    let denom = n * stt - st * st;
    if denom.abs() < 1e-9 {
        return None;
    }
    let slope = (n * std - st * sd) / denom;
    let depth = (sd - slope * st) / n;
    (depth > 0.0 && depth.is_finite()).then_some(depth)
}

/// Builds the per-pixel candidate lists of `map`.
///
/// Four scanline families cross every pixel: rows, columns, and both
/// diagonals. Along each line, the `fit_support` reconstructed pixels
/// nearest to a hole (pooled from both sides) define an affine depth fit
/// evaluated at the hole. Non-positive fits and lines with fewer than two
/// reconstructed pixels contribute nothing.
pub fn generate_hypotheses(map: &DepthNormalMap, cfg: &PhiConfig) -> HypothesisSet {
    let w = map.width() as i64;
    let h = map.height() as i64;
    let mut lists: Vec<Vec<Hypothesis>> = vec![Vec::new(); (w * h) as usize];
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.is_valid(x, y) {
                lists[y * map.width() + x].push(Hypothesis {
                    depth: map.depth(x, y),
                    source: HypothesisSource::Reconstructed,
                });
            }
        }
    }
    let mut valid_line: Vec<(f64, f64)> = Vec::new();
    let mut holes: Vec<(f64, usize)> = Vec::new();
    let mut picked: Vec<(f64, f64)> = Vec::new();
    for (source, (dx, dy)) in DIRECTIONS {
        for (sx, sy) in line_starts(w, h, dx, dy) {
            valid_line.clear();
            holes.clear();
            let (mut x, mut y) = (sx, sy);
            let mut t = 0.0;
            while x >= 0 && y >= 0 && x < w && y < h {
                let idx = (y * w + x) as usize;
                if map.is_valid(x as usize, y as usize) {
                    valid_line.push((t, map.depth(x as usize, y as usize)));
                } else {
                    holes.push((t, idx));
                }
                x += dx;
                y += dy;
                t += 1.0;
            }
            if valid_line.len() < 2 {
                continue;
            }
            for &(t0, idx) in &holes {
                nearest_points(&valid_line, t0, cfg.fit_support, &mut picked);
                if let Some(depth) = affine_fit_at(&picked, t0) {
                    lists[idx].push(Hypothesis { depth, source });
                }
            }
        }
    }
    HypothesisSet {
        width: map.width(),
        height: map.height(),
        lists,
    }
}

/// Aggregated matching cost of the constant depth `h` at pixel `x`: every
/// reference window sample back-projects to depth `h` and reprojects into
/// each source view. Ungatherable or texture-less windows cost the cap.
pub fn matching_cost_at_depth(
    x: &Vector2<f64>,
    h: f64,
    scene: &MatchScene,
    cfg: &MatchConfig,
) -> f64 {
    let c_max = cfg.c_max();
    if h <= 0.0 || !h.is_finite() {
        return c_max;
    }
    let mut win = RefWindow::new(cfg);
    if !win.gather(scene.ref_img, x.x, x.y, cfg) {
        return c_max;
    }
    let ki_inv = scene.ref_cam.k_inv();
    let results: Vec<ViewMatch> = scene
        .sources
        .iter()
        .map(|(cam, img)| {
            let r_rel = cam.r * scene.ref_cam.r.transpose();
            let a = cam.k() * r_rel * ki_inv;
            let b = cam.k() * (cam.t - r_rel * scene.ref_cam.t);
            zncc_mapped(&win, img, |u, v| {
                let q = h * (a * Vector3::new(u, v, 1.0)) + b;
                (q.z > 0.0).then(|| (q.x / q.z, q.y / q.z))
            })
        })
        .collect();
    aggregate_cost(&results, cfg)
}

/// Data energy of a matching cost: the negated log of the weight
/// `(c_max - cost) / kappa1 + kappa2`.
pub fn unary_from_cost(cost: f64, c_max: f64, cfg: &PhiConfig) -> f64 {
    -((c_max - cost) / cfg.kappa1 + cfg.kappa2).ln()
}

/// Data energy of candidate depth `h` at pixel `x`.
pub fn unary_energy(
    x: &Vector2<f64>,
    h: f64,
    scene: &MatchScene,
    cfg_match: &MatchConfig,
    cfg: &PhiConfig,
) -> f64 {
    unary_from_cost(
        matching_cost_at_depth(x, h, scene, cfg_match),
        cfg_match.c_max(),
        cfg,
    )
}

/// Smoothness energy between neighboring candidate depths: the negated log
/// of `(kappa3 - min(1, |h1 - h2| / min(h1, h2)))²`. Equal depths carry the
/// largest weight, and the relative gap saturates at 1.
pub fn pairwise_energy(h1: f64, h2: f64, cfg: &PhiConfig) -> f64 {
    let (hi, lo) = if h1 > h2 { (h1, h2) } else { (h2, h1) };
    let ratio = ((hi - lo) / lo).min(1.0);
    -((cfg.kappa3 - ratio) * (cfg.kappa3 - ratio)).ln()
}

/// Camera-frame point of pixel `(x, y)` at depth `d`.
fn lift(cam: &Camera, x: usize, y: usize, d: f64) -> Vector3<f64> {
    Vector3::new(
        d * (x as f64 - cam.cx) / cam.fx,
        d * (y as f64 - cam.cy) / cam.fy,
        d,
    )
}

/// Normal of the depth surface at `(x, y)` from central differences: the
/// cross product of the lifted up-down and left-right neighbor gaps,
/// oriented toward the camera. `None` when a neighbor is missing, out of
/// bounds, or the cross product degenerates.
pub fn recompute_normal(
    map: &DepthNormalMap,
    x: usize,
    y: usize,
    cam: &Camera,
) -> Option<Vector3<f64>> {
    if x == 0 || y == 0 || x + 1 >= map.width() || y + 1 >= map.height() {
        return None;
    }
    let point = |xx: usize, yy: usize| {
        map.is_valid(xx, yy)
            .then(|| lift(cam, xx, yy, map.depth(xx, yy)))
    };
    let up = point(x, y - 1)?;
    let down = point(x, y + 1)?;
    let left = point(x - 1, y)?;
    let right = point(x + 1, y)?;
    let n = (up - down).cross(&(left - right));
    let ray = Vector3::new(
        (x as f64 - cam.cx) / cam.fx,
        (y as f64 - cam.cy) / cam.fy,
        1.0,
    );
    PlaneHypothesis::oriented(1.0, n, &ray).map(|h| h.normal)
}

/// Normal of the reconstructed pixel nearest to `(x, y)` in Chebyshev
/// distance, scanning outward ring by ring in row-major order.
fn nearest_valid_normal(map: &DepthNormalMap, x: usize, y: usize) -> Option<Vector3<f64>> {
    let (w, h) = (map.width() as isize, map.height() as isize);
    let (cx, cy) = (x as isize, y as isize);
    for radius in 1..w.max(h) {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx.abs().max(dy.abs()) != radius {
                    continue;
                }
                let (nx, ny) = (cx + dx, cy + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if map.is_valid(nx as usize, ny as usize) {
                    return Some(map.normal(nx as usize, ny as usize));
                }
            }
        }
    }
    None
}

/// Completes the holes of a filtered map.
///
/// Candidate depths come from [`generate_hypotheses`]. A half-resolution
/// grid over the even-coordinate pixels is decoded by [`decode_map`] with
/// data energies from [`unary_energy`]; single-candidate pixels, which
/// includes every reconstructed one, skip the matching cost because it
/// cannot change their label. Each full-resolution hole then takes its
/// candidate closest to the depth decoded at the nearest grid node, and
/// normals are rebuilt from the completed depth field. Reconstructed pixels
/// pass through untouched; holes without candidates stay invalid.
pub fn infer_planes(
    filtered: &DepthNormalMap,
    scene: &MatchScene,
    cfg_match: &MatchConfig,
    cfg: &PhiConfig,
) -> DepthNormalMap {
    assert!(cfg.validate(), "invalid completion parameters");
    let w = filtered.width();
    let h = filtered.height();
    let set = generate_hypotheses(filtered, cfg);
    let hw = w.div_ceil(2);
    let hh = h.div_ceil(2);
    let nodes: Vec<Option<GridNode>> = (0..hw * hh)
        .into_par_iter()
        .map(|gidx| {
            let (gx, gy) = (gidx % hw, gidx / hw);
            let (x, y) = (2 * gx, 2 * gy);
            let hyps = set.at(x, y);
            if hyps.is_empty() {
                return None;
            }
            let labels: Vec<f64> = hyps.iter().map(|c| c.depth).collect();
            let unary = if labels.len() == 1 {
                vec![0.0]
            } else {
                let pos = Vector2::new(x as f64, y as f64);
                labels
                    .iter()
                    .map(|&d| unary_energy(&pos, d, scene, cfg_match, cfg))
                    .collect()
            };
            Some(GridNode { labels, unary })
        })
        .collect();
    let graph = GridGraph::new(hw, hh, nodes);
    let labeling = decode_map(&graph, cfg);
    let node_depth = |gx: usize, gy: usize| -> Option<f64> {
        labeling[gy * hw + gx].map(|sel| graph.node(gx, gy).unwrap().labels[sel])
    };

    let mut out = filtered.clone();
    let c_max = cfg_match.c_max();
    let mut filled: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if filtered.is_valid(x, y) {
                continue;
            }
            let hyps = set.at(x, y);
            if hyps.is_empty() {
                continue;
            }
            let gx = ((x + 1) / 2).min(hw - 1);
            let gy = ((y + 1) / 2).min(hh - 1);
            let probes = [
                Some((gx, gy)),
                gx.checked_sub(1).map(|px| (px, gy)),
                (gx + 1 < hw).then_some((gx + 1, gy)),
                gy.checked_sub(1).map(|py| (gx, py)),
                (gy + 1 < hh).then_some((gx, gy + 1)),
            ];
            let reference = probes
                .iter()
                .flatten()
                .find_map(|&(px, py)| node_depth(px, py));
            let depth = match reference {
                Some(r) => {
                    let mut best = hyps[0].depth;
                    for c in &hyps[1..] {
                        if (c.depth - r).abs() < (best - r).abs() {
                            best = c.depth;
                        }
                    }
                    best
                }
                None => hyps[0].depth,
            };
            // Filled pixels keep the cap cost: texture-less holes cannot be
            // scored photometrically, so no support is claimed for them.
            out.set(
                x,
                y,
                PlaneHypothesis {
                    depth,
                    normal: Vector3::new(0.0, 0.0, -1.0),
                },
                c_max,
            );
            filled.push((x, y));
        }
    }
    for &(x, y) in &filled {
        let normal = recompute_normal(&out, x, y, &scene.ref_cam)
            .or_else(|| nearest_valid_normal(filtered, x, y))
            .unwrap_or_else(|| Vector3::new(0.0, 0.0, -1.0));
        let depth = out.depth(x, y);
        out.set(x, y, PlaneHypothesis { depth, normal }, c_max);
    }
    out
}
