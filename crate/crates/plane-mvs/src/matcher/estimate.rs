//! Checkerboard propagation, random refinement, and the per-image
//! estimation loop.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::window::{CostEvaluator, RefWindow, ViewMatch};
use super::{DepthNormalMap, MatchConfig};
use crate::geometry::{Camera, PlaneHypothesis};
use crate::initialization::{
    collect_reliable, init_pixel, scene_range, FeatureGrid, SceneDepthRange,
};
use crate::rng;
use crate::scene_io::{GrayImage, SparseModel};

const STAGE_INIT: u64 = 0;
const STAGE_REFINE: u64 = 1;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("no neighbor views were selected for image {0}")]
    NoNeighbors(u32),
    #[error("image {0} is not part of the loaded scene")]
    MissingImage(u32),
    #[error("image {0} carries no sparse depth cue for initialization")]
    NoDepthCue(u32),
    #[error("invalid matching configuration")]
    BadConfig,
}

/// Checkerboard color of a pixel: red where `x + y` is even.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Red,
    Black,
}

impl Phase {
    #[inline]
    pub fn of(x: usize, y: usize) -> Self {
        if (x + y) % 2 == 0 {
            Phase::Red
        } else {
            Phase::Black
        }
    }

    #[inline]
    fn parity(self) -> usize {
        match self {
            Phase::Red => 0,
            Phase::Black => 1,
        }
    }
}

/// One reference view with the source views it is matched against.
pub struct MatchScene<'a> {
    pub ref_cam: Camera,
    pub ref_img: &'a GrayImage,
    pub sources: Vec<(Camera, &'a GrayImage)>,
}

impl<'a> MatchScene<'a> {
    pub fn from_model(
        ref_id: u32,
        neighbors: &[u32],
        model: &SparseModel,
        images: &'a BTreeMap<u32, GrayImage>,
    ) -> Result<Self, MatchError> {
        let view = |id: u32| -> Result<(Camera, &'a GrayImage), MatchError> {
            let cam = model.camera(id).ok_or(MatchError::MissingImage(id))?;
            let img = images.get(&id).ok_or(MatchError::MissingImage(id))?;
            assert_eq!(
                (cam.width, cam.height),
                (img.width(), img.height()),
                "camera {id} and its image disagree on dimensions"
            );
            Ok((cam, img))
        };
        let (ref_cam, ref_img) = view(ref_id)?;
        let sources = neighbors
            .iter()
            .map(|&id| view(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            ref_cam,
            ref_img,
            sources,
        })
    }
}

/// Random perturbation applied to one hypothesis: a depth shift plus a
/// rotation of the normal in spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineDeltas {
    pub depth: f64,
    pub theta: f64,
    pub phi: f64,
}

impl RefineDeltas {
    /// Draws `Δd ~ U[-d_max/4, d_max/4]`, `Δθ ~ U[-π/2, π/2]`,
    /// `Δφ ~ U[-π/12, π/12]`.
    pub fn draw(range: &SceneDepthRange, rng: &mut impl Rng) -> Self {
        let q = range.d_max_scene / 4.0;
        Self {
            depth: rng.gen_range(-q..=q),
            theta: rng.gen_range(-FRAC_PI_2..=FRAC_PI_2),
            phi: rng.gen_range(-PI / 12.0..=PI / 12.0),
        }
    }
}

/// Transfers a neighbor's plane to the pixel with ray direction `ray`: the
/// depth at which the ray meets the plane `(depth, normal)` anchored at the
/// neighbor's ray `ray_n`. `None` when the plane misses the ray on the
/// camera side.
#[inline]
fn transfer_depth(
    depth: f64,
    normal: &Vector3<f64>,
    ray_n: &Vector3<f64>,
    ray: &Vector3<f64>,
) -> Option<f64> {
    let denom = normal.dot(ray);
    if denom.abs() < 1e-12 {
        return None;
    }
    let d = depth * normal.dot(ray_n) / denom;
    (d > 0.0 && d.is_finite()).then_some(d)
}

/// One red or black half-pass of checkerboard propagation.
///
/// Every pixel of the given color evaluates its eight offset neighbors'
/// planes at its own ray and adopts the cheapest candidate when it beats the
/// stored cost strictly. All candidates come from a snapshot of the map
/// taken when the pass starts, so results do not depend on pixel order.
pub fn propagate_checkerboard(
    map: &mut DepthNormalMap,
    phase: Phase,
    scene: &MatchScene,
    cfg: &MatchConfig,
) {
    let w = map.width();
    let h = map.height();
    let margin = cfg.border_margin();
    if w <= 2 * margin || h <= 2 * margin {
        return;
    }
    let snap = map.clone();
    let evaluator = CostEvaluator::new(&scene.ref_cam, &scene.sources);
    let parity = phase.parity();
    let (depths, normals, costs, _valid) = map.parts_mut();
    depths
        .par_chunks_mut(w)
        .zip(normals.par_chunks_mut(w))
        .zip(costs.par_chunks_mut(w))
        .enumerate()
        .for_each_init(
            || {
                (
                    RefWindow::new(cfg),
                    Vec::<ViewMatch>::new(),
                    Vec::<(f64, Vector3<f64>)>::new(),
                )
            },
            |(win, scratch, evaluated), (y, ((d_row, n_row), c_row))| {
                if y < margin || y + margin >= h {
                    return;
                }
                for x in margin..w - margin {
                    if (x + y) % 2 != parity || !snap.is_valid(x, y) {
                        continue;
                    }
                    let xf = x as f64;
                    let yf = y as f64;
                    if !win.gather(scene.ref_img, xf, yf, cfg) {
                        continue;
                    }
                    // A texture-less reference window scores every candidate
                    // at the sentinel cost, so nothing can win strictly.
                    if win.zero_variance() {
                        continue;
                    }
                    let ray = evaluator.ray(xf, yf);
                    let inc_depth = snap.depth(x, y);
                    let inc_normal = snap.normal(x, y);
                    let mut best_cost = snap.cost(x, y);
                    let mut best = None;
                    evaluated.clear();
                    for &(dx, dy) in &cfg.offsets {
                        let nx = x as isize + dx as isize;
                        let ny = y as isize + dy as isize;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !snap.is_valid(nx, ny) {
                            continue;
                        }
                        let n = snap.normal(nx, ny);
                        let ray_n = evaluator.ray(nx as f64, ny as f64);
                        let Some(d) = transfer_depth(snap.depth(nx, ny), &n, &ray_n, &ray)
                        else {
                            continue;
                        };
                        if (d == inc_depth && n == inc_normal)
                            || evaluated.iter().any(|&(pd, pn)| pd == d && pn == n)
                        {
                            continue;
                        }
                        evaluated.push((d, n));
                        let hyp = PlaneHypothesis {
                            depth: d,
                            normal: n,
                        };
                        let c = evaluator.cost(win, xf, yf, &hyp, cfg, scratch);
                        if c < best_cost {
                            best_cost = c;
                            best = Some(hyp);
                        }
                    }
                    if let Some(hyp) = best {
                        d_row[x] = hyp.depth;
                        n_row[x] = [hyp.normal.x, hyp.normal.y, hyp.normal.z];
                        c_row[x] = best_cost;
                    }
                }
            },
        );
}

/// Evaluates the perturbed candidates `{(d', n), (d, n'), (d', n')}` against
/// the incumbent `(d, n)` and returns the strict winner, if any.
fn refine_pixel(
    evaluator: &CostEvaluator,
    win: &RefWindow,
    x: f64,
    y: f64,
    deltas: &RefineDeltas,
    inc: &PlaneHypothesis,
    inc_cost: f64,
    cfg: &MatchConfig,
    scratch: &mut Vec<ViewMatch>,
) -> Option<(PlaneHypothesis, f64)> {
    let ray = evaluator.ray(x, y);
    let d_new = inc.depth + deltas.depth;
    let depth_ok = d_new > 0.0 && d_new.is_finite();
    // Zero-magnitude rotations must reproduce the incumbent normal exactly,
    // so they bypass the spherical decomposition.
    let n_new = if deltas.theta == 0.0 && deltas.phi == 0.0 {
        Some(inc.normal)
    } else {
        let theta = inc.normal.y.atan2(inc.normal.x) + deltas.theta;
        let phi = inc.normal.z.clamp(-1.0, 1.0).acos() + deltas.phi;
        let dir = Vector3::new(theta.cos() * phi.sin(), theta.sin() * phi.sin(), phi.cos());
        PlaneHypothesis::oriented(1.0, dir, &ray).map(|h| h.normal)
    };
    let mut candidates = [None; 3];
    if depth_ok {
        candidates[0] = Some(PlaneHypothesis {
            depth: d_new,
            normal: inc.normal,
        });
    }
    if let Some(n) = n_new {
        candidates[1] = Some(PlaneHypothesis {
            depth: inc.depth,
            normal: n,
        });
        if depth_ok {
            candidates[2] = Some(PlaneHypothesis {
                depth: d_new,
                normal: n,
            });
        }
    }
    let mut best: Option<(PlaneHypothesis, f64)> = None;
    let mut seen: [Option<PlaneHypothesis>; 3] = [None; 3];
    let mut n_seen = 0;
    for cand in candidates.into_iter().flatten() {
        if cand == *inc || seen[..n_seen].iter().any(|&s| s == Some(cand)) {
            continue;
        }
        seen[n_seen] = Some(cand);
        n_seen += 1;
        let c = evaluator.cost(win, x, y, &cand, cfg, scratch);
        if c < best.map_or(inc_cost, |(_, bc)| bc) {
            best = Some((cand, c));
        }
    }
    best
}

/// Applies one drawn perturbation to the pixel at `(x, y)`, keeping the
/// incumbent unless a candidate wins strictly.
pub fn refine_random(
    map: &mut DepthNormalMap,
    x: (usize, usize),
    range: &SceneDepthRange,
    rng: &mut impl Rng,
    scene: &MatchScene,
    cfg: &MatchConfig,
) {
    let deltas = RefineDeltas::draw(range, rng);
    refine_with_deltas(map, x, &deltas, scene, cfg);
}

/// [`refine_random`] with the perturbation spelled out, for callers that
/// manage their own draws.
pub fn refine_with_deltas(
    map: &mut DepthNormalMap,
    (x, y): (usize, usize),
    deltas: &RefineDeltas,
    scene: &MatchScene,
    cfg: &MatchConfig,
) {
    let Some(inc) = map.hypothesis(x, y) else {
        return;
    };
    let evaluator = CostEvaluator::new(&scene.ref_cam, &scene.sources);
    let mut win = RefWindow::new(cfg);
    if !win.gather(scene.ref_img, x as f64, y as f64, cfg) || win.zero_variance() {
        return;
    }
    let mut scratch = Vec::new();
    if let Some((hyp, cost)) = refine_pixel(
        &evaluator,
        &win,
        x as f64,
        y as f64,
        deltas,
        &inc,
        map.cost(x, y),
        cfg,
        &mut scratch,
    ) {
        map.set(x, y, hyp, cost);
    }
}

/// Refines every valid pixel once with its own deterministic draw.
fn refine_all(
    map: &mut DepthNormalMap,
    scene: &MatchScene,
    range: &SceneDepthRange,
    cfg: &MatchConfig,
    ref_id: u32,
    seed: u64,
    iteration: u32,
) {
    let w = map.width();
    let h = map.height();
    let margin = cfg.border_margin();
    if w <= 2 * margin || h <= 2 * margin {
        return;
    }
    let evaluator = CostEvaluator::new(&scene.ref_cam, &scene.sources);
    let (depths, normals, costs, valid) = map.parts_mut();
    depths
        .par_chunks_mut(w)
        .zip(normals.par_chunks_mut(w))
        .zip(costs.par_chunks_mut(w))
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each_init(
            || (RefWindow::new(cfg), Vec::<ViewMatch>::new()),
            |(win, scratch), (y, (((d_row, n_row), c_row), v_row))| {
                if y < margin || y + margin >= h {
                    return;
                }
                for x in margin..w - margin {
                    if !v_row[x] {
                        continue;
                    }
                    let xf = x as f64;
                    let yf = y as f64;
                    if !win.gather(scene.ref_img, xf, yf, cfg) || win.zero_variance() {
                        continue;
                    }
                    let mut rng = rng::stream(
                        seed,
                        &[
                            ref_id as u64,
                            STAGE_REFINE,
                            iteration as u64,
                            (y * w + x) as u64,
                        ],
                    );
                    let deltas = RefineDeltas::draw(range, &mut rng);
                    let inc = PlaneHypothesis {
                        depth: d_row[x],
                        normal: Vector3::new(n_row[x][0], n_row[x][1], n_row[x][2]),
                    };
                    if let Some((hyp, cost)) = refine_pixel(
                        &evaluator, win, xf, yf, &deltas, &inc, c_row[x], cfg, scratch,
                    ) {
                        d_row[x] = hyp.depth;
                        n_row[x] = [hyp.normal.x, hyp.normal.y, hyp.normal.z];
                        c_row[x] = cost;
                    }
                }
            },
        );
}

/// Draws an initial hypothesis for every pixel that can host a full window
/// and scores it.
fn init_map(
    scene: &MatchScene,
    grid: &FeatureGrid,
    range: &SceneDepthRange,
    cfg: &MatchConfig,
    ref_id: u32,
    seed: u64,
) -> DepthNormalMap {
    let w = scene.ref_img.width();
    let h = scene.ref_img.height();
    let mut map = DepthNormalMap::new(w, h, cfg.c_max());
    let margin = cfg.border_margin();
    if w <= 2 * margin || h <= 2 * margin {
        return map;
    }
    let evaluator = CostEvaluator::new(&scene.ref_cam, &scene.sources);
    let (depths, normals, costs, valid) = map.parts_mut();
    depths
        .par_chunks_mut(w)
        .zip(normals.par_chunks_mut(w))
        .zip(costs.par_chunks_mut(w))
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each_init(
            || (RefWindow::new(cfg), Vec::<ViewMatch>::new()),
            |(win, scratch), (y, (((d_row, n_row), c_row), v_row))| {
                if y < margin || y + margin >= h {
                    return;
                }
                for x in margin..w - margin {
                    let xf = x as f64;
                    let yf = y as f64;
                    if !win.gather(scene.ref_img, xf, yf, cfg) {
                        continue;
                    }
                    let mut rng =
                        rng::stream(seed, &[ref_id as u64, STAGE_INIT, (y * w + x) as u64]);
                    let ray = evaluator.ray(xf, yf);
                    let hyp = init_pixel(&Vector2::new(xf, yf), &ray, grid, range, &mut rng);
                    let c = evaluator.cost(win, xf, yf, &hyp, cfg, scratch);
                    d_row[x] = hyp.depth;
                    n_row[x] = [hyp.normal.x, hyp.normal.y, hyp.normal.z];
                    c_row[x] = c;
                    v_row[x] = true;
                }
            },
        );
    map
}

/// Estimates the depth/normal map of one reference image against its
/// selected neighbors: random initialization, then `iterations` rounds of
/// red propagation, black propagation, and per-pixel random refinement.
/// The same seed always yields the same map.
pub fn estimate_depth_map(
    ref_id: u32,
    neighbors: &[u32],
    model: &SparseModel,
    images: &BTreeMap<u32, GrayImage>,
    cfg: &MatchConfig,
    seed: u64,
) -> Result<DepthNormalMap, MatchError> {
    if neighbors.is_empty() {
        return Err(MatchError::NoNeighbors(ref_id));
    }
    if !cfg.validate() {
        return Err(MatchError::BadConfig);
    }
    let scene = MatchScene::from_model(ref_id, neighbors, model, images)?;
    let features = collect_reliable(model, ref_id);
    let range = scene_range(model, ref_id, &features).ok_or(MatchError::NoDepthCue(ref_id))?;
    let grid = FeatureGrid::new(features, scene.ref_img.width(), scene.ref_img.height());
    let mut map = init_map(&scene, &grid, &range, cfg, ref_id, seed);
    for iteration in 0..cfg.iterations {
        propagate_checkerboard(&mut map, Phase::Red, &scene, cfg);
        propagate_checkerboard(&mut map, Phase::Black, &scene, cfg);
        refine_all(&mut map, &scene, &range, cfg, ref_id, seed, iteration);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::scene_io::{CameraIntrinsics, CameraKind, ImageMeta, Observation, Point3D};
    use nalgebra::Matrix3;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use std::f64::consts::TAU;

    fn hash3(i: i64, j: i64, k: i64) -> f64 {
        let mut v = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ (k as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
        v ^= v >> 30;
        v = v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        v ^= v >> 27;
        v = v.wrapping_mul(0x94D0_49BB_1331_11EB);
        v ^= v >> 31;
        (v >> 11) as f64 / (1u64 << 53) as f64
    }

    fn value_noise(u: f64, v: f64, octave: i64) -> f64 {
        let fu = u - u.floor();
        let fv = v - v.floor();
        let (iu, iv) = (u.floor() as i64, v.floor() as i64);
        let v00 = hash3(iu, iv, octave);
        let v10 = hash3(iu + 1, iv, octave);
        let v01 = hash3(iu, iv + 1, octave);
        let v11 = hash3(iu + 1, iv + 1, octave);
        let a = v00 + (v10 - v00) * fu;
        let b = v01 + (v11 - v01) * fu;
        a + (b - a) * fv
    }

    /// Two value-noise octaves on rotated lattices; rotation keeps lattice
    /// lines off the camera baselines, which would otherwise leave the
    /// matcher shift-ambiguous along them.
    fn plane_texture(u: f64, v: f64) -> f64 {
        let a = value_noise(2.0 * (0.92 * u - 0.39 * v), 2.0 * (0.39 * u + 0.92 * v), 0);
        let b = value_noise(5.0 * (0.51 * u + 0.86 * v), 5.0 * (0.86 * u - 0.51 * v), 1);
        0.55 * a + 0.45 * b
    }

    /// Cameras looking down +z from z = 0, centered at the given offsets.
    fn rig(offsets: &[(f64, f64)], w: usize, h: usize) -> Vec<Camera> {
        offsets
            .iter()
            .map(|&(ox, oy)| Camera {
                fx: 0.9 * w as f64,
                fy: 0.9 * w as f64,
                cx: (w as f64 - 1.0) / 2.0,
                cy: (h as f64 - 1.0) / 2.0,
                r: Matrix3::identity(),
                t: Vector3::new(-ox, -oy, 0.0),
                width: w,
                height: h,
            })
            .collect()
    }

    /// Depth of the plane `z = a * x + c` along the pixel ray of `cam`.
    fn plane_depth(cam: &Camera, x: f64, _y: f64, a: f64, c: f64) -> f64 {
        let rx = (x - cam.cx) / cam.fx;
        let center = cam.center();
        (a * center.x + c) / (1.0 - a * rx)
    }

    fn plane_normal(a: f64) -> Vector3<f64> {
        Vector3::new(a, 0.0, -1.0).normalize()
    }

    fn render(cam: &Camera, a: f64, c: f64) -> GrayImage {
        let center = cam.center();
        GrayImage::from_fn(cam.width, cam.height, |x, y| {
            let d = plane_depth(cam, x as f64, y as f64, a, c);
            let u = center.x + d * (x as f64 - cam.cx) / cam.fx;
            let v = center.y + d * (y as f64 - cam.cy) / cam.fy;
            plane_texture(u, v) as f32
        })
    }

    fn match_scene<'a>(cams: &[Camera], imgs: &'a [GrayImage]) -> MatchScene<'a> {
        MatchScene {
            ref_cam: cams[0].clone(),
            ref_img: &imgs[0],
            sources: cams[1..]
                .iter()
                .cloned()
                .zip(imgs[1..].iter())
                .collect(),
        }
    }

    fn cost_at(scene: &MatchScene, cfg: &MatchConfig, x: usize, y: usize, hyp: &PlaneHypothesis) -> f64 {
        let evaluator = CostEvaluator::new(&scene.ref_cam, &scene.sources);
        let mut win = RefWindow::new(cfg);
        assert!(win.gather(scene.ref_img, x as f64, y as f64, cfg));
        evaluator.cost(&win, x as f64, y as f64, hyp, cfg, &mut Vec::new())
    }

    /// Fills every interior pixel with the same hypothesis and its cost.
    fn uniform_init(map: &mut DepthNormalMap, scene: &MatchScene, cfg: &MatchConfig, hyp: PlaneHypothesis) {
        let m = cfg.border_margin();
        for y in m..map.height() - m {
            for x in m..map.width() - m {
                let c = cost_at(scene, cfg, x, y, &hyp);
                map.set(x, y, hyp, c);
            }
        }
    }

    /// Fills every interior pixel with an independent random hypothesis.
    fn random_init(
        map: &mut DepthNormalMap,
        scene: &MatchScene,
        cfg: &MatchConfig,
        lo: f64,
        hi: f64,
        seed: u64,
    ) {
        let evaluator = CostEvaluator::new(&scene.ref_cam, &scene.sources);
        let mut win = RefWindow::new(cfg);
        let mut scratch = Vec::new();
        let mut rng = StdRng::seed_from_u64(seed);
        let m = cfg.border_margin();
        for y in m..map.height() - m {
            for x in m..map.width() - m {
                let ray = evaluator.ray(x as f64, y as f64);
                let hyp = loop {
                    let d = rng.gen_range(lo..=hi);
                    let theta = rng.gen_range(0.0..TAU);
                    let z = rng.gen_range(-1.0..1.0f64);
                    let s = (1.0 - z * z).sqrt();
                    let dir = Vector3::new(s * theta.cos(), s * theta.sin(), z);
                    if let Some(h) = PlaneHypothesis::oriented(d, dir, &ray) {
                        break h;
                    }
                };
                assert!(win.gather(scene.ref_img, x as f64, y as f64, cfg));
                let c = evaluator.cost(&win, x as f64, y as f64, &hyp, cfg, &mut scratch);
                map.set(x, y, hyp, c);
            }
        }
    }

    fn fraction_within(map: &DepthNormalMap, cfg: &MatchConfig, a: f64, c: f64, tol: f64, cam: &Camera) -> f64 {
        let m = cfg.border_margin();
        let mut hit = 0usize;
        let mut total = 0usize;
        for y in m..map.height() - m {
            for x in m..map.width() - m {
                let gt = plane_depth(cam, x as f64, y as f64, a, c);
                total += 1;
                if map.is_valid(x, y) && (map.depth(x, y) - gt).abs() / gt < tol {
                    hit += 1;
                }
            }
        }
        hit as f64 / total as f64
    }

    /// Sparse model for the rig: a grid of plane points observed by every
    /// camera that sees them.
    fn rig_model(cams: &[Camera], a: f64, c: f64) -> SparseModel {
        let mut model = SparseModel {
            cameras: BTreeMap::new(),
            images: BTreeMap::new(),
            points: BTreeMap::new(),
        };
        let cam0 = &cams[0];
        model.cameras.insert(
            1,
            CameraIntrinsics {
                id: 1,
                kind: CameraKind::Pinhole,
                width: cam0.width,
                height: cam0.height,
                fx: cam0.fx,
                fy: cam0.fy,
                cx: cam0.cx,
                cy: cam0.cy,
            },
        );
        for (i, cam) in cams.iter().enumerate() {
            model.images.insert(
                i as u32 + 1,
                ImageMeta {
                    id: i as u32 + 1,
                    camera_id: 1,
                    name: format!("img{}.png", i + 1),
                    qvec: [1.0, 0.0, 0.0, 0.0],
                    tvec: cam.t,
                    observations: Vec::new(),
                },
            );
        }
        let mut pid = 0u64;
        for gy in 0..6 {
            for gx in 0..6 {
                let px = 8.0 + gx as f64 * 6.0;
                let py = 8.0 + gy as f64 * 6.0;
                let d = plane_depth(cam0, px, py, a, c);
                let center = cam0.center();
                let p = Vector3::new(
                    center.x + d * (px - cam0.cx) / cam0.fx,
                    center.y + d * (py - cam0.cy) / cam0.fy,
                    d,
                );
                pid += 1;
                let mut track = Vec::new();
                for (i, cam) in cams.iter().enumerate() {
                    let Ok((pix, depth)) = project(cam, &p) else {
                        continue;
                    };
                    if depth <= 0.0
                        || pix.x < 0.0
                        || pix.y < 0.0
                        || pix.x > cam.width as f64 - 1.0
                        || pix.y > cam.height as f64 - 1.0
                    {
                        continue;
                    }
                    let img = model.images.get_mut(&(i as u32 + 1)).unwrap();
                    track.push((i as u32 + 1, img.observations.len() as u32));
                    img.observations.push(Observation {
                        x: pix.x,
                        y: pix.y,
                        point3d: Some(pid),
                    });
                }
                assert!(track.len() >= 2);
                model.points.insert(
                    pid,
                    Point3D {
                        id: pid,
                        position: p,
                        color: [128; 3],
                        reproj_error: 0.0,
                        track,
                    },
                );
            }
        }
        model
    }

    #[test]
    fn propagation_spreads_a_seed_hypothesis() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25), (-0.45, -0.25)], 48, 48);
        let imgs: Vec<_> = cams.iter().map(|c| render(c, 0.0, 5.0)).collect();
        let scene = match_scene(&cams, &imgs);
        let cfg = MatchConfig::default();
        let mut map = DepthNormalMap::new(48, 48, cfg.c_max());
        random_init(&mut map, &scene, &cfg, 3.0, 8.0, 7);
        let truth = PlaneHypothesis {
            depth: 5.0,
            normal: plane_normal(0.0),
        };
        let seed_cost = cost_at(&scene, &cfg, 24, 24, &truth);
        map.set(24, 24, truth, seed_cost);
        for _ in 0..8 {
            propagate_checkerboard(&mut map, Phase::Red, &scene, &cfg);
            propagate_checkerboard(&mut map, Phase::Black, &scene, &cfg);
        }
        let frac = fraction_within(&map, &cfg, 0.0, 5.0, 0.01, &cams[0]);
        assert!(frac >= 0.95, "only {frac:.3} of interior pixels converged");
    }

    #[test]
    fn converged_map_is_a_propagation_fixed_point() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25), (-0.45, -0.25)], 48, 48);
        let imgs: Vec<_> = cams.iter().map(|c| render(c, 0.0, 5.0)).collect();
        let scene = match_scene(&cams, &imgs);
        let cfg = MatchConfig::default();
        let mut map = DepthNormalMap::new(48, 48, cfg.c_max());
        uniform_init(
            &mut map,
            &scene,
            &cfg,
            PlaneHypothesis {
                depth: 5.0,
                normal: plane_normal(0.0),
            },
        );
        let before = map.clone();
        propagate_checkerboard(&mut map, Phase::Red, &scene, &cfg);
        propagate_checkerboard(&mut map, Phase::Black, &scene, &cfg);
        assert_eq!(map, before);
    }

    #[test]
    fn propagation_never_increases_stored_costs() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25), (-0.45, -0.25)], 48, 48);
        let imgs: Vec<_> = cams.iter().map(|c| render(c, 0.25, 5.0)).collect();
        let scene = match_scene(&cams, &imgs);
        let cfg = MatchConfig::default();
        let mut map = DepthNormalMap::new(48, 48, cfg.c_max());
        random_init(&mut map, &scene, &cfg, 3.0, 8.0, 11);
        for _ in 0..3 {
            for phase in [Phase::Red, Phase::Black] {
                let before = map.costs().to_vec();
                propagate_checkerboard(&mut map, phase, &scene, &cfg);
                for (after, before) in map.costs().iter().zip(&before) {
                    assert!(after <= before);
                }
            }
        }
    }

    #[test]
    fn propagation_candidates_come_from_the_phase_start_state() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25), (-0.45, -0.25)], 48, 48);
        let imgs: Vec<_> = cams.iter().map(|c| render(c, 0.0, 5.0)).collect();
        let scene = match_scene(&cams, &imgs);
        // A same-color offset makes in-pass updates observable: with live
        // reads, the chain (20,24) -> (22,24) -> (24,24) would converge in a
        // single red pass.
        let cfg = MatchConfig {
            offsets: vec![(-2, 0)],
            ..MatchConfig::default()
        };
        let bad = PlaneHypothesis {
            depth: 6.5,
            normal: plane_normal(0.0),
        };
        let good = PlaneHypothesis {
            depth: 5.0,
            normal: plane_normal(0.0),
        };
        let mut map = DepthNormalMap::new(48, 48, cfg.c_max());
        uniform_init(&mut map, &scene, &cfg, bad);
        map.set(20, 24, good, cost_at(&scene, &cfg, 20, 24, &good));
        propagate_checkerboard(&mut map, Phase::Red, &scene, &cfg);
        assert_eq!(map.depth(22, 24), 5.0);
        assert_eq!(map.depth(24, 24), 6.5);
    }

    #[test]
    fn zero_magnitude_refine_keeps_the_pixel() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25), (-0.45, -0.25)], 48, 48);
        let imgs: Vec<_> = cams.iter().map(|c| render(c, 0.25, 5.0)).collect();
        let scene = match_scene(&cams, &imgs);
        let cfg = MatchConfig::default();
        let mut map = DepthNormalMap::new(48, 48, cfg.c_max());
        random_init(&mut map, &scene, &cfg, 3.0, 8.0, 3);
        let before = map.clone();
        let zero = RefineDeltas {
            depth: 0.0,
            theta: 0.0,
            phi: 0.0,
        };
        for (x, y) in [(10, 10), (24, 24), (31, 17), (40, 40)] {
            refine_with_deltas(&mut map, (x, y), &zero, &scene, &cfg);
        }
        assert_eq!(map, before);
    }

    #[test]
    fn refinement_never_increases_cost_and_usually_improves_the_map() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25), (-0.45, -0.25)], 48, 48);
        let imgs: Vec<_> = cams.iter().map(|c| render(c, 0.25, 5.0)).collect();
        let scene = match_scene(&cams, &imgs);
        let cfg = MatchConfig::default();
        let range = SceneDepthRange {
            d_min_scene: 4.0,
            d_max_scene: 7.0,
        };
        let mut improved_everywhere = 0;
        for seed in 0..10u64 {
            let mut map = DepthNormalMap::new(48, 48, cfg.c_max());
            random_init(&mut map, &scene, &cfg, 3.0, 8.0, 100 + seed);
            let mut strict = true;
            for iteration in 0..8 {
                let before = map.costs().to_vec();
                let mean_before = map.mean_cost_over_valid();
                refine_all(&mut map, &scene, &range, &cfg, 1, seed, iteration);
                for (after, before) in map.costs().iter().zip(&before) {
                    assert!(after <= before);
                }
                if map.mean_cost_over_valid() >= mean_before {
                    strict = false;
                }
            }
            if strict {
                improved_everywhere += 1;
            }
        }
        assert!(
            improved_everywhere >= 9,
            "mean cost decreased every iteration in only {improved_everywhere}/10 seeds"
        );
    }

    #[test]
    fn estimation_recovers_a_tilted_plane() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25), (-0.45, -0.25)], 48, 48);
        let (a, c) = (0.25, 5.0);
        let imgs: Vec<_> = cams.iter().map(|cam| render(cam, a, c)).collect();
        let model = rig_model(&cams, a, c);
        let loaded: BTreeMap<u32, GrayImage> = (1..=3u32)
            .zip(imgs.iter().cloned())
            .collect();
        let cfg = MatchConfig {
            iterations: 6,
            ..MatchConfig::default()
        };
        let map = estimate_depth_map(1, &[2, 3], &model, &loaded, &cfg, 9).unwrap();
        let frac = fraction_within(&map, &cfg, a, c, 0.01, &cams[0]);
        assert!(frac >= 0.9, "only {frac:.3} of interior pixels converged");
        let gt_n = plane_normal(a);
        let m = cfg.border_margin();
        let mut angles: Vec<f64> = Vec::new();
        for y in m..map.height() - m {
            for x in m..map.width() - m {
                angles.push(map.normal(x, y).dot(&gt_n).clamp(-1.0, 1.0).acos());
            }
        }
        angles.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let median = angles[angles.len() / 2].to_degrees();
        assert!(median < 10.0, "median normal error {median:.2} degrees");
    }

    #[test]
    fn estimation_is_deterministic() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25), (-0.45, -0.25)], 48, 48);
        let imgs: Vec<_> = cams.iter().map(|cam| render(cam, 0.25, 5.0)).collect();
        let model = rig_model(&cams, 0.25, 5.0);
        let loaded: BTreeMap<u32, GrayImage> = (1..=3u32)
            .zip(imgs.iter().cloned())
            .collect();
        let cfg = MatchConfig {
            iterations: 2,
            ..MatchConfig::default()
        };
        let first = estimate_depth_map(1, &[2, 3], &model, &loaded, &cfg, 42).unwrap();
        let second = estimate_depth_map(1, &[2, 3], &model, &loaded, &cfg, 42).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn estimation_rejects_missing_neighbors_and_bad_configs() {
        let cams = rig(&[(0.0, 0.0), (0.45, 0.25)], 48, 48);
        let imgs: Vec<_> = cams.iter().map(|cam| render(cam, 0.0, 5.0)).collect();
        let model = rig_model(&cams, 0.0, 5.0);
        let loaded: BTreeMap<u32, GrayImage> = (1..=2u32)
            .zip(imgs.iter().cloned())
            .collect();
        let cfg = MatchConfig::default();
        assert!(matches!(
            estimate_depth_map(1, &[], &model, &loaded, &cfg, 0),
            Err(MatchError::NoNeighbors(1))
        ));
        let broken = MatchConfig {
            r_now: 0,
            ..MatchConfig::default()
        };
        assert!(matches!(
            estimate_depth_map(1, &[2], &model, &loaded, &broken, 0),
            Err(MatchError::BadConfig)
        ));
        assert!(matches!(
            estimate_depth_map(9, &[2], &model, &loaded, &cfg, 0),
            Err(MatchError::MissingImage(9))
        ));
    }
}
