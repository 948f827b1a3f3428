//! Random per-pixel initialization of depth and normal hypotheses.
//!
//! Depths are drawn from intervals spanned by nearby reliable sparse
//! features when enough of them surround the pixel, falling back to a robust
//! scene-wide range. Normals are sampled on the sphere and flipped to face
//! the camera.

use nalgebra::{Vector2, Vector3};
use rand::Rng;

use crate::geometry::PlaneHypothesis;
use crate::scene_io::SparseModel;

/// A sparse feature trusted enough to anchor depth initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliableFeature {
    pub pixel: Vector2<f64>,
    /// Camera-frame z of the linked 3D point in the reference view.
    pub depth: f64,
}

/// Robust depth bounds for one reference view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneDepthRange {
    pub d_min_scene: f64,
    pub d_max_scene: f64,
}

/// Maximum reprojection error for a feature to count as reliable.
const MAX_REPROJ_ERROR: f64 = 2.0;

/// Filters the reference image's linked features: reprojection error below 2
/// pixels, track length at least `⌊v - 1⌋` for scene mean track length `v`,
/// and positive depth. The per-pixel distance gate is applied at query time
/// by [`FeatureGrid`].
pub fn collect_reliable(model: &SparseModel, ref_id: u32) -> Vec<ReliableFeature> {
    let Some(cam) = model.camera(ref_id) else {
        return Vec::new();
    };
    let Some(meta) = model.images.get(&ref_id) else {
        return Vec::new();
    };
    let min_track = (model.mean_track_length() - 1.0).floor().max(0.0) as usize;
    let mut features = Vec::new();
    for obs in &meta.observations {
        let Some(pid) = obs.point3d else { continue };
        let Some(point) = model.points.get(&pid) else {
            continue;
        };
        if point.reproj_error >= MAX_REPROJ_ERROR || point.track.len() < min_track {
            continue;
        }
        let depth = cam.world_to_cam(&point.position).z;
        if depth > 0.0 {
            features.push(ReliableFeature {
                pixel: Vector2::new(obs.x, obs.y),
                depth,
            });
        }
    }
    features
}

/// 1st/99th percentile (nearest-rank) depth bounds from reliable features,
/// falling back to all linked points of the image when none are reliable.
/// `None` when the image has no depth cue at all.
pub fn scene_range(model: &SparseModel, ref_id: u32, features: &[ReliableFeature]) -> Option<SceneDepthRange> {
    let mut depths: Vec<f64> = features.iter().map(|f| f.depth).collect();
    if depths.is_empty() {
        let cam = model.camera(ref_id)?;
        let meta = model.images.get(&ref_id)?;
        depths = meta
            .observations
            .iter()
            .filter_map(|o| o.point3d)
            .filter_map(|pid| model.points.get(&pid))
            .map(|p| cam.world_to_cam(&p.position).z)
            .filter(|&d| d > 0.0)
            .collect();
    }
    if depths.is_empty() {
        return None;
    }
    depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = |p: f64| -> f64 {
        let idx = ((p * depths.len() as f64).ceil() as usize).clamp(1, depths.len());
        depths[idx - 1]
    };
    Some(SceneDepthRange {
        d_min_scene: rank(0.01),
        d_max_scene: rank(0.99),
    })
}

/// Uniform-grid spatial index over reliable features, answering "nearest
/// feature per quadrant within the distance gate" queries.
#[derive(Debug)]
pub struct FeatureGrid {
    features: Vec<ReliableFeature>,
    bins: Vec<Vec<u32>>,
    cols: usize,
    rows: usize,
    cell: f64,
    radius: f64,
}

impl FeatureGrid {
    /// `width` is the reference image width; the distance gate is a tenth
    /// of it.
    pub fn new(features: Vec<ReliableFeature>, width: usize, height: usize) -> Self {
        let radius = width as f64 / 10.0;
        let cell = radius.max(1.0);
        let cols = (width as f64 / cell).ceil().max(1.0) as usize;
        let rows = (height as f64 / cell).ceil().max(1.0) as usize;
        let mut bins = vec![Vec::new(); cols * rows];
        for (i, f) in features.iter().enumerate() {
            let bx = ((f.pixel.x / cell) as isize).clamp(0, cols as isize - 1) as usize;
            let by = ((f.pixel.y / cell) as isize).clamp(0, rows as isize - 1) as usize;
            bins[by * cols + bx].push(i as u32);
        }
        Self {
            features,
            bins,
            cols,
            rows,
            cell,
            radius,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Depth of the nearest in-gate feature in each pixel quadrant around
    /// `(x, y)`: 0 up-left, 1 up-right, 2 down-left, 3 down-right.
    pub fn quadrant_depths(&self, x: f64, y: f64) -> [Option<f64>; 4] {
        let mut best_d2 = [f64::INFINITY; 4];
        let mut best = [None; 4];
        let bx = ((x / self.cell) as isize).clamp(0, self.cols as isize - 1);
        let by = ((y / self.cell) as isize).clamp(0, self.rows as isize - 1);
        let r2 = self.radius * self.radius;
        for gy in (by - 1).max(0)..=(by + 1).min(self.rows as isize - 1) {
            for gx in (bx - 1).max(0)..=(bx + 1).min(self.cols as isize - 1) {
                for &i in &self.bins[gy as usize * self.cols + gx as usize] {
                    let f = &self.features[i as usize];
                    let dx = f.pixel.x - x;
                    let dy = f.pixel.y - y;
                    let d2 = dx * dx + dy * dy;
                    if d2 >= r2 {
                        continue;
                    }
                    let q = (dx >= 0.0) as usize + 2 * (dy >= 0.0) as usize;
                    if d2 < best_d2[q] {
                        best_d2[q] = d2;
                        best[q] = Some(f.depth);
                    }
                }
            }
        }
        best
    }
}

/// Draws an initial hypothesis for the pixel at `x` with camera-frame ray
/// direction `ray`. With features in at least two quadrants the depth is
/// uniform over their depth span; otherwise it is uniform over the scene
/// range. The normal is spherical-uniform, re-oriented toward the camera.
pub fn init_pixel(
    x: &Vector2<f64>,
    ray: &Vector3<f64>,
    grid: &FeatureGrid,
    range: &SceneDepthRange,
    rng: &mut impl Rng,
) -> PlaneHypothesis {
    let quadrants = grid.quadrant_depths(x.x, x.y);
    let depths: Vec<f64> = quadrants.iter().flatten().copied().collect();
    let depth = if depths.len() >= 2 {
        let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rng.gen_range(lo..=hi)
    } else {
        rng.gen_range(range.d_min_scene..=range.d_max_scene)
    };
    let normal = sample_facing_normal(ray, rng);
    PlaneHypothesis { depth, normal }
}

/// Spherical normal sample `(cosθ sinφ, sinθ sinφ, cosφ)` flipped to face
/// the camera; the rare draw perpendicular to the ray is rejected.
pub fn sample_facing_normal(ray: &Vector3<f64>, rng: &mut impl Rng) -> Vector3<f64> {
    for _ in 0..16 {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let phi = rng.gen_range(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2);
        let n = Vector3::new(
            theta.cos() * phi.sin(),
            theta.sin() * phi.sin(),
            phi.cos(),
        );
        if let Some(hyp) = PlaneHypothesis::oriented(1.0, n, ray) {
            return hyp.normal;
        }
    }
    -ray.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::scene_io::{CameraIntrinsics, CameraKind, ImageMeta, Observation, Point3D};
    use approx::assert_relative_eq;

    fn flat_model(reproj_error: f64, extra_track: usize) -> SparseModel {
        let mut model = SparseModel::default();
        model.cameras.insert(
            1,
            CameraIntrinsics {
                id: 1,
                kind: CameraKind::Pinhole,
                width: 320,
                height: 240,
                fx: 288.0,
                fy: 288.0,
                cx: 159.5,
                cy: 119.5,
            },
        );
        for id in 1..=6u32 {
            model.images.insert(
                id,
                ImageMeta {
                    id,
                    camera_id: 1,
                    name: format!("{id}.png"),
                    qvec: [1.0, 0.0, 0.0, 0.0],
                    tvec: Vector3::new(0.1 * id as f64, 0.0, 0.0),
                    observations: Vec::new(),
                },
            );
        }
        for pid in 0..20u64 {
            let gx = (pid % 5) as f64;
            let gy = (pid / 5) as f64;
            let p = Vector3::new(gx - 2.0, gy - 1.5, 5.0);
            let mut track = Vec::new();
            for id in 1..=2u32 {
                let img = model.images.get_mut(&id).unwrap();
                track.push((id, img.observations.len() as u32));
                img.observations.push(Observation {
                    x: 288.0 * p.x / p.z + 159.5,
                    y: 288.0 * p.y / p.z + 119.5,
                    point3d: Some(pid),
                });
            }
            for id in 3..3 + extra_track as u32 {
                track.push((id, 0));
            }
            model.points.insert(
                pid,
                Point3D {
                    id: pid,
                    position: p,
                    color: [0, 0, 0],
                    reproj_error,
                    track,
                },
            );
        }
        model
    }

    #[test]
    fn high_error_points_are_rejected() {
        let model = flat_model(5.0, 0);
        assert!(collect_reliable(&model, 1).is_empty());
    }

    #[test]
    fn short_tracks_are_rejected() {
        // 19 points tracked in 5 images and one in 2 give mean length 4.85,
        // so the ⌊v-1⌋ = 3 threshold filters the short track.
        let mut model = flat_model(0.5, 3);
        let poor = model.points.get_mut(&0).unwrap();
        poor.track.truncate(2);
        let features = collect_reliable(&model, 1);
        assert_eq!(features.len(), 19);
    }

    #[test]
    fn reliable_features_carry_camera_depth() {
        let model = flat_model(0.5, 0);
        let features = collect_reliable(&model, 1);
        assert_eq!(features.len(), 20);
        for f in &features {
            assert_relative_eq!(f.depth, 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn scene_range_uses_percentiles() {
        let features: Vec<ReliableFeature> = (1..=100)
            .map(|i| ReliableFeature {
                pixel: Vector2::new(i as f64, i as f64),
                depth: i as f64,
            })
            .collect();
        let model = flat_model(0.5, 0);
        let range = scene_range(&model, 1, &features).unwrap();
        assert_eq!(range.d_min_scene, 1.0);
        assert_eq!(range.d_max_scene, 99.0);
    }

    #[test]
    fn scene_range_falls_back_to_linked_points() {
        let model = flat_model(5.0, 0);
        let features = collect_reliable(&model, 1);
        assert!(features.is_empty());
        let range = scene_range(&model, 1, &features).unwrap();
        assert_relative_eq!(range.d_min_scene, 5.0, epsilon = 1e-12);
        assert_relative_eq!(range.d_max_scene, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrant_gate_and_interval() {
        let features = vec![
            ReliableFeature { pixel: Vector2::new(90.0, 90.0), depth: 5.0 },
            ReliableFeature { pixel: Vector2::new(110.0, 90.0), depth: 6.0 },
            ReliableFeature { pixel: Vector2::new(90.0, 110.0), depth: 7.0 },
            ReliableFeature { pixel: Vector2::new(110.0, 110.0), depth: 8.0 },
            // Far feature in the up-left quadrant, outside the 32 px gate.
            ReliableFeature { pixel: Vector2::new(10.0, 10.0), depth: 100.0 },
        ];
        let grid = FeatureGrid::new(features, 320, 240);
        let q = grid.quadrant_depths(100.0, 100.0);
        assert_eq!(q, [Some(5.0), Some(6.0), Some(7.0), Some(8.0)]);

        let far = grid.quadrant_depths(280.0, 200.0);
        assert_eq!(far, [None; 4]);
    }

    #[test]
    fn equal_quadrant_depths_give_exact_depth() {
        let features = (0..4)
            .map(|i| ReliableFeature {
                pixel: Vector2::new(95.0 + 10.0 * (i % 2) as f64, 95.0 + 10.0 * (i / 2) as f64),
                depth: 5.0,
            })
            .collect();
        let grid = FeatureGrid::new(features, 320, 240);
        let range = SceneDepthRange { d_min_scene: 1.0, d_max_scene: 50.0 };
        let mut rng = stream(3, &[0]);
        for _ in 0..50 {
            let hyp = init_pixel(
                &Vector2::new(100.0, 100.0),
                &Vector3::new(0.0, 0.0, 1.0),
                &grid,
                &range,
                &mut rng,
            );
            assert_eq!(hyp.depth, 5.0);
        }
    }

    #[test]
    fn empty_features_draw_from_scene_range() {
        let grid = FeatureGrid::new(Vec::new(), 320, 240);
        let range = SceneDepthRange { d_min_scene: 2.0, d_max_scene: 9.0 };
        let mut rng = stream(4, &[1]);
        let ray = Vector3::new(0.05, -0.03, 1.0);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let hyp = init_pixel(&Vector2::new(13.0, 157.0), &ray, &grid, &range, &mut rng);
            assert!(hyp.depth >= 2.0 && hyp.depth <= 9.0);
            assert!(hyp.normal.dot(&ray) < 0.0, "normal must face the camera");
            assert_relative_eq!(hyp.normal.norm(), 1.0, epsilon = 1e-9);
            lo = lo.min(hyp.depth);
            hi = hi.max(hyp.depth);
        }
        assert!(lo < 2.07, "empirical min {lo} too far from range start");
        assert!(hi > 8.93, "empirical max {hi} too far from range end");
    }

    #[test]
    fn spherical_parameterization_matches_convention() {
        // θ = 0, φ = 0 gives (0, 0, 1) before the facing flip.
        let n = Vector3::new(0.0f64.cos() * 0.0f64.sin(), 0.0f64.sin() * 0.0f64.sin(), 0.0f64.cos());
        assert_relative_eq!(n, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }
}
