//! Greedy cross-view merging of filtered depth maps into one point cloud.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};

use crate::geometry::{back_project, project, Camera};
use crate::matcher::DepthNormalMap;
use crate::scene_io::{GrayImage, PlyPoint};

/// One fused cloud point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint {
    /// World-space position, the running mean of every merged back-projection.
    pub position: Vector3<f64>,
    /// World-space normal of the first contributing pixel.
    pub normal: Vector3<f64>,
    /// Number of views merged into this point.
    pub support: u32,
    /// Grayscale intensity of the first contributing pixel.
    pub color: f32,
}

impl FusedPoint {
    pub fn to_ply_point(&self) -> PlyPoint {
        let c = (self.color.clamp(0.0, 1.0) * 255.0).round() as u8;
        PlyPoint {
            position: [
                self.position.x as f32,
                self.position.y as f32,
                self.position.z as f32,
            ],
            normal: [
                self.normal.x as f32,
                self.normal.y as f32,
                self.normal.z as f32,
            ],
            color: [c, c, c],
        }
    }
}

/// Merges the depth maps into one world-space point cloud.
///
/// Images are processed in ascending id order. Every valid pixel of the
/// current image back-projects to a world point, which is projected into
/// each not-yet-processed image; when the pixel at the rounded target
/// coordinate is still valid and the distance between the two back-projected
/// points, relative to the viewing distance from the target camera, stays
/// below `rel_tol`, that pixel is consumed and folded into a running-mean
/// position. Consumed pixels never produce or join another point, so the
/// supports of all returned points sum to the total valid-pixel count across
/// the input maps.
pub fn fuse(
    cams: &BTreeMap<u32, Camera>,
    images: &BTreeMap<u32, GrayImage>,
    maps: &BTreeMap<u32, DepthNormalMap>,
    rel_tol: f64,
) -> Vec<FusedPoint> {
    assert!(rel_tol > 0.0, "merge tolerance must be positive");
    for (id, map) in maps {
        let cam = cams.get(id).expect("every depth map needs its camera");
        images.get(id).expect("every depth map needs its image");
        assert_eq!(
            (map.width(), map.height()),
            (cam.width, cam.height),
            "depth map and camera dimensions disagree for image {id}"
        );
    }
    let ids: Vec<u32> = maps.keys().copied().collect();
    let mut work = maps.clone();
    let mut points = Vec::new();
    for (pos, &i) in ids.iter().enumerate() {
        let map_i = work.remove(&i).unwrap();
        let cam_i = &cams[&i];
        let img_i = &images[&i];
        let normal_to_world = cam_i.r.transpose();
        for y in 0..map_i.height() {
            for x in 0..map_i.width() {
                let Some(hyp) = map_i.hypothesis(x, y) else {
                    continue;
                };
                let x_i = back_project(cam_i, &Vector2::new(x as f64, y as f64), hyp.depth)
                    .expect("valid pixels carry positive depth");
                let mut mean = x_i;
                let mut support = 1u32;
                for &j in &ids[pos + 1..] {
                    let map_j = work.get_mut(&j).unwrap();
                    let cam_j = &cams[&j];
                    let Ok((pix, z)) = project(cam_j, &x_i) else {
                        continue;
                    };
                    if z <= 0.0 {
                        continue;
                    }
                    let (xr, yr) = (pix.x.round(), pix.y.round());
                    if xr < 0.0
                        || yr < 0.0
                        || xr >= map_j.width() as f64
                        || yr >= map_j.height() as f64
                    {
                        continue;
                    }
                    let (xj, yj) = (xr as usize, yr as usize);
                    let Some(hyp_j) = map_j.hypothesis(xj, yj) else {
                        continue;
                    };
                    let x_j =
                        back_project(cam_j, &Vector2::new(xj as f64, yj as f64), hyp_j.depth)
                            .expect("valid pixels carry positive depth");
                    let view_dist = (x_i - cam_j.center()).norm();
                    if view_dist < 1e-12 {
                        continue;
                    }
                    if (x_i - x_j).norm() / view_dist < rel_tol {
                        let cost = map_j.cost(xj, yj);
                        map_j.invalidate(xj, yj, cost);
                        support += 1;
                        mean += (x_j - mean) / support as f64;
                    }
                }
                points.push(FusedPoint {
                    position: mean,
                    normal: normal_to_world * hyp.normal,
                    support,
                    color: img_i.get(x, y),
                });
            }
        }
    }
    points
}
