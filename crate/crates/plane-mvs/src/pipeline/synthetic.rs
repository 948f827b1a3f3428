//! Deterministic synthetic scenes with exact per-pixel ground truth.
//!
//! A scene is a set of textured rectangular planes observed by cameras spread
//! around the viewing axis, rendered by ray casting. Because the geometry is
//! analytic, every
//! pixel of every view carries an exact depth and normal, which makes the
//! scenes usable as reconstruction benchmarks: the renderer doubles as the
//! ground-truth generator, so images and truth can never drift apart.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{project, Camera, PlaneHypothesis};
use crate::matcher::DepthNormalMap;
use crate::scene_io::{
    CameraIntrinsics, CameraKind, GrayImage, ImageMeta, Observation, Point3D, SceneError,
    SparseModel,
};

/// Knobs of the generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Image width in pixels, at least 64.
    pub width: usize,
    /// Image height in pixels, at least 64.
    pub height: usize,
    /// Number of cameras around the viewing axis, at least 2.
    pub camera_count: usize,
    /// Number of planes: one backdrop plus floating foreground rectangles.
    pub plane_count: usize,
    /// Linear fraction of the central backdrop painted a constant shade,
    /// in `[0, 0.8]`. Zero keeps the whole scene textured.
    pub matte_fraction: f64,
    /// Target number of sparse feature points.
    pub point_count: usize,
    /// Seed controlling every random choice of the generator.
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            camera_count: 8,
            plane_count: 3,
            matte_fraction: 0.0,
            point_count: 260,
            seed: 7,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("resolution {0}x{1} is below the 64x64 minimum")]
    Resolution(usize, usize),
    #[error("a scene needs at least two cameras, got {0}")]
    Cameras(usize),
    #[error("a scene needs at least one plane")]
    Planes,
    #[error("matte fraction {0} is outside [0, 0.8]")]
    Matte(f64),
    #[error("a scene needs at least 20 sparse points, got {0}")]
    Points(usize),
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.width < 64 || self.height < 64 {
            return Err(SpecError::Resolution(self.width, self.height));
        }
        if self.camera_count < 2 {
            return Err(SpecError::Cameras(self.camera_count));
        }
        if self.plane_count < 1 {
            return Err(SpecError::Planes);
        }
        if !(0.0..=0.8).contains(&self.matte_fraction) {
            return Err(SpecError::Matte(self.matte_fraction));
        }
        if self.point_count < 20 {
            return Err(SpecError::Points(self.point_count));
        }
        Ok(())
    }
}

/// Point the cameras verge on. Aiming at the content centre itself would
/// swing each camera's outward frame edge past what any other frustum can
/// see at the backdrop, leaving strips that no source view can ever
/// confirm. Aiming a little behind the backdrop balances the outward reach
/// of a camera against the frame width of its neighbours, so the
/// unconfirmable strips shrink into the window margin that dense matching
/// skips anyway.
const AIM: Vector3<f64> = Vector3::new(0.0, 0.0, 12.5);
/// Horizontal semi-axis of the camera arc. The arc closes around the
/// viewing axis so every camera has admissible sources on all sides of it;
/// a one-sided arc leaves the outer image edges of its end cameras without
/// enough co-visible views to ever pass the consistency filter.
const ARC_RADIUS: f64 = 1.5;
/// Vertical semi-axis relative to the horizontal one.
const ARC_SQUISH: f64 = 0.75;
/// Distance of the arc plane in front of the world origin.
const CAMERA_Z: f64 = -0.8;

fn hash2(salt: u64, i: i64, j: i64) -> f64 {
    let mut v = salt
        ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    v ^= v >> 30;
    v = v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v ^= v >> 27;
    v = v.wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^= v >> 31;
    (v >> 11) as f64 / (1u64 << 53) as f64
}

fn lattice_noise(salt: u64, u: f64, v: f64) -> f64 {
    let (i, j) = (u.floor(), v.floor());
    let (fu, fv) = (u - i, v - j);
    let (i, j) = (i as i64, j as i64);
    let a = hash2(salt, i, j);
    let b = hash2(salt, i + 1, j);
    let c = hash2(salt, i, j + 1);
    let d = hash2(salt, i + 1, j + 1);
    a * (1.0 - fu) * (1.0 - fv) + b * fu * (1.0 - fv) + c * (1.0 - fu) * fv + d * fu * fv
}

/// One textured rectangle in world space.
#[derive(Debug, Clone, PartialEq)]
struct PlaneRect {
    center: Vector3<f64>,
    normal: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    half_u: f64,
    half_v: f64,
    /// Constant-shade rectangle in plane coordinates, if any.
    matte_half: Option<(f64, f64)>,
    salt: u64,
    /// Rotation of the noise lattice relative to the plane axes. The lattice
    /// is kept off-axis so the texture never degenerates to a function of a
    /// single image coordinate.
    lattice_angle: f64,
    /// Lattice spacing in world units, chosen to span a few pixels at the
    /// plane's depth: coarser stays matchable, finer aliases between views.
    cell: f64,
}

impl PlaneRect {
    /// Ray-rectangle intersection: parameter `t` along `dir` plus the plane
    /// coordinates of the hit.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let denom = dir.dot(&self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.center - origin).dot(&self.normal) / denom;
        if t <= 1e-9 {
            return None;
        }
        let local = origin + dir * t - self.center;
        let (s, r) = (local.dot(&self.e1), local.dot(&self.e2));
        (s.abs() <= self.half_u && r.abs() <= self.half_v).then_some((t, s, r))
    }

    fn is_matte(&self, s: f64, r: f64) -> bool {
        self.matte_half
            .is_some_and(|(mu, mv)| s.abs() < mu && r.abs() < mv)
    }

    fn shade(&self, s: f64, r: f64) -> f64 {
        if self.is_matte(s, r) {
            return 0.5;
        }
        let (sin, cos) = self.lattice_angle.sin_cos();
        let (u, v) = (cos * s - sin * r, sin * s + cos * r);
        let coarse = lattice_noise(self.salt, u / self.cell, v / self.cell);
        let fine = lattice_noise(
            self.salt ^ 0xA5A5_A5A5_A5A5_A5A5,
            (cos * u - sin * v) / (0.5 * self.cell),
            (sin * u + cos * v) / (0.5 * self.cell),
        );
        0.5 + 0.72 * (0.62 * (coarse - 0.5) + 0.38 * (fine - 0.5))
    }
}

/// Generated scene: sparse model, rendered images, and exact ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub model: SparseModel,
    pub images: BTreeMap<u32, GrayImage>,
    pub truth: BTreeMap<u32, DepthNormalMap>,
    planes: Vec<PlaneRect>,
}

fn nearest_hit(planes: &[PlaneRect], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(usize, f64, f64, f64)> {
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (idx, plane) in planes.iter().enumerate() {
        if let Some((t, s, r)) = plane.intersect(origin, dir) {
            if best.is_none_or(|(_, bt, _, _)| t < bt) {
                best = Some((idx, t, s, r));
            }
        }
    }
    best
}

impl SyntheticScene {
    /// Renders the scene as seen by `cam`; sampling is at pixel centers.
    pub fn render_image(&self, cam: &Camera) -> GrayImage {
        let origin = cam.center();
        let back = cam.r.transpose() * cam.k_inv();
        GrayImage::from_fn(cam.width, cam.height, |x, y| {
            let dir = back * Vector3::new(x as f64, y as f64, 1.0);
            match nearest_hit(&self.planes, &origin, &dir) {
                Some((idx, _, s, r)) => self.planes[idx].shade(s, r) as f32,
                None => 0.0,
            }
        })
    }

    /// Exact depth and normal per pixel of `cam`, with zero stored cost.
    /// Works for any camera, so rescaled intrinsics get matching truth.
    pub fn truth_map(&self, cam: &Camera) -> DepthNormalMap {
        let origin = cam.center();
        let k_inv = cam.k_inv();
        let rt = cam.r.transpose();
        let mut map = DepthNormalMap::new(cam.width, cam.height, 2.0);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let ray = k_inv * Vector3::new(x as f64, y as f64, 1.0);
                let dir = rt * ray;
                let Some((idx, t, _, _)) = nearest_hit(&self.planes, &origin, &dir) else {
                    continue;
                };
                let hyp = PlaneHypothesis::oriented(t, cam.r * self.planes[idx].normal, &ray)
                    .expect("scene planes face every camera");
                map.set(x, y, hyp, 0.0);
            }
        }
        map
    }

    /// Writes the scene as a reconstruction input directory: `sparse/` with
    /// the model triplet, `images/` with one PNG per view, and `truth/` with
    /// one binary depth map per view.
    pub fn write(&self, dir: &Path) -> Result<(), SceneError> {
        self.model.write(&dir.join("sparse"))?;
        let images_dir = dir.join("images");
        std::fs::create_dir_all(&images_dir)?;
        let truth_dir = dir.join("truth");
        std::fs::create_dir_all(&truth_dir)?;
        for (id, meta) in &self.model.images {
            self.images[id].save_png(&images_dir.join(&meta.name))?;
            crate::scene_io::write_depth_map(&self.truth[id], &truth_dir.join(truth_name(*id)))?;
        }
        Ok(())
    }
}

/// File name of the ground-truth depth map for an image id.
pub fn truth_name(id: u32) -> String {
    format!("{id:04}.dmap")
}

fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> Matrix3<f64> {
    let z = (target - center).normalize();
    let x = Vector3::new(0.0, 1.0, 0.0).cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn plane_axes(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let e1 = Vector3::new(0.0, 1.0, 0.0).cross(normal).normalize();
    let e2 = normal.cross(&e1);
    (e1, e2)
}

fn build_planes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<PlaneRect> {
    let mut planes = Vec::with_capacity(spec.plane_count);
    let tilt = Vector3::new(
        rng.gen_range(-0.12..=0.12),
        rng.gen_range(-0.12..=0.12),
        -1.0,
    )
    .normalize();
    let (e1, e2) = plane_axes(&tilt);
    let matte_half = (spec.matte_fraction > 0.0)
        .then(|| (spec.matte_fraction * 6.0, spec.matte_fraction * 4.5));
    planes.push(PlaneRect {
        center: Vector3::new(0.0, 0.0, 10.0),
        normal: tilt,
        e1,
        e2,
        half_u: 16.0,
        half_v: 13.0,
        matte_half,
        salt: spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 1,
        lattice_angle: rng.gen_range(0.3..=0.5),
        cell: 5.0 * 10.0 / spec.width as f64,
    });
    for k in 1..spec.plane_count {
        let alpha = k as f64 * 2.399_963 + rng.gen_range(-0.3..=0.3);
        let radius = rng.gen_range(1.2..=1.9);
        // Foreground rectangles sit close to the backdrop so the occlusion
        // shadows they cast in wide-baseline views stay narrow enough for
        // cross-view support, and are large enough that the depth-mixing
        // band along their silhouettes stays a small fraction of their area.
        let depth = rng.gen_range(8.2..=9.0);
        let normal = Vector3::new(
            rng.gen_range(-0.35..=0.35),
            rng.gen_range(-0.35..=0.35),
            -1.0,
        )
        .normalize();
        let (e1, e2) = plane_axes(&normal);
        planes.push(PlaneRect {
            center: Vector3::new(radius * alpha.cos(), 0.75 * radius * alpha.sin(), depth),
            normal,
            e1,
            e2,
            half_u: rng.gen_range(0.8..=1.15),
            half_v: rng.gen_range(0.6..=0.9),
            matte_half: None,
            salt: spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64 + 1),
            lattice_angle: 0.35 + 0.55 * k as f64 + rng.gen_range(0.0..=0.2),
            cell: 5.0 * depth / spec.width as f64,
        });
    }
    planes
}

fn build_cameras(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<(Vector3<f64>, Matrix3<f64>)> {
    let n = spec.camera_count;
    (0..n)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / n as f64 + rng.gen_range(-0.05..=0.05);
            let radial = ARC_RADIUS * rng.gen_range(0.97..=1.03);
            let center = Vector3::new(
                radial * phi.cos(),
                ARC_SQUISH * radial * phi.sin(),
                CAMERA_Z + rng.gen_range(-0.08..=0.08),
            );
            (center, look_at(center, AIM))
        })
        .collect()
}

/// Builds a scene from its spec. The same spec always produces bit-identical
/// output; all randomness comes from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planes = build_planes(spec, &mut rng);
    let poses = build_cameras(spec, &mut rng);

    let mut model = SparseModel::default();
    model.cameras.insert(
        1,
        CameraIntrinsics {
            id: 1,
            kind: CameraKind::Pinhole,
            width: spec.width,
            height: spec.height,
            fx: 0.9 * spec.width as f64,
            fy: 0.9 * spec.width as f64,
            cx: (spec.width as f64 - 1.0) / 2.0,
            cy: (spec.height as f64 - 1.0) / 2.0,
        },
    );
    for (k, (center, r)) in poses.iter().enumerate() {
        let id = k as u32 + 1;
        let q = UnitQuaternion::from_matrix(r);
        let q: &Quaternion<f64> = &q;
        model.images.insert(
            id,
            ImageMeta {
                id,
                camera_id: 1,
                name: format!("view_{id:03}.png"),
                qvec: [q.w, q.i, q.j, q.k],
                tvec: -(r * center),
                observations: Vec::new(),
            },
        );
    }
    let cams: BTreeMap<u32, Camera> = model
        .images
        .keys()
        .map(|&id| (id, model.camera(id).expect("camera was just inserted")))
        .collect();

    populate_points(spec, &planes, &cams, &mut model, &mut rng);

    let mut scene = SyntheticScene {
        spec: spec.clone(),
        model,
        images: BTreeMap::new(),
        truth: BTreeMap::new(),
        planes,
    };
    for (&id, cam) in &cams {
        let image = scene.render_image(cam);
        let truth = scene.truth_map(cam);
        scene.images.insert(id, image);
        scene.truth.insert(id, truth);
    }
    Ok(scene)
}

/// Scatters feature points over textured plane area, keeps the ones seen
/// unoccluded by at least two cameras, and links full tracks into the model.
fn populate_points(
    spec: &SceneSpec,
    planes: &[PlaneRect],
    cams: &BTreeMap<u32, Camera>,
    model: &mut SparseModel,
    rng: &mut ChaCha8Rng,
) {
    let mut next_id = 1u64;
    for _ in 0..40 * spec.point_count {
        if model.points.len() >= spec.point_count {
            break;
        }
        let idx = rng.gen_range(0..planes.len());
        let plane = &planes[idx];
        let s = rng.gen_range(-plane.half_u..=plane.half_u);
        let r = rng.gen_range(-plane.half_v..=plane.half_v);
        if plane
            .matte_half
            .is_some_and(|(mu, mv)| s.abs() < mu + 0.15 && r.abs() < mv + 0.15)
        {
            continue;
        }
        let position = plane.center + plane.e1 * s + plane.e2 * r;
        let mut views = Vec::new();
        for (&id, cam) in cams {
            let Ok((p, z)) = project(cam, &position) else {
                continue;
            };
            if z <= 0.0
                || p.x < 0.0
                || p.y < 0.0
                || p.x > cam.width as f64 - 1.0
                || p.y > cam.height as f64 - 1.0
            {
                continue;
            }
            let dir = cam.r.transpose() * (cam.k_inv() * Vector3::new(p.x, p.y, 1.0));
            let visible = nearest_hit(planes, &cam.center(), &dir)
                .is_some_and(|(hit, t, _, _)| hit == idx && (t - z).abs() <= 1e-6 * z);
            if visible {
                views.push((id, p));
            }
        }
        if views.len() < 2 {
            continue;
        }
        let gray = (plane.shade(s, r) * 255.0).round() as u8;
        let mut track = Vec::with_capacity(views.len());
        for (id, p) in views {
            let meta = model.images.get_mut(&id).expect("view ids come from the model");
            track.push((id, meta.observations.len() as u32));
            meta.observations.push(Observation {
                x: p.x,
                y: p.y,
                point3d: Some(next_id),
            });
        }
        model.points.insert(
            next_id,
            Point3D {
                id: next_id,
                position,
                color: [gray, gray, gray],
                reproj_error: 0.0,
                track,
            },
        );
        next_id += 1;
    }
}
