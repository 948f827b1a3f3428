//! Pinhole camera model, projection primitives, and plane-induced homographies.
//!
//! Depth is always the camera-frame z coordinate, not the ray length; every
//! back-projection and homography in the crate relies on that convention.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::scene_io::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    DomainError(f64),
    #[error("point projects onto the camera plane (z = 0)")]
    DegenerateProjection,
    #[error("plane passes through a camera center")]
    DegenerateHomography,
    #[error("sample point ({0}, {1}) outside image bounds")]
    OutOfBounds(f64, f64),
}

/// Calibrated pinhole camera with a world-to-camera rigid pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub r: Matrix3<f64>,
    /// World-to-camera translation; a world point X maps to `r * X + t`.
    pub t: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -self.r.transpose() * self.t
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inv(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn world_to_cam(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    pub fn cam_to_world(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r.transpose() * (x - self.t)
    }

    /// Checks orthonormality of the rotation and positivity of the focals.
    pub fn validate(&self) -> bool {
        let err = (self.r.transpose() * self.r - Matrix3::identity()).abs().max();
        err < 1e-6 && self.fx > 0.0 && self.fy > 0.0 && self.center().iter().all(|v| v.is_finite())
    }
}

/// Per-pixel local scene plane: depth along the viewing ray plus a unit
/// normal, both in the reference camera frame. The normal faces the camera
/// (negative dot product with the viewing direction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneHypothesis {
    pub depth: f64,
    pub normal: Vector3<f64>,
}

impl PlaneHypothesis {
    /// Builds a hypothesis with the normal re-oriented to face the camera
    /// along `view_ray` (the camera-frame direction of the pixel's ray).
    /// Returns `None` for non-positive depth, a degenerate normal, or a
    /// normal perpendicular to the ray (no facing orientation exists).
    pub fn oriented(depth: f64, normal: Vector3<f64>, view_ray: &Vector3<f64>) -> Option<Self> {
        if depth <= 0.0 || !depth.is_finite() {
            return None;
        }
        let norm = normal.norm();
        if norm < 1e-12 {
            return None;
        }
        let mut n = normal / norm;
        let facing = n.dot(view_ray);
        if facing.abs() < 1e-9 {
            return None;
        }
        if facing > 0.0 {
            n = -n;
        }
        Some(Self { depth, normal: n })
    }
}

/// Back-projects pixel `x` at camera-frame depth `d` into world coordinates.
pub fn back_project(cam: &Camera, x: &Vector2<f64>, d: f64) -> Result<Vector3<f64>, GeometryError> {
    if d <= 0.0 {
        return Err(GeometryError::DomainError(d));
    }
    let p_cam = Vector3::new(
        d * (x.x - cam.cx) / cam.fx,
        d * (x.y - cam.cy) / cam.fy,
        d,
    );
    Ok(cam.cam_to_world(&p_cam))
}

/// Projects a world point, returning the pixel and the camera-frame depth.
/// The depth may be negative (point behind the camera); callers decide.
pub fn project(cam: &Camera, x: &Vector3<f64>) -> Result<(Vector2<f64>, f64), GeometryError> {
    let p = cam.world_to_cam(x);
    if p.z == 0.0 {
        return Err(GeometryError::DegenerateProjection);
    }
    let pix = Vector2::new(
        cam.fx * p.x / p.z + cam.cx,
        cam.fy * p.y / p.z + cam.cy,
    );
    Ok((pix, p.z))
}

/// Moves `x` away from the camera center `c` by the relative step `eps`:
/// `(1 + eps) * x - eps * c`.
pub fn perturb_point(x: &Vector3<f64>, c: &Vector3<f64>, eps: f64) -> Vector3<f64> {
    (1.0 + eps) * x - eps * c
}

/// Homography sending homogeneous pixels of `cam_i` to pixels of `cam_j` for
/// points on the plane defined by `hyp` at pixel `x` of image i.
///
/// With the plane written `n·p = rho` in camera-i coordinates the map is
/// `K_j (R_rel + t_rel nᵀ / rho) K_i⁻¹`; for an on-plane point the identity
/// `R_rel p + t_rel (n·p)/rho = R_rel p + t_rel` makes it exact.
pub fn plane_homography(
    cam_i: &Camera,
    cam_j: &Camera,
    x: &Vector2<f64>,
    hyp: &PlaneHypothesis,
) -> Result<Matrix3<f64>, GeometryError> {
    if hyp.depth <= 0.0 {
        return Err(GeometryError::DomainError(hyp.depth));
    }
    let p0 = Vector3::new(
        hyp.depth * (x.x - cam_i.cx) / cam_i.fx,
        hyp.depth * (x.y - cam_i.cy) / cam_i.fy,
        hyp.depth,
    );
    let rho = hyp.normal.dot(&p0);
    if rho.abs() < 1e-12 * (1.0 + p0.norm()) {
        return Err(GeometryError::DegenerateHomography);
    }
    let r_rel = cam_j.r * cam_i.r.transpose();
    let t_rel = cam_j.t - r_rel * cam_i.t;
    // Camera-j center expressed in camera-i coordinates; on-plane centers
    // collapse the homography.
    let c_j_in_i = cam_i.world_to_cam(&cam_j.center());
    if (hyp.normal.dot(&c_j_in_i) - rho).abs() < 1e-12 * (1.0 + rho.abs()) {
        return Err(GeometryError::DegenerateHomography);
    }
    let h_cam = r_rel + t_rel * (hyp.normal / rho).transpose();
    Ok(cam_j.k() * h_cam * cam_i.k_inv())
}

/// Applies a homography to a pixel. Returns `None` when the mapped point is
/// at or behind the camera plane (non-positive homogeneous w).
pub fn apply_homography(h: &Matrix3<f64>, p: &Vector2<f64>) -> Option<Vector2<f64>> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    if q.z <= 0.0 {
        return None;
    }
    Some(Vector2::new(q.x / q.z, q.y / q.z))
}

/// Bilinear interpolation of `img` at a real-valued pixel position.
pub fn interpolate(img: &GrayImage, p: &Vector2<f64>) -> Result<f64, GeometryError> {
    img.sample(p.x, p.y)
        .ok_or(GeometryError::OutOfBounds(p.x, p.y))
}
