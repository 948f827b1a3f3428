//! Patch-match depth/normal estimation.
//!
//! Each reference image gets a per-pixel plane hypothesis, iteratively
//! improved by red-black checkerboard propagation and random refinement.
//! Matching costs come from a zero-mean normalized cross-correlation over a
//! dilated window: `(2 r_now + 1)²` samples spaced `s = r_orig / r_now`
//! pixels apart emulate the support of a `(2 r_orig + 1)²` window at the
//! sample count of the smaller one.

mod estimate;
mod window;

use nalgebra::Vector3;

use crate::geometry::PlaneHypothesis;

pub use estimate::{
    estimate_depth_map, propagate_checkerboard, refine_random, refine_with_deltas, MatchError,
    MatchScene, Phase, RefineDeltas,
};
pub use window::{aggregate_cost, zncc, RefWindow, ViewMatch};
pub(crate) use window::zncc_mapped;

/// Matching-window and cost-aggregation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Window radius actually sampled; the window holds `(2 r_now + 1)²` samples.
    pub r_now: u32,
    /// Emulated radius; samples are spaced `r_orig / r_now` pixels apart.
    pub r_orig: u32,
    /// Minimum admissible correlation score; per-view cost is capped at `1 - z_min`.
    pub z_min: f64,
    /// Aggregation constant of the multi-view cost.
    pub omega: f64,
    /// Number of propagation/refinement rounds.
    pub iterations: u32,
    /// Candidate offsets examined during checkerboard propagation.
    pub offsets: Vec<(i32, i32)>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            r_now: 5,
            r_orig: 7,
            z_min: -1.0,
            omega: 1.0,
            iterations: 8,
            offsets: vec![
                (0, -1),
                (0, 1),
                (-1, 0),
                (1, 0),
                (0, -3),
                (0, 3),
                (-3, 0),
                (3, 0),
            ],
        }
    }
}

impl MatchConfig {
    /// Sample spacing `s = r_orig / r_now`.
    pub fn spacing(&self) -> f64 {
        self.r_orig as f64 / self.r_now as f64
    }

    /// Cost assigned to views that cannot be scored: `1 - z_min`.
    pub fn c_max(&self) -> f64 {
        1.0 - self.z_min
    }

    /// Pixels closer than this to the reference border cannot host a full
    /// window and stay invalid.
    pub fn border_margin(&self) -> usize {
        (self.spacing() * self.r_now as f64).ceil() as usize
    }

    pub fn validate(&self) -> bool {
        self.r_now >= 1
            && self.r_orig >= self.r_now
            && self.omega > 0.0
            && self.c_max() > 0.0
            && self.c_max() <= 2.0
            && self.iterations >= 1
            && !self.offsets.is_empty()
    }
}

/// Per-pixel plane hypotheses with their aggregated matching cost.
///
/// Invalid pixels carry no hypothesis; their stored depth and normal are
/// zero and their cost is the no-view sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthNormalMap {
    width: usize,
    height: usize,
    depths: Vec<f64>,
    normals: Vec<[f64; 3]>,
    costs: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthNormalMap {
    pub fn new(width: usize, height: usize, c_max: f64) -> Self {
        Self {
            width,
            height,
            depths: vec![0.0; width * height],
            normals: vec![[0.0; 3]; width * height],
            costs: vec![c_max; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        depths: Vec<f64>,
        normals: Vec<[f64; 3]>,
        costs: Vec<f64>,
        valid: Vec<bool>,
    ) -> Self {
        let n = width * height;
        assert!(
            depths.len() == n && normals.len() == n && costs.len() == n && valid.len() == n,
            "pixel count mismatch"
        );
        Self {
            width,
            height,
            depths,
            normals,
            costs,
            valid,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.index(x, y)]
    }

    #[inline]
    pub fn depth(&self, x: usize, y: usize) -> f64 {
        self.depths[self.index(x, y)]
    }

    #[inline]
    pub fn normal(&self, x: usize, y: usize) -> Vector3<f64> {
        let n = self.normals[self.index(x, y)];
        Vector3::new(n[0], n[1], n[2])
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize) -> f64 {
        self.costs[self.index(x, y)]
    }

    #[inline]
    pub fn hypothesis(&self, x: usize, y: usize) -> Option<PlaneHypothesis> {
        if !self.is_valid(x, y) {
            return None;
        }
        Some(PlaneHypothesis {
            depth: self.depth(x, y),
            normal: self.normal(x, y),
        })
    }

    pub fn set(&mut self, x: usize, y: usize, hyp: PlaneHypothesis, cost: f64) {
        let i = self.index(x, y);
        self.depths[i] = hyp.depth;
        self.normals[i] = [hyp.normal.x, hyp.normal.y, hyp.normal.z];
        self.costs[i] = cost;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, x: usize, y: usize, c_max: f64) {
        let i = self.index(x, y);
        self.depths[i] = 0.0;
        self.normals[i] = [0.0; 3];
        self.costs[i] = c_max;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn mean_cost_over_valid(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, &v) in self.valid.iter().enumerate() {
            if v {
                sum += self.costs[i];
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn valid_flags(&self) -> &[bool] {
        &self.valid
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut [f64], &mut [[f64; 3]], &mut [f64], &mut [bool]) {
        (
            &mut self.depths,
            &mut self.normals,
            &mut self.costs,
            &mut self.valid,
        )
    }
}
