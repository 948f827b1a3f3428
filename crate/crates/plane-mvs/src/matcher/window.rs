//! Dilated-window ZNCC scoring and multi-view cost aggregation.

use nalgebra::{Matrix3, Vector2, Vector3};

use super::MatchConfig;
use crate::geometry::{self, Camera, PlaneHypothesis};
use crate::scene_io::GrayImage;

/// Window variance below this counts as texture-less (zero variance).
const VAR_EPS: f64 = 1e-10;

/// Cost floor applied before inversion in the aggregation formula.
const COST_FLOOR: f64 = 1e-6;

/// Outcome of scoring one source view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViewMatch {
    /// ZNCC score in `[-1, 1]`.
    Score(f64),
    /// A window sample fell outside the source (or reference) image.
    BorderHit,
    /// Either window has (numerically) no variance.
    ZeroVariance,
}

/// Reference-side window samples for one pixel, cached so that every
/// propagation candidate and every view reuses them.
#[derive(Debug, Clone)]
pub struct RefWindow {
    /// Sample coordinates along x and y, `x + s * d` for `d in -r..=r`.
    us: Vec<f64>,
    vs: Vec<f64>,
    samples: Vec<f64>,
    sum: f64,
    sum_sq: f64,
    zero_var: bool,
}

impl RefWindow {
    pub fn new(cfg: &MatchConfig) -> Self {
        let side = (2 * cfg.r_now + 1) as usize;
        Self {
            us: vec![0.0; side],
            vs: vec![0.0; side],
            samples: vec![0.0; side * side],
            sum: 0.0,
            sum_sq: 0.0,
            zero_var: false,
        }
    }

    /// Gathers the window around `(x, y)`; false when any sample leaves the
    /// reference image.
    pub fn gather(&mut self, img: &GrayImage, x: f64, y: f64, cfg: &MatchConfig) -> bool {
        let r = cfg.r_now as i32;
        let s = cfg.spacing();
        let side = (2 * r + 1) as usize;
        for (i, d) in (-r..=r).enumerate() {
            self.us[i] = x + s * d as f64;
            self.vs[i] = y + s * d as f64;
        }
        self.samples.clear();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for j in 0..side {
            let v = self.vs[j];
            for i in 0..side {
                let a = match img.sample(self.us[i], v) {
                    Some(a) => a,
                    None => return false,
                };
                self.samples.push(a);
                sum += a;
                sum_sq += a * a;
            }
        }
        self.sum = sum;
        self.sum_sq = sum_sq;
        let n = self.samples.len() as f64;
        self.zero_var = sum_sq - sum * sum / n <= n * VAR_EPS;
        true
    }

    pub fn zero_variance(&self) -> bool {
        self.zero_var
    }
}

/// Scores one source view given a gathered reference window and the
/// plane-induced homography `h`.
pub fn zncc_with_ref(ref_win: &RefWindow, src: &GrayImage, h: &Matrix3<f64>) -> ViewMatch {
    if ref_win.zero_var {
        return ViewMatch::ZeroVariance;
    }
    let (h00, h01, h02) = (h[(0, 0)], h[(0, 1)], h[(0, 2)]);
    let (h10, h11, h12) = (h[(1, 0)], h[(1, 1)], h[(1, 2)]);
    let (h20, h21, h22) = (h[(2, 0)], h[(2, 1)], h[(2, 2)]);
    let side = ref_win.us.len();
    // The projected window is the convex hull of its four projected corners
    // (the depth denominator is affine in the window plane), so when every
    // corner lands strictly inside the source image the per-sample checks
    // can be skipped.
    // The margin absorbs the rounding noise between the hull test below and
    // the per-sample projections, which evaluate the same quantities with
    // differently associated arithmetic.
    const EDGE: f64 = 1e-6;
    let wm = (src.width() - 1) as f64 - EDGE;
    let hm = (src.height() - 1) as f64 - EDGE;
    let (u0, u1) = (ref_win.us[0], ref_win.us[side - 1]);
    let (v0, v1) = (ref_win.vs[0], ref_win.vs[side - 1]);
    let inside = [(u0, v0), (u1, v0), (u0, v1), (u1, v1)].iter().all(|&(u, v)| {
        let w = h20 * u + h21 * v + h22;
        if w <= 0.0 {
            return false;
        }
        let px = (h00 * u + h01 * v + h02) / w;
        let py = (h10 * u + h11 * v + h12) / w;
        px >= EDGE && px < wm && py >= EDGE && py < hm
    });
    let mut sb = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    let mut k = 0;
    for j in 0..side {
        let v = ref_win.vs[j];
        let row_x = h01 * v + h02;
        let row_y = h11 * v + h12;
        let row_w = h21 * v + h22;
        for i in 0..side {
            let u = ref_win.us[i];
            let w = h20 * u + row_w;
            let b = if inside {
                let inv = 1.0 / w;
                src.sample_inside((h00 * u + row_x) * inv, (h10 * u + row_y) * inv)
            } else {
                if w <= 0.0 {
                    return ViewMatch::BorderHit;
                }
                let inv = 1.0 / w;
                let px = (h00 * u + row_x) * inv;
                let py = (h10 * u + row_y) * inv;
                match src.sample(px, py) {
                    Some(b) => b,
                    None => return ViewMatch::BorderHit,
                }
            };
            sb += b;
            sbb += b * b;
            sab += ref_win.samples[k] * b;
            k += 1;
        }
    }
    let n = (side * side) as f64;
    let da = ref_win.sum_sq - ref_win.sum * ref_win.sum / n;
    let db = sbb - sb * sb / n;
    if db <= n * VAR_EPS {
        return ViewMatch::ZeroVariance;
    }
    let num = sab - ref_win.sum * sb / n;
    ViewMatch::Score((num / (da * db).sqrt()).clamp(-1.0, 1.0))
}

/// Scores one source view against a gathered reference window with an
/// arbitrary per-sample coordinate transport. `map` returns the source-image
/// coordinates of a reference sample, or `None` when the sample has no
/// projection.
pub(crate) fn zncc_mapped<F>(ref_win: &RefWindow, src: &GrayImage, map: F) -> ViewMatch
where
    F: Fn(f64, f64) -> Option<(f64, f64)>,
{
    if ref_win.zero_var {
        return ViewMatch::ZeroVariance;
    }
    let side = ref_win.us.len();
    let mut sb = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    let mut k = 0;
    for j in 0..side {
        let v = ref_win.vs[j];
        for i in 0..side {
            let (px, py) = match map(ref_win.us[i], v) {
                Some(p) => p,
                None => return ViewMatch::BorderHit,
            };
            let b = match src.sample(px, py) {
                Some(b) => b,
                None => return ViewMatch::BorderHit,
            };
            sb += b;
            sbb += b * b;
            sab += ref_win.samples[k] * b;
            k += 1;
        }
    }
    let n = (side * side) as f64;
    let da = ref_win.sum_sq - ref_win.sum * ref_win.sum / n;
    let db = sbb - sb * sb / n;
    if db <= n * VAR_EPS {
        return ViewMatch::ZeroVariance;
    }
    let num = sab - ref_win.sum * sb / n;
    ViewMatch::Score((num / (da * db).sqrt()).clamp(-1.0, 1.0))
}

/// Scores pixel `x` of the reference image against one source view under a
/// plane hypothesis. Pixels closer than `s * r_now` to the reference border
/// report [`ViewMatch::BorderHit`].
pub fn zncc(
    ref_img: &GrayImage,
    src_img: &GrayImage,
    x: &Vector2<f64>,
    hyp: &PlaneHypothesis,
    ref_cam: &Camera,
    src_cam: &Camera,
    cfg: &MatchConfig,
) -> ViewMatch {
    let mut win = RefWindow::new(cfg);
    if !win.gather(ref_img, x.x, x.y, cfg) {
        return ViewMatch::BorderHit;
    }
    match geometry::plane_homography(ref_cam, src_cam, x, hyp) {
        Ok(h) => zncc_with_ref(&win, src_img, &h),
        Err(_) => ViewMatch::BorderHit,
    }
}

/// Aggregates per-view results into one cost.
///
/// Views whose cost `1 - z` reaches the cap `c_max` (including border hits
/// and zero-variance windows) are excluded; the rest combine as
/// `Σ 1 / (ω Σ 1/C_j)`, a weighted harmonic mean that favors hypotheses
/// scoring well in at least one view. With no contributing view the cap
/// itself is returned.
pub fn aggregate_cost(results: &[ViewMatch], cfg: &MatchConfig) -> f64 {
    let c_max = cfg.c_max();
    let mut included = 0.0;
    let mut inv_sum = 0.0;
    for r in results {
        let c = match r {
            ViewMatch::Score(z) => 1.0 - z,
            ViewMatch::BorderHit | ViewMatch::ZeroVariance => c_max,
        };
        if c < c_max {
            included += 1.0;
            inv_sum += 1.0 / c.max(COST_FLOOR);
        }
    }
    if included == 0.0 {
        c_max
    } else {
        included / (cfg.omega * inv_sum)
    }
}

/// Precomputed per-source-view terms of the plane-induced homography
/// `H = A + b * mᵀ`, with `m` depending only on the candidate plane.
pub(crate) struct ViewData<'a> {
    pub img: &'a GrayImage,
    a: Matrix3<f64>,
    b: Vector3<f64>,
}

impl<'a> ViewData<'a> {
    pub fn new(ref_cam: &Camera, src_cam: &Camera, img: &'a GrayImage) -> Self {
        let r_rel = src_cam.r * ref_cam.r.transpose();
        let t_rel = src_cam.t - r_rel * ref_cam.t;
        Self {
            img,
            a: src_cam.k() * r_rel * ref_cam.k_inv(),
            b: src_cam.k() * t_rel,
        }
    }

    #[inline]
    pub fn homography(&self, m: &Vector3<f64>) -> Matrix3<f64> {
        self.a + self.b * m.transpose()
    }
}

/// Everything needed to evaluate candidate hypotheses at reference pixels.
pub(crate) struct CostEvaluator<'a> {
    pub views: Vec<ViewData<'a>>,
    ki_inv_t: Matrix3<f64>,
    ref_cam: &'a Camera,
}

impl<'a> CostEvaluator<'a> {
    pub fn new(ref_cam: &'a Camera, sources: &'a [(Camera, &'a GrayImage)]) -> Self {
        Self {
            views: sources
                .iter()
                .map(|(cam, img)| ViewData::new(ref_cam, cam, img))
                .collect(),
            ki_inv_t: ref_cam.k_inv().transpose(),
            ref_cam,
        }
    }

    /// Camera-frame direction of the pixel ray (unit z component).
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new(
            (x - self.ref_cam.cx) / self.ref_cam.fx,
            (y - self.ref_cam.cy) / self.ref_cam.fy,
            1.0,
        )
    }

    /// Aggregated cost of `hyp` at pixel `(x, y)` given its gathered
    /// reference window. `scratch` only exists to avoid re-allocation.
    pub fn cost(
        &self,
        ref_win: &RefWindow,
        x: f64,
        y: f64,
        hyp: &PlaneHypothesis,
        cfg: &MatchConfig,
        scratch: &mut Vec<ViewMatch>,
    ) -> f64 {
        if ref_win.zero_var {
            return cfg.c_max();
        }
        let ray = self.ray(x, y);
        let n_dot_ray = hyp.normal.dot(&ray);
        if n_dot_ray.abs() < 1e-12 {
            return cfg.c_max();
        }
        let rho = hyp.depth * n_dot_ray;
        let m = self.ki_inv_t * hyp.normal / rho;
        scratch.clear();
        for view in &self.views {
            let h = view.homography(&m);
            scratch.push(zncc_with_ref(ref_win, view.img, &h));
        }
        aggregate_cost(scratch, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_cam(w: usize, h: usize) -> Camera {
        Camera {
            fx: 0.9 * w as f64,
            fy: 0.9 * w as f64,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
            r: Matrix3::identity(),
            t: Vector3::zeros(),
            width: w,
            height: h,
        }
    }

    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = StdRng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0))
    }

    /// Straightforward dense-window ZNCC used as an oracle: nested loops at
    /// integer offsets mapped through the homography, two accumulator sets.
    fn dense_zncc_oracle(
        ref_img: &GrayImage,
        src_img: &GrayImage,
        x: &Vector2<f64>,
        h: &Matrix3<f64>,
        r: i32,
    ) -> ViewMatch {
        let mut a_vals = Vec::new();
        let mut b_vals = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let u = x.x + dx as f64;
                let v = x.y + dy as f64;
                let a = match ref_img.sample(u, v) {
                    Some(a) => a,
                    None => return ViewMatch::BorderHit,
                };
                let q = h * Vector3::new(u, v, 1.0);
                if q.z <= 0.0 {
                    return ViewMatch::BorderHit;
                }
                let b = match src_img.sample(q.x / q.z, q.y / q.z) {
                    Some(b) => b,
                    None => return ViewMatch::BorderHit,
                };
                a_vals.push(a);
                b_vals.push(b);
            }
        }
        let n = a_vals.len() as f64;
        let sa: f64 = a_vals.iter().sum();
        let sb: f64 = b_vals.iter().sum();
        let saa: f64 = a_vals.iter().map(|a| a * a).sum();
        let sbb: f64 = b_vals.iter().map(|b| b * b).sum();
        let sab: f64 = a_vals.iter().zip(&b_vals).map(|(a, b)| a * b).sum();
        let da = saa - sa * sa / n;
        let db = sbb - sb * sb / n;
        if da <= n * VAR_EPS || db <= n * VAR_EPS {
            return ViewMatch::ZeroVariance;
        }
        ViewMatch::Score(((sab - sa * sb / n) / (da * db).sqrt()).clamp(-1.0, 1.0))
    }

    #[test]
    fn identical_views_score_one() {
        let img = noise_image(64, 64, 1);
        let cam = test_cam(64, 64);
        let cfg = MatchConfig {
            r_now: 3,
            r_orig: 3,
            ..MatchConfig::default()
        };
        let hyp = PlaneHypothesis {
            depth: 5.0,
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        match zncc(&img, &img, &Vector2::new(32.0, 30.0), &hyp, &cam, &cam, &cfg) {
            ViewMatch::Score(z) => assert_relative_eq!(z, 1.0, epsilon = 1e-9),
            other => panic!("expected a score, got {other:?}"),
        }
    }

    #[test]
    fn constant_reference_window_has_zero_variance() {
        let flat = GrayImage::from_fn(64, 64, |_, _| 0.5);
        let textured = noise_image(64, 64, 2);
        let cam = test_cam(64, 64);
        let cfg = MatchConfig {
            r_now: 3,
            r_orig: 3,
            ..MatchConfig::default()
        };
        let hyp = PlaneHypothesis {
            depth: 5.0,
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        assert_eq!(
            zncc(&flat, &textured, &Vector2::new(32.0, 32.0), &hyp, &cam, &cam, &cfg),
            ViewMatch::ZeroVariance
        );
    }

    #[test]
    fn affine_brightness_change_keeps_score_one() {
        let img = noise_image(64, 64, 3);
        let scaled = GrayImage::from_fn(64, 64, |x, y| 0.5 * img.get(x, y) + 0.2);
        let cam = test_cam(64, 64);
        let cfg = MatchConfig {
            r_now: 4,
            r_orig: 4,
            ..MatchConfig::default()
        };
        let hyp = PlaneHypothesis {
            depth: 3.0,
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        match zncc(&img, &scaled, &Vector2::new(30.0, 33.0), &hyp, &cam, &cam, &cfg) {
            ViewMatch::Score(z) => assert_relative_eq!(z, 1.0, epsilon = 1e-9),
            other => panic!("expected a score, got {other:?}"),
        }
    }

    #[test]
    fn border_pixels_report_border_hit() {
        let img = noise_image(64, 64, 4);
        let cam = test_cam(64, 64);
        let cfg = MatchConfig {
            r_now: 5,
            r_orig: 7,
            ..MatchConfig::default()
        };
        let hyp = PlaneHypothesis {
            depth: 5.0,
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        assert_eq!(
            zncc(&img, &img, &Vector2::new(3.0, 32.0), &hyp, &cam, &cam, &cfg),
            ViewMatch::BorderHit
        );
    }

    #[test]
    fn undilated_config_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(5);
        for round in 0..8 {
            let ref_img = noise_image(48, 40, 100 + round);
            let src_img = noise_image(48, 40, 200 + round);
            for r in 1..=4u32 {
                let cfg = MatchConfig {
                    r_now: r,
                    r_orig: r,
                    ..MatchConfig::default()
                };
                let mut win = RefWindow::new(&cfg);
                for _ in 0..10 {
                    let margin = r as f64 + 1.0;
                    let x = Vector2::new(
                        rng.gen_range(margin..48.0 - margin - 1.0),
                        rng.gen_range(margin..40.0 - margin - 1.0),
                    );
                    let h = Matrix3::new(
                        1.0 + rng.gen_range(-0.01..0.01),
                        rng.gen_range(-0.01..0.01),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-0.01..0.01),
                        1.0 + rng.gen_range(-0.01..0.01),
                        rng.gen_range(-2.0..2.0),
                        0.0,
                        0.0,
                        1.0,
                    );
                    assert!(win.gather(&ref_img, x.x, x.y, &cfg));
                    let got = zncc_with_ref(&win, &src_img, &h);
                    let want = dense_zncc_oracle(&ref_img, &src_img, &x, &h, r as i32);
                    match (got, want) {
                        (ViewMatch::Score(a), ViewMatch::Score(b)) => {
                            assert!((a - b).abs() < 1e-12, "r={r}: {a} vs {b}");
                        }
                        (a, b) => assert_eq!(a, b, "r={r}"),
                    }
                }
            }
        }
    }

    #[test]
    fn aggregate_cost_examples() {
        let cfg = MatchConfig::default();
        assert_relative_eq!(
            aggregate_cost(&[ViewMatch::Score(0.5)], &cfg),
            0.5,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            aggregate_cost(&[ViewMatch::BorderHit, ViewMatch::ZeroVariance], &cfg),
            cfg.c_max(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            aggregate_cost(&[ViewMatch::Score(0.8), ViewMatch::Score(0.2)], &cfg),
            0.32,
            epsilon = 1e-12
        );
        assert_eq!(aggregate_cost(&[], &cfg), cfg.c_max());
    }

    #[test]
    fn aggregate_cost_stays_in_bounds() {
        let mut rng = StdRng::seed_from_u64(6);
        let cfg = MatchConfig::default();
        for _ in 0..1000 {
            let results: Vec<ViewMatch> = (0..rng.gen_range(1..=8))
                .map(|_| match rng.gen_range(0..3) {
                    0 => ViewMatch::Score(rng.gen_range(-1.0..=1.0)),
                    1 => ViewMatch::BorderHit,
                    _ => ViewMatch::ZeroVariance,
                })
                .collect();
            let c = aggregate_cost(&results, &cfg);
            assert!(c > 0.0 && c <= cfg.c_max(), "cost {c} out of bounds");
            let single = [results[0]];
            if let ViewMatch::Score(z) = results[0] {
                let expect = (1.0 - z).max(COST_FLOOR).min(cfg.c_max());
                if 1.0 - z < cfg.c_max() {
                    assert_relative_eq!(aggregate_cost(&single, &cfg), expect, epsilon = 1e-12);
                }
            }
        }
    }
}
