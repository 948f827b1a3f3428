//! Depth-map quality metrics against ground truth.
//!
//! A result pixel counts as matched when both the result and the truth are
//! valid there and the depths agree within a relative tolerance. Metrics are
//! reported along a tolerance ladder so coarse and fine agreement can be read
//! off the same run.

use std::collections::BTreeMap;

use crate::matcher::DepthNormalMap;

/// Relative depth tolerances the reports are evaluated at: 0.5%, 1%, 2%, 5%.
pub const TOLERANCE_LADDER: [f64; 4] = [0.005, 0.01, 0.02, 0.05];

/// Completeness, accuracy, and their harmonic mean at one tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tolerance: f64,
    /// Valid ground-truth pixels.
    pub truth_pixels: usize,
    /// Valid result pixels.
    pub result_pixels: usize,
    /// Pixels valid on both sides with `|d - g| <= tolerance * g`.
    pub matched_pixels: usize,
    /// `matched / truth_pixels`; zero when the truth is empty.
    pub completeness: f64,
    /// `matched / result_pixels`; defined as zero for an empty result.
    pub accuracy: f64,
    /// `2ac / (a + c)`; zero when both terms vanish.
    pub f1: f64,
}

impl EvalReport {
    fn from_counts(tolerance: f64, truth: usize, result: usize, matched: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let completeness = ratio(matched, truth);
        let accuracy = ratio(matched, result);
        let f1 = if accuracy + completeness > 0.0 {
            2.0 * accuracy * completeness / (accuracy + completeness)
        } else {
            0.0
        };
        Self {
            tolerance,
            truth_pixels: truth,
            result_pixels: result,
            matched_pixels: matched,
            completeness,
            accuracy,
            f1,
        }
    }
}

/// Evaluates one result map against its truth. Both maps must share
/// dimensions; the tolerance must be positive.
pub fn evaluate_map(result: &DepthNormalMap, truth: &DepthNormalMap, tolerance: f64) -> EvalReport {
    evaluate_maps([(result, truth)], tolerance)
}

/// Aggregates the per-pixel counts of several (result, truth) pairs into one
/// report, so a multi-view scene is scored as a whole.
pub fn evaluate_maps<'a>(
    pairs: impl IntoIterator<Item = (&'a DepthNormalMap, &'a DepthNormalMap)>,
    tolerance: f64,
) -> EvalReport {
    assert!(tolerance > 0.0, "tolerance must be positive");
    let (mut truth_px, mut result_px, mut matched) = (0usize, 0usize, 0usize);
    for (result, truth) in pairs {
        assert_eq!(
            (result.width(), result.height()),
            (truth.width(), truth.height()),
            "result and truth maps disagree on dimensions"
        );
        for i in 0..result.width() * result.height() {
            let t_ok = truth.valid_flags()[i];
            let r_ok = result.valid_flags()[i];
            truth_px += t_ok as usize;
            result_px += r_ok as usize;
            if t_ok && r_ok {
                let g = truth.depths()[i];
                matched += ((result.depths()[i] - g).abs() <= tolerance * g) as usize;
            }
        }
    }
    EvalReport::from_counts(tolerance, truth_px, result_px, matched)
}

/// Evaluates id-matched result maps against truth maps at one tolerance.
/// Ids present on only one side are ignored.
pub fn evaluate_scene(
    results: &BTreeMap<u32, DepthNormalMap>,
    truths: &BTreeMap<u32, DepthNormalMap>,
    tolerance: f64,
) -> EvalReport {
    evaluate_maps(
        results
            .iter()
            .filter_map(|(id, map)| truths.get(id).map(|t| (map, t))),
        tolerance,
    )
}

/// Human-stable label of a ladder tolerance: `0.005 -> "0.5"`.
pub fn tolerance_label(tolerance: f64) -> String {
    let pct = tolerance * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}
