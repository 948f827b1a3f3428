//! Temporary diagnostic: ablation on the 320x240 8-camera scene with a
//! breakdown of why filled pixels fail the re-filter, sweeping completion
//! configs over one shared estimation pass.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector2;
use plane_mvs::consistency::{check_pair, filter_map, Inconsistency};
use plane_mvs::matcher::{estimate_depth_map, MatchScene};
use plane_mvs::phi::infer_planes;
use plane_mvs::pipeline::{evaluate_scene, generate_scene, PipelineConfig, SceneSpec};
use plane_mvs::view_selection::select_neighbors;
use plane_mvs::{DepthNormalMap, PhiConfig};

fn pct(v: &mut Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[((v.len() - 1) as f64 * q) as usize]
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SceneSpec {
        width: 320,
        height: 240,
        camera_count: 8,
        plane_count: 1,
        matte_fraction: 0.5,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec)?;
    let cfg = PipelineConfig::default();
    let cams: BTreeMap<u32, _> = scene
        .model
        .images
        .keys()
        .map(|&id| (id, scene.model.camera(id).unwrap()))
        .collect();

    let mut neighbors = BTreeMap::new();
    for &id in scene.model.images.keys() {
        neighbors.insert(
            id,
            select_neighbors(&scene.model, id, cfg.t_tau, cfg.eps, cfg.max_neighbors)?,
        );
    }

    let t0 = Instant::now();
    let mut raw = BTreeMap::new();
    for (&id, list) in &neighbors {
        raw.insert(
            id,
            estimate_depth_map(id, list, &scene.model, &scene.images, &cfg.matching, cfg.seed)?,
        );
    }
    println!("estimate_seconds={:.1}", t0.elapsed().as_secs_f64());

    let c_max = cfg.matching.c_max();
    let filtered: BTreeMap<u32, DepthNormalMap> = neighbors
        .iter()
        .map(|(&id, list)| (id, filter_map(id, list, &cams, &raw, &cfg.consistency, c_max)))
        .collect();
    let base = evaluate_scene(&filtered, &scene.truth, 0.01);
    println!("baseline_completeness_1pct={:.4} accuracy={:.4}", base.completeness, base.accuracy);

    // Estimation noise on surviving (textured) pixels.
    let mut est_errs: Vec<f64> = Vec::new();
    for (&id, map) in &filtered {
        let truth = &scene.truth[&id];
        for y in 0..map.height() {
            for x in 0..map.width() {
                if map.is_valid(x, y) && truth.is_valid(x, y) {
                    est_errs.push((map.depth(x, y) - truth.depth(x, y)).abs() / truth.depth(x, y));
                }
            }
        }
    }
    println!(
        "filtered_depth_err p50={:.4}% p90={:.4}%",
        100.0 * pct(&mut est_errs.clone(), 0.5),
        100.0 * pct(&mut est_errs, 0.9)
    );

    let variants: Vec<(&str, PhiConfig)> = vec![
        ("default", PhiConfig::default()),
        ("trw4", PhiConfig { trw_iterations: 4, ..PhiConfig::default() }),
        ("fit12", PhiConfig { fit_support: 12, ..PhiConfig::default() }),
        ("fit24", PhiConfig { fit_support: 24, ..PhiConfig::default() }),
        ("fit24_trw4", PhiConfig { fit_support: 24, trw_iterations: 4, ..PhiConfig::default() }),
    ];

    for (name, phi_cfg) in &variants {
        let t1 = Instant::now();
        let mut completed: BTreeMap<u32, DepthNormalMap> = BTreeMap::new();
        for (&id, list) in &neighbors {
            let mscene = MatchScene::from_model(id, list, &scene.model, &scene.images)?;
            completed.insert(id, infer_planes(&filtered[&id], &mscene, &cfg.matching, phi_cfg));
        }
        let refiltered: BTreeMap<u32, DepthNormalMap> = neighbors
            .iter()
            .map(|(&id, list)| {
                (id, filter_map(id, list, &cams, &completed, &cfg.consistency, c_max))
            })
            .collect();
        let fin = evaluate_scene(&refiltered, &scene.truth, 0.01);
        let pre = evaluate_scene(&completed, &scene.truth, 0.01);

        let mut fills = 0usize;
        let mut survived = 0usize;
        let mut reasons: BTreeMap<&'static str, usize> = BTreeMap::new();
        let mut depth_errs: Vec<f64> = Vec::new();
        let mut jumps: Vec<f64> = Vec::new();
        for (&id, map_c) in &completed {
            let map_f = &filtered[&id];
            let map_final = &refiltered[&id];
            let truth = &scene.truth[&id];
            let cam_i = &cams[&id];
            for y in 0..map_c.height() {
                for x in 0..map_c.width() {
                    if !map_c.is_valid(x, y) || map_f.is_valid(x, y) {
                        continue;
                    }
                    fills += 1;
                    let hyp = map_c.hypothesis(x, y).unwrap();
                    if truth.is_valid(x, y) {
                        depth_errs
                            .push((hyp.depth - truth.depth(x, y)).abs() / truth.depth(x, y));
                    }
                    if x + 1 < map_c.width()
                        && map_c.is_valid(x + 1, y)
                        && !map_f.is_valid(x + 1, y)
                    {
                        jumps.push((map_c.depth(x + 1, y) - hyp.depth).abs() / hyp.depth);
                    }
                    if map_final.is_valid(x, y) {
                        survived += 1;
                    } else {
                        let pixel = Vector2::new(x as f64, y as f64);
                        for &j in &neighbors[&id] {
                            if let Err(e) = check_pair(
                                cam_i,
                                &cams[&j],
                                &pixel,
                                &hyp,
                                &completed[&j],
                                &cfg.consistency,
                            ) {
                                let key = match e {
                                    Inconsistency::OutOfView => "out_of_view",
                                    Inconsistency::Depth => "depth",
                                    Inconsistency::Normal => "normal",
                                    Inconsistency::Reprojection => "reproj",
                                };
                                *reasons.entry(key).or_default() += 1;
                            }
                        }
                    }
                }
            }
        }
        println!(
            "--- {name}: phi_seconds={:.1} pre_completeness={:.4} final_completeness={:.4} \
             final_accuracy={:.4} gain={:.4}",
            t1.elapsed().as_secs_f64(),
            pre.completeness,
            fin.completeness,
            fin.accuracy,
            fin.completeness - base.completeness
        );
        println!(
            "    fills={fills} survived={survived} ({:.1}%) reasons={reasons:?}",
            100.0 * survived as f64 / fills as f64
        );
        println!(
            "    fill_err p50={:.3}% p90={:.3}%  jump p50={:.3}% p90={:.3}%",
            100.0 * pct(&mut depth_errs.clone(), 0.5),
            100.0 * pct(&mut depth_errs, 0.9),
            100.0 * pct(&mut jumps.clone(), 0.5),
            100.0 * pct(&mut jumps, 0.9)
        );
    }
    Ok(())
}
