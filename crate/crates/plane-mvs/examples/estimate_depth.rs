//! Depth/normal estimation for a single reference view.
//!
//! Runs the randomized propagation loop on one image of a synthetic scene
//! and reports how the estimate compares against the exact ground truth.

use std::path::Path;

use plane_mvs::matcher::estimate_depth_map;
use plane_mvs::pipeline::{evaluate_map, generate_scene, SceneSpec, TOLERANCE_LADDER};
use plane_mvs::scene_io::write_depth_map;
use plane_mvs::view_selection::select_neighbors;
use plane_mvs::MatchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SceneSpec {
        width: 256,
        height: 192,
        camera_count: 6,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec)?;
    let ref_id = 3;
    let neighbors = select_neighbors(&scene.model, ref_id, 0.1, 0.002, 8)?;
    println!("reference={ref_id}");
    println!("neighbors={neighbors:?}");

    let cfg = MatchConfig::default();
    let start = std::time::Instant::now();
    let map = estimate_depth_map(ref_id, &neighbors, &scene.model, &scene.images, &cfg, 0)?;
    println!("estimate_seconds={:.2}", start.elapsed().as_secs_f64());
    println!("valid_pixels={}/{}", map.valid_count(), map.width() * map.height());
    println!("mean_cost={:.4}", map.mean_cost_over_valid());

    for tol in TOLERANCE_LADDER {
        let report = evaluate_map(&map, &scene.truth[&ref_id], tol);
        println!(
            "within_{:.1}pct={:.4}",
            tol * 100.0,
            report.accuracy
        );
    }

    let out = Path::new("target/examples/estimate_depth.dmap");
    std::fs::create_dir_all(out.parent().unwrap())?;
    write_depth_map(&map, out)?;
    println!("map={}", out.display());
    Ok(())
}
