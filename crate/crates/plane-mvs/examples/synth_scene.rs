//! Generates a synthetic benchmark scene and writes it to disk.
//!
//! The output directory is a complete reconstruction input: a sparse model
//! under `sparse/`, one PNG per view under `images/`, and exact ground-truth
//! depth maps under `truth/`.

use std::path::Path;

use plane_mvs::pipeline::{generate_scene, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SceneSpec {
        matte_fraction: 0.4,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec)?;
    let dir = Path::new("target/examples/synth_scene");
    scene.write(dir)?;

    println!("cameras={}", scene.images.len());
    println!("planes={}", spec.plane_count);
    println!("points={}", scene.model.points.len());
    println!("mean_track_length={:.2}", scene.model.mean_track_length());
    for (id, map) in &scene.truth {
        let depths: Vec<f64> = (0..map.width() * map.height())
            .filter(|&i| map.valid_flags()[i])
            .map(|i| map.depths()[i])
            .collect();
        let (min, max) = depths
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
                (lo.min(d), hi.max(d))
            });
        println!("image_{id}_depth_range=[{min:.3}, {max:.3}]");
    }
    println!("scene={}", dir.display());
    Ok(())
}
