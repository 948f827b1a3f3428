//! Neighbor view selection on a synthetic scene.
//!
//! Prints, for every reference image, the pairwise statistics of each
//! candidate and the neighbors that survive the parallax gate.

use plane_mvs::pipeline::{generate_scene, SceneSpec};
use plane_mvs::view_selection::{pair_stats, select_neighbors};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = generate_scene(&SceneSpec::default())?;
    let model = &scene.model;
    let (t_tau, eps, k) = (0.1, 0.002, 8);

    for &ref_id in model.images.keys() {
        println!("reference image {ref_id}");
        for &other in model.images.keys().filter(|&&id| id != ref_id) {
            match pair_stats(model, ref_id, other, eps) {
                Some(s) => println!(
                    "  candidate {other}: shared={} tau={:.3}px baseline={:.2} zeta={:.3e}{}",
                    s.shared_count,
                    s.tau,
                    s.baseline,
                    s.zeta,
                    if s.tau < t_tau { "  (dropped: too little parallax)" } else { "" }
                ),
                None => println!("  candidate {other}: no shared points"),
            }
        }
        let selected = select_neighbors(model, ref_id, t_tau, eps, k)?;
        println!("  selected: {selected:?}");
    }
    Ok(())
}
