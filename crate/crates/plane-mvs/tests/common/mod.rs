//! Shared helpers for the integration tests: a small scene and a config
//! sized so a full pipeline run takes about a second.

use plane_mvs::pipeline::{generate_scene, PipelineConfig, SceneSpec, SyntheticScene};

pub fn tiny_spec() -> SceneSpec {
    SceneSpec {
        width: 96,
        height: 72,
        camera_count: 4,
        plane_count: 2,
        matte_fraction: 0.0,
        point_count: 80,
        seed: 11,
    }
}

pub fn tiny_scene() -> SyntheticScene {
    generate_scene(&tiny_spec()).expect("tiny spec is valid")
}

pub fn quick_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    // Projection displacements scale with focal length, so the tiny scene
    // needs a parallax gate matched to its resolution (half of it again when
    // a test runs at half scale).
    cfg.t_tau = 0.015;
    cfg.matching.r_now = 3;
    cfg.matching.r_orig = 4;
    cfg.matching.iterations = 2;
    cfg
}
