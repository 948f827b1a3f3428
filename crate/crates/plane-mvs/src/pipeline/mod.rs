//! End-to-end reconstruction: chains view selection, depth estimation,
//! consistency filtering, plane-hypothesis completion, re-filtering, and
//! fusion over a whole scene, recording per-stage timings and writing
//! per-stage artifacts so any stage can be inspected or re-run in isolation.

mod eval;
mod synthetic;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::consistency::{filter_map, ConsistencyConfig};
use crate::fusion::{fuse, FusedPoint};
use crate::geometry::Camera;
use crate::matcher::{estimate_depth_map, DepthNormalMap, MatchConfig, MatchError, MatchScene};
use crate::phi::{infer_planes, PhiConfig};
use crate::scene_io::{
    load_gray, parse_sparse_model, read_depth_map, write_depth_map, write_ply, GrayImage,
    SceneError, SparseModel,
};
use crate::view_selection::{select_neighbors, SelectError};

pub use eval::{
    evaluate_map, evaluate_maps, evaluate_scene, tolerance_label, EvalReport, TOLERANCE_LADDER,
};
pub use synthetic::{generate_scene, truth_name, SceneSpec, SpecError, SyntheticScene};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("config key {key}: {message}")]
    Key { key: String, message: String },
    #[error("view selection for image {image}: {source}")]
    Select {
        image: u32,
        #[source]
        source: SelectError,
    },
    #[error("depth estimation for image {image}: {source}")]
    Estimate {
        image: u32,
        #[source]
        source: MatchError,
    },
    #[error("scene files: {0}")]
    Scene(#[from] SceneError),
}

/// All tunables of a full run, serializable as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Minimum mean projection displacement for a neighbor pair, pixels.
    pub t_tau: f64,
    /// Relative perturbation used by the displacement probe.
    pub eps: f64,
    /// Maximum number of source views per reference image.
    pub max_neighbors: usize,
    pub matching: MatchConfig,
    pub consistency: ConsistencyConfig,
    pub phi: PhiConfig,
    /// Completion of filtered-out regions; disable for ablations.
    pub phi_enabled: bool,
    /// Relative 3D distance below which cross-view points merge.
    pub fusion_rel_tol: f64,
    /// Process images and model at half resolution.
    pub half_scale: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t_tau: 0.1,
            eps: 0.002,
            max_neighbors: 8,
            matching: MatchConfig::default(),
            consistency: ConsistencyConfig::default(),
            phi: PhiConfig::default(),
            phi_enabled: true,
            fusion_rel_tol: 0.01,
            half_scale: false,
            seed: 0,
        }
    }
}

macro_rules! config_keys {
    ($(($key:literal, $get:expr, $set:expr)),+ $(,)?) => {
        /// Recognized config keys in canonical order.
        pub const KEYS: &'static [&'static str] = &[$($key),+];

        /// Sets one key from its text form.
        pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
            let bad = |message: String| PipelineError::Key { key: key.to_string(), message };
            match key {
                $($key => match ($set)(self, value) {
                    Some(()) => Ok(()),
                    None => Err(bad(format!("cannot parse value {value:?}"))),
                })+
                _ => Err(bad("unknown key".to_string())),
            }
        }

        /// Serializes every key in canonical order; parses back to `self`.
        pub fn to_text(&self) -> String {
            let mut out = String::new();
            $(out.push_str(&format!("{} = {}\n", $key, ($get)(self)));)+
            out
        }
    };
}

fn parse_into<T: std::str::FromStr>(slot: &mut T, value: &str) -> Option<()> {
    *slot = value.parse().ok()?;
    Some(())
}

impl PipelineConfig {
    config_keys![
        ("t_tau", |c: &Self| c.t_tau, |c: &mut Self, v| parse_into(&mut c.t_tau, v)),
        ("eps", |c: &Self| c.eps, |c: &mut Self, v| parse_into(&mut c.eps, v)),
        ("max_neighbors", |c: &Self| c.max_neighbors, |c: &mut Self, v| {
            parse_into(&mut c.max_neighbors, v)
        }),
        ("r_now", |c: &Self| c.matching.r_now, |c: &mut Self, v| {
            parse_into(&mut c.matching.r_now, v)
        }),
        ("r_orig", |c: &Self| c.matching.r_orig, |c: &mut Self, v| {
            parse_into(&mut c.matching.r_orig, v)
        }),
        ("z_min", |c: &Self| c.matching.z_min, |c: &mut Self, v| {
            parse_into(&mut c.matching.z_min, v)
        }),
        ("omega", |c: &Self| c.matching.omega, |c: &mut Self, v| {
            parse_into(&mut c.matching.omega, v)
        }),
        ("iterations", |c: &Self| c.matching.iterations, |c: &mut Self, v| {
            parse_into(&mut c.matching.iterations, v)
        }),
        ("rel_depth_tol", |c: &Self| c.consistency.rel_depth_tol, |c: &mut Self, v| {
            parse_into(&mut c.consistency.rel_depth_tol, v)
        }),
        ("angle_tol_deg", |c: &Self| c.consistency.angle_tol_deg, |c: &mut Self, v| {
            parse_into(&mut c.consistency.angle_tol_deg, v)
        }),
        ("reproj_tol_px", |c: &Self| c.consistency.reproj_tol_px, |c: &mut Self, v| {
            parse_into(&mut c.consistency.reproj_tol_px, v)
        }),
        ("min_support", |c: &Self| c.consistency.min_support, |c: &mut Self, v| {
            parse_into(&mut c.consistency.min_support, v)
        }),
        ("kappa1", |c: &Self| c.phi.kappa1, |c: &mut Self, v| parse_into(&mut c.phi.kappa1, v)),
        ("kappa2", |c: &Self| c.phi.kappa2, |c: &mut Self, v| parse_into(&mut c.phi.kappa2, v)),
        ("kappa3", |c: &Self| c.phi.kappa3, |c: &mut Self, v| parse_into(&mut c.phi.kappa3, v)),
        ("fit_support", |c: &Self| c.phi.fit_support, |c: &mut Self, v| {
            parse_into(&mut c.phi.fit_support, v)
        }),
        ("trw_iterations", |c: &Self| c.phi.trw_iterations, |c: &mut Self, v| {
            parse_into(&mut c.phi.trw_iterations, v)
        }),
        ("phi_enabled", |c: &Self| c.phi_enabled, |c: &mut Self, v| {
            parse_into(&mut c.phi_enabled, v)
        }),
        ("fusion_rel_tol", |c: &Self| c.fusion_rel_tol, |c: &mut Self, v| {
            parse_into(&mut c.fusion_rel_tol, v)
        }),
        ("half_scale", |c: &Self| c.half_scale, |c: &mut Self, v| {
            parse_into(&mut c.half_scale, v)
        }),
        ("seed", |c: &Self| c.seed, |c: &mut Self, v| parse_into(&mut c.seed, v)),
    ];

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown keys and bad values report their line.
    pub fn parse_str(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(PipelineError::Config {
                    line,
                    message: format!("expected key = value, got {content:?}"),
                });
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| PipelineError::Config { line, message: e.to_string() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(SceneError::from)?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let key = |key: &str, message: &str| PipelineError::Key {
            key: key.to_string(),
            message: message.to_string(),
        };
        if !(self.t_tau >= 0.0) {
            return Err(key("t_tau", "must be non-negative"));
        }
        if !(self.eps > 0.0) {
            return Err(key("eps", "must be positive"));
        }
        if self.max_neighbors == 0 {
            return Err(key("max_neighbors", "must be at least 1"));
        }
        if !self.matching.validate() {
            return Err(key("r_now", "matching configuration is inconsistent"));
        }
        if !self.consistency.validate() {
            return Err(key("rel_depth_tol", "consistency configuration is inconsistent"));
        }
        if !self.phi.validate() {
            return Err(key("kappa1", "completion configuration is inconsistent"));
        }
        if !(self.fusion_rel_tol > 0.0) {
            return Err(key("fusion_rel_tol", "must be positive"));
        }
        Ok(())
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Neighbor view selection for one reference image.
    SelectViews,
    /// Random initialization plus the propagation/refinement loop.
    EstimateDepth,
    /// Cross-view consistency filtering of the raw maps.
    FilterDepth,
    /// Plane-hypothesis completion of the filtered maps.
    CompletePlanes,
    /// Consistency filtering of the completed maps.
    RefilterDepth,
    /// Cross-view merging into one point cloud.
    FusePoints,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::SelectViews => "select_views",
            Stage::EstimateDepth => "estimate_depth",
            Stage::FilterDepth => "filter_depth",
            Stage::CompletePlanes => "complete_planes",
            Stage::RefilterDepth => "refilter_depth",
            Stage::FusePoints => "fuse_points",
        }
    }
}

/// One executed operation: which stage, on which image, how long.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    /// The reference image, or `None` for whole-scene stages.
    pub image: Option<u32>,
    pub seconds: f64,
}

/// Everything a run produces, with every intermediate map retained.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub neighbors: BTreeMap<u32, Vec<u32>>,
    /// Maps straight out of estimation.
    pub raw: BTreeMap<u32, DepthNormalMap>,
    /// After the first consistency filter.
    pub filtered: BTreeMap<u32, DepthNormalMap>,
    /// After completion; absent when completion is disabled.
    pub completed: Option<BTreeMap<u32, DepthNormalMap>>,
    /// The maps fusion consumed: re-filtered completed maps, or the
    /// filtered maps when completion is disabled.
    pub final_maps: BTreeMap<u32, DepthNormalMap>,
    pub cloud: Vec<FusedPoint>,
    /// Execution log: one record per invoked operation, in order.
    pub log: Vec<StageRecord>,
}

fn timed<T>(
    log: &mut Vec<StageRecord>,
    stage: Stage,
    image: Option<u32>,
    f: impl FnOnce() -> T,
) -> T {
    let start = Instant::now();
    let value = f();
    log.push(StageRecord { stage, image, seconds: start.elapsed().as_secs_f64() });
    value
}

fn stage_select(
    model: &SparseModel,
    cfg: &PipelineConfig,
    log: &mut Vec<StageRecord>,
) -> Result<BTreeMap<u32, Vec<u32>>, PipelineError> {
    let mut neighbors = BTreeMap::new();
    for &id in model.images.keys() {
        let list = timed(log, Stage::SelectViews, Some(id), || {
            select_neighbors(model, id, cfg.t_tau, cfg.eps, cfg.max_neighbors)
        })
        .map_err(|source| PipelineError::Select { image: id, source })?;
        neighbors.insert(id, list);
    }
    Ok(neighbors)
}

fn stage_estimate(
    model: &SparseModel,
    images: &BTreeMap<u32, GrayImage>,
    neighbors: &BTreeMap<u32, Vec<u32>>,
    cfg: &PipelineConfig,
    log: &mut Vec<StageRecord>,
) -> Result<BTreeMap<u32, DepthNormalMap>, PipelineError> {
    let mut raw = BTreeMap::new();
    for (&id, list) in neighbors {
        let map = timed(log, Stage::EstimateDepth, Some(id), || {
            estimate_depth_map(id, list, model, images, &cfg.matching, cfg.seed)
        })
        .map_err(|source| PipelineError::Estimate { image: id, source })?;
        raw.insert(id, map);
    }
    Ok(raw)
}

fn stage_filter(
    stage: Stage,
    cams: &BTreeMap<u32, Camera>,
    maps: &BTreeMap<u32, DepthNormalMap>,
    neighbors: &BTreeMap<u32, Vec<u32>>,
    cfg: &PipelineConfig,
    log: &mut Vec<StageRecord>,
) -> BTreeMap<u32, DepthNormalMap> {
    let c_max = cfg.matching.c_max();
    neighbors
        .iter()
        .map(|(&id, list)| {
            let map = timed(log, stage, Some(id), || {
                filter_map(id, list, cams, maps, &cfg.consistency, c_max)
            });
            (id, map)
        })
        .collect()
}

fn stage_complete(
    model: &SparseModel,
    images: &BTreeMap<u32, GrayImage>,
    filtered: &BTreeMap<u32, DepthNormalMap>,
    neighbors: &BTreeMap<u32, Vec<u32>>,
    cfg: &PipelineConfig,
    log: &mut Vec<StageRecord>,
) -> Result<BTreeMap<u32, DepthNormalMap>, PipelineError> {
    let mut completed = BTreeMap::new();
    for (&id, list) in neighbors {
        let scene = MatchScene::from_model(id, list, model, images)
            .map_err(|source| PipelineError::Estimate { image: id, source })?;
        let map = timed(log, Stage::CompletePlanes, Some(id), || {
            infer_planes(&filtered[&id], &scene, &cfg.matching, &cfg.phi)
        });
        completed.insert(id, map);
    }
    Ok(completed)
}

fn scene_cameras(model: &SparseModel) -> BTreeMap<u32, Camera> {
    model
        .images
        .keys()
        .map(|&id| (id, model.camera(id).expect("images reference known cameras")))
        .collect()
}

/// Runs the full pipeline on an in-memory scene. With `cfg.half_scale` the
/// model and images are downsampled first; all outputs are at that scale.
pub fn run(
    model: &SparseModel,
    images: &BTreeMap<u32, GrayImage>,
    cfg: &PipelineConfig,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    if cfg.half_scale {
        let model = model.half_scale();
        let images = images.iter().map(|(&id, img)| (id, img.half_scale())).collect();
        let cfg = PipelineConfig { half_scale: false, ..cfg.clone() };
        return run(&model, &images, &cfg);
    }
    let mut log = Vec::new();
    let cams = scene_cameras(model);
    let neighbors = stage_select(model, cfg, &mut log)?;
    let raw = stage_estimate(model, images, &neighbors, cfg, &mut log)?;
    let filtered = stage_filter(Stage::FilterDepth, &cams, &raw, &neighbors, cfg, &mut log);
    let (completed, final_maps) = if cfg.phi_enabled {
        let completed = stage_complete(model, images, &filtered, &neighbors, cfg, &mut log)?;
        let refiltered =
            stage_filter(Stage::RefilterDepth, &cams, &completed, &neighbors, cfg, &mut log);
        (Some(completed), refiltered)
    } else {
        (None, filtered.clone())
    };
    let cloud = timed(&mut log, Stage::FusePoints, None, || {
        fuse(&cams, images, &final_maps, cfg.fusion_rel_tol)
    });
    Ok(RunOutput { neighbors, raw, filtered, completed, final_maps, cloud, log })
}

/// Both arms of a completion ablation sharing selection, estimation, and the
/// first filter, so the comparison differs only downstream of completion.
#[derive(Debug, Clone)]
pub struct AblationOutput {
    pub baseline: RunOutput,
    pub completed: RunOutput,
}

/// Runs the pipeline once up to the first filter, then branches: the
/// baseline arm fuses the filtered maps directly, the completed arm runs
/// completion and re-filtering first. `cfg.phi_enabled` is ignored.
pub fn ablate(
    model: &SparseModel,
    images: &BTreeMap<u32, GrayImage>,
    cfg: &PipelineConfig,
) -> Result<AblationOutput, PipelineError> {
    cfg.validate()?;
    if cfg.half_scale {
        let model = model.half_scale();
        let images = images.iter().map(|(&id, img)| (id, img.half_scale())).collect();
        let cfg = PipelineConfig { half_scale: false, ..cfg.clone() };
        return ablate(&model, &images, &cfg);
    }
    let mut log = Vec::new();
    let cams = scene_cameras(model);
    let neighbors = stage_select(model, cfg, &mut log)?;
    let raw = stage_estimate(model, images, &neighbors, cfg, &mut log)?;
    let filtered = stage_filter(Stage::FilterDepth, &cams, &raw, &neighbors, cfg, &mut log);

    let mut baseline_log = log.clone();
    let baseline_cloud = timed(&mut baseline_log, Stage::FusePoints, None, || {
        fuse(&cams, images, &filtered, cfg.fusion_rel_tol)
    });
    let baseline = RunOutput {
        neighbors: neighbors.clone(),
        raw: raw.clone(),
        filtered: filtered.clone(),
        completed: None,
        final_maps: filtered.clone(),
        cloud: baseline_cloud,
        log: baseline_log,
    };

    let completed_maps = stage_complete(model, images, &filtered, &neighbors, cfg, &mut log)?;
    let refiltered =
        stage_filter(Stage::RefilterDepth, &cams, &completed_maps, &neighbors, cfg, &mut log);
    let cloud = timed(&mut log, Stage::FusePoints, None, || {
        fuse(&cams, images, &refiltered, cfg.fusion_rel_tol)
    });
    let completed = RunOutput {
        neighbors,
        raw,
        filtered,
        completed: Some(completed_maps),
        final_maps: refiltered,
        cloud,
        log,
    };
    Ok(AblationOutput { baseline, completed })
}

fn subdir_for(stage: Stage) -> Option<&'static str> {
    match stage {
        Stage::EstimateDepth => Some("depth_raw"),
        Stage::FilterDepth => Some("depth_filtered"),
        Stage::CompletePlanes => Some("depth_completed"),
        Stage::RefilterDepth => Some("depth_final"),
        _ => None,
    }
}

fn write_map_set(
    dir: &Path,
    sub: &str,
    maps: &BTreeMap<u32, DepthNormalMap>,
) -> Result<(), SceneError> {
    let stage_dir = dir.join(sub);
    std::fs::create_dir_all(&stage_dir)?;
    for (&id, map) in maps {
        write_depth_map(map, &stage_dir.join(truth_name(id)))?;
    }
    Ok(())
}

/// Writes the per-stage depth maps, the fused cloud, the effective config,
/// and the report of a finished run into `dir`.
pub fn write_artifacts(
    out: &RunOutput,
    cfg: &PipelineConfig,
    truth: Option<&BTreeMap<u32, DepthNormalMap>>,
    dir: &Path,
) -> Result<(), SceneError> {
    std::fs::create_dir_all(dir)?;
    write_map_set(dir, subdir_for(Stage::EstimateDepth).unwrap(), &out.raw)?;
    write_map_set(dir, subdir_for(Stage::FilterDepth).unwrap(), &out.filtered)?;
    if let Some(completed) = &out.completed {
        write_map_set(dir, subdir_for(Stage::CompletePlanes).unwrap(), completed)?;
    }
    write_map_set(dir, subdir_for(Stage::RefilterDepth).unwrap(), &out.final_maps)?;
    let points: Vec<_> = out.cloud.iter().map(|p| p.to_ply_point()).collect();
    write_ply(&points, &dir.join("cloud.ply"))?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    std::fs::write(dir.join("report.txt"), report_lines(out, truth).join("\n") + "\n")?;
    Ok(())
}

/// Machine-readable summary: one `name=value` line per metric.
pub fn report_lines(
    out: &RunOutput,
    truth: Option<&BTreeMap<u32, DepthNormalMap>>,
) -> Vec<String> {
    let mut lines = Vec::new();
    lines.push(format!("images={}", out.raw.len()));
    let valid = |maps: &BTreeMap<u32, DepthNormalMap>| -> usize {
        maps.values().map(|m| m.valid_count()).sum()
    };
    lines.push(format!("valid_raw={}", valid(&out.raw)));
    lines.push(format!("valid_filtered={}", valid(&out.filtered)));
    if let Some(completed) = &out.completed {
        lines.push(format!("valid_completed={}", valid(completed)));
    }
    lines.push(format!("valid_final={}", valid(&out.final_maps)));
    lines.push(format!("cloud_points={}", out.cloud.len()));
    let support: u64 = out.cloud.iter().map(|p| u64::from(p.support)).sum();
    lines.push(format!("cloud_support={support}"));
    for stage in [
        Stage::SelectViews,
        Stage::EstimateDepth,
        Stage::FilterDepth,
        Stage::CompletePlanes,
        Stage::RefilterDepth,
        Stage::FusePoints,
    ] {
        let total: f64 = out
            .log
            .iter()
            .filter(|r| r.stage == stage)
            .map(|r| r.seconds)
            .sum();
        if out.log.iter().any(|r| r.stage == stage) {
            lines.push(format!("{}_seconds={total:.3}", stage.name()));
        }
    }
    if let Some(truth) = truth {
        for &tol in &TOLERANCE_LADDER {
            let report = evaluate_scene(&out.final_maps, truth, tol);
            let label = tolerance_label(tol);
            lines.push(format!("completeness_{label}pct={:.6}", report.completeness));
            lines.push(format!("accuracy_{label}pct={:.6}", report.accuracy));
            lines.push(format!("f1_{label}pct={:.6}", report.f1));
        }
    }
    lines
}

/// Loads a scene directory (`sparse/` plus `images/`) into memory.
pub fn load_scene_dir(
    input: &Path,
) -> Result<(SparseModel, BTreeMap<u32, GrayImage>), PipelineError> {
    let model = parse_sparse_model(&input.join("sparse"))?;
    let mut images = BTreeMap::new();
    for (&id, meta) in &model.images {
        let image = load_gray(&input.join("images").join(&meta.name), false)?;
        images.insert(id, image);
    }
    Ok((model, images))
}

/// Loads ground-truth maps from `input/truth` when present and compatible
/// with the given maps; returns `None` otherwise.
pub fn load_matching_truth(
    input: &Path,
    maps: &BTreeMap<u32, DepthNormalMap>,
) -> Option<BTreeMap<u32, DepthNormalMap>> {
    let dir = input.join("truth");
    let mut truth = BTreeMap::new();
    for (&id, map) in maps {
        let loaded = read_depth_map(&dir.join(truth_name(id))).ok()?;
        if (loaded.width(), loaded.height()) != (map.width(), map.height()) {
            return None;
        }
        truth.insert(id, loaded);
    }
    Some(truth)
}

/// Runs the pipeline on a scene directory and writes all artifacts plus the
/// report into `output`. Ground truth under `input/truth` is evaluated when
/// its resolution matches the run.
pub fn run_dir(input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    let (model, images) = load_scene_dir(input)?;
    let out = run(&model, &images, cfg)?;
    let truth = load_matching_truth(input, &out.final_maps);
    write_artifacts(&out, cfg, truth.as_ref(), output)?;
    Ok(out)
}
