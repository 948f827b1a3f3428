//! Command-line front end for the reconstruction pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use plane_mvs::pipeline::{
    self, evaluate_scene, tolerance_label, PipelineConfig, SceneSpec, TOLERANCE_LADDER,
};
use plane_mvs::scene_io::read_depth_map;
use plane_mvs::DepthNormalMap;

#[derive(Parser)]
#[command(
    name = "plane-mvs",
    version,
    about = "Multi-view stereo: depth estimation, texture-less completion, fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstructs a scene directory into depth maps and a fused cloud.
    Run(RunArgs),
    /// Generates a synthetic benchmark scene with ground truth.
    Synth(SynthArgs),
    /// Scores depth maps against ground-truth maps.
    Eval(EvalArgs),
    /// Compares the pipeline with and without texture-less completion.
    Ablate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scene directory holding `sparse/` and `images/`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for depth maps, cloud, and report.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory the scene is written into.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    cameras: usize,
    #[arg(long, default_value_t = 3)]
    planes: usize,
    /// Linear fraction of the backdrop painted constant, in [0, 0.8].
    #[arg(long, default_value_t = 0.0)]
    matte_fraction: f64,
    #[arg(long, default_value_t = 260)]
    points: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of reconstructed depth maps (`NNNN.dmap`).
    #[arg(long)]
    maps: PathBuf,
    /// Directory of ground-truth depth maps with matching names.
    #[arg(long)]
    truth: PathBuf,
    /// Extra relative tolerances on top of the standard ladder.
    #[arg(long)]
    tolerance: Vec<f64>,
}

/// One optional flag per config key; omitted flags fall back to the config
/// file and then to the defaults.
#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    t_tau: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    r_now: Option<u32>,
    #[arg(long)]
    r_orig: Option<u32>,
    #[arg(long)]
    z_min: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    rel_depth_tol: Option<f64>,
    #[arg(long)]
    angle_tol_deg: Option<f64>,
    #[arg(long)]
    reproj_tol_px: Option<f64>,
    #[arg(long)]
    min_support: Option<usize>,
    #[arg(long)]
    kappa1: Option<f64>,
    #[arg(long)]
    kappa2: Option<f64>,
    #[arg(long)]
    kappa3: Option<f64>,
    #[arg(long)]
    fit_support: Option<usize>,
    #[arg(long)]
    trw_iterations: Option<usize>,
    #[arg(long)]
    phi_enabled: Option<bool>,
    #[arg(long)]
    fusion_rel_tol: Option<f64>,
    #[arg(long)]
    half_scale: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, Box<dyn std::error::Error>> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        let mut set = |key: &str, value: Option<String>| -> Result<(), pipeline::PipelineError> {
            match value {
                Some(v) => cfg.set(key, &v),
                None => Ok(()),
            }
        };
        let s = |v: &Option<f64>| v.map(|x| x.to_string());
        set("t_tau", s(&self.t_tau))?;
        set("eps", s(&self.eps))?;
        set("max_neighbors", self.max_neighbors.map(|v| v.to_string()))?;
        set("r_now", self.r_now.map(|v| v.to_string()))?;
        set("r_orig", self.r_orig.map(|v| v.to_string()))?;
        set("z_min", s(&self.z_min))?;
        set("omega", s(&self.omega))?;
        set("iterations", self.iterations.map(|v| v.to_string()))?;
        set("rel_depth_tol", s(&self.rel_depth_tol))?;
        set("angle_tol_deg", s(&self.angle_tol_deg))?;
        set("reproj_tol_px", s(&self.reproj_tol_px))?;
        set("min_support", self.min_support.map(|v| v.to_string()))?;
        set("kappa1", s(&self.kappa1))?;
        set("kappa2", s(&self.kappa2))?;
        set("kappa3", s(&self.kappa3))?;
        set("fit_support", self.fit_support.map(|v| v.to_string()))?;
        set("trw_iterations", self.trw_iterations.map(|v| v.to_string()))?;
        set("phi_enabled", self.phi_enabled.map(|v| v.to_string()))?;
        set("fusion_rel_tol", s(&self.fusion_rel_tol))?;
        set("half_scale", self.half_scale.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = args.config.build()?;
    let out = pipeline::run_dir(&args.input, &args.output, &cfg)?;
    let truth = pipeline::load_matching_truth(&args.input, &out.final_maps);
    for line in pipeline::report_lines(&out, truth.as_ref()) {
        println!("{line}");
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Box<dyn std::error::Error>> {
    let spec = SceneSpec {
        width: args.width,
        height: args.height,
        camera_count: args.cameras,
        plane_count: args.planes,
        matte_fraction: args.matte_fraction,
        point_count: args.points,
        seed: args.seed,
    };
    let scene = pipeline::generate_scene(&spec)?;
    scene.write(&args.output)?;
    println!("images={}", scene.images.len());
    println!("points={}", scene.model.points.len());
    println!("scene={}", args.output.display());
    Ok(())
}

fn load_map_dir(dir: &Path) -> Result<BTreeMap<String, DepthNormalMap>, Box<dyn std::error::Error>> {
    let mut maps = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "dmap") {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            maps.insert(name, read_depth_map(&path)?);
        }
    }
    Ok(maps)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Box<dyn std::error::Error>> {
    let maps = load_map_dir(&args.maps)?;
    let truths = load_map_dir(&args.truth)?;
    let keyed = |m: &BTreeMap<String, DepthNormalMap>| -> BTreeMap<u32, DepthNormalMap> {
        m.iter()
            .filter_map(|(name, map)| name.parse().ok().map(|id: u32| (id, map.clone())))
            .collect()
    };
    let (results, truths) = (keyed(&maps), keyed(&truths));
    if results.is_empty() || truths.is_empty() {
        return Err("no overlapping depth maps to evaluate".into());
    }
    let mut ladder: Vec<f64> = TOLERANCE_LADDER.to_vec();
    ladder.extend(&args.tolerance);
    for tol in ladder {
        let report = evaluate_scene(&results, &truths, tol);
        let label = tolerance_label(tol);
        println!("completeness_{label}pct={:.6}", report.completeness);
        println!("accuracy_{label}pct={:.6}", report.accuracy);
        println!("f1_{label}pct={:.6}", report.f1);
    }
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = args.config.build()?;
    let (model, images) = pipeline::load_scene_dir(&args.input)?;
    let out = pipeline::ablate(&model, &images, &cfg)?;
    pipeline::write_artifacts(&out.baseline, &cfg, None, &args.output.join("baseline"))?;
    pipeline::write_artifacts(&out.completed, &cfg, None, &args.output.join("completed"))?;
    let truth = pipeline::load_matching_truth(&args.input, &out.completed.final_maps);
    for (arm, run) in [("baseline", &out.baseline), ("completed", &out.completed)] {
        println!("{arm}_valid_final={}", run.final_maps.values().map(|m| m.valid_count()).sum::<usize>());
        println!("{arm}_cloud_points={}", run.cloud.len());
        if let Some(truth) = &truth {
            for &tol in &TOLERANCE_LADDER {
                let report = evaluate_scene(&run.final_maps, truth, tol);
                let label = tolerance_label(tol);
                println!("{arm}_completeness_{label}pct={:.6}", report.completeness);
                println!("{arm}_accuracy_{label}pct={:.6}", report.accuracy);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
