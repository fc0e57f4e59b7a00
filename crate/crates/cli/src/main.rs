//! Command-line frontend wiring the proposal pipeline: synthetic data
//! generation, model fitting, weight training, proposal generation and
//! recall evaluation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Defaults annotated `[method default]` come from the published
//! configuration of the underlying method; the rest are artifact choices.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use voxprop::dataset::{
    self, generate_synthetic_scene, read_boxes_csv, read_cloud_csv, read_proposals_csv,
    write_boxes_csv, write_cloud_csv, SyntheticSceneSpec,
};
use voxprop::energy::{ClassModel, ModelProvenance};
use voxprop::eval::{
    average_recall, oracle_recall, recall_vs_budget, write_recall_curve_csv, Difficulty,
    DifficultyFilter, EvalBox, EvalGt, EvalScene, OverlapSpace,
};
use voxprop::geometry::{project_box, CameraCalib, OrientedBox3D, PointCloud, Rect2D};
use voxprop::ground::{ransac_plane_height_band, train_ground_classifier, GroundPlane};
use voxprop::learning::{
    bottom_height, center_height, fit_templates, gaussian_mle, train_ssvm, write_training_log,
    SceneBuildConfig, SsvmConfig, TrainingScene,
};
use voxprop::sampler::{
    propose, write_proposals_csv, write_proposals_kitti, NmsMode, ProposeConfig,
};

/// Error class that maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "voxprop",
    version,
    about = "Ground-plane-constrained 3D object proposals over voxelized point clouds"
)]
struct Cli {
    /// JSON run configuration; individual flags override its fields
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages; results do not depend on this
    /// [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print per-stage timings to stderr
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NmsModeArg {
    Image,
    Bev,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Clone, Copy, ValueEnum)]
enum DifficultyArg {
    Easy,
    Moderate,
    Hard,
}

#[derive(Clone, Copy, ValueEnum)]
enum GtFormatArg {
    Csv,
    Kitti,
}

/// Voxel-grid placement shared by the pipeline commands.
#[derive(Args, Clone)]
struct GridArgs {
    /// Grid origin (minimum corner) as "x,y,z" meters [default: -35,-2.6,0]
    #[arg(long, value_name = "X,Y,Z")]
    grid_origin: Option<String>,
    /// Voxel edge length in meters [method default: 0.2]
    #[arg(long)]
    voxel_size: Option<f64>,
    /// Voxel counts as "nx,ny,nz" [default: 350,23,350]
    #[arg(long, value_name = "NX,NY,NZ")]
    grid_dims: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic scenes (cloud, plane, ground truth) into a
    /// directory
    SynthGen {
        /// Output directory for <stem>.cloud.csv / .gt.csv / .plane.json
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Scene recipe JSON; built-in car-scene recipe when omitted
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        /// Number of scenes [default: 10]
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Seed of the first scene; scene i uses seed-base + i [default: 0]
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
    },
    /// Cluster ground-truth box sizes into up to three size templates
    FitTemplates {
        /// Directory of <stem>.gt.csv files (or a single file)
        #[arg(long, value_name = "PATH")]
        gt: PathBuf,
        /// Class name (car, pedestrian, cyclist, or shared for all classes
        /// pooled)
        #[arg(long)]
        class: String,
        /// Model JSON to create or update
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Smallest population that still forms a cluster [default: 5]
        #[arg(long, default_value_t = 5)]
        min_cluster: usize,
        /// Size histogram bin width in meters [default: 0.1]
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
    },
    /// Fit height-prior statistics and the road-height spread
    FitStats {
        /// Directory of <stem>.gt.csv files (or a single file)
        #[arg(long, value_name = "PATH")]
        gt: PathBuf,
        /// Class name, as in fit-templates
        #[arg(long)]
        class: String,
        /// Model JSON to update
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Plane JSON used for every scene; per-stem <stem>.plane.json
        /// otherwise
        #[arg(long, value_name = "FILE")]
        plane: Option<PathBuf>,
    },
    /// Train the superpixel ground classifier
    TrainGround {
        /// JSON array of 22-dimensional feature rows
        #[arg(long, value_name = "FILE")]
        features: PathBuf,
        /// JSON array of labels (booleans or 0/1)
        #[arg(long, value_name = "FILE")]
        labels: PathBuf,
        /// Output classifier JSON
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Full-batch gradient-descent epochs [default: 500]
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        /// Learning rate [default: 0.5]
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        /// Initialization seed [default: 0]
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate the road plane from a point cloud (height-band RANSAC)
    EstimateGround {
        /// Point cloud: .csv (x,y,z) or KITTI .bin (needs --calib)
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// KITTI calibration file for .bin inputs
        #[arg(long, value_name = "FILE")]
        calib: Option<PathBuf>,
        /// Output plane JSON
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// RANSAC hypothesis count [default: 500]
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        /// Inlier distance threshold in meters [default: 0.05]
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// Hypothesis sampling seed [default: 0]
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Learn the four energy weights with the cutting-plane structured SVM
    TrainWeights {
        /// Directory of scenes: <stem>.cloud.csv, <stem>.gt.csv and
        /// optionally <stem>.plane.json
        #[arg(long, value_name = "DIR")]
        scenes: PathBuf,
        /// Class to train; ground truth of other classes is held out
        #[arg(long)]
        class: String,
        /// Model JSON to update (templates and stats must be fitted first)
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Regularization constant C [default: 1000]
        #[arg(long, default_value_t = 1000.0)]
        c: f64,
        /// Constraint violation tolerance [default: 1e-3]
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Cutting-plane round limit [default: 100]
        #[arg(long, default_value_t = 100)]
        max_rounds: usize,
        /// Write the per-round training trace CSV here
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Generate ranked 3D proposals for one scene
    Propose {
        /// Point cloud: .csv (x,y,z) or KITTI .bin (needs --calib)
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Trained model JSON
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Proposal CSV output
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// KITTI calibration file; enables image-space NMS and the KITTI
        /// export
        #[arg(long, value_name = "FILE")]
        calib: Option<PathBuf>,
        /// Image size "WxH" for --calib
        #[arg(long, default_value = "1242x375")]
        image_size: String,
        /// Road plane JSON; estimated from the cloud when omitted
        #[arg(long, value_name = "FILE")]
        plane: Option<PathBuf>,
        /// Also write KITTI-style detection lines here (needs --calib)
        #[arg(long, value_name = "FILE")]
        kitti_out: Option<PathBuf>,
        /// Number of proposals K [method default: 2000]
        #[arg(long)]
        k: Option<usize>,
        /// NMS IoU threshold delta [method default: 0.75]
        #[arg(long)]
        delta: Option<f64>,
        /// NMS overlap space [default: image with --calib, else bev]
        #[arg(long, value_enum)]
        nms_mode: Option<NmsModeArg>,
        /// Distance beyond which extra road+/-sigma planes are sampled
        /// [method default: 20]
        #[arg(long)]
        far_threshold: Option<f64>,
        /// Face margin of the height-contrast surround box [method default:
        /// 0.6]
        #[arg(long)]
        margin: Option<f64>,
        /// Candidate stride in meters [default: voxel size]
        #[arg(long)]
        stride: Option<f64>,
        /// Seed for plane estimation [default: 0]
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Evaluate oracle recall of proposal files against ground truth
    EvalRecall {
        /// Directory of <stem>.props.csv files
        #[arg(long, value_name = "DIR")]
        props: PathBuf,
        /// Directory of ground truth: <stem>.gt.csv or <stem>.txt (KITTI)
        #[arg(long, value_name = "DIR")]
        gt: PathBuf,
        /// Ground-truth file format [default: csv]
        #[arg(long, value_enum, default_value_t = GtFormatArg::Csv)]
        gt_format: GtFormatArg,
        /// Class to evaluate
        #[arg(long)]
        class: String,
        /// IoU threshold for the recall curve [method default: 0.7 for car
        /// in 2D]
        #[arg(long, default_value_t = 0.7)]
        iou: f64,
        /// Overlap space
        #[arg(long, value_enum, default_value_t = SpaceArg::TwoD)]
        space: SpaceArg,
        /// Proposal budget cap [default: 2000]
        #[arg(long, default_value_t = 2000)]
        budget: usize,
        /// KITTI difficulty regime filter (kitti ground truth only)
        #[arg(long, value_enum)]
        difficulty: Option<DifficultyArg>,
        /// Directory of <stem>.txt calibration files; projects proposals for
        /// image-space 2D evaluation
        #[arg(long, value_name = "DIR")]
        calib_dir: Option<PathBuf>,
        /// Image size "WxH" for --calib-dir
        #[arg(long, default_value = "1242x375")]
        image_size: String,
        /// Where the curve CSV and summary JSON go [default: .]
        #[arg(long, value_name = "DIR", default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<UsageError>() {
                2
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    let started = Instant::now();
    let timing = cli.timing;
    match cli.command {
        Command::SynthGen {
            out_dir,
            spec,
            count,
            seed_base,
        } => cmd_synth_gen(&out_dir, spec.as_deref(), count, seed_base)?,
        Command::FitTemplates {
            gt,
            class,
            model,
            min_cluster,
            bin_width,
        } => cmd_fit_templates(&gt, &class, &model, min_cluster, bin_width)?,
        Command::FitStats {
            gt,
            class,
            model,
            plane,
        } => cmd_fit_stats(&gt, &class, &model, plane.as_deref())?,
        Command::TrainGround {
            features,
            labels,
            out,
            epochs,
            lr,
            seed,
        } => cmd_train_ground(&features, &labels, &out, epochs, lr, seed)?,
        Command::EstimateGround {
            input,
            calib,
            out,
            iterations,
            threshold,
            seed,
        } => cmd_estimate_ground(&input, calib.as_deref(), &out, iterations, threshold, seed)?,
        Command::TrainWeights {
            scenes,
            class,
            model,
            c,
            tolerance,
            max_rounds,
            log,
            grid,
        } => cmd_train_weights(
            cli.config.as_deref(),
            &scenes,
            &class,
            &model,
            c,
            tolerance,
            max_rounds,
            log.as_deref(),
            &grid,
        )?,
        Command::Propose {
            input,
            model,
            out,
            calib,
            image_size,
            plane,
            kitti_out,
            k,
            delta,
            nms_mode,
            far_threshold,
            margin,
            stride,
            seed,
            grid,
        } => cmd_propose(
            cli.config.as_deref(),
            ProposeArgs {
                input,
                model,
                out,
                calib,
                image_size,
                plane,
                kitti_out,
                k,
                delta,
                nms_mode,
                far_threshold,
                margin,
                stride,
                seed,
                grid,
            },
            timing,
        )?,
        Command::EvalRecall {
            props,
            gt,
            gt_format,
            class,
            iou,
            space,
            budget,
            difficulty,
            calib_dir,
            image_size,
            out_dir,
        } => cmd_eval_recall(EvalArgs {
            props,
            gt,
            gt_format,
            class,
            iou,
            space,
            budget,
            difficulty,
            calib_dir,
            image_size,
            out_dir,
        })?,
    }
    if timing {
        eprintln!("total: {:.1} ms", started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

fn parse_triple<T: std::str::FromStr>(text: &str, what: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(usage(format!("{what} needs three comma-separated values")));
    }
    let mut out: Vec<T> = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.trim()
                .parse()
                .map_err(|_| usage(format!("{what}: cannot parse {p:?}")))?,
        );
    }
    Ok([
        out.remove(0),
        out.remove(0),
        out.remove(0),
    ])
}

fn parse_image_size(text: &str) -> Result<(u32, u32)> {
    let (w, h) = text
        .split_once('x')
        .ok_or_else(|| usage("--image-size must look like 1242x375"))?;
    Ok((
        w.parse().map_err(|_| usage("bad image width"))?,
        h.parse().map_err(|_| usage("bad image height"))?,
    ))
}

/// Base run configuration: file if given, defaults otherwise, grid flags on
/// top. Validated before use.
fn load_config(config: Option<&Path>, grid: &GridArgs) -> Result<ProposeConfig> {
    let mut cfg: ProposeConfig = match config {
        Some(path) => {
            require_file(path, "config")?;
            serde_json::from_reader(
                File::open(path).with_context(|| format!("open {}", path.display()))?,
            )
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => ProposeConfig::default(),
    };
    if let Some(origin) = &grid.grid_origin {
        cfg.grid_origin = parse_triple(origin, "--grid-origin")?;
    }
    if let Some(h) = grid.voxel_size {
        cfg.voxel_size = h;
    }
    if let Some(dims) = &grid.grid_dims {
        cfg.grid_dims = parse_triple(dims, "--grid-dims")?;
    }
    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &ProposeConfig) -> Result<()> {
    cfg.grid_spec().map_err(|e| usage(format!("grid: {e}")))?;
    if cfg.k == 0 {
        return Err(usage("k must be at least 1"));
    }
    if !(cfg.delta > 0.0 && cfg.delta <= 1.0) {
        return Err(usage("delta must be in (0, 1]"));
    }
    if cfg.far_threshold < 0.0 || cfg.contrast_margin < 0.0 {
        return Err(usage("far-threshold and margin must be non-negative"));
    }
    if let Some(s) = cfg.stride {
        if !(s > 0.0) {
            return Err(usage("stride must be positive"));
        }
    }
    if !(cfg.ransac_threshold > 0.0) || cfg.ransac_iterations == 0 {
        return Err(usage("ransac parameters must be positive"));
    }
    Ok(())
}

fn class_id_for(class: &str) -> Result<Option<u32>> {
    if class.eq_ignore_ascii_case("shared") {
        return Ok(None);
    }
    dataset::class_id_of(class)
        .map(Some)
        .ok_or_else(|| usage(format!("unknown class {class:?} (car, pedestrian, cyclist, shared)")))
}

/// Sorted scene stems carrying the given suffix, from a directory or a
/// single file.
fn stems_with_suffix(path: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    if path.is_file() {
        let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
        let stem = name.strip_suffix(suffix).unwrap_or(&name).to_string();
        return Ok(vec![(stem, path.to_path_buf())]);
    }
    if !path.is_dir() {
        return Err(usage(format!("{} does not exist", path.display())));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(stem) = name.strip_suffix(suffix) {
            out.push((stem.to_string(), entry.path()));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(usage(format!(
            "no *{suffix} files under {}",
            path.display()
        )));
    }
    Ok(out)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn load_cloud(input: &Path, calib: Option<&Path>) -> Result<PointCloud> {
    require_file(input, "input")?;
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext == "bin" {
        let calib_path =
            calib.ok_or_else(|| usage("reading a .bin velodyne scan requires --calib"))?;
        require_file(calib_path, "calibration")?;
        let calib = dataset::read_calib(calib_path)?;
        Ok(dataset::read_velodyne(input, &calib)?)
    } else {
        let file = File::open(input).with_context(|| format!("open {}", input.display()))?;
        Ok(read_cloud_csv(
            BufReader::new(file),
            &input.display().to_string(),
        )?)
    }
}

fn load_model(path: &Path) -> Result<ClassModel> {
    require_file(path, "model")?;
    let model: ClassModel = serde_json::from_reader(
        File::open(path).with_context(|| format!("open model {}", path.display()))?,
    )
    .map_err(|e| usage(format!("model {}: {e}", path.display())))?;
    model
        .validate()
        .map_err(|e| usage(format!("model {}: {e}", path.display())))?;
    Ok(model)
}

fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

fn load_plane(path: &Path) -> Result<GroundPlane> {
    require_file(path, "plane")?;
    let plane: GroundPlane = serde_json::from_reader(
        File::open(path).with_context(|| format!("open plane {}", path.display()))?,
    )
    .map_err(|e| usage(format!("plane {}: {e}", path.display())))?;
    Ok(plane)
}

/// Loads an existing model or starts a fresh one for the class; fit
/// commands fill the pieces in.
fn load_or_new_model(path: &Path, class: &str) -> Result<ClassModel> {
    if path.exists() {
        let model: ClassModel = serde_json::from_reader(File::open(path)?)
            .map_err(|e| usage(format!("model {}: {e}", path.display())))?;
        if !model.class.eq_ignore_ascii_case(class) {
            return Err(usage(format!(
                "model {} is for class {:?}, not {class:?}",
                path.display(),
                model.class
            )));
        }
        return Ok(model);
    }
    Ok(ClassModel {
        class: class.to_ascii_lowercase(),
        class_id: class_id_for(class)?,
        weights: [0.0; 4],
        templates: Vec::new(),
        mu_ht: 0.8,
        sigma_ht: 0.5,
        sigma_road: 0.0,
        provenance: None,
    })
}

fn gt_boxes_of_class(path: &Path, class_id: Option<u32>) -> Result<Vec<OrientedBox3D>> {
    let file = File::open(path).with_context(|| format!("open {}", path.display()))?;
    let boxes = read_boxes_csv(BufReader::new(file), &path.display().to_string())?;
    Ok(boxes
        .into_iter()
        .filter(|b| class_id.is_none() || b.class_id == class_id)
        .collect())
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

fn cmd_synth_gen(out_dir: &Path, spec: Option<&Path>, count: usize, seed_base: u64) -> Result<()> {
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let base: SyntheticSceneSpec = match spec {
        Some(path) => {
            require_file(path, "spec")?;
            serde_json::from_reader(
                File::open(path).with_context(|| format!("open {}", path.display()))?,
            )
        }
        .map_err(|e| usage(format!("spec {}: {e}", path.display())))?,
        None => SyntheticSceneSpec::default(),
    };
    fs::create_dir_all(out_dir)?;
    save_json(&out_dir.join("synth_spec.json"), &base)?;

    for i in 0..count {
        let spec = SyntheticSceneSpec {
            seed: seed_base + i as u64,
            ..base.clone()
        };
        let scene = generate_synthetic_scene(&spec)?;
        let stem = format!("scene_{i:04}");
        let mut cloud = BufWriter::new(File::create(out_dir.join(format!("{stem}.cloud.csv")))?);
        write_cloud_csv(&mut cloud, &scene.cloud)?;
        let mut gt = BufWriter::new(File::create(out_dir.join(format!("{stem}.gt.csv")))?);
        write_boxes_csv(&mut gt, &scene.gt_boxes)?;
        save_json(&out_dir.join(format!("{stem}.plane.json")), &scene.plane)?;
        log::info!(
            "{stem}: {} points, {} objects",
            scene.cloud.len(),
            scene.gt_boxes.len()
        );
    }
    println!("wrote {count} scenes to {}", out_dir.display());
    Ok(())
}

fn cmd_fit_templates(
    gt: &Path,
    class: &str,
    model_path: &Path,
    min_cluster: usize,
    bin_width: f64,
) -> Result<()> {
    if !(bin_width > 0.0) {
        return Err(usage("--bin-width must be positive"));
    }
    let class_id = class_id_for(class)?;
    let mut sizes = Vec::new();
    for (_, path) in stems_with_suffix(gt, ".gt.csv")? {
        sizes.extend(gt_boxes_of_class(&path, class_id)?.iter().map(|b| b.size));
    }
    if sizes.is_empty() {
        return Err(usage(format!("no {class} ground truth found under {}", gt.display())));
    }
    let templates = fit_templates(&sizes, min_cluster, bin_width)?;
    let mut model = load_or_new_model(model_path, class)?;
    model.templates = templates;
    save_json(model_path, &model)?;
    println!(
        "fit {} templates from {} boxes: {:?}",
        model.templates.len(),
        sizes.len(),
        model.templates
    );
    Ok(())
}

fn cmd_fit_stats(
    gt: &Path,
    class: &str,
    model_path: &Path,
    plane_override: Option<&Path>,
) -> Result<()> {
    let class_id = class_id_for(class)?;
    let mut centers = Vec::new();
    let mut bottoms = Vec::new();
    for (stem, path) in stems_with_suffix(gt, ".gt.csv")? {
        let plane = match plane_override {
            Some(p) => {
                require_file(p, "plane")?;
                load_plane(p)?
            }
            None => {
                let plane_path = path.with_file_name(format!("{stem}.plane.json"));
                if !plane_path.exists() {
                    return Err(usage(format!(
                        "{} is missing (pass --plane for a shared plane)",
                        plane_path.display()
                    )));
                }
                load_plane(&plane_path)?
            }
        };
        for b in gt_boxes_of_class(&path, class_id)? {
            centers.push(center_height(&b, &plane));
            bottoms.push(bottom_height(&b, &plane));
        }
    }
    let (mu_ht, sigma_ht) = gaussian_mle(&centers)?;
    let (_, sigma_road) = gaussian_mle(&bottoms)?;
    let mut model = load_or_new_model(model_path, class)?;
    model.mu_ht = mu_ht;
    // degenerate spreads (all boxes resting exactly on the plane) still need
    // a usable prior width
    model.sigma_ht = sigma_ht.max(0.05);
    model.sigma_road = sigma_road;
    save_json(model_path, &model)?;
    println!(
        "fitted stats over {} boxes: mu_ht {:.3}, sigma_ht {:.3}, sigma_road {:.4}",
        centers.len(),
        model.mu_ht,
        model.sigma_ht,
        model.sigma_road
    );
    Ok(())
}

fn cmd_train_ground(
    features: &Path,
    labels: &Path,
    out: &Path,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(usage("--lr must be positive"));
    }
    require_file(features, "features")?;
    require_file(labels, "labels")?;
    let xs: Vec<Vec<f64>> = serde_json::from_reader(File::open(features)?)
        .map_err(|e| usage(format!("features: {e}")))?;
    let raw: serde_json::Value =
        serde_json::from_reader(File::open(labels)?).map_err(|e| usage(format!("labels: {e}")))?;
    let ys: Vec<bool> = raw
        .as_array()
        .ok_or_else(|| usage("labels must be a JSON array"))?
        .iter()
        .map(|v| match v {
            serde_json::Value::Bool(b) => Ok(*b),
            serde_json::Value::Number(n) => Ok(n.as_f64().unwrap_or(0.0) > 0.5),
            _ => Err(usage("labels must be booleans or numbers")),
        })
        .collect::<Result<_>>()?;
    if xs.len() != ys.len() {
        return Err(usage(format!(
            "{} feature rows vs {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let (clf, history) = train_ground_classifier(&xs, &ys, epochs, lr, seed)?;
    save_json(out, &clf)?;
    println!(
        "trained on {} rows: loss {:.4} -> {:.4}",
        xs.len(),
        history.first().unwrap(),
        history.last().unwrap()
    );
    Ok(())
}

fn cmd_estimate_ground(
    input: &Path,
    calib: Option<&Path>,
    out: &Path,
    iterations: usize,
    threshold: f64,
    seed: u64,
) -> Result<()> {
    if iterations == 0 || !(threshold > 0.0) {
        return Err(usage("--iterations and --threshold must be positive"));
    }
    let cloud = load_cloud(input, calib)?;
    let plane = ransac_plane_height_band(&cloud, iterations, threshold, seed)?;
    save_json(out, &plane)?;
    println!(
        "plane normal ({:.4}, {:.4}, {:.4}), road height {:.3} m, {} inliers (rms {:.3} m)",
        plane.normal.x,
        plane.normal.y,
        plane.normal.z,
        plane.y_at(0.0, 10.0),
        plane.inlier_count,
        plane.rms_inlier_dist
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_weights(
    config: Option<&Path>,
    scenes_dir: &Path,
    class: &str,
    model_path: &Path,
    c: f64,
    tolerance: f64,
    max_rounds: usize,
    log_path: Option<&Path>,
    grid: &GridArgs,
) -> Result<()> {
    if !(c > 0.0) || !(tolerance > 0.0) {
        return Err(usage("--c and --tolerance must be positive"));
    }
    let cfg = load_config(config, grid)?;
    let spec = cfg.grid_spec().expect("validated");
    let class_id = class_id_for(class)?;
    let mut model = load_model(model_path)?;

    let build_cfg = SceneBuildConfig {
        far_threshold: cfg.far_threshold,
        contrast_margin: cfg.contrast_margin,
        stride: cfg.stride,
    };
    let mut training = Vec::new();
    let mut hash: u64 = 0xcbf29ce484222325;
    for (stem, cloud_path) in stems_with_suffix(scenes_dir, ".cloud.csv")? {
        for byte in stem.bytes() {
            hash = (hash ^ byte as u64).wrapping_mul(0x100000001b3);
        }
        let cloud = load_cloud(&cloud_path, None)?;
        let gt_path = cloud_path.with_file_name(format!("{stem}.gt.csv"));
        let gt = gt_boxes_of_class(&gt_path, class_id)?;
        if gt.is_empty() {
            log::warn!("{stem}: no {class} ground truth, skipped");
            continue;
        }
        let plane_path = cloud_path.with_file_name(format!("{stem}.plane.json"));
        let plane = if plane_path.exists() {
            load_plane(&plane_path)?
        } else {
            log::warn!("{stem}: no plane file, estimating from the cloud");
            ransac_plane_height_band(&cloud, cfg.ransac_iterations, cfg.ransac_threshold, cfg.seed)?
        };
        training.push(TrainingScene::build(
            stem, &cloud, &plane, &gt, &model, spec, None, &build_cfg,
        )?);
    }
    if training.is_empty() {
        return Err(usage("no usable training scenes"));
    }

    let result = train_ssvm(
        &training,
        &SsvmConfig {
            c,
            tolerance,
            max_rounds,
        },
    )?;
    if !result.converged {
        log::warn!("cutting-plane loop hit the round limit before converging");
    }
    model.weights = result.weights;
    model.provenance = Some(ModelProvenance {
        training_set_hash: format!("{hash:016x}"),
        trained_at: format!(
            "unix:{}",
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        ),
    });
    save_json(model_path, &model)?;
    if let Some(path) = log_path {
        let mut file = BufWriter::new(File::create(path)?);
        write_training_log(&mut file, &result)?;
    }
    println!(
        "trained on {} scenes ({} pairs): w = {:?}, {} rounds, converged: {}",
        training.len(),
        result.slacks.len(),
        result.weights,
        result.rounds.len(),
        result.converged
    );
    Ok(())
}

struct ProposeArgs {
    input: PathBuf,
    model: PathBuf,
    out: PathBuf,
    calib: Option<PathBuf>,
    image_size: String,
    plane: Option<PathBuf>,
    kitti_out: Option<PathBuf>,
    k: Option<usize>,
    delta: Option<f64>,
    nms_mode: Option<NmsModeArg>,
    far_threshold: Option<f64>,
    margin: Option<f64>,
    stride: Option<f64>,
    seed: Option<u64>,
    grid: GridArgs,
}

fn cmd_propose(config: Option<&Path>, args: ProposeArgs, timing: bool) -> Result<()> {
    let mut cfg = load_config(config, &args.grid)?;
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if let Some(f) = args.far_threshold {
        cfg.far_threshold = f;
    }
    if let Some(m) = args.margin {
        cfg.contrast_margin = m;
    }
    if let Some(s) = args.stride {
        cfg.stride = Some(s);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }

    let camera = match &args.calib {
        Some(path) => {
            let (w, h) = parse_image_size(&args.image_size)?;
            let calib = dataset::read_calib(path)?;
            Some(calib.camera(w, h)?)
        }
        None => None,
    };
    cfg.nms_mode = match args.nms_mode {
        Some(NmsModeArg::Image) => NmsMode::Image2D,
        Some(NmsModeArg::Bev) => NmsMode::Bev2D,
        None if camera.is_some() => NmsMode::Image2D,
        None => NmsMode::Bev2D,
    };
    validate_config(&cfg)?;
    if cfg.nms_mode == NmsMode::Image2D && camera.is_none() {
        return Err(usage("image-space NMS requires --calib"));
    }
    if args.kitti_out.is_some() && camera.is_none() {
        return Err(usage("--kitti-out requires --calib"));
    }

    let model = load_model(&args.model)?;
    let cloud = load_cloud(&args.input, args.calib.as_deref())?;
    let plane = args.plane.as_deref().map(load_plane).transpose()?;

    let outcome = propose(&cloud, camera.as_ref(), &model, plane, &cfg)?;

    let mut out = BufWriter::new(File::create(&args.out)?);
    write_proposals_csv(&mut out, &outcome.proposals, &model.class)?;
    if let Some(path) = &args.kitti_out {
        let mut out = BufWriter::new(File::create(path)?);
        write_proposals_kitti(
            &mut out,
            &outcome.proposals,
            camera.as_ref().expect("validated"),
            dataset::class_name_of(model.class_id.unwrap_or(u32::MAX)),
        )?;
    }
    if timing {
        let t = &outcome.timings;
        eprintln!(
            "stages (ms): ground {:.1}, voxelize {:.1}, free-space {:.1}, height {:.1}, \
             integrals {:.1}, enumerate {:.1}, score {:.1}, nms {:.1}",
            t.ground_ms,
            t.voxelize_ms,
            t.free_space_ms,
            t.height_prior_ms,
            t.integrals_ms,
            t.enumerate_ms,
            t.score_ms,
            t.nms_ms
        );
    }
    println!(
        "{} proposals from {} candidates ({} points outside the grid{})",
        outcome.proposals.proposals.len(),
        outcome.candidates_scored,
        outcome.points_outside_grid,
        if outcome.plane_fallback {
            ", fallback plane"
        } else {
            ""
        }
    );
    Ok(())
}

struct EvalArgs {
    props: PathBuf,
    gt: PathBuf,
    gt_format: GtFormatArg,
    class: String,
    iou: f64,
    space: SpaceArg,
    budget: usize,
    difficulty: Option<DifficultyArg>,
    calib_dir: Option<PathBuf>,
    image_size: String,
    out_dir: PathBuf,
}

fn cmd_eval_recall(args: EvalArgs) -> Result<()> {
    if args.budget == 0 {
        return Err(usage("--budget must be at least 1"));
    }
    if !(args.iou > 0.0 && args.iou <= 1.0) {
        return Err(usage("--iou must be in (0, 1]"));
    }
    let class_id = class_id_for(&args.class)?
        .ok_or_else(|| usage("eval-recall needs a concrete class, not 'shared'"))?;
    let space = match args.space {
        SpaceArg::TwoD => OverlapSpace::TwoD,
        SpaceArg::ThreeD => OverlapSpace::ThreeD,
    };
    let image_size = parse_image_size(&args.image_size)?;

    let mut scenes = Vec::new();
    for (stem, props_path) in stems_with_suffix(&args.props, ".props.csv")? {
        let camera: Option<CameraCalib> = match &args.calib_dir {
            Some(dir) => {
                let path = dir.join(format!("{stem}.txt"));
                require_file(&path, "calibration")?;
                let calib = dataset::read_calib(&path)?;
                Some(calib.camera(image_size.0, image_size.1)?)
            }
            None => None,
        };

        let file = File::open(&props_path)?;
        let proposals: Vec<EvalBox> =
            read_proposals_csv(BufReader::new(file), &props_path.display().to_string())?
                .into_iter()
                .map(|(b, energy)| EvalBox {
                    rect: camera.as_ref().and_then(|cam| {
                        project_box(&b, cam).ok()
                    }),
                    box3d: b,
                    score: -energy,
                })
                .collect();

        let gts = match args.gt_format {
            GtFormatArg::Csv => {
                let path = args.gt.join(format!("{stem}.gt.csv"));
                require_file(&path, "ground truth")?;
                gt_boxes_of_class(&path, Some(class_id))?
                    .into_iter()
                    .map(|b| EvalGt {
                        box3d: b,
                        rect: None,
                        class_id: b.class_id,
                        occlusion: None,
                        truncation: None,
                    })
                    .collect()
            }
            GtFormatArg::Kitti => {
                let path = args.gt.join(format!("{stem}.txt"));
                require_file(&path, "label file")?;
                let labels = dataset::read_labels(&path)?;
                dataset::labels_to_gt(&labels)
                    .into_iter()
                    .filter(|(_, b)| b.class_id == Some(class_id))
                    .map(|(label, b)| EvalGt {
                        box3d: b,
                        rect: Rect2D::new(
                            [label.bbox[0], label.bbox[1]],
                            [label.bbox[2], label.bbox[3]],
                            voxprop::geometry::Frame2D::Image,
                        )
                        .ok(),
                        class_id: b.class_id,
                        occlusion: Some(label.occlusion.clamp(0, 3) as u8),
                        truncation: Some(label.truncation),
                    })
                    .collect()
            }
        };
        scenes.push(EvalScene { proposals, gts });
    }

    let filter = args.difficulty.map(|d| {
        DifficultyFilter::kitti(match d {
            DifficultyArg::Easy => Difficulty::Easy,
            DifficultyArg::Moderate => Difficulty::Moderate,
            DifficultyArg::Hard => Difficulty::Hard,
        })
    });
    let difficulty_name = match args.difficulty {
        Some(DifficultyArg::Easy) => "easy",
        Some(DifficultyArg::Moderate) => "moderate",
        Some(DifficultyArg::Hard) => "hard",
        None => "all",
    };
    let space_name = match space {
        OverlapSpace::TwoD => "2d",
        OverlapSpace::ThreeD => "3d",
    };

    let budgets: Vec<usize> = [1usize, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000]
        .into_iter()
        .filter(|b| *b <= args.budget)
        .chain(std::iter::once(args.budget))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut curve = recall_vs_budget(
        &scenes,
        Some(class_id),
        filter.as_ref(),
        args.iou,
        &budgets,
        space,
    );
    curve.difficulty = args.difficulty.map(|d| match d {
        DifficultyArg::Easy => Difficulty::Easy,
        DifficultyArg::Moderate => Difficulty::Moderate,
        DifficultyArg::Hard => Difficulty::Hard,
    });

    fs::create_dir_all(&args.out_dir)?;
    let base = format!(
        "recall_{}_{}_{}",
        args.class.to_ascii_lowercase(),
        difficulty_name,
        space_name
    );
    let csv_path = args.out_dir.join(format!("{base}.csv"));
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    write_recall_curve_csv(&mut csv, &curve)?;

    let ar = average_recall(&scenes, Some(class_id), filter.as_ref(), args.budget, space);
    let recall_at = |budget: usize| {
        oracle_recall(
            &scenes,
            Some(class_id),
            filter.as_ref(),
            args.iou,
            budget,
            space,
        )
    };
    let summary = serde_json::json!({
        "class": args.class.to_ascii_lowercase(),
        "difficulty": difficulty_name,
        "space": space_name,
        "iou_threshold": args.iou,
        "scenes": scenes.len(),
        "average_recall": ar,
        "recall_at": {
            "100": recall_at(100),
            "500": recall_at(500),
            "1000": recall_at(1000),
            "2000": recall_at(2000),
        },
    });
    let json_path = args.out_dir.join(format!("{base}.json"));
    save_json(&json_path, &summary)?;

    let shown = recall_at(args.budget);
    match shown {
        Some(r) => println!(
            "recall@{} ({}D IoU {:.2}, {}): {:.4} over {} scenes; curve: {}",
            args.budget,
            if space == OverlapSpace::TwoD { 2 } else { 3 },
            args.iou,
            difficulty_name,
            r,
            scenes.len(),
            csv_path.display()
        ),
        None => println!("recall undefined (no ground truth after filtering)"),
    }
    if shown.is_none() {
        bail!("no ground truth objects matched the class/difficulty filters");
    }
    Ok(())
}
