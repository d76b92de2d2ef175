//! Command-line entry point: dataset generation, training, open- and
//! closed-loop evaluation, the ablation sweep, and debug image emission.
//!
//! All outputs are written atomically (temp file, then rename) and every
//! source of randomness flows from the single `--seed` flag.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::{GrayImage, ImageFormat, Rgb, RgbImage};

use crate::bevgeo::{build_partition, mask_to_angular_label, project_rois_to_mask, ObjectMask};
use crate::eval::{
    closed_loop_suite, evaluate_open_loop, format_ablation, format_closed_loop, format_curve,
    format_open_loop, run_ablation, EvalError, Policy, PrPoint,
};
use crate::geom::Vec2;
use crate::model::{rasterize_scene, DriveModel};
use crate::netcore::{load_checkpoint, NetError, Tape};
use crate::scenario::{
    generate_scene, load_dataset, save_dataset, Scene, ScenarioConfig, ScenarioError,
};
use crate::train::{build_sample, fit, TrainConfig, TrainError};

/// Desk-scale end-to-end driving: angular perception, dreaming rollout, and
/// direction-aware planning on a synthetic world.
#[derive(Parser)]
#[command(name = "sectordrive", version, about)]
pub struct CliInvocation {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Args)]
pub struct CommonArgs {
    /// Flat key=value config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's seed when given.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Config overrides, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
pub enum CliCommand {
    /// Generate a synthetic scene dataset.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a model on a dataset, writing checkpoint and log.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset file from gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Open-loop evaluation: L2, collision/intersection rates, PR/ROC.
    EvalOpen {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also emit PR/ROC curve images.
        #[arg(long)]
        plots: bool,
    },
    /// Closed-loop evaluation: route completion and driving score.
    EvalClosed {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Trained checkpoint; omit to run the scripted expert.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Loss-toggle ablation sweep over several seeds.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Training split.
        #[arg(long)]
        data: PathBuf,
        /// Held-out split.
        #[arg(long)]
        eval_data: PathBuf,
        /// Seeds to sweep, comma separated.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
    /// Render one scene's mask, angular label, and trajectory overlay.
    Inspect {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint for the predicted-trajectory overlay; optional.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Scene index within the dataset.
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Frame within the scene.
        #[arg(long, default_value_t = 1)]
        frame: usize,
    },
}

/// Exit codes: 2 config, 3 I/O, 4 model/checkpoint, 5 dataset, 6 evaluation.
fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Config(_) => 2,
        CliError::Io(_) => 3,
        CliError::Net(_) => 4,
        CliError::Scenario(_) => 5,
        CliError::Eval(_) => 6,
        CliError::Train(_) => 7,
    }
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(std::io::Error),
    Net(NetError),
    Scenario(ScenarioError),
    Eval(EvalError),
    Train(TrainError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Net(e) => write!(f, "model error: {e}"),
            CliError::Scenario(e) => write!(f, "dataset error: {e}"),
            CliError::Eval(e) => write!(f, "evaluation error: {e}"),
            CliError::Train(e) => write!(f, "training error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}
impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Net(e)
    }
}
impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e)
    }
}
impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e)
    }
}
impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::UnknownKey(_) | TrainError::BadValue { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Train(other),
        }
    }
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let invocation = match CliInvocation::try_parse_from(args) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(invocation) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sectordrive: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            TrainConfig::from_config_text(&text)?
        }
        None => TrainConfig::default(),
    };
    for raw in &common.overrides {
        let Some((key, value)) = raw.split_once('=') else {
            return Err(CliError::Config(format!("override `{raw}` is not key=value")));
        };
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn scenario_config(config: &TrainConfig) -> ScenarioConfig {
    ScenarioConfig {
        horizon: config.horizon,
        confidence_threshold: config.roi_confidence_threshold,
        rule_filter: config.rule_filter,
        obstacle_rate: config.obstacle_rate,
        ..ScenarioConfig::default()
    }
}

fn dispatch(invocation: CliInvocation) -> Result<(), CliError> {
    match invocation.command {
        CliCommand::GenData { common } => {
            let config = load_config(&common)?;
            std::fs::create_dir_all(&common.out)?;
            let scfg = scenario_config(&config);
            let scenes: Vec<Scene> = (0..config.scenes)
                .map(|i| generate_scene(&scfg, config.seed.wrapping_add(i as u64)))
                .collect::<Result<_, _>>()?;
            save_dataset(&scenes, &common.out.join("dataset.jsonl"))?;
            write_text(&common.out.join("config.txt"), &config.to_config_text())?;
            println!("wrote {} scenes to {}", scenes.len(), common.out.display());
            Ok(())
        }
        CliCommand::Train { common, data } => {
            let config = load_config(&common)?;
            let dataset = load_dataset(&data)?;
            let result = fit(&dataset, &config, &common.out, None)?;
            write_text(&common.out.join("config.txt"), &config.to_config_text())?;
            let last = result.reports.last().map(|r| r.total).unwrap_or(f64::NAN);
            println!(
                "trained {} steps, final loss {last:.6}, checkpoint {}",
                result.reports.len(),
                result.checkpoint.display()
            );
            Ok(())
        }
        CliCommand::EvalOpen { common, data, checkpoint, plots } => {
            let config = load_config(&common)?;
            let dataset = load_dataset(&data)?;
            let model = load_model(&config, &checkpoint)?;
            let (report, _) = evaluate_open_loop(&model, &dataset, &config)?;
            std::fs::create_dir_all(&common.out)?;
            write_text(&common.out.join("open_loop.txt"), &format_open_loop(&report))?;
            if let Some(points) = &report.objectness {
                write_text(&common.out.join("pr_curve.txt"), &format_curve(points, false))?;
                write_text(&common.out.join("roc_curve.txt"), &format_curve(points, true))?;
                if plots {
                    curve_png(points, false, &common.out.join("pr_curve.png"))?;
                    curve_png(points, true, &common.out.join("roc_curve.png"))?;
                }
            }
            println!(
                "open loop over {} samples: avg L2 {:.3} m, collision {:.2}%",
                report.samples, report.l2_noavg.avg, report.collision_pct.avg
            );
            Ok(())
        }
        CliCommand::EvalClosed { common, data, checkpoint } => {
            let config = load_config(&common)?;
            let routes = load_dataset(&data)?;
            let model;
            let policy = match &checkpoint {
                Some(path) => {
                    model = load_model(&config, path)?;
                    Policy::Model(&model)
                }
                None => Policy::Expert,
            };
            let (rc, ds, reports) = closed_loop_suite(&policy, &routes, &config)?;
            std::fs::create_dir_all(&common.out)?;
            write_text(&common.out.join("closed_loop.txt"), &format_closed_loop(rc, ds, &reports))?;
            println!("closed loop: route completion {rc:.1}%, driving score {ds:.1}%");
            Ok(())
        }
        CliCommand::Ablate { common, data, eval_data, seeds } => {
            let config = load_config(&common)?;
            let train_set = load_dataset(&data)?;
            let eval_set = load_dataset(&eval_data)?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|e| CliError::Config(format!("bad seed `{s}`: {e}")))
                })
                .collect::<Result<_, _>>()?;
            std::fs::create_dir_all(&common.out)?;
            let rows = run_ablation(&train_set, &eval_set, &config, &seeds, &common.out)?;
            write_text(&common.out.join("ablation.txt"), &format_ablation(&rows))?;
            println!("ablation table written for {} runs", rows.len());
            Ok(())
        }
        CliCommand::Inspect { common, data, checkpoint, scene, frame } => {
            let config = load_config(&common)?;
            let dataset = load_dataset(&data)?;
            let scene = dataset
                .get(scene)
                .ok_or_else(|| CliError::Config(format!("scene index {scene} out of range")))?;
            if frame + config.horizon >= scene.frames() {
                return Err(CliError::Config(format!(
                    "frame {frame} leaves no room for the {}-step horizon",
                    config.horizon
                )));
            }
            std::fs::create_dir_all(&common.out)?;
            inspect_scene(scene, frame, &config, checkpoint.as_deref(), &common.out)?;
            println!("inspection images written to {}", common.out.display());
            Ok(())
        }
    }
}

fn load_model(config: &TrainConfig, path: &Path) -> Result<DriveModel, CliError> {
    let vault = load_checkpoint(path)?;
    Ok(DriveModel::from_vault(config.model_config(), vault)?)
}

fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    crate::train::write_atomic(path, contents)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Image emission
// ---------------------------------------------------------------------------

fn save_png(path: &Path, img: &RgbImage) -> Result<(), CliError> {
    let tmp = path.with_extension("png.tmp");
    img.save_with_format(&tmp, ImageFormat::Png)
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn save_gray_png(path: &Path, img: &GrayImage) -> Result<(), CliError> {
    let tmp = path.with_extension("png.tmp");
    img.save_with_format(&tmp, ImageFormat::Png)
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Object mask as a portable grayscale image: occupied cells white.
pub fn mask_image(mask: &ObjectMask) -> GrayImage {
    GrayImage::from_fn(mask.grid.width as u32, mask.grid.height as u32, |x, y| {
        image::Luma([mask.at(y as usize, x as usize) * 255])
    })
}

/// Angular objectness label as a K-pixel-wide strip, scaled up 8x.
pub fn label_image(label: &[u8]) -> GrayImage {
    let k = label.len() as u32;
    GrayImage::from_fn(k * 8, 16, |x, _| image::Luma([label[(x / 8) as usize] * 255]))
}

/// Scatter a PR or ROC point list onto a 256x256 canvas with axes.
fn curve_png(points: &[PrPoint], roc: bool, path: &Path) -> Result<(), CliError> {
    let size = 256u32;
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    for i in 0..size {
        img.put_pixel(i, size - 1, Rgb([0, 0, 0]));
        img.put_pixel(0, i, Rgb([0, 0, 0]));
    }
    let to_px = |x: f64, y: f64| {
        let px = (x.clamp(0.0, 1.0) * (size - 1) as f64).round() as u32;
        let py = ((1.0 - y.clamp(0.0, 1.0)) * (size - 1) as f64).round() as u32;
        (px, py)
    };
    let coords: Vec<(u32, u32)> = points
        .iter()
        .map(|p| {
            if roc {
                to_px(p.fpr, p.tpr)
            } else {
                to_px(p.recall, p.precision)
            }
        })
        .collect();
    for pair in coords.windows(2) {
        draw_line(&mut img, pair[0], pair[1], Rgb([30, 60, 200]));
    }
    for (x, y) in coords {
        for (dx, dy) in [(0i64, 0i64), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as u32) < size && (ny as u32) < size {
                img.put_pixel(nx as u32, ny as u32, Rgb([200, 30, 30]));
            }
        }
    }
    save_png(path, &img)
}

fn draw_line(img: &mut RgbImage, a: (u32, u32), b: (u32, u32), color: Rgb<u8>) {
    let (mut x0, mut y0) = (a.0 as i64, a.1 as i64);
    let (x1, y1) = (b.0 as i64, b.1 as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Render mask, label strip, and a BEV trajectory overlay for one frame.
fn inspect_scene(
    scene: &Scene,
    frame: usize,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let grid = config.grid();
    let partition =
        build_partition(grid, config.theta_deg).map_err(|e| CliError::Config(e.to_string()))?;
    let mask = project_rois_to_mask(
        &scene.rois[frame],
        &scene.cameras,
        grid,
        &crate::bevgeo::SAMPLING_HEIGHTS,
    );
    save_gray_png(&out.join("mask.png"), &mask_image(&mask))?;
    let label =
        mask_to_angular_label(&mask, &partition).map_err(|e| CliError::Config(e.to_string()))?;
    save_gray_png(&out.join("angular_label.png"), &label_image(&label.values))?;

    // Overlay: occupancy plane as background, expert green, prediction red.
    let planes = rasterize_scene(scene, frame, grid);
    let (w, h) = (grid.width as u32, grid.height as u32);
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let v = (planes[0][(y as usize) * grid.width + x as usize] * 200.0) as u8;
        Rgb([v, v, v])
    });
    let to_px = |p: Vec2| -> Option<(u32, u32)> {
        let col = p.x / grid.resolution + grid.width as f64 / 2.0;
        let row = grid.height as f64 / 2.0 - p.y / grid.resolution;
        if col >= 0.0 && row >= 0.0 && col < grid.width as f64 && row < grid.height as f64 {
            Some((col as u32, row as u32))
        } else {
            None
        }
    };
    let expert = crate::scenario::expert_waypoints(scene, frame, config.horizon)
        .map_err(CliError::Scenario)?;
    let draw_traj = |img: &mut RgbImage, traj: &[Vec2], color: Rgb<u8>| {
        let mut prev = to_px(Vec2::ZERO);
        for p in traj {
            let cur = to_px(*p);
            if let (Some(a), Some(b)) = (prev, cur) {
                draw_line(img, a, b, color);
            }
            prev = cur;
        }
    };
    draw_traj(&mut img, &expert, Rgb([40, 200, 60]));
    if let Some(path) = checkpoint {
        let model = load_model(config, path)?;
        let sample = build_sample(scene, frame, &partition, config)?;
        let mut tape = Tape::new();
        let rasters = crate::model::planes_to_tensor(&sample.planes);
        let fwd = model
            .forward(&mut tape, &rasters, &partition, sample.command, Some(sample.ego_status))
            .map_err(CliError::Net)?;
        draw_traj(&mut img, &fwd.trajectory(&tape), Rgb([220, 50, 50]));
    }
    save_png(&out.join("trajectory_overlay.png"), &img)
}
