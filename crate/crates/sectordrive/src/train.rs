//! Training: sample construction, directional augmentation into |R|+1 views,
//! loss assembly across views, plain SGD, checkpointing, and the ablation
//! harness.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bevgeo::{
    build_partition, mask_to_angular_label, project_rois_to_mask, rotate_grid, rotate_traj,
    BevError, BevGrid, ObjectMask, SectorPartition, SAMPLING_HEIGHTS,
};
use crate::geom::Vec2;
use crate::losses::{
    direction_label, l_cons, l_dir, l_drm, l_imi, l_spat, total_loss, Direction, LossError,
    LossReport, LossTerms, LossWeights,
};
use crate::model::{planes_to_tensor, rasterize_scene, DriveModel, ModelConfig, RASTER_CHANNELS};
use crate::netcore::{save_checkpoint, NetError, Tape, VarId};
use crate::scenario::{expert_waypoints, Command, EgoStatus, Scene, ScenarioError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (component {component})")]
    Diverged { step: usize, component: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for config key `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error(transparent)]
    Bev(#[from] BevError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the training loop is configured by. Serializes to a flat
/// `key = value` file; unknown keys are rejected on parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub theta_deg: f64,
    pub delta: f64,
    pub horizon: usize,
    pub channels: usize,
    pub grid_size: usize,
    pub grid_resolution: f64,
    /// Augmentation rotation set R (degrees). Empty disables augmentation
    /// and the consistency loss.
    pub rotations: Vec<u32>,
    pub w_spat: f64,
    pub w_drm: f64,
    pub w_imi: f64,
    pub w_dir: f64,
    pub w_cons: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub enable_l_spat: bool,
    pub enable_l_drm: bool,
    pub enable_l_dir: bool,
    pub enable_l_cons: bool,
    pub use_ego_status: bool,
    pub roi_confidence_threshold: f64,
    pub rule_filter: bool,
    /// Gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Evaluated frames per scene: frame 1, 1+stride, ... while the horizon
    /// fits.
    pub frame_stride: usize,
    /// Scene count for dataset generation.
    pub scenes: usize,
    /// Probability of a parked blocking vehicle on the route during dataset
    /// generation.
    pub obstacle_rate: f64,
    /// Decay the learning rate along a half cosine over the whole run.
    pub cosine_lr: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            theta_deg: 4.0,
            delta: 1.2,
            horizon: 6,
            channels: 8,
            grid_size: 64,
            grid_resolution: 0.5,
            rotations: vec![90, 180, 270],
            w_spat: 2.0,
            w_drm: 0.1,
            w_imi: 1.0,
            w_dir: 2.0,
            w_cons: 1.0,
            learning_rate: 1e-2,
            epochs: 2,
            seed: 0,
            enable_l_spat: true,
            enable_l_drm: true,
            enable_l_dir: true,
            enable_l_cons: true,
            use_ego_status: false,
            roi_confidence_threshold: 0.35,
            rule_filter: true,
            grad_clip: 0.0,
            frame_stride: 4,
            scenes: 32,
            obstacle_rate: 0.5,
            cosine_lr: true,
        }
    }
}

impl TrainConfig {
    pub fn grid(&self) -> BevGrid {
        BevGrid::new(self.grid_size, self.grid_size, self.grid_resolution)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            grid: self.grid(),
            theta_deg: self.theta_deg,
            channels: self.channels,
            horizon: self.horizon,
            use_ego_status: self.use_ego_status,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            spat: if self.enable_l_spat { self.w_spat } else { 0.0 },
            drm: if self.enable_l_drm { self.w_drm } else { 0.0 },
            imi: self.w_imi,
            dir: if self.enable_l_dir { self.w_dir } else { 0.0 },
            cons: if self.enable_l_cons { self.w_cons } else { 0.0 },
        }
    }

    /// Render as the flat `key = value` config-file format.
    pub fn to_config_text(&self) -> String {
        let rot = self
            .rotations
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "theta_deg = {}\ndelta = {}\nhorizon = {}\nchannels = {}\ngrid_size = {}\n\
             grid_resolution = {}\nrotations = {}\nw_spat = {}\nw_drm = {}\nw_imi = {}\n\
             w_dir = {}\nw_cons = {}\nlearning_rate = {}\nepochs = {}\nseed = {}\n\
             enable_l_spat = {}\nenable_l_drm = {}\nenable_l_dir = {}\nenable_l_cons = {}\n\
             use_ego_status = {}\nroi_confidence_threshold = {}\nrule_filter = {}\n\
             grad_clip = {}\nframe_stride = {}\nscenes = {}\nobstacle_rate = {}\ncosine_lr = {}\n",
            self.theta_deg,
            self.delta,
            self.horizon,
            self.channels,
            self.grid_size,
            self.grid_resolution,
            rot,
            self.w_spat,
            self.w_drm,
            self.w_imi,
            self.w_dir,
            self.w_cons,
            self.learning_rate,
            self.epochs,
            self.seed,
            self.enable_l_spat,
            self.enable_l_drm,
            self.enable_l_dir,
            self.enable_l_cons,
            self.use_ego_status,
            self.roi_confidence_threshold,
            self.rule_filter,
            self.grad_clip,
            self.frame_stride,
            self.scenes,
            self.obstacle_rate,
            self.cosine_lr,
        )
    }

    /// Parse the flat config format; unknown keys are an error.
    pub fn from_config_text(text: &str) -> Result<Self, TrainError> {
        let mut config = TrainConfig::default();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TrainError::BadValue {
                    key: line.to_string(),
                    msg: "expected key = value".into(),
                });
            };
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad = |msg: &str| TrainError::BadValue { key: key.to_string(), msg: msg.into() };
        macro_rules! parse {
            ($field:expr, $ty:ty) => {
                $field = value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
            };
        }
        match key {
            "theta_deg" => parse!(self.theta_deg, f64),
            "delta" => parse!(self.delta, f64),
            "horizon" => parse!(self.horizon, usize),
            "channels" => parse!(self.channels, usize),
            "grid_size" => parse!(self.grid_size, usize),
            "grid_resolution" => parse!(self.grid_resolution, f64),
            "rotations" => {
                self.rotations = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|s| s.trim().parse::<u32>().map_err(|e| bad(&e.to_string())))
                        .collect::<Result<_, _>>()?
                };
            }
            "w_spat" => parse!(self.w_spat, f64),
            "w_drm" => parse!(self.w_drm, f64),
            "w_imi" => parse!(self.w_imi, f64),
            "w_dir" => parse!(self.w_dir, f64),
            "w_cons" => parse!(self.w_cons, f64),
            "learning_rate" => parse!(self.learning_rate, f64),
            "epochs" => parse!(self.epochs, usize),
            "seed" => parse!(self.seed, u64),
            "enable_l_spat" => parse!(self.enable_l_spat, bool),
            "enable_l_drm" => parse!(self.enable_l_drm, bool),
            "enable_l_dir" => parse!(self.enable_l_dir, bool),
            "enable_l_cons" => parse!(self.enable_l_cons, bool),
            "use_ego_status" => parse!(self.use_ego_status, bool),
            "roi_confidence_threshold" => parse!(self.roi_confidence_threshold, f64),
            "rule_filter" => parse!(self.rule_filter, bool),
            "grad_clip" => parse!(self.grad_clip, f64),
            "frame_stride" => parse!(self.frame_stride, usize),
            "scenes" => parse!(self.scenes, usize),
            "obstacle_rate" => parse!(self.obstacle_rate, f64),
            "cosine_lr" => parse!(self.cosine_lr, bool),
            other => return Err(TrainError::UnknownKey(other.to_string())),
        }
        if self.delta <= 0.0 {
            return Err(bad("delta must be positive"));
        }
        if self.horizon == 0 {
            return Err(bad("horizon must be at least 1"));
        }
        Ok(())
    }
}

/// One (scene, frame) training unit with all labels attached.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// Channel planes, each grid_size^2 long.
    pub planes: [Vec<f64>; RASTER_CHANNELS],
    pub mask: ObjectMask,
    pub y_obj: Vec<u8>,
    /// Ego-frame future waypoints.
    pub g_traj: Vec<Vec2>,
    pub y_dir: Vec<Direction>,
    pub command: Command,
    pub ego_status: EgoStatus,
}

/// Build the sample for one frame of a scene.
pub fn build_sample(
    scene: &Scene,
    frame: usize,
    partition: &SectorPartition,
    config: &TrainConfig,
) -> Result<TrainSample, TrainError> {
    let grid = partition.grid;
    let planes = rasterize_scene(scene, frame, grid);
    let mut rois = scene.rois[frame].clone();
    rois.retain(|r| r.confidence >= config.roi_confidence_threshold);
    if config.rule_filter {
        let dims: std::collections::HashMap<&str, (f64, f64)> = scene
            .cameras
            .iter()
            .map(|c| (c.id.as_str(), (c.width_px as f64, c.height_px as f64)))
            .collect();
        rois.retain(|r| {
            let (w, h) = dims[r.camera_id.as_str()];
            (r.x_max - r.x_min) <= w / 2.0 && (r.y_max - r.y_min) <= h / 2.0
        });
    }
    let mask = project_rois_to_mask(&rois, &scene.cameras, grid, &SAMPLING_HEIGHTS);
    let y_obj = mask_to_angular_label(&mask, partition)?.values;
    let g_traj = expert_waypoints(scene, frame, config.horizon)?;
    let y_dir = direction_label(&g_traj, config.delta);
    Ok(TrainSample {
        planes,
        mask,
        y_obj,
        g_traj,
        y_dir,
        command: scene.commands[frame],
        ego_status: scene.ego_status[frame],
    })
}

/// One rotated view of a sample.
#[derive(Debug, Clone)]
pub struct View {
    pub rotation: u32,
    pub sample: TrainSample,
}

/// Expand a sample into the identity view plus one view per rotation.
/// Rasters and the mask rotate spatially (velocity channels also rotate as
/// vectors), the trajectory rotates exactly, and the angular and direction
/// labels are regenerated from the rotated mask / trajectory.
pub fn augment_views(
    sample: &TrainSample,
    rotations: &[u32],
    partition: &SectorPartition,
    delta: f64,
) -> Result<Vec<View>, TrainError> {
    let grid = partition.grid;
    let mut views = vec![View { rotation: 0, sample: sample.clone() }];
    for &r in rotations {
        let occ = rotate_grid(&sample.planes[0], grid.height, grid.width, r)?;
        let vx = rotate_grid(&sample.planes[1], grid.height, grid.width, r)?;
        let vy = rotate_grid(&sample.planes[2], grid.height, grid.width, r)?;
        let bnd = rotate_grid(&sample.planes[3], grid.height, grid.width, r)?;
        // Velocity is a vector field: rotate components too.
        let (vx, vy): (Vec<f64>, Vec<f64>) = match r {
            90 => (vy.iter().map(|v| -v).collect(), vx),
            180 => (vx.iter().map(|v| -v).collect(), vy.iter().map(|v| -v).collect()),
            270 => (vy, vx.iter().map(|v| -v).collect()),
            _ => (vx, vy),
        };
        let mask_values = rotate_grid(&sample.mask.values, grid.height, grid.width, r)?;
        let mask = ObjectMask { grid, values: mask_values };
        let y_obj = mask_to_angular_label(&mask, partition)?.values;
        let g_traj = rotate_traj(&sample.g_traj, r)?;
        let y_dir = direction_label(&g_traj, delta);
        views.push(View {
            rotation: r,
            sample: TrainSample {
                planes: [occ, vx, vy, bnd],
                mask,
                y_obj,
                g_traj,
                y_dir,
                command: sample.command,
                ego_status: sample.ego_status,
            },
        });
    }
    Ok(views)
}

/// One SGD step over all views of one sample. Deterministic.
pub fn train_step(
    model: &mut DriveModel,
    views: &[View],
    partition: &SectorPartition,
    config: &TrainConfig,
    step: usize,
) -> Result<LossReport, TrainError> {
    let mut tape = Tape::new();
    let weights = config.weights();
    let mut spat_terms = Vec::new();
    let mut drm_terms = Vec::new();
    let mut imi_terms = Vec::new();
    let mut dir_terms = Vec::new();
    let mut base_traj: Option<VarId> = None;
    let mut augmented: Vec<(u32, VarId)> = Vec::new();

    for view in views {
        let rasters = planes_to_tensor(&view.sample.planes);
        let out = model.forward(
            &mut tape,
            &rasters,
            partition,
            view.sample.command,
            Some(view.sample.ego_status),
        )?;
        if weights.spat != 0.0 {
            spat_terms.push(l_spat(&mut tape, out.p_a, &view.sample.y_obj)?);
        }
        if weights.drm != 0.0 {
            drm_terms.push(l_drm(&mut tape, &out.dists)?);
        }
        imi_terms.push(l_imi(&mut tape, out.p_traj, &view.sample.g_traj)?);
        if weights.dir != 0.0 {
            dir_terms.push(l_dir(&mut tape, out.p_dir, &view.sample.y_dir)?);
        }
        if view.rotation == 0 {
            base_traj = Some(out.p_traj);
        } else {
            augmented.push((view.rotation, out.p_traj));
        }
    }

    let mean_of = |tape: &mut Tape, terms: &[VarId]| -> Option<VarId> {
        if terms.is_empty() {
            return None;
        }
        let mut acc = terms[0];
        for t in &terms[1..] {
            acc = tape.add(acc, *t);
        }
        Some(tape.scale(acc, 1.0 / terms.len() as f64))
    };

    let imi = mean_of(&mut tape, &imi_terms).expect("at least one view");
    let cons = if weights.cons != 0.0 && !augmented.is_empty() {
        Some(l_cons(&mut tape, base_traj.expect("identity view present"), &augmented)?)
    } else {
        None
    };
    let terms = LossTerms {
        spat: mean_of(&mut tape, &spat_terms),
        drm: mean_of(&mut tape, &drm_terms),
        imi,
        dir: mean_of(&mut tape, &dir_terms),
        cons,
    };
    let (total, report) = total_loss(&mut tape, &terms, &weights).map_err(|e| match e {
        LossError::NonFinite(component) => {
            TrainError::Diverged { step, component: component.to_string() }
        }
        other => TrainError::Loss(other),
    })?;

    let grads = tape.backward(total)?;
    model.vault.zero_grads();
    model.vault.accumulate(&grads);
    let clip = if config.grad_clip > 0.0 { Some(config.grad_clip) } else { None };
    model.vault.sgd_step(config.learning_rate, clip);
    model.vault.zero_grads();
    if !model.vault.all_finite() {
        return Err(TrainError::Diverged { step, component: "parameters".into() });
    }
    Ok(report)
}

/// Result of a training run.
pub struct FitResult {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub reports: Vec<LossReport>,
    pub model: DriveModel,
}

/// Train over the dataset for the configured epochs, writing the training
/// log and a checkpoint. `init` resumes from existing parameters.
pub fn fit(
    dataset: &[Scene],
    config: &TrainConfig,
    out_dir: &Path,
    init: Option<DriveModel>,
) -> Result<FitResult, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir)?;
    let partition = build_partition(config.grid(), config.theta_deg)?;
    let mut model = match init {
        Some(m) => m,
        None => DriveModel::new(config.model_config(), config.seed),
    };

    // Frame schedule per scene: fixed, horizon-safe.
    let schedule: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(i, scene)| {
            frame_schedule(scene.frames(), config.horizon, config.frame_stride)
                .into_iter()
                .map(move |f| (i, f))
        })
        .collect();

    let mut reports = Vec::new();
    let mut log_lines = Vec::new();
    let mut step = 0usize;
    let total_steps = (config.epochs * schedule.len()).max(1);
    let mut step_config = config.clone();
    for _epoch in 0..config.epochs {
        for &(scene_idx, frame) in &schedule {
            if config.cosine_lr {
                // Half-cosine decay to zero over the run; the late small
                // steps let the parameters settle instead of oscillating.
                let progress = step as f64 / total_steps as f64;
                step_config.learning_rate = config.learning_rate
                    * 0.5
                    * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            let sample = build_sample(&dataset[scene_idx], frame, &partition, config)?;
            let views = augment_views(&sample, &config.rotations, &partition, config.delta)?;
            let report = train_step(&mut model, &views, &partition, &step_config, step)?;
            log_lines.push(report.log_line(step));
            reports.push(report);
            step += 1;
        }
    }

    let checkpoint = out_dir.join("checkpoint.bin");
    save_checkpoint(&model.vault, &checkpoint)?;
    let log = out_dir.join("train_log.txt");
    write_atomic(&log, &(log_lines.join("\n") + "\n"))?;
    Ok(FitResult { checkpoint, log, reports, model })
}

/// Frames evaluated per scene: 1, 1+stride, ... while `frame + horizon` is
/// in range.
pub fn frame_schedule(frames: usize, horizon: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut f = 1usize;
    while f + horizon < frames {
        out.push(f);
        f += stride;
    }
    if out.is_empty() && frames > horizon {
        out.push(0);
    }
    out
}

pub(crate) fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
