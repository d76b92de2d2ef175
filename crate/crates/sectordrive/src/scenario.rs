//! Procedural driving scenes: expert routes, agents, commands, camera rigs,
//! and noisy 2D ROI detections standing in for an open-set detector.
//!
//! Scene generation is a pure function of (config, seed); a fixed seed yields
//! a bitwise-identical scene on every call.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{frame_to_world, world_to_frame, OrientedRect, Vec2};

/// Annotation cadence in seconds between consecutive frames.
pub const FRAME_DT: f64 = 0.5;

/// Ego vehicle footprint used for expert-safety checks and collision metrics.
pub const EGO_LENGTH: f64 = 4.0;
pub const EGO_WIDTH: f64 = 1.85;

/// Heading-change threshold (degrees over the future horizon) that turns a
/// frame's command from go-straight into a turn command.
pub const COMMAND_TURN_DEG: f64 = 25.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("no collision-free world found after {0} attempts; config infeasible")]
    Infeasible(usize),
    #[error("frame {frame} with horizon {horizon} exceeds trajectory length {len}")]
    FrameRange { frame: usize, horizon: usize, len: usize },
    #[error("dataset parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Object classes the detector is prompted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentCategory {
    Vehicle,
    Pedestrian,
    Barrier,
}

impl AgentCategory {
    /// Height used to place 3D corner points for image projection.
    pub fn height(self) -> f64 {
        match self {
            AgentCategory::Vehicle => 1.5,
            AgentCategory::Pedestrian => 1.7,
            AgentCategory::Barrier => 1.0,
        }
    }
}

/// One traffic participant at one frame, in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    /// Heading of the length axis, radians from world +x, counterclockwise.
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub velocity: Vec2,
    pub category: AgentCategory,
}

impl AgentState {
    pub fn rect(&self) -> OrientedRect {
        OrientedRect {
            center: self.position,
            heading: self.heading,
            length: self.length,
            width: self.width,
        }
    }
}

/// Pinhole camera mounted on the ego vehicle.
///
/// `yaw` is measured clockwise from the ego forward axis, so a right-facing
/// camera has yaw 90 degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: String,
    /// Mount position in the ego frame (x lateral right, y forward), meters.
    pub position: Vec2,
    /// Clockwise from ego forward, radians.
    pub yaw: f64,
    /// Mount height above ground, meters.
    pub height: f64,
    pub hfov_deg: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub focal_px: f64,
}

impl Camera {
    pub fn new(id: &str, position: Vec2, yaw: f64, hfov_deg: f64, w: u32, h: u32) -> Self {
        assert!(hfov_deg > 0.0 && hfov_deg < 180.0, "hfov must be in (0, 180)");
        let focal = (w as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Camera {
            id: id.to_string(),
            position,
            yaw,
            height: 1.5,
            hfov_deg,
            width_px: w,
            height_px: h,
            focal_px: focal,
        }
    }

    /// Project an ego-frame point at height `z` onto the image plane.
    /// Returns (u, v, depth); `None` when the depth is non-positive.
    pub fn project(&self, p: Vec2, z: f64) -> Option<(f64, f64, f64)> {
        let d = p.sub(self.position);
        let (s, c) = self.yaw.sin_cos();
        // Ego frame: x lateral right, y forward. Camera forward at clockwise
        // yaw from ego forward.
        let forward = Vec2::new(s, c);
        let right = Vec2::new(c, -s);
        let depth = d.dot(forward);
        if depth <= 1e-9 {
            return None;
        }
        let u = self.width_px as f64 / 2.0 + self.focal_px * d.dot(right) / depth;
        let v = self.height_px as f64 / 2.0 + self.focal_px * (self.height - z) / depth;
        Some((u, v, depth))
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width_px as f64 && v >= 0.0 && v < self.height_px as f64
    }
}

/// The default 360-degree rig: front, left, right, back.
pub fn default_rig(hfov_deg: f64, w: u32, h: u32) -> Vec<Camera> {
    let rad = |d: f64| d.to_radians();
    vec![
        Camera::new("front", Vec2::new(0.0, 1.5), rad(0.0), hfov_deg, w, h),
        Camera::new("left", Vec2::new(-0.8, 0.0), rad(-90.0), hfov_deg, w, h),
        Camera::new("right", Vec2::new(0.8, 0.0), rad(90.0), hfov_deg, w, h),
        Camera::new("back", Vec2::new(0.0, -1.5), rad(180.0), hfov_deg, w, h),
    ]
}

/// Axis-aligned detection box in image pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub camera_id: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub confidence: f64,
    /// Ground-truth linkage for tests; injected clutter has none.
    pub source_agent: Option<usize>,
}

/// High-level driving command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    TurnLeft,
    TurnRight,
    GoStraight,
}

impl Command {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Command::TurnLeft => [1.0, 0.0, 0.0],
            Command::GoStraight => [0.0, 1.0, 0.0],
            Command::TurnRight => [0.0, 0.0, 1.0],
        }
    }
}

/// Ego speed and yaw rate at a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoStatus {
    pub speed: f64,
    pub yaw_rate: f64,
}

/// One generated scene: the dataset unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    /// Expert waypoints in the world frame, one per frame.
    pub trajectory: Vec<Vec2>,
    /// World heading of the ego at each frame (radians from +x, ccw).
    pub headings: Vec<f64>,
    pub commands: Vec<Command>,
    /// Agent states per frame; inner order is stable across frames.
    pub agents: Vec<Vec<AgentState>>,
    /// Closed drivable-corridor polygon, world frame.
    pub boundary: Vec<Vec2>,
    pub cameras: Vec<Camera>,
    /// Detections per frame (each ROI names its camera).
    pub rois: Vec<Vec<Roi>>,
    pub ego_status: Vec<EgoStatus>,
}

impl Scene {
    pub fn frames(&self) -> usize {
        self.trajectory.len()
    }

    pub fn ego_rect(&self, frame: usize) -> OrientedRect {
        OrientedRect {
            center: self.trajectory[frame],
            heading: self.headings[frame],
            length: EGO_LENGTH,
            width: EGO_WIDTH,
        }
    }
}

/// Shape of the expert route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    Straight,
    LeftTurn,
    RightTurn,
}

/// Noise knobs for the synthetic detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiNoise {
    /// Probability of dropping a visible agent's detection.
    pub miss_rate: f64,
    /// Mean of the sampled confidence.
    pub confidence_mean: f64,
    /// Half-width of the uniform confidence jitter.
    pub confidence_jitter: f64,
    /// Probability of injecting a spurious oversized box per camera.
    pub oversized_rate: f64,
    /// Pixel jitter applied to box corners (uniform half-width).
    pub pixel_jitter: f64,
}

impl RoiNoise {
    pub fn clean() -> Self {
        RoiNoise {
            miss_rate: 0.0,
            confidence_mean: 1.0,
            confidence_jitter: 0.0,
            oversized_rate: 0.0,
            pixel_jitter: 0.0,
        }
    }
}

/// Everything `generate_scene` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Half-extent of the square world around the route, meters.
    pub world_half_extent: f64,
    pub min_agents: usize,
    pub max_agents: usize,
    /// Sampling weights for straight / left / right routes.
    pub route_weights: [f64; 3],
    /// Ego cruise speed, m/s.
    pub speed: f64,
    /// Total frames stored per scene.
    pub frames: usize,
    /// Future horizon the planner is evaluated on.
    pub horizon: usize,
    /// Corridor half-width, meters.
    pub corridor_half_width: f64,
    pub noise: RoiNoise,
    /// Detector confidence threshold; boxes below it are dropped.
    pub confidence_threshold: f64,
    /// Drop boxes exceeding half the image width or height.
    pub rule_filter: bool,
    pub camera_hfov_deg: f64,
    pub camera_width_px: u32,
    pub camera_height_px: u32,
    /// Probability that a parked vehicle blocks the route ahead, forcing the
    /// expert to brake to a stop behind it.
    #[serde(default = "default_obstacle_rate")]
    pub obstacle_rate: f64,
}

fn default_obstacle_rate() -> f64 {
    0.5
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            world_half_extent: 40.0,
            min_agents: 0,
            max_agents: 8,
            route_weights: [1.0, 1.0, 1.0],
            speed: 4.0,
            frames: 14,
            horizon: 6,
            corridor_half_width: 4.0,
            noise: RoiNoise::clean(),
            confidence_threshold: 0.35,
            rule_filter: true,
            camera_hfov_deg: 100.0,
            camera_width_px: 256,
            camera_height_px: 160,
            obstacle_rate: 0.5,
        }
    }
}

/// Deceleration used by the expert when braking for a blocking vehicle, m/s^2.
const BRAKE_DECEL: f64 = 2.0;
/// Center-to-center distance the expert leaves to a blocking vehicle.
const BLOCKER_GAP_M: f64 = 6.0;

/// Deterministically generate a scene from (config, seed).
///
/// The expert trajectory follows the route centerline at cruise speed and is
/// guaranteed collision-free against every agent at every frame; agent
/// placement is rejection-sampled against that guarantee. With probability
/// `obstacle_rate` a parked vehicle is dropped on the centerline ahead and
/// the expert brakes to a stop behind it, so the correct trajectory depends
/// on what the cameras see, not on the route geometry alone.
pub fn generate_scene(config: &ScenarioConfig, seed: u64) -> Result<Scene, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = sample_route_kind(&config.route_weights, &mut rng);

    // Arc length reachable at cruise speed; blockers land in its middle band.
    let cruise_len = (config.frames.saturating_sub(1)) as f64 * config.speed * FRAME_DT;
    let blocker_s = if config.obstacle_rate > 0.0
        && rng.gen::<f64>() < config.obstacle_rate
        && cruise_len > BLOCKER_GAP_M + 4.0
    {
        Some(rng.gen_range(0.4 * cruise_len..0.85 * cruise_len))
    } else {
        None
    };

    let (trajectory, headings) = expert_route(config, kind, blocker_s.map(|s| s - BLOCKER_GAP_M));

    // The drivable corridor follows the route geometry at cruise pacing, so a
    // braking expert does not shrink the boundary and leak the obstacle.
    let step = config.speed * FRAME_DT;
    let (center_pts, center_headings): (Vec<Vec2>, Vec<f64>) =
        (0..config.frames).map(|f| path_pose(kind, f as f64 * step)).unzip();
    let boundary = corridor_polygon(&center_pts, &center_headings, config.corridor_half_width);
    let commands = derive_commands(&headings, config.horizon);
    let ego_status = derive_ego_status(&trajectory, &headings);

    let blocker = blocker_s.map(|s| {
        let (position, heading) = path_pose(kind, s);
        AgentState {
            position,
            heading,
            length: 4.2,
            width: 1.9,
            velocity: Vec2::ZERO,
            category: AgentCategory::Vehicle,
        }
    });

    let n_agents = if config.max_agents == 0 {
        0
    } else {
        rng.gen_range(config.min_agents..=config.max_agents)
    };
    let base_agents =
        place_agents(config, &trajectory, &headings, n_agents, blocker, &mut rng)?;

    // Roll agent states forward under constant velocity.
    let agents: Vec<Vec<AgentState>> = (0..config.frames)
        .map(|f| {
            base_agents
                .iter()
                .map(|a| {
                    let mut s = a.clone();
                    s.position = a.position.add(a.velocity.scale(f as f64 * FRAME_DT));
                    s
                })
                .collect()
        })
        .collect();

    let cameras =
        default_rig(config.camera_hfov_deg, config.camera_width_px, config.camera_height_px);
    let mut scene = Scene {
        id: seed,
        trajectory,
        headings,
        commands,
        agents,
        boundary,
        cameras,
        rois: Vec::new(),
        ego_status,
    };
    for frame in 0..scene.frames() {
        let rois = render_rois(
            &scene,
            frame,
            &config.noise,
            config.confidence_threshold,
            config.rule_filter,
            &mut rng,
        );
        scene.rois.push(rois);
    }
    Ok(scene)
}

fn sample_route_kind(weights: &[f64; 3], rng: &mut ChaCha8Rng) -> RouteKind {
    let total: f64 = weights.iter().sum();
    let mut pick = rng.gen_range(0.0..total.max(1e-12));
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            return [RouteKind::Straight, RouteKind::LeftTurn, RouteKind::RightTurn][i];
        }
        pick -= w;
    }
    RouteKind::Straight
}

/// Straight lead-in length before a turn's arc begins, meters.
const TURN_LEAD_IN_M: f64 = 6.0;
/// Turn arc radius, meters.
const TURN_RADIUS_M: f64 = 14.0;

/// Pose on the route centerline at arc length `s`. The ego starts at the
/// origin heading world +y; turns follow a straight lead-in and a
/// constant-radius arc.
fn path_pose(kind: RouteKind, s: f64) -> (Vec2, f64) {
    let start_heading = std::f64::consts::FRAC_PI_2;
    match kind {
        RouteKind::Straight => (Vec2::new(0.0, s), start_heading),
        RouteKind::LeftTurn | RouteKind::RightTurn {} => {
            let sign = if kind == RouteKind::LeftTurn { 1.0 } else { -1.0 };
            if s <= TURN_LEAD_IN_M {
                (Vec2::new(0.0, s), start_heading)
            } else {
                let phi = (s - TURN_LEAD_IN_M) / TURN_RADIUS_M;
                // Arc center sits TURN_RADIUS_M to the side of the lead-in end.
                let pos = Vec2::new(
                    -sign * TURN_RADIUS_M * (1.0 - phi.cos()),
                    TURN_LEAD_IN_M + TURN_RADIUS_M * phi.sin(),
                );
                (pos, start_heading + sign * phi)
            }
        }
    }
}

/// Expert waypoints and headings sampled at the frame rate. Without a stop
/// target the ego cruises at `config.speed`; with one it follows
/// v(s) = min(v_cruise, sqrt(2 a (s_stop - s))), which brakes at `BRAKE_DECEL`
/// and converges to a halt just short of `stop_s` without overshooting.
fn expert_route(
    config: &ScenarioConfig,
    kind: RouteKind,
    stop_s: Option<f64>,
) -> (Vec<Vec2>, Vec<f64>) {
    let mut pts = Vec::with_capacity(config.frames);
    let mut headings = Vec::with_capacity(config.frames);
    let mut s = 0.0;
    for _ in 0..config.frames {
        let (p, h) = path_pose(kind, s);
        pts.push(p);
        headings.push(h);
        let v = match stop_s {
            Some(ss) => (2.0 * BRAKE_DECEL * (ss - s).max(0.0)).sqrt().min(config.speed),
            None => config.speed,
        };
        s += v * FRAME_DT;
    }
    (pts, headings)
}

/// Closed polygon around the centerline at the given half-width.
fn corridor_polygon(center: &[Vec2], headings: &[f64], half_width: f64) -> Vec<Vec2> {
    let mut left = Vec::with_capacity(center.len());
    let mut right = Vec::with_capacity(center.len());
    for (p, h) in center.iter().zip(headings) {
        // Normal pointing left of travel.
        let n = Vec2::new(-h.sin(), h.cos());
        left.push(p.add(n.scale(half_width)));
        right.push(p.sub(n.scale(half_width)));
    }
    // Extend the corridor past both ends so the ego box fits at frame 0 and
    // at the last waypoint.
    let first_dir = center[0].sub(center[1]).scale(1.5);
    let last = center.len() - 1;
    let last_dir = center[last].sub(center[last - 1]).scale(1.5);
    let mut poly = Vec::new();
    poly.push(left[0].add(first_dir));
    poly.extend(left.iter().copied());
    poly.push(left[last].add(last_dir));
    poly.push(right[last].add(last_dir));
    poly.extend(right.iter().rev().copied());
    poly.push(right[0].add(first_dir));
    poly
}

/// Geometric command rule: heading change over the next `horizon` steps
/// beyond +-25 degrees marks a turn; counterclockwise is a left turn.
fn derive_commands(headings: &[f64], horizon: usize) -> Vec<Command> {
    let n = headings.len();
    (0..n)
        .map(|f| {
            let end = (f + horizon).min(n - 1);
            let delta = wrap_angle(headings[end] - headings[f]).to_degrees();
            if delta > COMMAND_TURN_DEG {
                Command::TurnLeft
            } else if delta < -COMMAND_TURN_DEG {
                Command::TurnRight
            } else {
                Command::GoStraight
            }
        })
        .collect()
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

fn derive_ego_status(trajectory: &[Vec2], headings: &[f64]) -> Vec<EgoStatus> {
    let n = trajectory.len();
    (0..n)
        .map(|f| {
            let next = (f + 1).min(n - 1);
            let speed = trajectory[next].sub(trajectory[f]).norm() / FRAME_DT;
            let yaw_rate = wrap_angle(headings[next] - headings[f]) / FRAME_DT;
            EgoStatus { speed, yaw_rate }
        })
        .collect()
}

const PLACEMENT_ATTEMPTS: usize = 400;

fn place_agents(
    config: &ScenarioConfig,
    trajectory: &[Vec2],
    headings: &[f64],
    count: usize,
    blocker: Option<AgentState>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AgentState>, ScenarioError> {
    // The blocker goes in first so ambient agents are sampled around it.
    let mut agents: Vec<AgentState> = blocker.into_iter().collect();
    let ext = config.world_half_extent;
    let route_center = trajectory[trajectory.len() / 2];
    for _ in 0..count {
        let mut placed = false;
        for _attempt in 0..PLACEMENT_ATTEMPTS {
            let category = match rng.gen_range(0..3) {
                0 => AgentCategory::Vehicle,
                1 => AgentCategory::Pedestrian,
                _ => AgentCategory::Barrier,
            };
            let (length, width) = match category {
                AgentCategory::Vehicle => (4.2, 1.9),
                AgentCategory::Pedestrian => (0.6, 0.6),
                AgentCategory::Barrier => (1.5, 0.4),
            };
            let position = Vec2::new(
                route_center.x + rng.gen_range(-ext..ext),
                route_center.y + rng.gen_range(-ext..ext),
            );
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let speed = match category {
                AgentCategory::Vehicle => rng.gen_range(0.0..3.0),
                AgentCategory::Pedestrian => rng.gen_range(0.0..1.2),
                AgentCategory::Barrier => 0.0,
            };
            let velocity = Vec2::new(heading.cos(), heading.sin()).scale(speed);
            let candidate = AgentState { position, heading, length, width, velocity, category };
            if agent_is_safe(&candidate, trajectory, headings)
                && agents.iter().all(|a| !a.rect().overlaps(&candidate.rect()))
            {
                agents.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::Infeasible(PLACEMENT_ATTEMPTS));
        }
    }
    Ok(agents)
}

/// Margin-enlarged SAT check of the agent against the ego box at every frame.
fn agent_is_safe(agent: &AgentState, trajectory: &[Vec2], headings: &[f64]) -> bool {
    for (f, (pos, heading)) in trajectory.iter().zip(headings).enumerate() {
        let ego = OrientedRect {
            center: *pos,
            heading: *heading,
            // Safety margin so the planner has slack around the expert.
            length: EGO_LENGTH + 1.0,
            width: EGO_WIDTH + 1.0,
        };
        let state = AgentState {
            position: agent.position.add(agent.velocity.scale(f as f64 * FRAME_DT)),
            ..agent.clone()
        };
        if ego.overlaps(&state.rect()) {
            return false;
        }
    }
    true
}

/// Synthetic detector: project each agent's 3D box corners into each camera,
/// apply the noise model, the confidence threshold, and the size rule filter.
pub fn render_rois(
    scene: &Scene,
    frame: usize,
    noise: &RoiNoise,
    confidence_threshold: f64,
    rule_filter: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Roi> {
    let mut out = Vec::new();
    let ego_pos = scene.trajectory[frame];
    let ego_heading = scene.headings[frame];
    for camera in &scene.cameras {
        for (agent_idx, agent) in scene.agents[frame].iter().enumerate() {
            if rng.gen_range(0.0..1.0) < noise.miss_rate {
                continue;
            }
            let Some((mut x_min, mut y_min, mut x_max, mut y_max)) =
                project_agent_box(agent, camera, ego_pos, ego_heading)
            else {
                continue;
            };
            if noise.pixel_jitter > 0.0 {
                let j = noise.pixel_jitter;
                x_min += rng.gen_range(-j..j);
                x_max += rng.gen_range(-j..j);
                y_min += rng.gen_range(-j..j);
                y_max += rng.gen_range(-j..j);
            }
            let x_min = x_min.clamp(0.0, camera.width_px as f64 - 1.0);
            let x_max = x_max.clamp(0.0, camera.width_px as f64 - 1.0);
            let y_min = y_min.clamp(0.0, camera.height_px as f64 - 1.0);
            let y_max = y_max.clamp(0.0, camera.height_px as f64 - 1.0);
            if x_max - x_min < 1.0 || y_max - y_min < 1.0 {
                continue;
            }
            let confidence = if noise.confidence_jitter > 0.0 {
                (noise.confidence_mean
                    + rng.gen_range(-noise.confidence_jitter..noise.confidence_jitter))
                .clamp(0.0, 1.0)
            } else {
                noise.confidence_mean
            };
            out.push(Roi {
                camera_id: camera.id.clone(),
                x_min,
                y_min,
                x_max,
                y_max,
                confidence,
                source_agent: Some(agent_idx),
            });
        }
        if noise.oversized_rate > 0.0 && rng.gen_range(0.0..1.0) < noise.oversized_rate {
            let w = camera.width_px as f64;
            let h = camera.height_px as f64;
            out.push(Roi {
                camera_id: camera.id.clone(),
                x_min: 0.2 * w,
                y_min: 0.2 * h,
                x_max: 0.8 * w,
                y_max: 0.7 * h,
                confidence: 0.9,
                source_agent: None,
            });
        }
    }
    out.retain(|r| r.confidence >= confidence_threshold);
    if rule_filter {
        let dims: std::collections::HashMap<&str, (f64, f64)> = scene
            .cameras
            .iter()
            .map(|c| (c.id.as_str(), (c.width_px as f64, c.height_px as f64)))
            .collect();
        out.retain(|r| {
            let (w, h) = dims[r.camera_id.as_str()];
            (r.x_max - r.x_min) <= w / 2.0 && (r.y_max - r.y_min) <= h / 2.0
        });
    }
    out
}

/// Bounding box of the projected 3D corners, or `None` when every corner is
/// behind the camera.
fn project_agent_box(
    agent: &AgentState,
    camera: &Camera,
    ego_pos: Vec2,
    ego_heading: f64,
) -> Option<(f64, f64, f64, f64)> {
    let corners = agent.rect().corners();
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    let mut any = false;
    for corner in corners {
        let ego_local = world_to_frame(corner, ego_pos, ego_heading);
        for z in [0.0, agent.category.height()] {
            if let Some((u, v, _)) = camera.project(ego_local, z) {
                any = true;
                min_u = min_u.min(u);
                max_u = max_u.max(u);
                min_v = min_v.min(v);
                max_v = max_v.max(v);
            }
        }
    }
    if !any {
        return None;
    }
    // Entirely outside the image: cull.
    if max_u < 0.0 || min_u >= camera.width_px as f64 || max_v < 0.0 || min_v >= camera.height_px as f64
    {
        return None;
    }
    Some((min_u, min_v, max_u, max_v))
}

/// Future expert waypoints in the ego frame of `frame` (x lateral right,
/// y forward).
pub fn expert_waypoints(
    scene: &Scene,
    frame: usize,
    horizon: usize,
) -> Result<Vec<Vec2>, ScenarioError> {
    let len = scene.frames();
    if frame + horizon >= len {
        return Err(ScenarioError::FrameRange { frame, horizon, len });
    }
    let origin = scene.trajectory[frame];
    let heading = scene.headings[frame];
    Ok((1..=horizon)
        .map(|s| world_to_frame(scene.trajectory[frame + s], origin, heading))
        .collect())
}

/// Convert an ego-frame point at `frame` back to the world frame.
pub fn ego_to_world(scene: &Scene, frame: usize, local: Vec2) -> Vec2 {
    frame_to_world(local, scene.trajectory[frame], scene.headings[frame])
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    v: u32,
    #[serde(flatten)]
    scene: Scene,
}

/// Write scenes as line-delimited JSON, one record per line.
pub fn save_dataset(scenes: &[Scene], path: &std::path::Path) -> Result<(), ScenarioError> {
    use std::io::Write;
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for scene in scenes {
            let record = SceneRecord { v: 1, scene: scene.clone() };
            serde_json::to_writer(&mut w, &record).map_err(|e| ScenarioError::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            writeln!(w)?;
        }
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a dataset written by [`save_dataset`]. Malformed records report
/// their 1-based line number.
pub fn load_dataset(path: &std::path::Path) -> Result<Vec<Scene>, ScenarioError> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut scenes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(&line).map_err(|e| ScenarioError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if record.v != 1 {
            return Err(ScenarioError::Parse {
                line: i + 1,
                msg: format!("unsupported schema version {}", record.v),
            });
        }
        scenes.push(record.scene);
    }
    Ok(scenes)
}
