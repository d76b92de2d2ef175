//! Open-loop planning metrics (L2 under the NoAvg and TemAvg protocols,
//! collision and intersection rates, per-command splits, objectness PR/ROC)
//! and the closed-loop driving harness: waypoint follower, kinematic bicycle,
//! route completion, and driving score.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bevgeo::{build_partition, SectorPartition};
use crate::geom::{frame_to_world, rect_inside_polygon, world_to_frame, OrientedRect, Vec2};
use crate::losses::l_imi_value;
use crate::model::{planes_to_tensor, DriveModel};
use crate::netcore::{NetError, Tape};
use crate::scenario::{
    expert_waypoints, Command, Scene, ScenarioError, EGO_LENGTH, EGO_WIDTH, FRAME_DT,
};
use crate::train::{build_sample, frame_schedule, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("horizon step {step} outside the {len}-step trajectory")]
    Range { step: usize, len: usize },
    #[error("degenerate boundary polygon ({0} vertices)")]
    DegeneratePolygon(usize),
    #[error("checkpoint does not match the evaluation config: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Horizon steps evaluated, in 0.5 s frames: 1 s, 2 s, 3 s.
pub const HORIZON_STEPS: [usize; 3] = [2, 4, 6];

/// L2 at exactly the horizon step (1-based), per the NoAvg protocol.
pub fn l2_noavg(p_traj: &[Vec2], g_traj: &[Vec2], step: usize) -> Result<f64, EvalError> {
    if step == 0 || step > p_traj.len() || step > g_traj.len() {
        return Err(EvalError::Range { step, len: p_traj.len().min(g_traj.len()) });
    }
    Ok(p_traj[step - 1].sub(g_traj[step - 1]).norm())
}

/// TemAvg protocol: mean of the per-step L2 values from 0.5 s up to the
/// horizon step.
///
/// ```
/// let l2 = sectordrive::eval::l2_temavg(&[0.1, 0.2, 0.3, 0.4], 4).unwrap();
/// assert!((l2 - 0.25).abs() < 1e-12);
/// ```
pub fn l2_temavg(per_step_l2: &[f64], step: usize) -> Result<f64, EvalError> {
    if step == 0 || step > per_step_l2.len() {
        return Err(EvalError::Range { step, len: per_step_l2.len() });
    }
    Ok(per_step_l2[..step].iter().sum::<f64>() / step as f64)
}

/// Heading at each waypoint: direction of the segment arriving at it; the
/// first waypoint uses the current (forward) heading.
fn waypoint_headings(p_traj: &[Vec2]) -> Vec<f64> {
    let forward = std::f64::consts::FRAC_PI_2;
    (0..p_traj.len())
        .map(|i| {
            let prev = if i == 0 { Vec2::ZERO } else { p_traj[i - 1] };
            let d = p_traj[i].sub(prev);
            if d.norm() < 1e-9 {
                forward
            } else {
                d.y.atan2(d.x)
            }
        })
        .collect()
}

/// Ego box placed on a predicted ego-frame waypoint.
fn ego_rect_at(p_traj: &[Vec2], step_idx: usize, headings: &[f64]) -> OrientedRect {
    OrientedRect {
        center: p_traj[step_idx],
        heading: headings[step_idx],
        length: EGO_LENGTH,
        width: EGO_WIDTH,
    }
}

/// Per-step collision flags of an ego-frame trajectory predicted at `frame`
/// against the scene's agents at the corresponding future frames.
pub fn collision_flags(p_traj: &[Vec2], scene: &Scene, frame: usize) -> Vec<bool> {
    let headings = waypoint_headings(p_traj);
    let ego_pos = scene.trajectory[frame];
    let ego_heading = scene.headings[frame];
    p_traj
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let future = frame + i + 1;
            if future >= scene.frames() {
                return false;
            }
            let ego = ego_rect_at(p_traj, i, &headings);
            scene.agents[future].iter().any(|agent| {
                let local_center = world_to_frame(agent.position, ego_pos, ego_heading);
                let local = OrientedRect {
                    center: local_center,
                    heading: agent.heading - ego_heading + std::f64::consts::FRAC_PI_2,
                    length: agent.length,
                    width: agent.width,
                };
                ego.overlaps(&local)
            })
        })
        .collect()
}

/// Per-step flags of the ego box leaving the drivable polygon.
pub fn intersection_flags(
    p_traj: &[Vec2],
    scene: &Scene,
    frame: usize,
) -> Result<Vec<bool>, EvalError> {
    if scene.boundary.len() < 3 {
        return Err(EvalError::DegeneratePolygon(scene.boundary.len()));
    }
    let headings = waypoint_headings(p_traj);
    let ego_pos = scene.trajectory[frame];
    let ego_heading = scene.headings[frame];
    let local_boundary: Vec<Vec2> = scene
        .boundary
        .iter()
        .map(|p| world_to_frame(*p, ego_pos, ego_heading))
        .collect();
    Ok((0..p_traj.len())
        .map(|i| {
            let ego = ego_rect_at(p_traj, i, &headings);
            !rect_inside_polygon(&ego, &local_boundary)
        })
        .collect())
}

/// One precision/recall/ROC point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Confusion counts at each threshold over all (sector, frame) pairs.
/// Returns `None` when the labels contain no positives (recall undefined).
pub fn objectness_pr(scores: &[f64], labels: &[u8], thresholds: &[f64]) -> Option<Vec<PrPoint>> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|l| **l != 0).count();
    if positives == 0 {
        return None;
    }
    let negatives = labels.len() - positives;
    Some(
        thresholds
            .iter()
            .map(|&threshold| {
                let mut tp = 0;
                let mut fp = 0;
                for (s, l) in scores.iter().zip(labels) {
                    if *s >= threshold {
                        if *l != 0 {
                            tp += 1;
                        } else {
                            fp += 1;
                        }
                    }
                }
                let fn_ = positives - tp;
                let tn = negatives - fp;
                PrPoint {
                    threshold,
                    precision: if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 1.0 },
                    recall: tp as f64 / positives as f64,
                    tpr: tp as f64 / positives as f64,
                    fpr: if negatives > 0 { fp as f64 / negatives as f64 } else { 0.0 },
                    tp,
                    fp,
                    tn,
                    fn_,
                }
            })
            .collect(),
    )
}

/// Metrics for one horizon row: value at 1 s / 2 s / 3 s plus the average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub at_1s: f64,
    pub at_2s: f64,
    pub at_3s: f64,
    pub avg: f64,
}

impl HorizonRow {
    fn from_values(v: [f64; 3]) -> Self {
        HorizonRow { at_1s: v[0], at_2s: v[1], at_3s: v[2], avg: (v[0] + v[1] + v[2]) / 3.0 }
    }
}

/// The open-loop report over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub samples: usize,
    pub l2_noavg: HorizonRow,
    pub l2_temavg: HorizonRow,
    /// Percent of samples with a collision at each horizon.
    pub collision_pct: HorizonRow,
    /// Percent of samples leaving the drivable area at each horizon.
    pub intersection_pct: HorizonRow,
    /// Sub-reports keyed by command; empty buckets are absent.
    pub per_command: BTreeMap<String, Box<OpenLoopReport>>,
    /// PR/ROC points over all sectors, absent when no positive labels.
    pub objectness: Option<Vec<PrPoint>>,
}

/// Raw per-sample evaluation rows, kept so buckets can be recombined.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub command: Command,
    /// Per-step L2 over the full horizon.
    pub per_step_l2: Vec<f64>,
    pub collision: Vec<bool>,
    pub intersection: Vec<bool>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub l1: f64,
}

fn command_key(c: Command) -> &'static str {
    match c {
        Command::GoStraight => "go_straight",
        Command::TurnLeft => "turn_left",
        Command::TurnRight => "turn_right",
    }
}

/// Default threshold sweep for the PR/ROC curves.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Aggregate sample rows into a report.
pub fn aggregate(rows: &[SampleEval]) -> OpenLoopReport {
    let n = rows.len().max(1) as f64;
    let mut l2_no = [0.0; 3];
    let mut l2_tem = [0.0; 3];
    let mut coll = [0.0; 3];
    let mut inter = [0.0; 3];
    for row in rows {
        for (i, &step) in HORIZON_STEPS.iter().enumerate() {
            let step = step.min(row.per_step_l2.len());
            l2_no[i] += row.per_step_l2[step - 1];
            l2_tem[i] += row.per_step_l2[..step].iter().sum::<f64>() / step as f64;
            if row.collision[..step].iter().any(|b| *b) {
                coll[i] += 1.0;
            }
            if row.intersection[..step].iter().any(|b| *b) {
                inter[i] += 1.0;
            }
        }
    }
    for i in 0..3 {
        l2_no[i] /= n;
        l2_tem[i] /= n;
        coll[i] = 100.0 * coll[i] / n;
        inter[i] = 100.0 * inter[i] / n;
    }
    let scores: Vec<f64> = rows.iter().flat_map(|r| r.scores.iter().copied()).collect();
    let labels: Vec<u8> = rows.iter().flat_map(|r| r.labels.iter().copied()).collect();
    OpenLoopReport {
        samples: rows.len(),
        l2_noavg: HorizonRow::from_values(l2_no),
        l2_temavg: HorizonRow::from_values(l2_tem),
        collision_pct: HorizonRow::from_values(coll),
        intersection_pct: HorizonRow::from_values(inter),
        per_command: BTreeMap::new(),
        objectness: objectness_pr(&scores, &labels, &default_thresholds()),
    }
}

/// Split rows by command and recompute each bucket's metrics.
pub fn split_by_command(rows: &[SampleEval]) -> BTreeMap<String, Box<OpenLoopReport>> {
    let mut buckets: BTreeMap<String, Vec<SampleEval>> = BTreeMap::new();
    for row in rows {
        buckets.entry(command_key(row.command).to_string()).or_default().push(row.clone());
    }
    buckets.into_iter().map(|(k, v)| (k, Box::new(aggregate(&v)))).collect()
}

/// Run the model over every scheduled frame of every scene and aggregate.
pub fn evaluate_open_loop(
    model: &DriveModel,
    scenes: &[Scene],
    config: &TrainConfig,
) -> Result<(OpenLoopReport, Vec<SampleEval>), EvalError> {
    let partition = build_partition(config.grid(), config.theta_deg)
        .map_err(|e| EvalError::ConfigMismatch(e.to_string()))?;
    let mut rows = Vec::new();
    for scene in scenes {
        for frame in frame_schedule(scene.frames(), config.horizon, config.frame_stride) {
            rows.push(evaluate_sample(model, scene, frame, &partition, config)?);
        }
    }
    let mut report = aggregate(&rows);
    report.per_command = split_by_command(&rows);
    Ok((report, rows))
}

/// Evaluate one (scene, frame) pair.
pub fn evaluate_sample(
    model: &DriveModel,
    scene: &Scene,
    frame: usize,
    partition: &SectorPartition,
    config: &TrainConfig,
) -> Result<SampleEval, EvalError> {
    let sample = build_sample(scene, frame, partition, config)?;
    let mut tape = Tape::new();
    let rasters = planes_to_tensor(&sample.planes);
    let out = model.forward(&mut tape, &rasters, partition, sample.command, Some(sample.ego_status))?;
    let p_traj = out.trajectory(&tape);
    let g_traj = expert_waypoints(scene, frame, config.horizon)?;
    let per_step_l2: Vec<f64> =
        p_traj.iter().zip(&g_traj).map(|(p, g)| p.sub(*g).norm()).collect();
    let collision = collision_flags(&p_traj, scene, frame);
    let intersection = intersection_flags(&p_traj, scene, frame)?;
    let scores = tape.val(out.p_a).data.clone();
    Ok(SampleEval {
        command: sample.command,
        per_step_l2,
        collision,
        intersection,
        scores,
        labels: sample.y_obj.clone(),
        l1: l_imi_value(&p_traj, &g_traj),
    })
}

/// Flat key-value rendering of an open-loop report.
pub fn format_open_loop(report: &OpenLoopReport) -> String {
    fn row(out: &mut String, name: &str, r: &HorizonRow) {
        out.push_str(&format!(
            "{name}_1s={:.6}\n{name}_2s={:.6}\n{name}_3s={:.6}\n{name}_avg={:.6}\n",
            r.at_1s, r.at_2s, r.at_3s, r.avg
        ));
    }
    let mut out = format!("samples={}\n", report.samples);
    row(&mut out, "l2_noavg", &report.l2_noavg);
    row(&mut out, "l2_temavg", &report.l2_temavg);
    row(&mut out, "collision_pct", &report.collision_pct);
    row(&mut out, "intersection_pct", &report.intersection_pct);
    for (cmd, sub) in &report.per_command {
        out.push_str(&format!("command_{cmd}_samples={}\n", sub.samples));
        out.push_str(&format!("command_{cmd}_l2_noavg_avg={:.6}\n", sub.l2_noavg.avg));
        out.push_str(&format!("command_{cmd}_collision_pct_avg={:.6}\n", sub.collision_pct.avg));
    }
    out
}

/// Two-column numeric text for PR / ROC point lists.
pub fn format_curve(points: &[PrPoint], roc: bool) -> String {
    points
        .iter()
        .map(|p| {
            if roc {
                format!("{:.6} {:.6}", p.fpr, p.tpr)
            } else {
                format!("{:.6} {:.6}", p.recall, p.precision)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

/// Closed-loop penalties: one per infraction type per 10 s window.
pub const COLLISION_PENALTY: f64 = 0.6;
pub const BOUNDARY_PENALTY: f64 = 0.7;
pub const PENALTY_WINDOW_TICKS: usize = 20; // 10 s at 0.5 s ticks
const STUCK_TICKS: usize = 10;
const STUCK_DISTANCE: f64 = 0.5;

/// Closed-loop outcome of one route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub route_completion_pct: f64,
    pub driving_score_pct: f64,
    /// (tick, infraction type) log.
    pub infractions: Vec<(usize, String)>,
}

/// Policy driving the closed loop: the trained model or the scripted expert.
pub enum Policy<'m> {
    Model(&'m DriveModel),
    /// Follows the scene's own expert trajectory.
    Expert,
    /// Always outputs the given ego-frame waypoints (test hook).
    Fixed(Vec<Vec2>),
}

/// Simulate one route with a waypoint follower over a kinematic bicycle.
pub fn closed_loop_run(
    policy: &Policy,
    scene: &Scene,
    config: &TrainConfig,
) -> Result<ClosedLoopReport, EvalError> {
    let partition = build_partition(config.grid(), config.theta_deg)
        .map_err(|e| EvalError::ConfigMismatch(e.to_string()))?;
    if let Policy::Model(m) = policy {
        if m.config.horizon != config.horizon || m.config.theta_deg != config.theta_deg {
            return Err(EvalError::ConfigMismatch(format!(
                "model horizon {} / theta {} vs eval horizon {} / theta {}",
                m.config.horizon, m.config.theta_deg, config.horizon, config.theta_deg
            )));
        }
    }

    let route = &scene.trajectory;
    let total_len: f64 =
        route.windows(2).map(|w| w[1].sub(w[0]).norm()).sum::<f64>().max(1e-9);
    let max_ticks = scene.frames() * 3;

    let mut pos = route[0];
    let mut heading = scene.headings[0];
    let mut speed = scene.ego_status[0].speed;
    let mut progress = 0.0f64;
    let mut infractions: Vec<(usize, String)> = Vec::new();
    let mut last_collision_tick: Option<usize> = None;
    let mut last_boundary_tick: Option<usize> = None;
    let mut recent_positions: Vec<Vec2> = Vec::new();

    for tick in 0..max_ticks {
        // Perceive and plan in the current ego frame.
        let frame = tick.min(scene.frames() - 1);
        if let Policy::Expert = policy {
            // The expert replays its own recorded trajectory exactly; no
            // follower dynamics are involved.
            pos = route[frame];
            heading = scene.headings[frame];
            speed = scene.ego_status[frame].speed;
            progress = route[..=frame]
                .windows(2)
                .fold(0.0f64, |acc, w| acc + w[1].sub(w[0]).norm())
                / total_len;
            if frame + 1 >= scene.frames() {
                progress = 1.0;
                break;
            }
            continue;
        }
        let local_plan: Vec<Vec2> = match policy {
            Policy::Expert => unreachable!("expert handled above"),
            Policy::Fixed(wp) => wp.clone(),
            Policy::Model(model) => {
                let sim_scene =
                    scene_at_pose(scene, frame, pos, heading, speed, config.horizon);
                let sample = build_sample(&sim_scene, 0, &partition, config)?;
                let mut tape = Tape::new();
                let rasters = planes_to_tensor(&sample.planes);
                let out = model.forward(
                    &mut tape,
                    &rasters,
                    &partition,
                    sample.command,
                    Some(sample.ego_status),
                )?;
                out.trajectory(&tape)
            }
        };

        // Waypoint follower: steer proportionally toward the 1 s waypoint.
        let target = local_plan.get(1).copied().or_else(|| local_plan.first().copied());
        let target = target.unwrap_or(Vec2::new(0.0, 0.0));
        let heading_error = target.x.atan2(target.y.max(0.1));
        let steer = (-1.2 * heading_error).clamp(-0.6, 0.6);
        let target_speed = (target.norm() / (2.0 * FRAME_DT)).min(12.0);
        let accel = (target_speed - speed).clamp(-3.0, 2.0) / FRAME_DT;

        // Kinematic bicycle, wheelbase ~ ego length.
        let dt = FRAME_DT;
        speed = (speed + accel * dt).max(0.0);
        heading += speed / EGO_LENGTH * steer.tan() * dt;
        pos = pos.add(Vec2::new(heading.cos(), heading.sin()).scale(speed * dt));

        // Progress along the route: arc length of the nearest waypoint.
        let (best_idx, _) = route
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.sub(pos).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty route");
        let arc = route[..=best_idx]
            .windows(2)
            .fold(0.0f64, |acc, w| acc + w[1].sub(w[0]).norm());
        progress = progress.max(arc / total_len);

        // Infractions.
        let ego = OrientedRect { center: pos, heading, length: EGO_LENGTH, width: EGO_WIDTH };
        let agent_frame = tick.min(scene.frames() - 1);
        let collided = scene.agents[agent_frame].iter().any(|a| ego.overlaps(&a.rect()));
        if collided
            && last_collision_tick.is_none_or(|t| tick - t >= PENALTY_WINDOW_TICKS)
        {
            infractions.push((tick, "collision".to_string()));
            last_collision_tick = Some(tick);
        }
        if !rect_inside_polygon(&ego, &scene.boundary)
            && last_boundary_tick.is_none_or(|t| tick - t >= PENALTY_WINDOW_TICKS)
        {
            infractions.push((tick, "boundary".to_string()));
            last_boundary_tick = Some(tick);
        }

        // Termination.
        if progress >= 0.999 {
            progress = 1.0;
            break;
        }
        recent_positions.push(pos);
        if recent_positions.len() > STUCK_TICKS {
            recent_positions.remove(0);
            let moved = pos.sub(recent_positions[0]).norm();
            if moved < STUCK_DISTANCE {
                break;
            }
        }
    }

    let completion = 100.0 * progress;
    let mut score = completion;
    for (_, kind) in &infractions {
        score *= if kind == "collision" { COLLISION_PENALTY } else { BOUNDARY_PENALTY };
    }
    Ok(ClosedLoopReport {
        route_completion_pct: completion,
        driving_score_pct: score,
        infractions,
    })
}

/// Rebuild the scene around the simulated ego pose so the rasters and the
/// model inputs reflect the live world state.
fn scene_at_pose(
    scene: &Scene,
    frame: usize,
    pos: Vec2,
    heading: f64,
    speed: f64,
    horizon: usize,
) -> Scene {
    let mut s = scene.clone();
    // Enough frames for the planner's horizon, extrapolating the current
    // velocity; agents frozen at `frame`. The extrapolated trajectory is a
    // placeholder so the sample builder has labels to compute — only the
    // model's own prediction is used by the follower.
    let n = s.trajectory.len().max(horizon + 2);
    let forward = Vec2::new(heading.cos(), heading.sin());
    s.trajectory = (0..n)
        .map(|i| pos.add(forward.scale(speed.max(0.5) * FRAME_DT * i as f64)))
        .collect();
    s.headings = vec![heading; n];
    s.commands = vec![scene.commands[frame.min(scene.commands.len() - 1)]; n];
    s.agents = vec![scene.agents[frame].clone(); n];
    s.rois = vec![scene.rois[frame].clone(); n];
    s.ego_status = vec![crate::scenario::EgoStatus { speed, yaw_rate: 0.0 }; n];
    s
}

/// Average closed-loop metrics over a route set.
pub fn closed_loop_suite(
    policy: &Policy,
    routes: &[Scene],
    config: &TrainConfig,
) -> Result<(f64, f64, Vec<ClosedLoopReport>), EvalError> {
    let mut reports = Vec::with_capacity(routes.len());
    for route in routes {
        reports.push(closed_loop_run(policy, route, config)?);
    }
    let n = reports.len().max(1) as f64;
    let rc = reports.iter().map(|r| r.route_completion_pct).sum::<f64>() / n;
    let ds = reports.iter().map(|r| r.driving_score_pct).sum::<f64>() / n;
    Ok((rc, ds, reports))
}

/// Flat key-value rendering of a closed-loop report set.
pub fn format_closed_loop(rc: f64, ds: f64, reports: &[ClosedLoopReport]) -> String {
    let mut out = format!(
        "routes={}\nroute_completion_pct={:.6}\ndriving_score_pct={:.6}\n",
        reports.len(),
        rc,
        ds
    );
    for (i, r) in reports.iter().enumerate() {
        out.push_str(&format!(
            "route_{i}_completion={:.6} route_{i}_score={:.6} route_{i}_infractions={}\n",
            r.route_completion_pct,
            r.driving_score_pct,
            r.infractions.len()
        ));
    }
    out
}

/// Write a report file atomically.
pub fn write_report(path: &Path, contents: &str) -> Result<(), EvalError> {
    crate::train::write_atomic(path, contents)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation sweep
// ---------------------------------------------------------------------------

/// One trained variant's held-out result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    /// Held-out L2 at the 1/2/3 s horizons, averaged.
    pub avg_l2: f64,
}

/// Loss-toggle variants mirroring the supervision ladder: imitation only,
/// imitation plus angular objectness, and the full five-loss model.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let mut baseline = base.clone();
    baseline.enable_l_spat = false;
    baseline.enable_l_drm = false;
    baseline.enable_l_dir = false;
    baseline.enable_l_cons = false;
    let mut with_spat = baseline.clone();
    with_spat.enable_l_spat = true;
    vec![
        ("imitation_only".to_string(), baseline),
        ("with_objectness".to_string(), with_spat),
        ("full".to_string(), base.clone()),
    ]
}

/// Train every (variant, seed) pair and evaluate held-out average L2.
pub fn run_ablation(
    train_set: &[Scene],
    eval_set: &[Scene],
    base: &TrainConfig,
    seeds: &[u64],
    work_dir: &Path,
) -> Result<Vec<AblationRow>, EvalError> {
    let mut rows = Vec::new();
    for (name, variant) in ablation_variants(base) {
        for &seed in seeds {
            let mut config = variant.clone();
            config.seed = seed;
            let out = work_dir.join(format!("{name}_seed{seed}"));
            let fitted = crate::train::fit(train_set, &config, &out, None)?;
            let (report, _) = evaluate_open_loop(&fitted.model, eval_set, &config)?;
            rows.push(AblationRow { variant: name.clone(), seed, avg_l2: report.l2_noavg.avg });
        }
    }
    Ok(rows)
}

/// Median over a non-empty slice (mean of the middle pair when even).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Variant table: per-row lines plus per-variant medians.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant seed avg_l2\n");
    for r in rows {
        out.push_str(&format!("{} {} {:.6}\n", r.variant, r.seed, r.avg_l2));
    }
    let mut variants: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    variants.dedup();
    for v in variants {
        let vals: Vec<f64> =
            rows.iter().filter(|r| r.variant == v).map(|r| r.avg_l2).collect();
        if !vals.is_empty() {
            out.push_str(&format!("median_{v}={:.6}\n", median(&vals)));
        }
    }
    out
}

/// Helper: world-frame ego rectangle for a predicted local waypoint.
pub fn predicted_world_rect(
    scene: &Scene,
    frame: usize,
    p_traj: &[Vec2],
    step_idx: usize,
) -> OrientedRect {
    let headings = waypoint_headings(p_traj);
    let local = ego_rect_at(p_traj, step_idx, &headings);
    let center = frame_to_world(local.center, scene.trajectory[frame], scene.headings[frame]);
    OrientedRect {
        center,
        heading: local.heading + scene.headings[frame] - std::f64::consts::FRAC_PI_2,
        length: local.length,
        width: local.width,
    }
}
