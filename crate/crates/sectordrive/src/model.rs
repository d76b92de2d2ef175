//! The driving network: a pointwise scene encoder producing BEV features,
//! sector-wise angular perception, the dreaming rollout that imagines future
//! observations, and the planning / direction heads.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bevgeo::{BevGrid, SectorPartition};
use crate::geom::{world_to_frame, Vec2};
use crate::netcore::{
    cross_attention, distribution_head, gru_step, linear, masked_mean_rows, AttentionWeights,
    DistributionWeights, GruWeights, LatentDistribution, LinearWeights, NetError, ParamVault,
    Tape, Tensor, VarId,
};
use crate::scenario::{Command, EgoStatus, Scene};

/// Raster channels fed to the encoder: occupancy, velocity x/y, boundary
/// distance.
pub const RASTER_CHANNELS: usize = 4;

/// Output scale of the per-step waypoint delta, meters. The head's linear
/// output lives in roughly unit range at initialization; scaling it to the
/// metric range of one planning step keeps absolute-error gradients large
/// enough for plain SGD to reach multi-meter waypoints.
pub const WAYPOINT_SCALE_M: f64 = 4.0;

/// Shapes and switches of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub grid: BevGrid,
    pub theta_deg: f64,
    /// Feature width C.
    pub channels: usize,
    /// Future steps T.
    pub horizon: usize,
    /// Feed (speed, yaw rate) into the plan head.
    pub use_ego_status: bool,
}

impl ModelConfig {
    pub fn sectors(&self) -> usize {
        (360.0 / self.theta_deg).round() as usize
    }
}

struct ModelWeights {
    enc1: LinearWeights,
    enc2: LinearWeights,
    q_a: usize,
    q_ego: usize,
    perceive_attn: AttentionWeights,
    obj_head: LinearWeights,
    gru: GruWeights,
    pseudo_attn: AttentionWeights,
    prior_head: DistributionWeights,
    posterior_head: DistributionWeights,
    plan_attn: AttentionWeights,
    dir_head: LinearWeights,
    plan1: LinearWeights,
    plan2: LinearWeights,
}

/// The full network: parameter vault plus the slot map.
pub struct DriveModel {
    pub config: ModelConfig,
    pub vault: ParamVault,
    weights: ModelWeights,
}

impl DriveModel {
    /// Deterministic initialization from a seed.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vault = ParamVault::new();
        let weights = init_weights(&config, &mut vault, &mut rng);
        DriveModel { config, vault, weights }
    }

    /// Rebuild a model around a vault loaded from a checkpoint. The vault
    /// must contain exactly the parameters this config declares.
    pub fn from_vault(config: ModelConfig, vault: ParamVault) -> Result<Self, NetError> {
        let mut fresh = DriveModel::new(config, 0);
        if fresh.vault.len() != vault.len() {
            return Err(NetError::Checkpoint(format!(
                "parameter count mismatch: config wants {}, checkpoint has {}",
                fresh.vault.len(),
                vault.len()
            )));
        }
        for slot in 0..vault.len() {
            let name = vault.name(slot).to_string();
            let Some(dst) = fresh.vault.slot(&name) else {
                return Err(NetError::UnknownParam(name));
            };
            if fresh.vault.value(dst).shape() != vault.value(slot).shape() {
                return Err(NetError::Checkpoint(format!("shape mismatch for {name}")));
            }
            *fresh.vault.value_mut(dst) = vault.value(slot).clone();
        }
        Ok(fresh)
    }

    pub fn plan_input_width(&self) -> usize {
        plan_input_width(&self.config)
    }

    /// Full forward pass on the given tape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        rasters: &Tensor,
        partition: &SectorPartition,
        command: Command,
        ego_status: Option<EgoStatus>,
    ) -> Result<ForwardOutput, NetError> {
        let cfg = &self.config;
        let k = cfg.sectors();
        let n = partition.n;
        if partition.k != k {
            return Err(NetError::Shape {
                op: "forward",
                detail: format!("partition K {} vs config K {}", partition.k, k),
            });
        }
        if rasters.shape() != (cfg.grid.cells(), RASTER_CHANNELS) {
            return Err(NetError::Shape {
                op: "forward",
                detail: format!(
                    "rasters {:?} vs expected {}x{}",
                    rasters.shape(),
                    cfg.grid.cells(),
                    RASTER_CHANNELS
                ),
            });
        }

        // Scene encoder: per-cell two-layer map.
        let x = tape.constant(rasters.clone());
        let h1 = linear(tape, &self.vault, &self.weights.enc1, x)?;
        let h1 = tape.tanh(h1);
        let f_b = linear(tape, &self.vault, &self.weights.enc2, h1)?;

        // Angular gather with zero padding.
        let gather_idx = Rc::new(partition.gather.clone());
        let f_a = tape.gather_rows(f_b, gather_idx);
        let validity = partition.validity();

        // Angular perception: each query attends to its own sector rows.
        let q_a_param = tape.param(self.weights.q_a, self.vault.value(self.weights.q_a).clone());
        let mut q_rows = Vec::with_capacity(k);
        for sector in 0..k {
            let q = tape.slice_rows(q_a_param, sector, sector + 1);
            let row_valid = &validity[sector * n..(sector + 1) * n];
            if row_valid.iter().any(|v| *v) {
                let keys = tape.slice_rows(f_a, sector * n, (sector + 1) * n);
                let updated = cross_attention(
                    tape,
                    &self.vault,
                    &self.weights.perceive_attn,
                    q,
                    keys,
                    keys,
                    Rc::new(row_valid.to_vec()),
                )?;
                q_rows.push(updated);
            } else {
                // Empty sector: the query passes through on the residual path.
                q_rows.push(q);
            }
        }
        let q_a0 = tape.concat_rows(&q_rows);
        let obj_logits = linear(tape, &self.vault, &self.weights.obj_head, q_a0)?;
        let p_a = tape.sigmoid(obj_logits);

        // Dreaming rollout.
        let rollout = self.dreaming_rollout(tape, q_a0, f_a, &validity, k, n)?;

        // Global context for the planner: mean encoded features per 90-degree
        // quadrant, flattened to one row. A BEV rotation permutes the four
        // slots, so the planner's input separates the augmented views even
        // while the query pathway is still early in training.
        let quadrant_ctx = {
            let mut quadrant = vec![0usize; cfg.grid.cells()];
            let mut counts = [0usize; 4];
            for row in 0..cfg.grid.height {
                for col in 0..cfg.grid.width {
                    let q = crate::bevgeo::sector_index(cfg.grid.cell_center(row, col), 90.0)
                        .expect("90 degrees divides 360");
                    quadrant[row * cfg.grid.width + col] = q;
                    counts[q] += 1;
                }
            }
            let mut pool = Tensor::zeros(4, cfg.grid.cells());
            for (cell, &q) in quadrant.iter().enumerate() {
                pool.set(q, cell, 1.0 / counts[q] as f64);
            }
            let pool = tape.constant(pool);
            let per_quadrant = tape.matmul(pool, f_b);
            let mut ctx = tape.slice_rows(per_quadrant, 0, 1);
            for q in 1..4 {
                let slot = tape.slice_rows(per_quadrant, q, q + 1);
                ctx = tape.concat_cols(ctx, slot);
            }
            ctx
        };

        // Planning and direction heads.
        let all_valid = Rc::new(vec![true; k]);
        let q_ego_param =
            tape.param(self.weights.q_ego, self.vault.value(self.weights.q_ego).clone());
        let mut traj_rows = Vec::with_capacity(cfg.horizon);
        let mut dir_rows = Vec::with_capacity(cfg.horizon);
        let cmd = command.one_hot();
        let mut extra = cmd.to_vec();
        if cfg.use_ego_status {
            let s = ego_status.unwrap_or(EgoStatus { speed: 0.0, yaw_rate: 0.0 });
            extra.push(s.speed);
            extra.push(s.yaw_rate);
        }
        let extra = tape.constant(Tensor::from_vec(1, extra.len(), extra));
        for (t, q_a_t) in rollout.queries.iter().enumerate() {
            let q = tape.slice_rows(q_ego_param, t, t + 1);
            let attended = cross_attention(
                tape,
                &self.vault,
                &self.weights.plan_attn,
                q,
                *q_a_t,
                *q_a_t,
                all_valid.clone(),
            )?;
            let dir_logits = linear(tape, &self.vault, &self.weights.dir_head, attended)?;
            let dir = tape.row_softmax_masked(dir_logits, Rc::new(vec![true; 3]))?;
            dir_rows.push(dir);
            let input = tape.concat_cols(attended, quadrant_ctx);
            let input = tape.concat_cols(input, extra);
            let p1 = linear(tape, &self.vault, &self.weights.plan1, input)?;
            let p1 = tape.tanh(p1);
            // Waypoints accumulate per-step deltas so every step's target has
            // the same (one-step) scale and later waypoints backpropagate
            // into all earlier steps.
            let delta = linear(tape, &self.vault, &self.weights.plan2, p1)?;
            let delta = tape.scale(delta, WAYPOINT_SCALE_M);
            let wp = match traj_rows.last() {
                Some(prev) => tape.add(*prev, delta),
                None => delta,
            };
            traj_rows.push(wp);
        }
        let p_traj = tape.concat_rows(&traj_rows);
        let p_dir = tape.concat_rows(&dir_rows);

        Ok(ForwardOutput {
            p_a,
            q_a0,
            queries: rollout.queries,
            dists: rollout.dists,
            p_traj,
            p_dir,
        })
    }

    /// Roll the angular queries T steps forward. Step 1 consumes the real
    /// angular feature; later steps attend pseudo observations out of the
    /// previous queries.
    fn dreaming_rollout(
        &self,
        tape: &mut Tape,
        q_a0: VarId,
        f_a: VarId,
        validity: &[bool],
        k: usize,
        n: usize,
    ) -> Result<Rollout, NetError> {
        let t_steps = self.config.horizon;
        assert!(t_steps >= 1, "rollout needs at least one step");
        let all_valid = Rc::new(vec![true; k]);
        let keep = Rc::new(validity.to_vec());
        let mut queries = Vec::with_capacity(t_steps);
        let mut dists = Vec::with_capacity(t_steps);
        let mut q_prev = q_a0;
        let mut f_prev = f_a;
        for step in 1..=t_steps {
            let f_t = if step == 1 {
                f_prev
            } else {
                let updated = cross_attention(
                    tape,
                    &self.vault,
                    &self.weights.pseudo_attn,
                    f_prev,
                    q_prev,
                    q_prev,
                    all_valid.clone(),
                )?;
                // Padded rows must stay exactly zero.
                tape.mask_rows(updated, keep.clone())
            };
            let pooled = masked_mean_rows(tape, f_t, validity, k, n);
            let q_t = gru_step(tape, &self.vault, &self.weights.gru, q_prev, pooled)?;
            let prior = distribution_head(tape, &self.vault, &self.weights.prior_head, q_prev)?;
            let posterior =
                distribution_head(tape, &self.vault, &self.weights.posterior_head, q_t)?;
            queries.push(q_t);
            dists.push((prior, posterior));
            q_prev = q_t;
            f_prev = f_t;
        }
        Ok(Rollout { queries, dists })
    }
}

struct Rollout {
    queries: Vec<VarId>,
    dists: Vec<(LatentDistribution, LatentDistribution)>,
}

/// Everything a forward pass produces, as tape handles.
pub struct ForwardOutput {
    /// K x 1 objectness scores in (0, 1).
    pub p_a: VarId,
    /// K x C perceive-stage queries.
    pub q_a0: VarId,
    /// Per-step K x C rolled-out queries, t = 1..T.
    pub queries: Vec<VarId>,
    /// (prior, posterior) per step.
    pub dists: Vec<(LatentDistribution, LatentDistribution)>,
    /// T x 2 ego-frame waypoints.
    pub p_traj: VarId,
    /// T x 3 direction probabilities (rows sum to 1).
    pub p_dir: VarId,
}

impl ForwardOutput {
    pub fn trajectory(&self, tape: &Tape) -> Vec<Vec2> {
        let t = tape.val(self.p_traj);
        (0..t.rows).map(|r| Vec2::new(t.at(r, 0), t.at(r, 1))).collect()
    }
}

/// Plan-head input: attended step feature, four quadrant context slots,
/// command one-hot, and optionally the ego status pair.
fn plan_input_width(config: &ModelConfig) -> usize {
    5 * config.channels + 3 + if config.use_ego_status { 2 } else { 0 }
}

fn init_weights<R: Rng>(config: &ModelConfig, vault: &mut ParamVault, rng: &mut R) -> ModelWeights {
    let c = config.channels;
    let k = config.sectors();
    let plan_in = plan_input_width(config);
    ModelWeights {
        enc1: LinearWeights::init(vault, "encoder.l1", RASTER_CHANNELS, c, rng),
        enc2: LinearWeights::init(vault, "encoder.l2", c, c, rng),
        q_a: vault.add("queries.angular", Tensor::gaussian_init(k, c, 0.02, rng)),
        q_ego: vault.add("queries.ego", Tensor::gaussian_init(config.horizon, c, 0.02, rng)),
        perceive_attn: AttentionWeights::init(vault, "perceive.attn", c, rng),
        obj_head: LinearWeights::init(vault, "perceive.obj", c, 1, rng),
        gru: GruWeights::init(vault, "dream.gru", c, rng),
        pseudo_attn: AttentionWeights::init(vault, "dream.attn", c, rng),
        prior_head: DistributionWeights::init(vault, "dream.prior", c, rng),
        posterior_head: DistributionWeights::init(vault, "dream.posterior", c, rng),
        plan_attn: AttentionWeights::init(vault, "plan.attn", c, rng),
        dir_head: LinearWeights::init(vault, "plan.dir", c, 3, rng),
        plan1: LinearWeights::init(vault, "plan.l1", plan_in, c, rng),
        plan2: LinearWeights::init(vault, "plan.l2", c, 2, rng),
    }
}

/// Ground-truth rasters for the encoder, as channel planes of H*W values:
/// agent occupancy, ego-frame velocity x and y of the covering agent, and a
/// clamped signed distance to the drivable boundary.
pub fn rasterize_scene(scene: &Scene, frame: usize, grid: BevGrid) -> [Vec<f64>; RASTER_CHANNELS] {
    let cells = grid.cells();
    let mut occupancy = vec![0.0; cells];
    let mut vel_x = vec![0.0; cells];
    let mut vel_y = vec![0.0; cells];
    let mut boundary = vec![0.0; cells];
    let ego_pos = scene.trajectory[frame];
    let ego_heading = scene.headings[frame];

    // Agents in the ego frame.
    let agents: Vec<(crate::geom::OrientedRect, Vec2)> = scene.agents[frame]
        .iter()
        .map(|a| {
            let center = world_to_frame(a.position, ego_pos, ego_heading);
            let heading_local = a.heading - ego_heading + std::f64::consts::FRAC_PI_2;
            let rect = crate::geom::OrientedRect {
                center,
                heading: heading_local,
                length: a.length,
                width: a.width,
            };
            let v = world_to_frame(a.position.add(a.velocity), ego_pos, ego_heading).sub(center);
            (rect, v)
        })
        .collect();
    let boundary_local: Vec<Vec2> = scene
        .boundary
        .iter()
        .map(|p| world_to_frame(*p, ego_pos, ego_heading))
        .collect();

    for row in 0..grid.height {
        for col in 0..grid.width {
            let idx = row * grid.width + col;
            let p = grid.cell_center(row, col);
            for (rect, v) in &agents {
                let point_rect = crate::geom::OrientedRect {
                    center: p,
                    heading: 0.0,
                    length: grid.resolution,
                    width: grid.resolution,
                };
                if rect.overlaps(&point_rect) {
                    occupancy[idx] = 1.0;
                    vel_x[idx] = v.x;
                    vel_y[idx] = v.y;
                    break;
                }
            }
            let inside = crate::geom::point_in_polygon(p, &boundary_local);
            let dist = polygon_edge_distance(p, &boundary_local);
            let signed = if inside { dist } else { -dist };
            boundary[idx] = (signed / 10.0).clamp(-1.0, 1.0);
        }
    }
    [occupancy, vel_x, vel_y, boundary]
}

/// Pack channel planes into the (H*W) x 4 tensor the encoder consumes.
pub fn planes_to_tensor(planes: &[Vec<f64>; RASTER_CHANNELS]) -> Tensor {
    let cells = planes[0].len();
    let mut data = Vec::with_capacity(cells * RASTER_CHANNELS);
    for i in 0..cells {
        for plane in planes {
            data.push(plane[i]);
        }
    }
    Tensor::from_vec(cells, RASTER_CHANNELS, data)
}

fn polygon_edge_distance(p: Vec2, poly: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let ab = b.sub(a);
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 { (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let closest = a.add(ab.scale(t));
        best = best.min(p.sub(closest).norm());
    }
    best
}
