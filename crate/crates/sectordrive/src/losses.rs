//! The five training losses and their weighted total: spatial objectness
//! BCE, dreaming KL, imitation L1, direction cross-entropy, and directional
//! consistency, plus direction-label generation.
//!
//! Each loss has an on-tape builder (differentiable) and the value-level
//! helpers used by tests and evaluation evaluate the same builders on a
//! throwaway tape, so there is a single definition of every formula.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::netcore::{LatentDistribution, NetError, Tape, Tensor, VarId};

/// Probability clamp in BCE / CE to avoid log(0).
pub const PROB_EPS: f64 = 1e-7;

/// Loss weights (omega 1..5). Defaults follow the method's configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub spat: f64,
    pub drm: f64,
    pub imi: f64,
    pub dir: f64,
    pub cons: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { spat: 2.0, drm: 0.1, imi: 1.0, dir: 2.0, cons: 1.0 }
    }
}

/// Per-component values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_spat: f64,
    pub l_drm: f64,
    pub l_imi: f64,
    pub l_dir: f64,
    pub l_cons: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossReport {
    pub fn log_line(&self, step: usize) -> String {
        format!(
            "step={} l_spat={:.6} l_drm={:.6} l_imi={:.6} l_dir={:.6} l_cons={:.6} total={:.6}",
            step, self.l_spat, self.l_drm, self.l_imi, self.l_dir, self.l_cons, self.total
        )
    }
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("non-finite loss component {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("scale must be strictly positive")]
    NonPositiveScale,
    #[error("missing rotation {0} in augmented predictions")]
    MissingRotation(u32),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Maneuver classes, ordered to match the direction head's output columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Straight,
    Right,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Left => 0,
            Direction::Straight => 1,
            Direction::Right => 2,
        }
    }
}

/// Per-step direction label from the lateral (x) waypoint coordinate:
/// strictly between -delta and delta is straight; x <= -delta is left and
/// x >= delta is right (boundaries map to the turn classes).
///
/// ```
/// use sectordrive::losses::{direction_label, Direction};
/// use sectordrive::geom::Vec2;
/// let traj = vec![Vec2::new(-1.5, 3.0), Vec2::new(0.3, 6.0), Vec2::new(1.2, 9.0)];
/// assert_eq!(
///     direction_label(&traj, 1.2),
///     vec![Direction::Left, Direction::Straight, Direction::Right]
/// );
/// ```
pub fn direction_label(g_traj: &[Vec2], delta: f64) -> Vec<Direction> {
    assert!(delta > 0.0, "delta must be positive");
    g_traj
        .iter()
        .map(|p| {
            if p.x <= -delta {
                Direction::Left
            } else if p.x >= delta {
                Direction::Right
            } else {
                Direction::Straight
            }
        })
        .collect()
}

/// Mean binary cross-entropy of the K objectness scores against the binary
/// label, with probabilities clamped away from 0 and 1.
pub fn l_spat(tape: &mut Tape, p_a: VarId, y_obj: &[u8]) -> Result<VarId, LossError> {
    let (rows, cols) = tape.shape(p_a);
    if rows * cols != y_obj.len() {
        return Err(LossError::Shape(format!("{} scores vs {} labels", rows * cols, y_obj.len())));
    }
    let y = Tensor::from_vec(rows, cols, y_obj.iter().map(|v| *v as f64).collect());
    let one_minus_y = Tensor::from_vec(rows, cols, y.data.iter().map(|v| 1.0 - v).collect());
    let p = tape.clamp(p_a, PROB_EPS, 1.0 - PROB_EPS);
    let ln_p = tape.ln(p);
    let neg_p = tape.scale(p, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let ln_1mp = tape.ln(one_minus_p);
    let yv = tape.constant(y);
    let ymv = tape.constant(one_minus_y);
    let pos = tape.mul(yv, ln_p);
    let neg = tape.mul(ymv, ln_1mp);
    let s = tape.add(pos, neg);
    let m = tape.mean(s);
    Ok(tape.scale(m, -1.0))
}

/// Closed-form KL between the diagonal Gaussians of each rollout step,
/// KL(posterior || prior), averaged over sectors, channels, and steps.
pub fn l_drm(
    tape: &mut Tape,
    dists: &[(LatentDistribution, LatentDistribution)],
) -> Result<VarId, LossError> {
    assert!(!dists.is_empty(), "need at least one rollout step");
    let mut per_step = Vec::with_capacity(dists.len());
    for (prior, posterior) in dists {
        per_step.push(kl_diag_gaussian(tape, *posterior, *prior));
    }
    let mut acc = per_step[0];
    for s in &per_step[1..] {
        acc = tape.add(acc, *s);
    }
    Ok(tape.scale(acc, 1.0 / dists.len() as f64))
}

/// Mean over dimensions of
/// ln(sigma_p / sigma_q) + (sigma_q^2 + (mu_q - mu_p)^2) / (2 sigma_p^2) - 1/2.
fn kl_diag_gaussian(tape: &mut Tape, q: LatentDistribution, p: LatentDistribution) -> VarId {
    let ln_sp = tape.ln(p.scale);
    let ln_sq = tape.ln(q.scale);
    let log_ratio = tape.sub(ln_sp, ln_sq);
    let sq2 = tape.mul(q.scale, q.scale);
    let dmu = tape.sub(q.mean, p.mean);
    let dmu2 = tape.mul(dmu, dmu);
    let num = tape.add(sq2, dmu2);
    let sp2 = tape.mul(p.scale, p.scale);
    let sp2x2 = tape.scale(sp2, 2.0);
    let frac = tape.div(num, sp2x2);
    let sum = tape.add(log_ratio, frac);
    let shifted = tape.add_scalar(sum, -0.5);
    tape.mean(shifted)
}

/// Mean absolute error over all T x 2 waypoint coordinates.
pub fn l_imi(tape: &mut Tape, p_traj: VarId, g_traj: &[Vec2]) -> Result<VarId, LossError> {
    let (rows, cols) = tape.shape(p_traj);
    if rows != g_traj.len() || cols != 2 {
        return Err(LossError::Shape(format!(
            "prediction {rows}x{cols} vs ground truth {}x2",
            g_traj.len()
        )));
    }
    let g = Tensor::from_vec(rows, 2, g_traj.iter().flat_map(|p| [p.x, p.y]).collect());
    let gv = tape.constant(g);
    let d = tape.sub(p_traj, gv);
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Mean negative log-probability of the true direction class over T steps.
pub fn l_dir(tape: &mut Tape, p_dir: VarId, labels: &[Direction]) -> Result<VarId, LossError> {
    let (rows, cols) = tape.shape(p_dir);
    if rows != labels.len() || cols != 3 {
        return Err(LossError::Shape(format!(
            "prediction {rows}x{cols} vs {} labels",
            labels.len()
        )));
    }
    let mut onehot = Tensor::zeros(rows, 3);
    for (t, label) in labels.iter().enumerate() {
        onehot.set(t, label.index(), 1.0);
    }
    let p = tape.clamp(p_dir, PROB_EPS, 1.0);
    let ln_p = tape.ln(p);
    let y = tape.constant(onehot);
    let picked = tape.mul(y, ln_p);
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / rows as f64))
}

/// Directional consistency: augmented predictions are rotated back to the
/// base orientation and compared with the unrotated prediction under L1,
/// normalized by T * |R|. The base prediction acts as the teacher: gradients
/// flow only into the augmented branches, which keeps the regularizer from
/// dragging the unrotated output toward the rotation-invariant fixed point
/// before imitation has converged.
pub fn l_cons(
    tape: &mut Tape,
    base: VarId,
    augmented: &[(u32, VarId)],
) -> Result<VarId, LossError> {
    let (t_steps, cols) = tape.shape(base);
    if cols != 2 {
        return Err(LossError::Shape(format!("base trajectory is {t_steps}x{cols}")));
    }
    if augmented.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let base_value = tape.val(base).clone();
    let base_teacher = tape.constant(base_value);
    let mut acc: Option<VarId> = None;
    for (r, pred) in augmented {
        let m = inverse_rotation_matrix(*r)?;
        let mv = tape.constant(m);
        let back = tape.matmul(*pred, mv);
        let d = tape.sub(back, base_teacher);
        let a = tape.abs(d);
        let s = tape.sum(a);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, s),
            None => s,
        });
    }
    let total = acc.expect("non-empty augmented set");
    Ok(tape.scale(total, 1.0 / (t_steps as f64 * augmented.len() as f64)))
}

/// Row-vector rotation matrix undoing a counterclockwise rotation by r.
fn inverse_rotation_matrix(r: u32) -> Result<Tensor, LossError> {
    // Row-vector convention: p_back = p @ M, with M the ccw rotation by -r.
    let m = match r {
        90 => [0.0, -1.0, 1.0, 0.0],
        180 => [-1.0, 0.0, 0.0, -1.0],
        270 => [0.0, 1.0, -1.0, 0.0],
        other => return Err(LossError::MissingRotation(other)),
    };
    Ok(Tensor::from_vec(2, 2, m.to_vec()))
}

/// On-tape components of one step, prior to weighting.
pub struct LossTerms {
    pub spat: Option<VarId>,
    pub drm: Option<VarId>,
    pub imi: VarId,
    pub dir: Option<VarId>,
    pub cons: Option<VarId>,
}

/// Weighted total per the overall objective; disabled components contribute
/// exactly zero and no gradient. Returns the scalar tape node and the report.
pub fn total_loss(
    tape: &mut Tape,
    terms: &LossTerms,
    weights: &LossWeights,
) -> Result<(VarId, LossReport), LossError> {
    let value = |tape: &Tape, v: &Option<VarId>| v.map(|id| tape.val(id).item()).unwrap_or(0.0);
    let report_partial = LossReport {
        l_spat: value(tape, &terms.spat),
        l_drm: value(tape, &terms.drm),
        l_imi: tape.val(terms.imi).item(),
        l_dir: value(tape, &terms.dir),
        l_cons: value(tape, &terms.cons),
        total: 0.0,
        weights: *weights,
    };
    for (name, v) in [
        ("l_spat", report_partial.l_spat),
        ("l_drm", report_partial.l_drm),
        ("l_imi", report_partial.l_imi),
        ("l_dir", report_partial.l_dir),
        ("l_cons", report_partial.l_cons),
    ] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    let mut acc = tape.scale(terms.imi, weights.imi);
    let add_weighted = |tape: &mut Tape, acc: VarId, term: &Option<VarId>, w: f64| match term {
        Some(id) if w != 0.0 => {
            let scaled = tape.scale(*id, w);
            tape.add(acc, scaled)
        }
        _ => acc,
    };
    acc = add_weighted(tape, acc, &terms.spat, weights.spat);
    acc = add_weighted(tape, acc, &terms.drm, weights.drm);
    acc = add_weighted(tape, acc, &terms.dir, weights.dir);
    acc = add_weighted(tape, acc, &terms.cons, weights.cons);
    let total = weights.spat * report_partial.l_spat
        + weights.drm * report_partial.l_drm
        + weights.imi * report_partial.l_imi
        + weights.dir * report_partial.l_dir
        + weights.cons * report_partial.l_cons;
    let report = LossReport { total, ..report_partial };
    Ok((acc, report))
}

// Value-level helpers: evaluate the tape builders on a scratch tape.

pub fn l_imi_value(p_traj: &[Vec2], g_traj: &[Vec2]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_vec(
        p_traj.len(),
        2,
        p_traj.iter().flat_map(|p| [p.x, p.y]).collect(),
    ));
    let id = l_imi(&mut tape, p, g_traj).expect("shape-checked");
    tape.val(id).item()
}

pub fn l_spat_value(scores: &[f64], y_obj: &[u8]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_vec(scores.len(), 1, scores.to_vec()));
    let id = l_spat(&mut tape, p, y_obj).expect("shape-checked");
    tape.val(id).item()
}

pub fn l_dir_value(p_dir: &[[f64; 3]], labels: &[Direction]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_vec(
        p_dir.len(),
        3,
        p_dir.iter().flatten().copied().collect(),
    ));
    let id = l_dir(&mut tape, p, labels).expect("shape-checked");
    tape.val(id).item()
}

pub fn l_cons_value(base: &[Vec2], augmented: &[(u32, Vec<Vec2>)]) -> f64 {
    let mut tape = Tape::new();
    let b = tape.constant(Tensor::from_vec(
        base.len(),
        2,
        base.iter().flat_map(|p| [p.x, p.y]).collect(),
    ));
    let aug: Vec<(u32, VarId)> = augmented
        .iter()
        .map(|(r, t)| {
            let v = tape.constant(Tensor::from_vec(
                t.len(),
                2,
                t.iter().flat_map(|p| [p.x, p.y]).collect(),
            ));
            (*r, v)
        })
        .collect();
    let id = l_cons(&mut tape, b, &aug).expect("shape-checked");
    tape.val(id).item()
}

/// Closed-form KL for plain mean/scale arrays, via the same tape builder.
pub fn l_drm_value(steps: &[(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)]) -> Result<f64, LossError> {
    // Each tuple: (mu_q, sigma_q, mu_p, sigma_p), flattened K*C.
    let mut tape = Tape::new();
    let mut dists = Vec::new();
    for (mu_q, sigma_q, mu_p, sigma_p) in steps {
        if sigma_q.iter().chain(sigma_p).any(|s| *s <= 0.0) {
            return Err(LossError::NonPositiveScale);
        }
        let n = mu_q.len();
        let q = LatentDistribution {
            mean: tape.constant(Tensor::from_vec(1, n, mu_q.clone())),
            scale: tape.constant(Tensor::from_vec(1, n, sigma_q.clone())),
        };
        let p = LatentDistribution {
            mean: tape.constant(Tensor::from_vec(1, n, mu_p.clone())),
            scale: tape.constant(Tensor::from_vec(1, n, sigma_p.clone())),
        };
        dists.push((p, q));
    }
    let id = l_drm(&mut tape, &dists)?;
    Ok(tape.val(id).item())
}
