//! Network building blocks composed from tape primitives.

use std::rc::Rc;

use rand::Rng;

use super::tape::{Tape, VarId};
use super::tensor::Tensor;
use super::vault::ParamVault;
use super::NetError;

/// Floor added to predicted scales so they stay strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Affine map slots: y = x W + b.
#[derive(Debug, Clone)]
pub struct LinearWeights {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

impl LinearWeights {
    pub fn init<R: Rng>(
        vault: &mut ParamVault,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Self {
        let w = vault.add(&format!("{name}.w"), Tensor::uniform_init(din, dout, din, rng));
        let b = vault.add(&format!("{name}.b"), Tensor::zeros(1, dout));
        LinearWeights { w, b, din, dout }
    }
}

/// y = x W + b over the trailing dimension.
pub fn linear(
    tape: &mut Tape,
    vault: &ParamVault,
    lw: &LinearWeights,
    x: VarId,
) -> Result<VarId, NetError> {
    let (_, cols) = tape.shape(x);
    if cols != lw.din {
        return Err(NetError::Shape {
            op: "linear",
            detail: format!("input width {cols} vs weight fan-in {}", lw.din),
        });
    }
    let w = tape.param(lw.w, vault.value(lw.w).clone());
    let b = tape.param(lw.b, vault.value(lw.b).clone());
    let xw = tape.matmul(x, w);
    Ok(tape.add_row(xw, b))
}

/// Output projection of the attention block.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub proj: LinearWeights,
}

impl AttentionWeights {
    pub fn init<R: Rng>(vault: &mut ParamVault, name: &str, dim: usize, rng: &mut R) -> Self {
        AttentionWeights { proj: LinearWeights::init(vault, &format!("{name}.proj"), dim, dim, rng) }
    }
}

/// Single-head scaled dot-product attention with a key validity mask.
///
/// Softmax runs over valid keys only; invalid keys get exactly zero weight.
/// The output is `query + proj(attention)` so a query with nothing to attend
/// to would pass through unchanged (callers handle that case explicitly since
/// an all-invalid key set is an error here).
pub fn cross_attention(
    tape: &mut Tape,
    vault: &ParamVault,
    aw: &AttentionWeights,
    query: VarId,
    keys: VarId,
    values: VarId,
    valid: Rc<Vec<bool>>,
) -> Result<VarId, NetError> {
    let (qr, qc) = tape.shape(query);
    let (kr, kc) = tape.shape(keys);
    let (vr, vc) = tape.shape(values);
    if qc != kc || kc != vc || kr != vr || kr != valid.len() {
        return Err(NetError::Shape {
            op: "cross_attention",
            detail: format!("q {qr}x{qc}, k {kr}x{kc}, v {vr}x{vc}, mask {}", valid.len()),
        });
    }
    let kt = tape.transpose(keys);
    let logits = tape.matmul(query, kt);
    let scaled = tape.scale(logits, 1.0 / (qc as f64).sqrt());
    let weights = tape.row_softmax_masked(scaled, valid)?;
    let att = tape.matmul(weights, values);
    let projected = linear(tape, vault, &aw.proj, att)?;
    Ok(tape.add(query, projected))
}

/// Softmax weight matrix of the attention alone, for tests.
pub fn attention_weight_matrix(
    tape: &mut Tape,
    query: VarId,
    keys: VarId,
    valid: Rc<Vec<bool>>,
) -> Result<VarId, NetError> {
    let (_, qc) = tape.shape(query);
    let kt = tape.transpose(keys);
    let logits = tape.matmul(query, kt);
    let scaled = tape.scale(logits, 1.0 / (qc as f64).sqrt());
    tape.row_softmax_masked(scaled, valid)
}

/// Gate and candidate maps of the GRU cell, each over [x, h] (width 2C).
#[derive(Debug, Clone)]
pub struct GruWeights {
    pub update: LinearWeights,
    pub reset: LinearWeights,
    pub candidate: LinearWeights,
}

impl GruWeights {
    pub fn init<R: Rng>(vault: &mut ParamVault, name: &str, dim: usize, rng: &mut R) -> Self {
        let update = LinearWeights::init(vault, &format!("{name}.z"), 2 * dim, dim, rng);
        // Start the update gate mostly closed so the state passes through the
        // rollout largely intact; otherwise z ~ 0.5 halves it every step and
        // later steps see exponentially attenuated queries.
        vault.value_mut(update.b).data.fill(-2.0);
        GruWeights {
            update,
            reset: LinearWeights::init(vault, &format!("{name}.r"), 2 * dim, dim, rng),
            candidate: LinearWeights::init(vault, &format!("{name}.h"), 2 * dim, dim, rng),
        }
    }
}

/// Standard reset-before GRU:
/// z = sigmoid(Wz[x,h]+bz), r = sigmoid(Wr[x,h]+br),
/// h~ = tanh(Wh[x, r*h]+bh), h' = (1-z)*h + z*h~.
pub fn gru_step(
    tape: &mut Tape,
    vault: &ParamVault,
    gw: &GruWeights,
    h: VarId,
    x: VarId,
) -> Result<VarId, NetError> {
    let hs = tape.shape(h);
    let xs = tape.shape(x);
    if hs != xs {
        return Err(NetError::Shape {
            op: "gru_step",
            detail: format!("h {hs:?} vs x {xs:?}"),
        });
    }
    let xh = tape.concat_cols(x, h);
    let z_pre = linear(tape, vault, &gw.update, xh)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = linear(tape, vault, &gw.reset, xh)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h);
    let xrh = tape.concat_cols(x, rh);
    let cand_pre = linear(tape, vault, &gw.candidate, xrh)?;
    let cand = tape.tanh(cand_pre);
    // h' = h + z*(h~ - h)
    let delta = tape.sub(cand, h);
    let gated = tape.mul(z, delta);
    Ok(tape.add(h, gated))
}

/// Diagonal Gaussian over the query features, on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LatentDistribution {
    pub mean: VarId,
    pub scale: VarId,
}

/// Mean and scale heads; the scale passes through softplus plus a floor.
#[derive(Debug, Clone)]
pub struct DistributionWeights {
    pub mu: LinearWeights,
    pub sigma: LinearWeights,
}

impl DistributionWeights {
    pub fn init<R: Rng>(vault: &mut ParamVault, name: &str, dim: usize, rng: &mut R) -> Self {
        DistributionWeights {
            mu: LinearWeights::init(vault, &format!("{name}.mu"), dim, dim, rng),
            sigma: LinearWeights::init(vault, &format!("{name}.sigma"), dim, dim, rng),
        }
    }
}

/// mu = linear(q); sigma = softplus(linear(q)) + SIGMA_FLOOR.
pub fn distribution_head(
    tape: &mut Tape,
    vault: &ParamVault,
    dw: &DistributionWeights,
    q: VarId,
) -> Result<LatentDistribution, NetError> {
    let mean = linear(tape, vault, &dw.mu, q)?;
    let sigma_pre = linear(tape, vault, &dw.sigma, q)?;
    let sp = tape.softplus(sigma_pre);
    let scale = tape.add_scalar(sp, SIGMA_FLOOR);
    Ok(LatentDistribution { mean, scale })
}

/// Mean over each group of `group` consecutive rows, counting only valid
/// rows. Groups with no valid rows produce a zero row.
pub fn masked_mean_rows(
    tape: &mut Tape,
    f: VarId,
    valid: &[bool],
    groups: usize,
    group: usize,
) -> VarId {
    let (rows, _) = tape.shape(f);
    assert_eq!(rows, groups * group, "masked_mean_rows shape mismatch");
    assert_eq!(valid.len(), rows);
    let mut pool = Tensor::zeros(groups, rows);
    for k in 0..groups {
        let count = valid[k * group..(k + 1) * group].iter().filter(|v| **v).count();
        if count == 0 {
            continue;
        }
        let w = 1.0 / count as f64;
        for n in 0..group {
            if valid[k * group + n] {
                pool.set(k, k * group + n, w);
            }
        }
    }
    let pool = tape.constant(pool);
    tape.matmul(pool, f)
}
