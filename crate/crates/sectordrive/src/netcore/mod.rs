//! Minimal differentiable primitives on a reverse-mode tape.
//!
//! Everything the model needs — linear maps, masked single-head
//! cross-attention, a GRU cell, positive-scale distribution heads — is built
//! from a small set of tensor operations recorded on a [`Tape`]. Gradients are
//! exact reverse-mode derivatives and are validated against central finite
//! differences by [`grad_check`].

mod check;
mod nn;
mod tape;
mod tensor;
mod vault;

pub use check::{grad_check, GradCheckReport};
pub use nn::{
    attention_weight_matrix, cross_attention, distribution_head, gru_step, linear,
    masked_mean_rows, AttentionWeights,
    DistributionWeights, GruWeights, LatentDistribution, LinearWeights, SIGMA_FLOOR,
};
pub use tape::{Tape, VarId};
pub use tensor::Tensor;
pub use vault::{load_checkpoint, save_checkpoint, ParamVault};

use thiserror::Error;

/// Errors from the differentiable core.
#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("attention over an all-invalid key set")]
    EmptyAttention,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, data.to_vec())
    }

    #[test]
    fn matmul_and_transpose_match_hand_result() {
        let a = t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
        assert_eq!(a.transpose().data, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn masked_softmax_frozen_case() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 4, &[2.0, 1.0, -1.0, 0.0]));
        let valid = Rc::new(vec![true, false, true, true]);
        let y = tape.row_softmax_masked(x, valid).unwrap();
        let got = &tape.val(y).data;
        let want = [0.8437947344813395, 0.0, 0.04201006613406605, 0.11419519938459446];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
        let all_invalid = Rc::new(vec![false; 4]);
        assert!(tape.row_softmax_masked(x, all_invalid).is_err());
    }

    #[test]
    fn attention_ignores_invalid_keys_exactly() {
        // Masking keys must equal physically removing those rows.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut vault = ParamVault::new();
        let aw = AttentionWeights::init(&mut vault, "att", 3, &mut rng);
        let q_data = [0.3, -0.2, 0.9];
        let kv_full = [0.1, 0.4, -0.3, 9.0, -9.0, 9.0, 0.2, 0.0, 0.5, -0.6, 0.7, 0.1];
        let kv_kept = [0.1, 0.4, -0.3, 0.2, 0.0, 0.5, -0.6, 0.7, 0.1];

        let mut tape = Tape::new();
        let q = tape.constant(t(1, 3, &q_data));
        let k = tape.constant(t(4, 3, &kv_full));
        let v = tape.constant(t(4, 3, &kv_full));
        let valid = Rc::new(vec![true, false, true, true]);
        let masked = cross_attention(&mut tape, &vault, &aw, q, k, v, valid).unwrap();
        let masked_out = tape.val(masked).data.clone();

        let mut tape = Tape::new();
        let q = tape.constant(t(1, 3, &q_data));
        let k = tape.constant(t(3, 3, &kv_kept));
        let v = tape.constant(t(3, 3, &kv_kept));
        let valid = Rc::new(vec![true; 3]);
        let dense = cross_attention(&mut tape, &vault, &aw, q, k, v, valid).unwrap();
        let dense_out = tape.val(dense).data.clone();

        for (a, b) in masked_out.iter().zip(&dense_out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_sum_to_one_over_valid_keys() {
        let mut tape = Tape::new();
        let q = tape.constant(t(2, 3, &[0.3, -0.2, 0.9, 1.0, 0.0, -1.0]));
        let k = tape.constant(t(4, 3, &[0.1; 12]));
        let valid = Rc::new(vec![true, true, false, true]);
        let w = attention_weight_matrix(&mut tape, q, k, valid).unwrap();
        let w = tape.val(w);
        for r in 0..2 {
            let row: Vec<f64> = (0..4).map(|c| w.at(r, c)).collect();
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(row[2], 0.0);
        }
    }

    #[test]
    fn gru_interpolates_between_state_and_candidate() {
        // With a fully closed update gate h' == h; fully open gives tanh of
        // the candidate path.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vault = ParamVault::new();
        let gw = GruWeights::init(&mut vault, "gru", 2, &mut rng);
        vault.value_mut(gw.update.w).data.fill(0.0);
        vault.value_mut(gw.update.b).data.fill(-1e9);
        let mut tape = Tape::new();
        let h = tape.constant(t(1, 2, &[0.4, -0.7]));
        let x = tape.constant(t(1, 2, &[1.0, 2.0]));
        let out = gru_step(&mut tape, &vault, &gw, h, x).unwrap();
        assert_eq!(tape.val(out).data, vec![0.4, -0.7]);

        vault.value_mut(gw.update.b).data.fill(1e9);
        vault.value_mut(gw.reset.w).data.fill(0.0);
        vault.value_mut(gw.reset.b).data.fill(1e9); // reset open: candidate sees h
        let mut tape = Tape::new();
        let h = tape.constant(t(1, 2, &[0.4, -0.7]));
        let x = tape.constant(t(1, 2, &[1.0, 2.0]));
        let out = gru_step(&mut tape, &vault, &gw, h, x).unwrap();
        // Independent candidate computation: tanh([x, h] Wh + bh).
        let wh = vault.value(gw.candidate.w);
        let bh = vault.value(gw.candidate.b);
        let xin = [1.0, 2.0, 0.4, -0.7];
        for c in 0..2 {
            let pre: f64 =
                (0..4).map(|i| xin[i] * wh.at(i, c)).sum::<f64>() + bh.at(0, c);
            assert!((tape.val(out).at(0, c) - pre.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn distribution_scale_is_strictly_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vault = ParamVault::new();
        let dw = DistributionWeights::init(&mut vault, "d", 4, &mut rng);
        vault.value_mut(dw.sigma.b).data.fill(-40.0); // drive softplus to ~0
        let mut tape = Tape::new();
        let q = tape.constant(t(1, 4, &[0.1, -0.1, 0.2, -0.2]));
        let dist = distribution_head(&mut tape, &vault, &dw, q).unwrap();
        for s in &tape.val(dist.scale).data {
            assert!(*s >= SIGMA_FLOOR);
        }
    }

    #[test]
    fn masked_mean_rows_skips_invalid_and_empty_groups() {
        let mut tape = Tape::new();
        let f = tape.constant(t(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let valid = [true, false, false, false];
        let pooled = masked_mean_rows(&mut tape, f, &valid, 2, 2);
        assert_eq!(tape.val(pooled).data, vec![1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut vault = ParamVault::new();
        vault.add("a.w", Tensor::gaussian_init(3, 4, 0.7, &mut rng));
        vault.add("a.b", Tensor::from_vec(1, 4, vec![f64::MIN_POSITIVE, -0.0, 1e300, 2.5]));
        save_checkpoint(&vault, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for slot in 0..2 {
            assert_eq!(loaded.name(slot), vault.name(slot));
            let (a, b) = (loaded.value(slot), vault.value(slot));
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(load_checkpoint(&dir.path().join("missing.bin")).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_through_all_blocks() {
        // One composite graph exercising linear, attention, GRU, distribution
        // heads, softmax masking, abs, clamp, concat, slice, and gather.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut vault = ParamVault::new();
        let aw = AttentionWeights::init(&mut vault, "att", 3, &mut rng);
        let gw = GruWeights::init(&mut vault, "gru", 3, &mut rng);
        let dw = DistributionWeights::init(&mut vault, "dist", 3, &mut rng);
        let head = LinearWeights::init(&mut vault, "head", 3, 2, &mut rng);

        let build = |tape: &mut Tape, vault: &ParamVault| -> Result<VarId, NetError> {
            let q = tape.constant(t(2, 3, &[0.3, -0.4, 0.2, 0.8, 0.1, -0.6]));
            let kv = tape.constant(t(
                4,
                3,
                &[0.5, -0.2, 0.1, 0.3, 0.9, -0.7, -0.1, 0.2, 0.6, 0.4, -0.5, 0.3],
            ));
            let valid = Rc::new(vec![true, true, false, true]);
            let att = cross_attention(tape, vault, &aw, q, kv, kv, valid)?;
            let h0 = tape.constant(t(2, 3, &[0.1, 0.2, -0.1, -0.2, 0.3, 0.0]));
            let h1 = gru_step(tape, vault, &gw, h0, att)?;
            let dist = distribution_head(tape, vault, &dw, h1)?;
            let gathered =
                tape.gather_rows(dist.mean, Rc::new(vec![Some(1), None, Some(0)]));
            let joined = tape.concat_rows(&[gathered, dist.scale]);
            let sliced = tape.slice_rows(joined, 1, 4);
            let out = linear(tape, vault, &head, sliced)?;
            let capped = tape.clamp(out, -0.8, 0.8);
            let mag = tape.abs(capped);
            Ok(tape.mean(mag))
        };

        let report = grad_check(
            &mut vault,
            1e-5,
            |v| {
                let mut tape = Tape::new();
                let id = build(&mut tape, v).unwrap();
                tape.val(id).item()
            },
            |v| {
                let mut tape = Tape::new();
                let id = build(&mut tape, v)?;
                let grads = tape.backward(id)?;
                v.zero_grads();
                v.accumulate(&grads);
                Ok(tape.val(id).item())
            },
        )
        .unwrap();
        assert!(
            report.passes(1e-5),
            "worst {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }

    #[test]
    fn shape_errors_are_reported_not_panicked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vault = ParamVault::new();
        let lw = LinearWeights::init(&mut vault, "l", 3, 2, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 4, &[0.0; 4]));
        assert!(linear(&mut tape, &vault, &lw, x).is_err());
        let gw = GruWeights::init(&mut vault, "g", 2, &mut rng);
        let h = tape.constant(t(1, 2, &[0.0; 2]));
        let x3 = tape.constant(t(1, 3, &[0.0; 3]));
        assert!(gru_step(&mut tape, &vault, &gw, h, x3).is_err());
    }
}
