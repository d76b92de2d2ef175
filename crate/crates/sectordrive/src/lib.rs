//! Sector-partitioned bird's-eye-view perception with a dreaming decoder and
//! direction-aware planning, trained and evaluated on a procedurally generated
//! synthetic driving world.
//!
//! The crate is organized around the data flow of the method:
//!
//! * [`scenario`] — synthetic scenes, expert trajectories, commands, and noisy
//!   2D ROI detections standing in for a real dataset and open-set detector.
//! * [`bevgeo`] — BEV grid, angular sector partition, ROI-to-mask projection,
//!   angular objectness labels, and exact 90-degree rotations.
//! * [`netcore`] — minimal differentiable primitives (linear, masked
//!   cross-attention, GRU, distribution heads) on a reverse-mode tape, with a
//!   finite-difference gradient checker.
//! * [`model`] — the network: scene encoder, angular perception, dreaming
//!   rollout, and the planning/direction heads.
//! * [`losses`] — spatial BCE, dreaming KL, imitation L1, direction CE,
//!   directional consistency, and the weighted total.
//! * [`train`] — directional augmentation, the training loop, checkpointing,
//!   and the ablation harness.
//! * [`eval`] — open-loop metrics (L2 under both protocols, collision and
//!   intersection rates, per-command splits, objectness PR/ROC) and the
//!   closed-loop driving harness.
//! * [`cli`] — the `sectordrive` command-line entry point.

pub mod bevgeo;
pub mod cli;
pub mod eval;
pub mod geom;
pub mod losses;
pub mod model;
pub mod netcore;
pub mod scenario;
pub mod train;
