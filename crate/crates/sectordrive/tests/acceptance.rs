//! Acceptance gate: one pass/fail line per criterion, all checked in a
//! single test so the full report always prints together.
//!
//! The expensive criteria (the ablation trend and the closed-loop harness)
//! train real models and dominate the runtime; run this suite with an
//! optimized profile.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sectordrive::bevgeo::{
    build_partition, mask_to_angular_label, project_rois_to_mask, rot_back, rotate_grid,
    rotate_traj, sector_count, sector_index, BevGrid, ObjectMask, SAMPLING_HEIGHTS,
};
use sectordrive::eval::{
    ablation_variants, closed_loop_suite, evaluate_open_loop, l2_noavg, l2_temavg, median, Policy,
};
use sectordrive::geom::Vec2;
use sectordrive::losses::{
    direction_label, l_cons, l_cons_value, l_dir, l_drm, l_drm_value, l_imi, l_spat, total_loss,
    Direction, LossTerms, LossWeights,
};
use sectordrive::model::{DriveModel, ModelConfig};
use sectordrive::netcore::{grad_check, ParamVault, Tape, VarId};
use sectordrive::scenario::{generate_scene, Camera, Roi, Scene, ScenarioConfig};
use sectordrive::train::{build_sample, fit, TrainConfig};

struct Outcome {
    label: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(label: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { label, pass, detail }
}

#[test]
fn acceptance() {
    let mut outcomes = vec![
        criterion_01_label_oracle(),
        criterion_02_rotation_suite(),
        criterion_03_gradient_check(),
        criterion_04_kl_correctness(),
        criterion_05_consistency_contract(),
        criterion_06_protocol_units(),
    ];
    let (c7, c8) = criteria_07_08_training();
    outcomes.push(c7);
    outcomes.push(c8);
    outcomes.push(criterion_09_determinism());
    outcomes.push(criterion_10_direction_rule());

    let mut all_pass = true;
    for o in &outcomes {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{}: {verdict} ({})", o.label, o.detail);
        all_pass &= o.pass;
    }
    assert!(
        all_pass,
        "failed criteria: {}",
        outcomes
            .iter()
            .filter(|o| !o.pass)
            .map(|o| o.label)
            .collect::<Vec<_>>()
            .join(", ")
    );
}

// ---------------------------------------------------------------------------
// 1. Label generation vs naive exhaustive oracles.

/// Straightforward re-derivation of the object mask: outer loop over ROIs,
/// marking every cell whose center projects into the box at any height.
fn naive_mask(rois: &[Roi], cameras: &[Camera], grid: BevGrid, heights: &[f64]) -> Vec<u8> {
    let mut values = vec![0u8; grid.cells()];
    for roi in rois {
        let camera = cameras
            .iter()
            .find(|c| c.id == roi.camera_id)
            .expect("every detection names a real camera");
        for row in 0..grid.height {
            for col in 0..grid.width {
                for &z in heights {
                    if let Some((u, v, _)) = camera.project(grid.cell_center(row, col), z) {
                        if u >= roi.x_min && u <= roi.x_max && v >= roi.y_min && v <= roi.y_max {
                            values[row * grid.width + col] = 1;
                        }
                    }
                }
            }
        }
    }
    values
}

/// Straightforward re-derivation of the angular label: for each sector,
/// scan every cell and test its center's sector membership from scratch.
fn naive_label(mask: &[u8], grid: BevGrid, theta_deg: f64) -> Vec<u8> {
    let k = sector_count(theta_deg).unwrap();
    (0..k)
        .map(|sector| {
            let mut hit = 0u8;
            for row in 0..grid.height {
                for col in 0..grid.width {
                    if mask[row * grid.width + col] != 0
                        && sector_index(grid.cell_center(row, col), theta_deg).unwrap() == sector
                    {
                        hit = 1;
                    }
                }
            }
            hit
        })
        .collect()
}

fn criterion_01_label_oracle() -> Outcome {
    let t0 = Instant::now();
    let grid = BevGrid::new(12, 12, 2.5);
    let thetas = [4.0, 6.0, 10.0];
    let partitions: Vec<_> =
        thetas.iter().map(|&t| build_partition(grid, t).unwrap()).collect();
    let scfg = ScenarioConfig::default();
    let scenes = 510usize;
    for i in 0..scenes {
        let scene = match generate_scene(&scfg, 40_000 + i as u64) {
            Ok(s) => s,
            Err(e) => return outcome("criterion 01 label oracle", false, format!("scene: {e}")),
        };
        let frame = 1 + i % 3;
        let rois = &scene.rois[frame];
        let mask = project_rois_to_mask(rois, &scene.cameras, grid, &SAMPLING_HEIGHTS);
        let expected = naive_mask(rois, &scene.cameras, grid, &SAMPLING_HEIGHTS);
        if mask.values != expected {
            return outcome(
                "criterion 01 label oracle",
                false,
                format!("mask mismatch on scene {i}"),
            );
        }
        for (theta, partition) in thetas.iter().zip(&partitions) {
            let label = mask_to_angular_label(&mask, partition).unwrap();
            if label.values != naive_label(&mask.values, grid, *theta) {
                return outcome(
                    "criterion 01 label oracle",
                    false,
                    format!("label mismatch on scene {i} at theta {theta}"),
                );
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        "criterion 01 label oracle",
        secs < 120.0,
        format!("{scenes} scenes x 3 partition angles, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------------------
// 2. Rotation suite.

fn criterion_02_rotation_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..300 {
        let len = rng.gen_range(1..8);
        let traj: Vec<Vec2> = (0..len)
            .map(|_| Vec2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)))
            .collect();
        for r in [90u32, 180, 270] {
            let back = rot_back(&rotate_traj(&traj, r).unwrap(), r).unwrap();
            let bit_exact = back
                .iter()
                .zip(&traj)
                .all(|(a, b)| a.x.to_bits() == b.x.to_bits() && a.y.to_bits() == b.y.to_bits());
            if !bit_exact {
                return outcome(
                    "criterion 02 rotation suite",
                    false,
                    format!("round trip not bit-exact (case {case}, r {r})"),
                );
            }
        }
    }

    // Quarter-turn label shift at a 6-degree partition (60 sectors). Sector
    // indices run clockwise, so a counterclockwise quarter turn moves sector
    // i to (i + 60 - 15) % 60.
    let grid = BevGrid::new(20, 20, 2.0);
    let partition = build_partition(grid, 6.0).unwrap();
    let k = partition.k;
    for case in 0..100 {
        let values: Vec<u8> =
            (0..grid.cells()).map(|_| u8::from(rng.gen_bool(0.1))).collect();
        let mask = ObjectMask { grid, values: values.clone() };
        let label = mask_to_angular_label(&mask, &partition).unwrap();
        let rotated = ObjectMask {
            grid,
            values: rotate_grid(&values, grid.height, grid.width, 90).unwrap(),
        };
        let rotated_label = mask_to_angular_label(&rotated, &partition).unwrap();
        for i in 0..k {
            if rotated_label.values[(i + k - 15) % k] != label.values[i] {
                return outcome(
                    "criterion 02 rotation suite",
                    false,
                    format!("label shift mismatch at sector {i} (case {case})"),
                );
            }
        }
    }
    outcome(
        "criterion 02 rotation suite",
        true,
        "300 bit-exact round trips, 100 masks with exact 15-index shifts".into(),
    )
}

// ---------------------------------------------------------------------------
// 3. Full-model gradient check.

fn clone_vault(v: &ParamVault) -> ParamVault {
    let mut out = ParamVault::new();
    for slot in 0..v.len() {
        out.add(v.name(slot), v.value(slot).clone());
    }
    out
}

fn criterion_03_gradient_check() -> Outcome {
    let t0 = Instant::now();
    // 4 x 8 cells at a 30-degree partition: 12 sectors, at most 4 cells each.
    let grid = BevGrid::new(4, 8, 2.0);
    let partition = build_partition(grid, 30.0).unwrap();
    if partition.k != 12 || partition.n != 4 {
        return outcome(
            "criterion 03 gradient check",
            false,
            format!("partition is K={} N={}, wanted K=12 N=4", partition.k, partition.n),
        );
    }
    let mut tcfg = TrainConfig::default();
    tcfg.theta_deg = 30.0;
    tcfg.channels = 8;
    tcfg.horizon = 3;
    let mut scfg = ScenarioConfig::default();
    scfg.horizon = 3;
    let scene = generate_scene(&scfg, 11).unwrap();
    let sample = build_sample(&scene, 2, &partition, &tcfg).unwrap();
    let rasters = sectordrive::model::planes_to_tensor(&sample.planes);
    let mcfg = ModelConfig {
        grid,
        theta_deg: 30.0,
        channels: 8,
        horizon: 3,
        use_ego_status: true,
    };
    let mut model = DriveModel::new(mcfg.clone(), 3);
    let weights = LossWeights { spat: 2.0, drm: 0.1, imi: 1.0, dir: 2.0, cons: 1.0 };

    let build = |tape: &mut Tape, model: &DriveModel| -> VarId {
        let out = model
            .forward(tape, &rasters, &partition, sample.command, Some(sample.ego_status))
            .unwrap();
        // A second forward of the same inputs plays the rotated view: the
        // consistency term's graph is identical either way, and the check
        // only cares about derivative propagation.
        let out_aug = model
            .forward(tape, &rasters, &partition, sample.command, Some(sample.ego_status))
            .unwrap();
        let terms = LossTerms {
            spat: Some(l_spat(tape, out.p_a, &sample.y_obj).unwrap()),
            drm: Some(l_drm(tape, &out.dists).unwrap()),
            imi: l_imi(tape, out.p_traj, &sample.g_traj).unwrap(),
            dir: Some(l_dir(tape, out.p_dir, &sample.y_dir).unwrap()),
            cons: Some(l_cons(tape, out.p_traj, &[(90, out_aug.p_traj)]).unwrap()),
        };
        total_loss(tape, &terms, &weights).unwrap().0
    };

    let mcfg2 = mcfg.clone();
    let report = grad_check(
        &mut model.vault,
        1e-5,
        |v| {
            let probe = DriveModel::from_vault(mcfg.clone(), clone_vault(v)).unwrap();
            let mut tape = Tape::new();
            let id = build(&mut tape, &probe);
            tape.val(id).item()
        },
        |v| {
            let probe = DriveModel::from_vault(mcfg2.clone(), clone_vault(v)).unwrap();
            let mut tape = Tape::new();
            let id = build(&mut tape, &probe);
            let grads = tape.backward(id)?;
            v.zero_grads();
            v.accumulate(&grads);
            Ok(tape.val(id).item())
        },
    );
    let secs = t0.elapsed().as_secs_f64();
    match report {
        Ok(r) => outcome(
            "criterion 03 gradient check",
            r.max_rel_err < 1e-4 && secs < 300.0,
            format!("max rel err {:.2e} at {}, {secs:.1}s", r.max_rel_err, r.worst_param),
        ),
        Err(e) => outcome("criterion 03 gradient check", false, format!("{e}")),
    }
}

// ---------------------------------------------------------------------------
// 4. KL correctness.

fn criterion_04_kl_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dims = 6usize;
    let draw = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
        let mu: Vec<f64> = (0..dims).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let sigma: Vec<f64> = (0..dims).map(|_| rng.gen_range(0.1..2.5)).collect();
        (mu, sigma)
    };
    let mut min_kl = f64::INFINITY;
    for _ in 0..10_000 {
        let (mu_q, sig_q) = draw(&mut rng);
        let (mu_p, sig_p) = draw(&mut rng);
        let kl = l_drm_value(&[(mu_q, sig_q, mu_p, sig_p)]).unwrap();
        min_kl = min_kl.min(kl);
        if kl < 0.0 {
            return outcome("criterion 04 kl correctness", false, format!("negative KL {kl}"));
        }
    }
    for _ in 0..50 {
        let (mu, sigma) = draw(&mut rng);
        let kl = l_drm_value(&[(mu.clone(), sigma.clone(), mu, sigma)]).unwrap();
        if kl != 0.0 {
            return outcome(
                "criterion 04 kl correctness",
                false,
                format!("KL at equality is {kl}, not 0"),
            );
        }
    }

    // Monte-Carlo cross-check: KL(q || p) = E_{x~q}[ln q(x) - ln p(x)],
    // averaged over dimensions to match the closed form's mean.
    let mc_dims = 4usize;
    let samples = 100_000usize;
    let mut worst_rel = 0.0f64;
    for _ in 0..20 {
        let mu_q: Vec<f64> = (0..mc_dims).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sig_q: Vec<f64> = (0..mc_dims).map(|_| rng.gen_range(0.4..1.6)).collect();
        let mu_p: Vec<f64> = (0..mc_dims).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sig_p: Vec<f64> = (0..mc_dims).map(|_| rng.gen_range(0.4..1.6)).collect();
        let closed =
            l_drm_value(&[(mu_q.clone(), sig_q.clone(), mu_p.clone(), sig_p.clone())]).unwrap();
        let mut acc = 0.0f64;
        for _ in 0..samples {
            for d in 0..mc_dims {
                // Box-Muller standard normal.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                let x = mu_q[d] + sig_q[d] * n;
                let ln_q = -((x - mu_q[d]) / sig_q[d]).powi(2) / 2.0 - sig_q[d].ln();
                let ln_p = -((x - mu_p[d]) / sig_p[d]).powi(2) / 2.0 - sig_p[d].ln();
                acc += ln_q - ln_p;
            }
        }
        let mc = acc / (samples * mc_dims) as f64;
        let rel = (mc - closed).abs() / closed.abs().max(1e-9);
        worst_rel = worst_rel.max(rel);
        if rel > 0.02 {
            return outcome(
                "criterion 04 kl correctness",
                false,
                format!("MC {mc:.5} vs closed form {closed:.5}: {:.1}% off", rel * 100.0),
            );
        }
    }
    outcome(
        "criterion 04 kl correctness",
        true,
        format!(
            "10^4 pairs non-negative (min {min_kl:.3}), exact zero at equality, \
             MC within {:.2}% on 20 pairs",
            worst_rel * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Consistency-loss contract.

fn criterion_05_consistency_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..100 {
        let len = rng.gen_range(1..7);
        let base: Vec<Vec2> = (0..len)
            .map(|_| Vec2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)))
            .collect();
        let augmented: Vec<(u32, Vec<Vec2>)> =
            [90u32, 180, 270].iter().map(|&r| (r, rotate_traj(&base, r).unwrap())).collect();
        let v = l_cons_value(&base, &augmented);
        if v != 0.0 {
            return outcome(
                "criterion 05 consistency contract",
                false,
                format!("covariant case {case} gives {v}, not exactly 0"),
            );
        }
    }
    // Hand case A: one waypoint, one 90-degree view. Rotating (-2, 1.5)
    // back gives (1.5, 2.0); against base (1, 2) the total absolute error
    // is 0.5 over one step, so the loss is 0.5.
    let a = l_cons_value(&[Vec2::new(1.0, 2.0)], &[(90, vec![Vec2::new(-2.0, 1.5)])]);
    // Hand case B: two steps at 180 degrees. Back-rotated predictions
    // (1.0, 2.5), (2.0, -1.0) against (1.0, 2.0), (3.0, -1.0): total
    // absolute error 1.5 over 2 steps = 0.75.
    let b = l_cons_value(
        &[Vec2::new(1.0, 2.0), Vec2::new(3.0, -1.0)],
        &[(180, vec![Vec2::new(-1.0, -2.5), Vec2::new(-2.0, 1.0)])],
    );
    let pass = (a - 0.5).abs() < 1e-12 && (b - 0.75).abs() < 1e-12;
    outcome(
        "criterion 05 consistency contract",
        pass,
        format!("100 covariant cases exactly 0; hand cases {a} and {b}"),
    )
}

// ---------------------------------------------------------------------------
// 6. Protocol unit tests.

fn criterion_06_protocol_units() -> Outcome {
    let hand = l2_temavg(&[0.1, 0.2, 0.3, 0.4], 4).unwrap();
    if (hand - 0.25).abs() > 1e-15 {
        return outcome(
            "criterion 06 protocol units",
            false,
            format!("time-averaged hand case gives {hand}"),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..200 {
        let len = rng.gen_range(1..8);
        let p: Vec<Vec2> = (0..len)
            .map(|_| Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect();
        let g: Vec<Vec2> = (0..len)
            .map(|_| Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect();
        let per_step: Vec<f64> = (1..=len).map(|s| l2_noavg(&p, &g, s).unwrap()).collect();
        for s in 1..=len {
            let dx = p[s - 1].x - g[s - 1].x;
            let dy = p[s - 1].y - g[s - 1].y;
            let expected = (dx * dx + dy * dy).sqrt();
            if (per_step[s - 1] - expected).abs() > 1e-15 {
                return outcome(
                    "criterion 06 protocol units",
                    false,
                    format!("per-step value at {s} is {}", per_step[s - 1]),
                );
            }
        }
        // At the first step the two protocols coincide.
        let tem = l2_temavg(&per_step, 1).unwrap();
        if tem != per_step[0] {
            return outcome(
                "criterion 06 protocol units",
                false,
                format!("first-step protocols disagree: {tem} vs {}", per_step[0]),
            );
        }
    }
    outcome(
        "criterion 06 protocol units",
        true,
        "hand case 0.25, per-step identity and first-step agreement on 200 random inputs".into(),
    )
}

// ---------------------------------------------------------------------------
// 7 + 8. Trained-model criteria (shared training runs).

fn fixture_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for (k, v) in [
        ("theta_deg", "30"),
        ("grid_size", "16"),
        ("grid_resolution", "2.0"),
        ("learning_rate", "0.02"),
        ("grad_clip", "10"),
        ("rotations", "180"),
        ("scenes", "256"),
        ("epochs", "56"),
        ("frame_stride", "8"),
        ("obstacle_rate", "0.6"),
        ("w_cons", "0.05"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn scenario_from(cfg: &TrainConfig) -> ScenarioConfig {
    ScenarioConfig {
        horizon: cfg.horizon,
        confidence_threshold: cfg.roi_confidence_threshold,
        rule_filter: cfg.rule_filter,
        obstacle_rate: cfg.obstacle_rate,
        ..ScenarioConfig::default()
    }
}

fn criteria_07_08_training() -> (Outcome, Outcome) {
    let cfg = fixture_config();
    let scfg = scenario_from(&cfg);
    let gen = |seed: u64| generate_scene(&scfg, seed).unwrap();
    let train_set: Vec<Scene> = (0..cfg.scenes as u64).map(|s| gen(1000 + s)).collect();
    let eval_set: Vec<Scene> = (0..64u64).map(|s| gen(900_000 + s)).collect();
    let mut easy = scfg.clone();
    easy.obstacle_rate = 0.0;
    let routes: Vec<Scene> =
        (0..20u64).map(|s| generate_scene(&easy, 500_000 + s).unwrap()).collect();

    let (expert_rc, expert_ds, _) = closed_loop_suite(&Policy::Expert, &routes, &cfg).unwrap();

    let work = tempfile::tempdir().unwrap();
    let mut l2: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut rc: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut ds: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut trend_secs = 0.0f64;
    for (name, variant) in ablation_variants(&cfg) {
        for seed in 0..5u64 {
            let mut run_cfg = variant.clone();
            run_cfg.seed = seed;
            let dir = work.path().join(format!("{name}_{seed}"));
            let t0 = Instant::now();
            let fitted = fit(&train_set, &run_cfg, &dir, None).unwrap();
            let (report, _) = evaluate_open_loop(&fitted.model, &eval_set, &run_cfg).unwrap();
            trend_secs += t0.elapsed().as_secs_f64();
            l2.entry(name.clone()).or_default().push(report.l2_noavg.avg);
            if name != "with_objectness" {
                let (route_rc, route_ds, _) =
                    closed_loop_suite(&Policy::Model(&fitted.model), &routes, &run_cfg).unwrap();
                rc.entry(name.clone()).or_default().push(route_rc);
                ds.entry(name.clone()).or_default().push(route_ds);
            }
        }
    }
    let med = |m: &std::collections::BTreeMap<String, Vec<f64>>, k: &str| median(&m[k]);
    let base_l2 = med(&l2, "imitation_only");
    let spat_l2 = med(&l2, "with_objectness");
    let full_l2 = med(&l2, "full");
    let c7_pass = full_l2 < base_l2 && spat_l2 < base_l2 && trend_secs < 1800.0;
    let c7 = outcome(
        "criterion 07 ablation trend",
        c7_pass,
        format!(
            "median held-out avg L2: baseline {base_l2:.3}, +objectness {spat_l2:.3}, \
             full {full_l2:.3}; {:.0}s training+eval",
            trend_secs
        ),
    );

    let full_rc = med(&rc, "full");
    let full_ds = med(&ds, "full");
    let base_ds = med(&ds, "imitation_only");
    let c8_pass =
        expert_rc >= 100.0 - 1e-9 && expert_ds >= 100.0 - 1e-9 && full_rc >= 80.0 && full_ds > base_ds;
    let c8 = outcome(
        "criterion 08 closed loop",
        c8_pass,
        format!(
            "expert {expert_rc:.1}%/{expert_ds:.1}%; full completion {full_rc:.1}%, \
             median driving score full {full_ds:.1} vs baseline {base_ds:.1}"
        ),
    );
    (c7, c8)
}

// ---------------------------------------------------------------------------
// 9. Determinism end to end through the command-line surface.

fn criterion_09_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.txt");
    std::fs::write(
        &cfg_path,
        "theta_deg = 90\ngrid_size = 8\ngrid_resolution = 2.0\nchannels = 4\n\
         epochs = 1\nscenes = 3\nrotations = 180\nframe_stride = 16\nseed = 9\n",
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let cli = |args: &[&str]| {
        sectordrive::cli::run(
            std::iter::once("sectordrive".to_string()).chain(args.iter().map(|s| s.to_string())),
        )
    };
    let read = |p: &Path| std::fs::read(p).unwrap();

    let mut mismatches = Vec::new();
    let mut halves: Vec<std::path::PathBuf> = Vec::new();
    for run in ["a", "b"] {
        let data = dir.path().join(format!("data_{run}"));
        let train = dir.path().join(format!("train_{run}"));
        let eval = dir.path().join(format!("eval_{run}"));
        let dataset = data.join("dataset.jsonl");
        assert_eq!(cli(&["gen-data", "--config", cfg, "--out", data.to_str().unwrap()]), 0);
        assert_eq!(
            cli(&[
                "train",
                "--config",
                cfg,
                "--data",
                dataset.to_str().unwrap(),
                "--out",
                train.to_str().unwrap(),
            ]),
            0
        );
        assert_eq!(
            cli(&[
                "eval-open",
                "--config",
                cfg,
                "--data",
                dataset.to_str().unwrap(),
                "--checkpoint",
                train.join("checkpoint.bin").to_str().unwrap(),
                "--out",
                eval.to_str().unwrap(),
            ]),
            0
        );
        halves.push(data);
        halves.push(train);
        halves.push(eval);
    }
    for (a, b, file) in [
        (&halves[0], &halves[3], "dataset.jsonl"),
        (&halves[1], &halves[4], "checkpoint.bin"),
        (&halves[1], &halves[4], "train_log.txt"),
        (&halves[2], &halves[5], "open_loop.txt"),
    ] {
        if read(&a.join(file)) != read(&b.join(file)) {
            mismatches.push(file);
        }
    }
    outcome(
        "criterion 09 determinism",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "dataset, checkpoint, training log and report byte-identical across reruns".into()
        } else {
            format!("differs: {mismatches:?}")
        },
    )
}

// ---------------------------------------------------------------------------
// 10. Direction-label rule.

fn criterion_10_direction_rule() -> Outcome {
    let traj =
        vec![Vec2::new(-1.5, 3.0), Vec2::new(0.3, 6.0), Vec2::new(1.2, 9.0)];
    let labels = direction_label(&traj, 1.2);
    let pass = labels == vec![Direction::Left, Direction::Straight, Direction::Right];
    outcome(
        "criterion 10 direction rule",
        pass,
        format!("-1.5/0.3/1.2 m lateral at threshold 1.2 m -> {labels:?}"),
    )
}
