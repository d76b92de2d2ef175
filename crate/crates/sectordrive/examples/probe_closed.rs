//! Scratch probe: closed-loop route completion and driving score of trained
//! loss variants on easy (obstacle-free) routes.

use sectordrive::eval::{ablation_variants, closed_loop_suite, Policy};
use sectordrive::scenario::generate_scene;
use sectordrive::train::{fit, TrainConfig};

fn main() {
    let mut base = TrainConfig::default();
    let args: Vec<String> = std::env::args().collect();
    for kv in &args[1..] {
        let (k, v) = kv.split_once('=').unwrap();
        base.set(k, v).unwrap();
    }
    let scfg = scenario_cfg(&base);
    let train_set: Vec<_> =
        (0..base.scenes as u64).map(|s| generate_scene(&scfg, 1000 + s).unwrap()).collect();
    let mut easy_cfg = scfg.clone();
    easy_cfg.obstacle_rate = 0.0;
    let routes: Vec<_> =
        (0..20u64).map(|s| generate_scene(&easy_cfg, 500_000 + s).unwrap()).collect();

    let (rc, ds, _) = closed_loop_suite(&Policy::Expert, &routes, &base).unwrap();
    println!("expert           rc={rc:.1} ds={ds:.1}");
    for (name, cfg) in ablation_variants(&base) {
        if name == "with_objectness" {
            continue;
        }
        let dir = std::env::temp_dir().join(format!("closed_{name}"));
        let t0 = std::time::Instant::now();
        let r = fit(&train_set, &cfg, &dir, None).unwrap();
        let (rc, ds, reports) = closed_loop_suite(&Policy::Model(&r.model), &routes, &cfg).unwrap();
        let worst = reports
            .iter()
            .map(|r| r.route_completion_pct)
            .fold(f64::INFINITY, f64::min);
        println!(
            "{name:16} rc={rc:.1} ds={ds:.1} worst_rc={worst:.1}  [{:.0}s]",
            t0.elapsed().as_secs_f64()
        );
    }
}

fn scenario_cfg(c: &TrainConfig) -> sectordrive::scenario::ScenarioConfig {
    sectordrive::scenario::ScenarioConfig {
        horizon: c.horizon,
        confidence_threshold: c.roi_confidence_threshold,
        rule_filter: c.rule_filter,
        obstacle_rate: c.obstacle_rate,
        ..Default::default()
    }
}
