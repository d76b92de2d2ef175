//! Scratch probe: held-out L2 of each loss variant as training progresses.

use sectordrive::eval::{ablation_variants, evaluate_open_loop};
use sectordrive::scenario::generate_scene;
use sectordrive::train::{fit, TrainConfig};

fn main() {
    let mut base = TrainConfig::default();
    let args: Vec<String> = std::env::args().collect();
    for kv in &args[1..] {
        let (k, v) = kv.split_once('=').unwrap();
        base.set(k, v).unwrap();
    }
    let scfg = sectordrive_scfg(&base);
    let train_set: Vec<_> =
        (0..base.scenes as u64).map(|s| generate_scene(&scfg, 1000 + s).unwrap()).collect();
    let eval_set: Vec<_> =
        (0..64u64).map(|s| generate_scene(&scfg, 900_000 + s).unwrap()).collect();
    let blocks: usize = std::env::var("BLOCKS").ok().and_then(|v| v.parse().ok()).unwrap_or(8);
    let per_block = base.epochs;
    let only = std::env::var("ONLY").ok();
    for (name, variant) in ablation_variants(&base) {
        if let Some(o) = &only {
            if &name != o {
                continue;
            }
        }
        let mut cfg = variant.clone();
        cfg.epochs = per_block;
        let dir = std::env::temp_dir().join(format!("trend_{name}"));
        let mut model = None;
        print!("{name:16}");
        let t0 = std::time::Instant::now();
        for _ in 0..blocks {
            let r = fit(&train_set, &cfg, &dir, model.take()).unwrap();
            let (report, _) = evaluate_open_loop(&r.model, &eval_set, &cfg).unwrap();
            print!(" {:.3}", report.l2_noavg.avg);
            model = Some(r.model);
        }
        println!("  [{:.0}s]", t0.elapsed().as_secs_f64());
    }
}

fn sectordrive_scfg(c: &TrainConfig) -> sectordrive::scenario::ScenarioConfig {
    sectordrive::scenario::ScenarioConfig {
        horizon: c.horizon,
        confidence_threshold: c.roi_confidence_threshold,
        rule_filter: c.rule_filter,
        obstacle_rate: c.obstacle_rate,
        ..Default::default()
    }
}
