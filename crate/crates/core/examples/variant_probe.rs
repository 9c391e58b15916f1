//! Which student variants can fit thermal data at all?
use mlcmkd_core::data::{generate, GeneratorConfig};
use mlcmkd_core::eval::{evaluate, NormMode};
use mlcmkd_core::hash::derive_seed;
use mlcmkd_core::nn::Variant;
use mlcmkd_core::pipeline::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(256);
    let epochs: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let train = generate(&GeneratorConfig { seed: derive_seed(77, "train"), n, ..Default::default() }).unwrap();
    let val = generate(&GeneratorConfig { seed: derive_seed(77, "val"), n: 64, split: "val".into(), ..Default::default() }).unwrap();
    for variant in [Variant::T, Variant::S] {
        let t0 = Instant::now();
        let mut cfg = StageConfig::new(StageKind::SupervisedThermal, variant, 1);
        cfg.weights.total_epochs = epochs;
        cfg.patience = epochs;
        let out = train_supervised(&cfg, &train, &val).unwrap();
        let train_nme = evaluate(&out.checkpoint.model, &train, NormMode::InterOcular).unwrap().nme;
        let snaps: Vec<String> = [epochs / 4, epochs / 2, 3 * epochs / 4, epochs]
            .iter()
            .filter_map(|&e| out.log.val.iter().find(|r| r.epoch == e).map(|r| format!("{e}:{:.3}", r.val_nme)))
            .collect();
        println!(
            "{:?}: best val {:.4} (epoch {}), train {:.4}, curve [{}], {:.0}s",
            variant,
            out.checkpoint.best_val_nme,
            out.checkpoint.best_epoch,
            train_nme,
            snaps.join(" "),
            t0.elapsed().as_secs_f64()
        );
    }
}
