//! Overfit sanity probe: variant-s student on a 32-sample set.
use mlcmkd_core::data::{generate, GeneratorConfig};
use mlcmkd_core::eval::{evaluate, NormMode};
use mlcmkd_core::nn::Variant;
use mlcmkd_core::pipeline::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: u32 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let train = generate(&GeneratorConfig { seed: 5150, n: 32, ..Default::default() }).unwrap();
    let t0 = Instant::now();
    let mut cfg = StageConfig::new(StageKind::SupervisedThermal, Variant::S, 1);
    cfg.weights.total_epochs = epochs;
    cfg.weights.alpha = 10;
    cfg.patience = epochs; // never early-stop; "validation" is the train set
    let out = train_supervised(&cfg, &train, &train).unwrap();
    for frac in [4u32, 2, 1] {
        let e = epochs / frac;
        if let Some(v) = out.log.val.iter().find(|r| r.epoch == e) {
            println!("epoch {e}: train-as-val NME {:.5}", v.val_nme);
        }
    }
    let train_nme = evaluate(&out.checkpoint.model, &train, NormMode::InterOcular).unwrap().nme;
    println!("best train NME {:.5} at epoch {} ({:.1}s)", train_nme, out.checkpoint.best_epoch, t0.elapsed().as_secs_f64());
}
