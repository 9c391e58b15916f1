use mlcmkd_core::data::{generate, GeneratorConfig};
use mlcmkd_core::nn::Variant;
use mlcmkd_core::pipeline::*;
use std::time::Instant;

fn main() {
    let train = generate(&GeneratorConfig { seed: 1, n: 64, ..Default::default() }).unwrap();
    let val = generate(&GeneratorConfig { seed: 2, n: 16, split: "val".into(), ..Default::default() }).unwrap();
    let mut cfg = StageConfig::new(StageKind::SupervisedThermal, Variant::T, 1);
    cfg.weights.total_epochs = 5;
    cfg.weights.alpha = 1;
    let t0 = Instant::now();
    let out = train_supervised(&cfg, &train, &val).unwrap();
    let steps = out.log.rows.len();
    println!("supervised-T: {} steps in {:.2}s = {:.0} ms/step (incl. {} evals)",
        steps, t0.elapsed().as_secs_f64(), t0.elapsed().as_secs_f64() * 1e3 / steps as f64, out.epochs_run);
}
