use mlcmkd_core::autograd::Tape;
use mlcmkd_core::data::{batch_rgb, batch_targets, generate, GeneratorConfig};
use mlcmkd_core::losses::keypoint_loss;
use mlcmkd_core::nn::{init_model, BackboneConfig, HeadSpec, Modality, Variant};
use std::time::Instant;

fn main() {
    let ds = generate(&GeneratorConfig { n: 16, seed: 1, ..Default::default() }).unwrap();
    let model = init_model(BackboneConfig::new(Variant::M, Modality::Rgb), HeadSpec::default(), 0).unwrap();
    let refs: Vec<_> = ds.samples.iter().collect();

    for _ in 0..3 {
        let t0 = Instant::now();
        let tape = Tape::new();
        let bm = model.bind(&tape).unwrap();
        let t1 = Instant::now();
        let batch = batch_rgb(&tape, &refs, 64).unwrap();
        let feats = bm.features(&batch).unwrap();
        let t2 = Instant::now();
        let logits = bm.head(&feats).unwrap();
        let t3 = Instant::now();
        let target = batch_targets(&refs, 64, 2).unwrap();
        let loss = keypoint_loss(&target, &logits).unwrap();
        let t4 = Instant::now();
        loss.backward().unwrap();
        let t5 = Instant::now();
        let _g = bm.grads();
        let t6 = Instant::now();
        println!(
            "bind {:5.1}ms | conv fwd {:5.1}ms | head fwd {:5.1}ms | loss {:5.1}ms | backward {:5.1}ms | grads {:5.1}ms | total {:5.1}ms",
            (t1 - t0).as_secs_f64() * 1e3,
            (t2 - t1).as_secs_f64() * 1e3,
            (t3 - t2).as_secs_f64() * 1e3,
            (t4 - t3).as_secs_f64() * 1e3,
            (t5 - t4).as_secs_f64() * 1e3,
            (t6 - t5).as_secs_f64() * 1e3,
            (t6 - t0).as_secs_f64() * 1e3,
        );
    }
}
