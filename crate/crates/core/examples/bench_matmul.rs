use mlcmkd_core::autograd::Tape;
use std::time::Instant;

fn main() {
    // Typical head matmul: (16 x 1024) * (1024 x 1536)
    let (m, k, n) = (16usize, 1024, 1536);
    let a: Vec<f64> = (0..m*k).map(|i| (i as f64 * 0.001).sin()).collect();
    let b: Vec<f64> = (0..k*n).map(|i| (i as f64 * 0.0007).cos()).collect();
    let tape = Tape::new();
    let ta = tape.leaf(a, vec![m, k], true).unwrap();
    let tb = tape.leaf(b, vec![k, n], true).unwrap();
    let start = Instant::now();
    let iters = 30;
    for _ in 0..iters {
        let c = ta.matmul(&tb).unwrap();
        let loss = c.mean().unwrap();
        loss.backward().unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    // fwd mkn + bwd 2*mkn MACs, 2 flops each
    let flops = (iters * 6 * m * k * n) as f64;
    println!("fwd+bwd: {:.1} ms/iter, {:.2} GFLOP/s", dt / iters as f64 * 1e3, flops / dt / 1e9);
}
