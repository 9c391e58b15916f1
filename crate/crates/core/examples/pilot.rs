//! Pilot for the ordering experiments: prints per-arm NMEs + stability.
use mlcmkd_core::data::{generate, GeneratorConfig};
use mlcmkd_core::hash::derive_seed;
use mlcmkd_core::nn::Variant;
use mlcmkd_core::pipeline::*;
use mlcmkd_core::eval::{evaluate, NormMode};
use mlcmkd_core::stability::{stability_metrics, GradNormSeries};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(256);
    let epochs: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let seeds: Vec<u64> = args.get(3).map(|s| s.split(',').map(|x| x.parse().unwrap()).collect()).unwrap_or(vec![1, 2]);
    let teacher_variant = match args.get(4).map(|s| s.as_str()).unwrap_or("s") {
        "m" => Variant::M, "t" => Variant::T, _ => Variant::S };

    let root = 424242u64;
    let train = generate(&GeneratorConfig { seed: derive_seed(root, "data/train"), n: n_train, ..Default::default() }).unwrap();
    let val = generate(&GeneratorConfig { seed: derive_seed(root, "data/val"), n: 128, split: "val".into(), ..Default::default() }).unwrap();

    // teacher
    let t0 = Instant::now();
    let mut tcfg = StageConfig::new(StageKind::TeacherPretrain, teacher_variant, derive_seed(root, "teacher"));
    tcfg.weights.total_epochs = epochs;
    tcfg.patience = epochs;
    tcfg.weights.alpha = 10.min(epochs);
    let teacher = train_supervised(&tcfg, &train, &val).unwrap();
    println!("teacher[{:?}]: val NME {:.4} at epoch {} ({} epochs run, {:.1}s)",
        teacher_variant, teacher.checkpoint.best_val_nme, teacher.checkpoint.best_epoch,
        teacher.epochs_run, t0.elapsed().as_secs_f64());

    let arms: Vec<(&str, StageKind, LossFlags)> = vec![
        ("supervised", StageKind::SupervisedThermal, LossFlags::NONE),
        ("baseline", StageKind::Ktl, LossFlags::CONVENTIONAL),
        ("fi", StageKind::Ktl, LossFlags { fm: true, lg: true, fi: true, ri: false }),
        ("ri", StageKind::Ktl, LossFlags { fm: true, lg: true, fi: false, ri: true }),
        ("ours", StageKind::Ktl, LossFlags::FULL),
    ];
    {
        // modality-isolation diagnostic: same variant T trained on RGB
        let mut cfg = StageConfig::new(StageKind::TeacherPretrain, Variant::T, 999);
        cfg.weights.total_epochs = epochs;
        cfg.weights.alpha = 10.min(epochs);
        let out = train_supervised(&cfg, &train, &val).unwrap();
        println!("diag rgb-T: val NME {:.4} at epoch {}", out.checkpoint.best_val_nme, out.checkpoint.best_epoch);
    }
    println!("arm,seed,val_nme,train_nme,best_epoch,epochs_run,std,cv,msc,r2,secs");
    for (arm, kind, flags) in &arms {
        for &seed in &seeds {
            let t0 = Instant::now();
            let mut cfg = StageConfig::new(*kind, Variant::T, seed);
            cfg.weights.total_epochs = epochs;
            cfg.patience = epochs;
            cfg.weights.alpha = 10.min(epochs);
            cfg.flags = *flags;
            let out = match kind {
                StageKind::SupervisedThermal => train_supervised(&cfg, &train, &val).unwrap(),
                StageKind::Ktl => run_ktl(&teacher.checkpoint, &cfg, &train, &val).unwrap(),
                _ => unreachable!(),
            };
            let gn = out.log.grad_norms();
            let w = gn.len().min(500);
            let st = stability_metrics(&GradNormSeries { values: gn, window_start: 0, window_len: w }, arm, seed).unwrap();
            let train_nme = evaluate(&out.checkpoint.model, &train, NormMode::InterOcular).unwrap().nme;
            let snap: Vec<String> = [25u32, 50, 75, 100].iter().filter_map(|&e| {
                out.log.val.iter().find(|r| r.epoch == e).map(|r| format!("{}:{:.4}", e, r.val_nme))
            }).collect();
            eprintln!("  curve {arm} seed{seed}: {}", snap.join(" "));
            println!("{arm},{seed},{:.5},{:.5},{},{},{:.5},{:.2},{:.5},{:.4},{:.1}",
                out.checkpoint.best_val_nme, train_nme, out.checkpoint.best_epoch, out.epochs_run,
                st.std_dev, st.cv_percent, st.msc, st.r_squared, t0.elapsed().as_secs_f64());
        }
    }
}
