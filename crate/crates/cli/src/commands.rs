//! Command implementations.
//!
//! Every command writes a `run.json` provenance record and embeds the
//! resolved config digest in its artifacts: CSVs carry a leading
//! `# config_digest=<hex>` comment, checkpoints carry the digest in their
//! metadata, dataset directories carry it in `run.json`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use mlcmkd_core::config::RunConfig;
use mlcmkd_core::data::{generate, Dataset};
use mlcmkd_core::error::{Error, Result};
use mlcmkd_core::eval::{compare_arms, evaluate, ArmResult, NormMode, Order, OrderingCheck};
use mlcmkd_core::hash::derive_seed;
use mlcmkd_core::pipeline::{
    run_stage_for_kind, Checkpoint, LogRow, StageKind, TrainEvent,
};
use mlcmkd_core::stability::{stability_compare, stability_metrics, GradNormSeries, StabilityReport};

fn load_config(path: &str, seed_override: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
        cfg.finish();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_run_meta(dir: &Path, command: &str, digest: &str, extra: serde_json::Value) -> Result<()> {
    let meta = serde_json::json!({
        "command": command,
        "config_digest": digest,
        "extra": extra,
    });
    write_text(&dir.join("run.json"), &serde_json::to_string_pretty(&meta)?)
}

fn csv_with_digest(digest: &str, body: &str) -> String {
    format!("# config_digest={digest}\n{body}")
}

/// Datasets for a run: loaded from referenced directories when the config
/// names them, generated in memory otherwise.
fn resolve_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let train = match &cfg.train_dir {
        Some(dir) => Dataset::load(Path::new(dir))?,
        None => generate(&cfg.data)?,
    };
    let val = match &cfg.val_dir {
        Some(dir) => Dataset::load(Path::new(dir))?,
        None => generate(&cfg.val_data())?,
    };
    Ok((train, val))
}

pub fn gen_data(config: &str, out: &str, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let out = Path::new(out);
    let train = generate(&cfg.data)?;
    let val = generate(&cfg.val_data())?;
    train.save(&out.join("train"))?;
    val.save(&out.join("val"))?;
    write_text(&out.join("config_resolved.txt"), &cfg.canonical())?;
    write_run_meta(
        out,
        "gen-data",
        &cfg.digest(),
        serde_json::json!({
            "seed": cfg.seed,
            "n_train": train.samples.len(),
            "n_val": val.samples.len(),
            "train_digest": format!("{:016x}", train.digest()),
            "val_digest": format!("{:016x}", val.digest()),
        }),
    )?;
    println!(
        "gen-data: {} train + {} val samples at {} px (digest {})",
        train.samples.len(),
        val.samples.len(),
        cfg.data.resolution,
        cfg.digest()
    );
    Ok(())
}

pub fn train(config: &str, out: &str, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    if !cfg.stage_kind_set {
        return Err(Error::config("missing required key 'stage.kind'"));
    }
    let out = Path::new(out);
    fs::create_dir_all(out)?;
    let digest = cfg.digest();

    let teacher = match cfg.stage.kind {
        StageKind::Ktl | StageKind::Mcl => {
            let path = cfg.stage.teacher_path.as_ref().ok_or_else(|| {
                Error::config(format!(
                    "stage.kind = {} requires 'stage.teacher'",
                    cfg.stage.kind.name()
                ))
            })?;
            Some(Checkpoint::load(Path::new(path))?)
        }
        _ => None,
    };
    let (train_ds, val_ds) = resolve_data(&cfg)?;

    // Streamed logs so a diverging run still leaves partial CSVs behind.
    let mut train_log = std::io::BufWriter::new(fs::File::create(out.join("train_log.csv"))?);
    let mut grad_log = std::io::BufWriter::new(fs::File::create(out.join("grad_norms.csv"))?);
    let mut val_log = std::io::BufWriter::new(fs::File::create(out.join("val_log.csv"))?);
    writeln!(train_log, "# config_digest={digest}")?;
    writeln!(train_log, "{}", LogRow::csv_header())?;
    writeln!(grad_log, "# config_digest={digest}")?;
    writeln!(grad_log, "step,grad_norm")?;
    writeln!(val_log, "# config_digest={digest}")?;
    writeln!(val_log, "epoch,val_nme,improved")?;

    let result = run_stage_for_kind(&cfg.stage, teacher.as_ref(), &train_ds, &val_ds, |event| {
        match event {
            TrainEvent::Step(row) => {
                writeln!(train_log, "{}", row.csv_row())?;
                writeln!(grad_log, "{},{:.17e}", row.step, row.grad_norm)?;
            }
            TrainEvent::Epoch { epoch, val_nme, improved } => {
                writeln!(val_log, "{epoch},{val_nme:.17e},{improved}")?;
                val_log.flush()?;
            }
        }
        Ok(())
    });
    train_log.flush()?;
    grad_log.flush()?;
    val_log.flush()?;
    let mut output = result?;

    output.checkpoint.log_ref = "train_log.csv".to_string();
    output.checkpoint.config_digest = digest.clone();
    output.checkpoint.save(&out.join("student.ckpt"))?;
    write_text(&out.join("config_resolved.txt"), &cfg.canonical())?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    write_run_meta(
        out,
        "train",
        &digest,
        serde_json::json!({
            "stage": cfg.stage.kind.name(),
            "seed": cfg.seed,
            "epochs_run": output.epochs_run,
            "best_epoch": output.checkpoint.best_epoch,
            "best_val_nme": output.checkpoint.best_val_nme,
            "steps": output.log.rows.len(),
            "warnings": output.warnings,
        }),
    )?;
    println!(
        "train [{}]: {} epochs, best val NME {:.5} at epoch {} (digest {digest})",
        cfg.stage.kind.name(),
        output.epochs_run,
        output.checkpoint.best_val_nme,
        output.checkpoint.best_epoch
    );
    Ok(())
}

pub fn eval(checkpoint: &str, data: &str, norm: &str, out: &str) -> Result<()> {
    let ckpt = Checkpoint::load(Path::new(checkpoint))?;
    let ds = Dataset::load(Path::new(data))?;
    let modes: Vec<NormMode> = match norm {
        "all" => vec![NormMode::InterOcular, NormMode::BboxDiag],
        other => vec![other.parse()?],
    };
    let out = Path::new(out);
    fs::create_dir_all(out)?;
    let digest = if ckpt.config_digest.is_empty() { "unknown".into() } else { ckpt.config_digest.clone() };

    let mut body = String::from(mlcmkd_core::eval::EvalReport::csv_header());
    body.push('\n');
    for mode in modes {
        let mut report = evaluate(&ckpt.model, &ds, mode)?;
        report.config_digest = digest.clone();
        println!("eval [{}]: NME {:.5} over {} samples", mode.name(), report.nme, report.n_samples);
        body.push_str(&report.csv_row());
        body.push('\n');
    }
    write_text(&out.join("eval.csv"), &csv_with_digest(&digest, &body))?;
    write_run_meta(out, "eval", &digest, serde_json::json!({ "data": data }))?;
    Ok(())
}

/// One ablation run's identity inside an ablate directory.
#[derive(serde::Serialize, serde::Deserialize)]
struct ArmRunMeta {
    arm: String,
    seed: u64,
}

pub fn ablate(
    config: &str,
    out: &str,
    arms: Option<&str>,
    seeds: Option<&str>,
    jobs: usize,
) -> Result<()> {
    let mut cfg = load_config(config, None)?;
    if let Some(arms) = arms {
        cfg.set("ablate.arms", arms)?;
    }
    if let Some(seeds) = seeds {
        cfg.set("ablate.seeds", seeds)?;
    }
    if cfg.ablate_arms.is_empty() || cfg.ablate_seeds.is_empty() {
        return Err(Error::config("ablate needs non-empty 'ablate.arms' and 'ablate.seeds'"));
    }
    for arm in &cfg.ablate_arms {
        RunConfig::arm_spec(arm)?;
    }
    let out = Path::new(out);
    fs::create_dir_all(out)?;
    let digest = cfg.digest();
    write_text(&out.join("config_resolved.txt"), &cfg.canonical())?;

    // Shared datasets on disk so worker processes load identical bytes.
    let (train_dir, val_dir) = (out.join("data/train"), out.join("data/val"));
    if cfg.train_dir.is_none() {
        generate(&cfg.data)?.save(&train_dir)?;
        cfg.set("data.train_dir", train_dir.to_str().unwrap())?;
    }
    if cfg.val_dir.is_none() {
        generate(&cfg.val_data())?.save(&val_dir)?;
        cfg.set("data.val_dir", val_dir.to_str().unwrap())?;
    }

    // One frozen teacher shared by every ktl arm.
    let needs_teacher = cfg
        .ablate_arms
        .iter()
        .any(|a| matches!(RunConfig::arm_spec(a), Ok((StageKind::Ktl, _))));
    let teacher_path = out.join("teacher/teacher.ckpt");
    if needs_teacher && !teacher_path.exists() {
        println!("ablate: pretraining the {} rgb teacher", cfg.ablate_teacher_variant.name());
        let mut tcfg = cfg.clone();
        tcfg.stage.kind = StageKind::TeacherPretrain;
        tcfg.stage.student_variant = cfg.ablate_teacher_variant;
        tcfg.stage.flags = mlcmkd_core::pipeline::LossFlags::NONE;
        tcfg.stage.seed = derive_seed(cfg.seed, "teacher");
        tcfg.stage_kind_set = true;
        let (train_ds, val_ds) = resolve_data(&tcfg)?;
        let mut output =
            run_stage_for_kind(&tcfg.stage, None, &train_ds, &val_ds, |_| Ok(()))?;
        output.checkpoint.config_digest = digest.clone();
        output.checkpoint.save(&teacher_path)?;
        write_text(&out.join("teacher/train_log.csv"), &csv_with_digest(&digest, &output.log.train_csv()))?;
        println!(
            "ablate: teacher ready (best val NME {:.5})",
            output.checkpoint.best_val_nme
        );
    }

    // Per-run config files, then worker processes (at most `jobs` at once).
    let exe = std::env::current_exe()?;
    let mut pending: Vec<(String, u64, PathBuf)> = Vec::new();
    for arm in &cfg.ablate_arms {
        let (kind, flags) = RunConfig::arm_spec(arm)?;
        for &seed in &cfg.ablate_seeds {
            let run_dir = out.join(format!("arms/{arm}/seed{seed}"));
            fs::create_dir_all(&run_dir)?;
            let mut rcfg = cfg.clone();
            rcfg.seed = seed;
            rcfg.stage.kind = kind;
            rcfg.stage.flags = flags;
            rcfg.stage_kind_set = true;
            rcfg.stage.teacher_path = match kind {
                StageKind::Ktl => Some(teacher_path.to_str().unwrap().to_string()),
                _ => None,
            };
            rcfg.finish();
            write_text(&run_dir.join("run.cfg"), &rcfg.canonical())?;
            write_text(
                &run_dir.join("meta.json"),
                &serde_json::to_string_pretty(&ArmRunMeta { arm: arm.clone(), seed })?,
            )?;
            pending.push((arm.clone(), seed, run_dir));
        }
    }

    let mut failures: Vec<(String, u64, String)> = Vec::new();
    let mut active: Vec<(String, u64, std::process::Child)> = Vec::new();
    let jobs = jobs.max(1);
    let mut queue = pending.iter();
    loop {
        while active.len() < jobs {
            let Some((arm, seed, run_dir)) = queue.next() else { break };
            println!("ablate: starting arm {arm} seed {seed}");
            let child = Command::new(&exe)
                .arg("train")
                .arg("--config")
                .arg(run_dir.join("run.cfg"))
                .arg("--out")
                .arg(run_dir)
                .stdout(std::process::Stdio::null())
                .stderr(std::process::Stdio::piped())
                .spawn()?;
            active.push((arm.clone(), *seed, child));
        }
        if active.is_empty() {
            break;
        }
        let (arm, seed, child) = active.remove(0);
        let res = child.wait_with_output()?;
        if !res.status.success() {
            let stderr = String::from_utf8_lossy(&res.stderr);
            let last = stderr.lines().last().unwrap_or("worker failed").to_string();
            eprintln!("ablate: arm {arm} seed {seed} failed: {last}");
            failures.push((arm, seed, last));
        } else {
            println!("ablate: finished arm {arm} seed {seed}");
        }
    }
    if !failures.is_empty() {
        let mut body = String::from("arm,seed,error\n");
        for (arm, seed, err) in &failures {
            body.push_str(&format!("{arm},{seed},{}\n", err.replace(',', ";")));
        }
        write_text(&out.join("tables/failures.csv"), &csv_with_digest(&digest, &body))?;
    }

    let summary = post_process(out, &cfg, cfg.stability_window, &digest)?;
    write_run_meta(
        out,
        "ablate",
        &digest,
        serde_json::json!({
            "arms": cfg.ablate_arms,
            "seeds": cfg.ablate_seeds,
            "failures": failures.len(),
            "runs": summary.results.len(),
        }),
    )?;
    print!("{}", summary.text);
    Ok(())
}

struct Summary {
    results: Vec<ArmResult>,
    text: String,
}

/// Rebuild the combined NME and stability tables from per-run artifacts.
/// `digest` is the user-level config digest, computed before ablate injects
/// machine-derived dataset paths, so reruns emit identical tables.
fn post_process(out: &Path, cfg: &RunConfig, window: usize, digest: &str) -> Result<Summary> {
    let digest = digest.to_string();
    let arms_root = out.join("arms");
    let val_ds = Dataset::load(&out.join("data/val"))
        .or_else(|_| generate(&cfg.val_data()))?;

    let mut results: Vec<ArmResult> = Vec::new();
    let mut series: Vec<(String, u64, Vec<f64>)> = Vec::new();
    let mut run_dirs: Vec<(ArmRunMeta, PathBuf)> = Vec::new();
    for arm_entry in sorted_dir(&arms_root)? {
        for run_entry in sorted_dir(&arm_entry)? {
            let meta_path = run_entry.join("meta.json");
            if !meta_path.exists() {
                continue;
            }
            let meta: ArmRunMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
            run_dirs.push((meta, run_entry));
        }
    }
    for (meta, run_dir) in &run_dirs {
        let ckpt_path = run_dir.join("student.ckpt");
        if !ckpt_path.exists() {
            continue; // failed run, already recorded
        }
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let mut report = evaluate(&ckpt.model, &val_ds, ckpt.config.eval_norm)?;
        report.config_digest = digest.clone();
        report.model_id = format!("{}-seed{}", meta.arm, meta.seed);
        write_text(
            &run_dir.join("eval.csv"),
            &csv_with_digest(
                &digest,
                &format!("{}\n{}\n", mlcmkd_core::eval::EvalReport::csv_header(), report.csv_row()),
            ),
        )?;
        results.push(ArmResult {
            arm: meta.arm.clone(),
            seed: meta.seed,
            nme: report.nme,
            dataset_digest: report.dataset_digest.clone(),
        });
        series.push((meta.arm.clone(), meta.seed, read_grad_norms(&run_dir.join("grad_norms.csv"))?));
    }
    if results.is_empty() {
        return Err(Error::contract("no successful runs to post-process"));
    }

    let mut nme_body = String::from("arm,seed,nme,dataset_digest\n");
    for r in &results {
        nme_body.push_str(&format!("{},{},{:.17e},{}\n", r.arm, r.seed, r.nme, r.dataset_digest));
    }
    write_text(&out.join("tables/nme.csv"), &csv_with_digest(&digest, &nme_body))?;

    let arm_set: BTreeSet<String> = results.iter().map(|r| r.arm.clone()).collect();
    let checks = default_checks(&arm_set);
    let mut text = String::new();
    if results.len() >= 2 {
        let outcome = compare_arms(&results, &checks)?;
        write_text(&out.join("tables/compare.csv"), &csv_with_digest(&digest, &outcome.csv()))?;
        text.push_str("mean validation NME per arm:\n");
        for (arm, m) in &outcome.means {
            text.push_str(&format!("  {arm:<12} {m:.5}\n"));
        }
        for (check, ok) in &outcome.verdicts {
            text.push_str(&format!("  [{}] {check}\n", if *ok { "pass" } else { "FAIL" }));
        }
    }

    // Stability over a window every run can cover.
    let min_len = series.iter().map(|(_, _, s)| s.len()).min().unwrap_or(0);
    let w = window.min(min_len);
    if w >= 3 {
        let mut reports: Vec<StabilityReport> = Vec::new();
        let mut body = String::from(StabilityReport::csv_header());
        body.push('\n');
        for (arm, seed, values) in &series {
            let gs = GradNormSeries { values: values.clone(), window_start: 0, window_len: w };
            let rep = stability_metrics(&gs, arm, *seed)?;
            body.push_str(&rep.csv_row());
            body.push('\n');
            reports.push(rep);
        }
        write_text(&out.join("tables/stability.csv"), &csv_with_digest(&digest, &body))?;
        if arm_set.contains("ri") && arm_set.contains("fi") {
            let cmp = stability_compare(&reports, "ri", "fi")?;
            write_text(&out.join("tables/stability_compare.csv"), &csv_with_digest(&digest, &cmp.csv()))?;
            text.push_str(&format!(
                "stability (window {w}): ri std<=fi std: {}, ri cv<=fi cv: {}\n",
                cmp.std_ok, cmp.cv_ok
            ));
        }
    }
    Ok(Summary { results, text })
}

fn default_checks(arms: &BTreeSet<String>) -> Vec<OrderingCheck> {
    let mut checks = Vec::new();
    let has = |a: &str| arms.contains(a);
    let le = |l: &str, r: &str| OrderingCheck {
        left: l.to_string(),
        right: r.to_string(),
        order: Order::Le,
    };
    if has("ours") && has("fi") && has("ri") && has("baseline") {
        checks.push(le("ours", "fi"));
        checks.push(le("fi", "baseline"));
        checks.push(le("ours", "ri"));
        checks.push(le("ri", "baseline"));
        checks.push(OrderingCheck {
            left: "ours".into(),
            right: "baseline".into(),
            order: Order::LtRel(0.02),
        });
    }
    if has("dikd") && has("fdld") {
        checks.push(le("dikd", "fdld"));
    }
    for full in ["ours", "dikd"] {
        if has(full) && has("supervised") {
            checks.push(le(full, "supervised"));
        }
    }
    checks
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = match fs::read_dir(path) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();
    Ok(entries)
}

fn read_grad_norms(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("step,") || line.trim().is_empty() {
            continue;
        }
        let (_, g) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("bad grad-norm row '{line}'")))?;
        values.push(
            g.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad grad-norm value '{g}'")))?,
        );
    }
    Ok(values)
}

pub fn stability(out: &str, window: Option<usize>) -> Result<()> {
    let out = Path::new(out);
    let cfg = RunConfig::parse(&fs::read_to_string(out.join("config_resolved.txt"))?)?;
    let summary = post_process(out, &cfg, window.unwrap_or(cfg.stability_window), &cfg.digest())?;
    print!("{}", summary.text);
    Ok(())
}

pub fn report(out: &str) -> Result<()> {
    let out = Path::new(out);
    let cfg = RunConfig::parse(&fs::read_to_string(out.join("config_resolved.txt"))?)?;
    let summary = post_process(out, &cfg, cfg.stability_window, &cfg.digest())?;
    print!("{}", summary.text);
    Ok(())
}
