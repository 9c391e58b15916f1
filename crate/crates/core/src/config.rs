//! Flat key-value run configuration.
//!
//! The on-disk format is diff-friendly dotted text:
//!
//! ```text
//! # comment
//! seed = 42
//! data.n_train = 512
//! stage.kind = ktl
//! weights.lambda_lg = 1e-3
//! ```
//!
//! Unknown keys are rejected by name. Every field has a default except
//! `seed`; `stage.kind` is additionally required by the train and ablate
//! commands. The canonical serialization (all effective keys, sorted)
//! feeds an FNV-1a digest that is stamped into every output artifact, so
//! artifacts with equal digests came from identical configurations.
//!
//! All randomness flows from the single `seed`: the training data stream is
//! seeded with derive_seed(seed, "data/train"), validation with
//! derive_seed(seed, "data/val"), the teacher stage with
//! derive_seed(seed, "teacher"), and the student stage uses `seed` itself
//! (internally splitting into "student" / "adapters" / "order" streams).

use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::hash::{derive_seed, fnv1a};
use crate::losses::LossWeights;
use crate::nn::{HeadSpec, Variant};
use crate::optim::OptimConfig;
use crate::pipeline::{LossFlags, StageConfig, StageKind};
use crate::stability::DEFAULT_WINDOW;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Generator settings; `data.n` is the training-split size.
    pub data: GeneratorConfig,
    pub n_val: usize,
    /// When set, train/ablate load these dataset directories instead of
    /// generating in memory.
    pub train_dir: Option<String>,
    pub val_dir: Option<String>,
    pub stage: StageConfig,
    /// `stage.kind` was given explicitly (train/ablate require it).
    pub stage_kind_set: bool,
    pub ablate_arms: Vec<String>,
    pub ablate_seeds: Vec<u64>,
    pub ablate_teacher_variant: Variant,
    pub stability_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: GeneratorConfig::default(),
            n_val: 128,
            train_dir: None,
            val_dir: None,
            stage: StageConfig::new(StageKind::SupervisedThermal, Variant::T, 0),
            stage_kind_set: false,
            ablate_arms: vec!["baseline".into(), "fi".into(), "ri".into(), "ours".into()],
            ablate_seeds: vec![1, 2, 3, 4, 5],
            ablate_teacher_variant: Variant::M,
            stability_window: DEFAULT_WINDOW,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("key '{key}': cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("key '{key}': expected a boolean, got '{v}'"))),
    }
}

impl RunConfig {
    /// Parse the flat text format; unknown keys are errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seed_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)?;
            if key == "seed" {
                seed_set = true;
            }
        }
        if !seed_set {
            return Err(Error::config("missing required key 'seed'"));
        }
        cfg.finish();
        Ok(cfg)
    }

    /// Apply one key. Used by the parser and by CLI overrides.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,

            "data.n_train" => self.data.n = parse_num(key, v)?,
            "data.n_val" => self.n_val = parse_num(key, v)?,
            "data.resolution" => self.data.resolution = parse_num(key, v)?,
            "data.k_split" => self.data.k_split = parse_num(key, v)?,
            "data.center_jitter" => self.data.center_jitter = parse_num(key, v)?,
            "data.axes_min" => self.data.axes_min = parse_num(key, v)?,
            "data.axes_max" => self.data.axes_max = parse_num(key, v)?,
            "data.rot_max_deg" => self.data.rot_max_deg = parse_num(key, v)?,
            "data.yaw_max" => self.data.yaw_max = parse_num(key, v)?,
            "data.illum_min" => self.data.illum_min = parse_num(key, v)?,
            "data.illum_max" => self.data.illum_max = parse_num(key, v)?,
            "data.thermal_noise_sigma" => self.data.thermal_noise_sigma = parse_num(key, v)?,
            "data.thermal_blur_passes" => self.data.thermal_blur_passes = parse_num(key, v)?,
            "data.thermal_compression" => self.data.thermal_compression = parse_num(key, v)?,
            "data.train_dir" => {
                self.train_dir = (!v.is_empty()).then(|| v.to_string());
            }
            "data.val_dir" => {
                self.val_dir = (!v.is_empty()).then(|| v.to_string());
            }

            "stage.kind" => {
                self.stage.kind = v.parse()?;
                self.stage_kind_set = true;
            }
            "stage.variant" => self.stage.student_variant = v.parse()?,
            "stage.batch_size" => self.stage.batch_size = parse_num(key, v)?,
            "stage.patience" => self.stage.patience = parse_num(key, v)?,
            "stage.eval_norm" => self.stage.eval_norm = v.parse()?,
            "stage.teacher" => {
                self.stage.teacher_path = (!v.is_empty()).then(|| v.to_string());
            }
            "stage.swap_injection_losses" => self.stage.swap_injection_losses = parse_bool(key, v)?,

            "flags.fm" => self.stage.flags.fm = parse_bool(key, v)?,
            "flags.lg" => self.stage.flags.lg = parse_bool(key, v)?,
            "flags.fi" => self.stage.flags.fi = parse_bool(key, v)?,
            "flags.ri" => self.stage.flags.ri = parse_bool(key, v)?,

            "weights.lambda_fm" => self.stage.weights.lambda_fm = parse_num(key, v)?,
            "weights.lambda_lg" => self.stage.weights.lambda_lg = parse_num(key, v)?,
            "weights.lambda_dikd" => self.stage.weights.lambda_dikd = parse_num(key, v)?,
            "weights.lambda_ri" => self.stage.weights.lambda_ri = parse_num(key, v)?,
            "weights.lambda_fi" => self.stage.weights.lambda_fi = parse_num(key, v)?,
            "weights.lambda_kp" => self.stage.weights.lambda_kp = parse_num(key, v)?,
            "weights.alpha" => self.stage.weights.alpha = parse_num(key, v)?,
            "weights.epochs" => self.stage.weights.total_epochs = parse_num(key, v)?,

            "optim.base_lr" => self.stage.optim.base_lr = parse_num(key, v)?,
            "optim.min_lr" => self.stage.optim.min_lr = parse_num(key, v)?,
            "optim.beta1" => self.stage.optim.beta1 = parse_num(key, v)?,
            "optim.beta2" => self.stage.optim.beta2 = parse_num(key, v)?,
            "optim.eps" => self.stage.optim.eps = parse_num(key, v)?,
            "optim.weight_decay" => self.stage.optim.weight_decay = parse_num(key, v)?,
            "optim.warmup_epochs" => self.stage.optim.warmup_epochs = parse_num(key, v)?,

            "ablate.arms" => {
                self.ablate_arms = v.split(',').map(|s| s.trim().to_string()).collect();
            }
            "ablate.seeds" => {
                self.ablate_seeds = v
                    .split(',')
                    .map(|s| parse_num::<u64>(key, s.trim()))
                    .collect::<Result<_>>()?;
            }
            "ablate.teacher_variant" => self.ablate_teacher_variant = v.parse()?,

            "stability.window" => self.stability_window = parse_num(key, v)?,

            other => return Err(Error::config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Propagate the root seed and head geometry into dependent fields.
    pub fn finish(&mut self) {
        self.stage.seed = self.seed;
        self.stage.resolution = self.data.resolution;
        self.stage.head = HeadSpec { keypoints: crate::data::KEYPOINTS, k_split: self.data.k_split };
        self.data.split = "train".to_string();
        self.data.seed = derive_seed(self.seed, "data/train");
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.stage.validate()?;
        if self.n_val < 1 {
            return Err(Error::config("data.n_val must be >= 1"));
        }
        if self.stability_window < 3 {
            return Err(Error::config("stability.window must be >= 3"));
        }
        Ok(())
    }

    /// Generator config for the validation split.
    pub fn val_data(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: derive_seed(self.seed, "data/val"),
            n: self.n_val,
            split: "val".to_string(),
            ..self.data.clone()
        }
    }

    /// Ablation arm name -> stage kind and loss flags.
    pub fn arm_spec(arm: &str) -> Result<(StageKind, LossFlags)> {
        let flags = match arm {
            "supervised" => return Ok((StageKind::SupervisedThermal, LossFlags::NONE)),
            "fd" => LossFlags { fm: true, lg: false, fi: false, ri: false },
            "ld" => LossFlags { fm: false, lg: true, fi: false, ri: false },
            "fdld" | "baseline" => LossFlags::CONVENTIONAL,
            "fi" => LossFlags { fm: true, lg: true, fi: true, ri: false },
            "ri" => LossFlags { fm: true, lg: true, fi: false, ri: true },
            "ours" | "dikd" => LossFlags::FULL,
            other => return Err(Error::config(format!("unknown ablation arm '{other}'"))),
        };
        Ok((StageKind::Ktl, flags))
    }

    /// Canonical serialization: every effective key, sorted.
    pub fn canonical(&self) -> String {
        let w = &self.stage.weights;
        let o = &self.stage.optim;
        let mut kv: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("data.n_train".into(), self.data.n.to_string()),
            ("data.n_val".into(), self.n_val.to_string()),
            ("data.resolution".into(), self.data.resolution.to_string()),
            ("data.k_split".into(), self.data.k_split.to_string()),
            ("data.center_jitter".into(), format!("{:e}", self.data.center_jitter)),
            ("data.axes_min".into(), format!("{:e}", self.data.axes_min)),
            ("data.axes_max".into(), format!("{:e}", self.data.axes_max)),
            ("data.rot_max_deg".into(), format!("{:e}", self.data.rot_max_deg)),
            ("data.yaw_max".into(), format!("{:e}", self.data.yaw_max)),
            ("data.illum_min".into(), format!("{:e}", self.data.illum_min)),
            ("data.illum_max".into(), format!("{:e}", self.data.illum_max)),
            ("data.thermal_noise_sigma".into(), format!("{:e}", self.data.thermal_noise_sigma)),
            ("data.thermal_blur_passes".into(), self.data.thermal_blur_passes.to_string()),
            ("data.thermal_compression".into(), format!("{:e}", self.data.thermal_compression)),
            ("data.train_dir".into(), self.train_dir.clone().unwrap_or_default()),
            ("data.val_dir".into(), self.val_dir.clone().unwrap_or_default()),
            ("stage.kind".into(), self.stage.kind.name().to_string()),
            ("stage.variant".into(), self.stage.student_variant.name().to_string()),
            ("stage.batch_size".into(), self.stage.batch_size.to_string()),
            ("stage.patience".into(), self.stage.patience.to_string()),
            ("stage.eval_norm".into(), self.stage.eval_norm.name().to_string()),
            (
                "stage.teacher".into(),
                self.stage.teacher_path.clone().unwrap_or_default(),
            ),
            (
                "stage.swap_injection_losses".into(),
                self.stage.swap_injection_losses.to_string(),
            ),
            ("flags.fm".into(), self.stage.flags.fm.to_string()),
            ("flags.lg".into(), self.stage.flags.lg.to_string()),
            ("flags.fi".into(), self.stage.flags.fi.to_string()),
            ("flags.ri".into(), self.stage.flags.ri.to_string()),
            ("weights.lambda_fm".into(), format!("{:e}", w.lambda_fm)),
            ("weights.lambda_lg".into(), format!("{:e}", w.lambda_lg)),
            ("weights.lambda_dikd".into(), format!("{:e}", w.lambda_dikd)),
            ("weights.lambda_ri".into(), format!("{:e}", w.lambda_ri)),
            ("weights.lambda_fi".into(), format!("{:e}", w.lambda_fi)),
            ("weights.lambda_kp".into(), format!("{:e}", w.lambda_kp)),
            ("weights.alpha".into(), w.alpha.to_string()),
            ("weights.epochs".into(), w.total_epochs.to_string()),
            ("optim.base_lr".into(), format!("{:e}", o.base_lr)),
            ("optim.min_lr".into(), format!("{:e}", o.min_lr)),
            ("optim.beta1".into(), format!("{:e}", o.beta1)),
            ("optim.beta2".into(), format!("{:e}", o.beta2)),
            ("optim.eps".into(), format!("{:e}", o.eps)),
            ("optim.weight_decay".into(), format!("{:e}", o.weight_decay)),
            ("optim.warmup_epochs".into(), o.warmup_epochs.to_string()),
            ("ablate.arms".into(), self.ablate_arms.join(",")),
            (
                "ablate.seeds".into(),
                self.ablate_seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("ablate.teacher_variant".into(), self.ablate_teacher_variant.name().to_string()),
            ("stability.window".into(), self.stability_window.to_string()),
        ];
        kv.sort();
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// 16-hex-digit digest of the canonical form.
    pub fn digest(&self) -> String {
        format!("{:016x}", fnv1a(self.canonical().as_bytes()))
    }

    /// Default loss weights, shared by CLI docs and tests.
    pub fn default_weights() -> LossWeights {
        LossWeights::default()
    }

    /// Default optimizer settings.
    pub fn default_optim() -> OptimConfig {
        OptimConfig::default()
    }
}
