//! The three-stage training pipeline: RGB teacher pretraining, cross-modal
//! knowledge transfer (KTL), and intra-modal model compression (MCL), plus
//! the plain supervised baselines.
//!
//! One loop drives every stage. Per batch it records a fresh tape, runs the
//! enabled loss heads, backpropagates, records the global gradient norm and
//! applies AdamW; per epoch it evaluates validation NME, snapshots the best
//! parameters, and applies early stopping. The checkpoint holds the
//! best-validation-epoch parameters, so evaluating a saved checkpoint
//! reproduces the NME logged at its best epoch.
//!
//! Loss branches whose flag is off, or whose effective weight is exactly
//! zero, are not evaluated at all; with every distillation term disabled a
//! KTL or MCL run is numerically identical to supervised training
//! step-for-step. All randomness derives from `seed` via labeled streams
//! ("student", "adapters", "order"), so the student's trajectory does not
//! depend on which auxiliary components exist.

mod checkpoint;
mod log;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION, MAGIC};
pub use log::{LogRow, TrainLog, ValRow};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{batch_rgb, batch_targets, batch_thermal, Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, NormMode};
use crate::hash::derive_seed;
use crate::losses::{
    decay_factor, dikd_total, feature_mimic_loss, keypoint_loss, ktl_total, logits_distill_loss,
    mcl_total, ChannelAdapter, InjectionAdapter, LossWeights,
};
use crate::nn::{init_model, BackboneConfig, HeadSpec, Modality, Model, ParamTensor, SimCCLogits, Variant};
use crate::optim::{adamw_step, grad_global_norm, EarlyStop, LrSchedule, OptimConfig, OptimState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageKind {
    TeacherPretrain,
    SupervisedThermal,
    Ktl,
    Mcl,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::TeacherPretrain => "teacher_pretrain",
            StageKind::SupervisedThermal => "supervised_thermal",
            StageKind::Ktl => "ktl",
            StageKind::Mcl => "mcl",
        }
    }
}

impl std::str::FromStr for StageKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher_pretrain" => Ok(StageKind::TeacherPretrain),
            "supervised_thermal" => Ok(StageKind::SupervisedThermal),
            "ktl" => Ok(StageKind::Ktl),
            "mcl" => Ok(StageKind::Mcl),
            other => Err(Error::config(format!("unknown stage kind '{other}'"))),
        }
    }
}

/// Which distillation losses an ablation arm enables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    pub fm: bool,
    pub lg: bool,
    pub fi: bool,
    pub ri: bool,
}

impl LossFlags {
    pub const NONE: LossFlags = LossFlags { fm: false, lg: false, fi: false, ri: false };
    pub const CONVENTIONAL: LossFlags = LossFlags { fm: true, lg: true, fi: false, ri: false };
    pub const FULL: LossFlags = LossFlags { fm: true, lg: true, fi: true, ri: true };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub kind: StageKind,
    pub seed: u64,
    pub batch_size: usize,
    pub resolution: usize,
    pub student_variant: Variant,
    pub head: HeadSpec,
    /// Loss weights; `weights.total_epochs` is the stage's epoch budget T.
    pub weights: LossWeights,
    pub flags: LossFlags,
    /// Exchange which printed formula the ri/fi weights and flags bind to.
    pub swap_injection_losses: bool,
    pub optim: OptimConfig,
    pub patience: u32,
    pub eval_norm: NormMode,
    /// Teacher checkpoint path, recorded for provenance (ktl/mcl).
    pub teacher_path: Option<String>,
}

impl StageConfig {
    pub fn new(kind: StageKind, student_variant: Variant, seed: u64) -> Self {
        StageConfig {
            kind,
            seed,
            batch_size: 16,
            resolution: 64,
            student_variant,
            head: HeadSpec::default(),
            weights: LossWeights::default(),
            flags: match kind {
                StageKind::TeacherPretrain | StageKind::SupervisedThermal => LossFlags::NONE,
                StageKind::Ktl => LossFlags::FULL,
                StageKind::Mcl => LossFlags::CONVENTIONAL,
            },
            swap_injection_losses: false,
            optim: OptimConfig::default(),
            patience: 15,
            eval_norm: NormMode::InterOcular,
            teacher_path: None,
        }
    }

    pub fn epochs(&self) -> u32 {
        self.weights.total_epochs
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if matches!(self.kind, StageKind::Mcl) && (self.flags.fi || self.flags.ri) {
            return Err(Error::config("mcl stage has no injection losses"));
        }
        Ok(())
    }

    fn modality(&self) -> Modality {
        match self.kind {
            StageKind::TeacherPretrain => Modality::Rgb,
            _ => Modality::Thermal,
        }
    }
}

/// Everything a finished stage produces.
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub warnings: Vec<String>,
    /// Epochs actually run (early stopping may cut the budget short).
    pub epochs_run: u32,
}

/// Stream of progress events, mainly so callers can flush logs incrementally.
pub enum TrainEvent<'a> {
    Step(&'a LogRow),
    Epoch { epoch: u32, val_nme: f64, improved: bool },
}

/// Supervised training (teacher pretraining on RGB, or the thermal
/// supervised baseline): keypoint loss only.
pub fn train_supervised(cfg: &StageConfig, train: &Dataset, val: &Dataset) -> Result<TrainOutput> {
    train_supervised_with(cfg, train, val, |_| Ok(()))
}

pub fn train_supervised_with(
    cfg: &StageConfig,
    train: &Dataset,
    val: &Dataset,
    on_event: impl FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutput> {
    if !matches!(cfg.kind, StageKind::TeacherPretrain | StageKind::SupervisedThermal) {
        return Err(Error::contract(format!(
            "train_supervised on stage kind {}",
            cfg.kind.name()
        )));
    }
    run_stage(cfg, None, train, val, on_event)
}

/// Cross-modal knowledge transfer: frozen RGB teacher, thermal student,
/// paired batches, all enabled distillation losses.
pub fn run_ktl(
    teacher: &Checkpoint,
    cfg: &StageConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<TrainOutput> {
    run_ktl_with(teacher, cfg, train, val, |_| Ok(()))
}

pub fn run_ktl_with(
    teacher: &Checkpoint,
    cfg: &StageConfig,
    train: &Dataset,
    val: &Dataset,
    on_event: impl FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutput> {
    if cfg.kind != StageKind::Ktl {
        return Err(Error::contract(format!("run_ktl on stage kind {}", cfg.kind.name())));
    }
    if teacher.model.modality != Modality::Rgb {
        return Err(Error::contract("ktl teacher must be an rgb model".to_string()));
    }
    run_stage(cfg, Some(&teacher.model), train, val, on_event)
}

/// Intra-modal compression: frozen thermal teacher distilled into a smaller
/// thermal student with feature and logits losses only.
pub fn run_mcl(
    teacher: &Checkpoint,
    cfg: &StageConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<TrainOutput> {
    run_mcl_with(teacher, cfg, train, val, |_| Ok(()))
}

pub fn run_mcl_with(
    teacher: &Checkpoint,
    cfg: &StageConfig,
    train: &Dataset,
    val: &Dataset,
    on_event: impl FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutput> {
    if cfg.kind != StageKind::Mcl {
        return Err(Error::contract(format!("run_mcl on stage kind {}", cfg.kind.name())));
    }
    if teacher.model.modality != Modality::Thermal {
        return Err(Error::contract("mcl teacher must be a thermal model".to_string()));
    }
    run_stage(cfg, Some(&teacher.model), train, val, on_event)
}

/// Dispatch by stage kind; `teacher` is required for ktl/mcl.
pub fn run_stage_for_kind(
    cfg: &StageConfig,
    teacher: Option<&Checkpoint>,
    train: &Dataset,
    val: &Dataset,
    on_event: impl FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutput> {
    match cfg.kind {
        StageKind::TeacherPretrain | StageKind::SupervisedThermal => {
            train_supervised_with(cfg, train, val, on_event)
        }
        StageKind::Ktl => {
            let t = teacher.ok_or_else(|| Error::config("ktl stage needs a teacher checkpoint"))?;
            run_ktl_with(t, cfg, train, val, on_event)
        }
        StageKind::Mcl => {
            let t = teacher.ok_or_else(|| Error::config("mcl stage needs a teacher checkpoint"))?;
            run_mcl_with(t, cfg, train, val, on_event)
        }
    }
}

struct ActiveLosses {
    fm: bool,
    lg: bool,
    fi: bool,
    ri: bool,
}

impl ActiveLosses {
    fn from(cfg: &StageConfig) -> Self {
        let w = &cfg.weights;
        ActiveLosses {
            fm: cfg.flags.fm && w.lambda_fm > 0.0,
            lg: cfg.flags.lg && w.lambda_lg > 0.0,
            fi: cfg.flags.fi && w.lambda_fi > 0.0 && w.lambda_dikd > 0.0,
            ri: cfg.flags.ri && w.lambda_ri > 0.0 && w.lambda_dikd > 0.0,
        }
    }

    fn any(&self) -> bool {
        self.fm || self.lg || self.fi || self.ri
    }

    /// Cross-injected pathways actually consumed, honoring the swap switch.
    fn need_ts(&self, swap: bool) -> bool {
        (!swap && self.ri) || (swap && self.fi)
    }

    fn need_st(&self, swap: bool) -> bool {
        (!swap && self.fi) || (swap && self.ri)
    }
}

/// Scalar losses of one step, before weighting.
struct StepLosses {
    total: f64,
    kp: f64,
    fm: f64,
    lg: f64,
    ri: f64,
    fi: f64,
}

fn run_stage(
    cfg: &StageConfig,
    teacher: Option<&Model>,
    train: &Dataset,
    val: &Dataset,
    mut on_event: impl FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    if train.resolution != cfg.resolution || val.resolution != cfg.resolution {
        return Err(Error::shape(
            "run_stage",
            format!("dataset {} px vs stage {} px", train.resolution, cfg.resolution),
        ));
    }
    if train.k_split != cfg.head.k_split || train.keypoints != cfg.head.keypoints {
        return Err(Error::config("dataset K/k_split do not match the head spec"));
    }

    let mut student = init_model(
        BackboneConfig {
            input_resolution: cfg.resolution,
            ..BackboneConfig::new(cfg.student_variant, cfg.modality())
        },
        cfg.head,
        derive_seed(cfg.seed, "student"),
    )?;

    let mut teacher = teacher.cloned();
    if let Some(t) = teacher.as_mut() {
        t.set_frozen(true);
        if t.backbone.input_resolution != cfg.resolution {
            return Err(Error::config("teacher resolution does not match the stage"));
        }
        if cfg.kind == StageKind::Mcl && student.param_count().total >= t.param_count().total {
            warnings.push(format!(
                "mcl student ({} params) is not smaller than its teacher ({} params)",
                student.param_count().total,
                t.param_count().total
            ));
        }
    }

    // Adapters exist whenever there is a teacher, so ablation arms differ
    // only in which losses they enable.
    let adapter_seed = derive_seed(cfg.seed, "adapters");
    let (student_ch, _, _) = student.backbone.feature_shape();
    let mut chan_adapter = teacher.as_ref().map(|t| {
        let (teacher_ch, _, _) = t.backbone.feature_shape();
        ChannelAdapter::new("chan", student_ch, teacher_ch, derive_seed(adapter_seed, "chan"))
    });
    let mut inj_adapter = match (&teacher, cfg.kind) {
        (Some(t), StageKind::Ktl) => {
            let (teacher_ch, _, _) = t.backbone.feature_shape();
            Some(InjectionAdapter::new(teacher_ch, student_ch, adapter_seed))
        }
        _ => None,
    };

    let active = ActiveLosses::from(cfg);
    let schedule = LrSchedule::new(&cfg.optim, cfg.epochs());
    let param_lens: Vec<usize> =
        trainable_params(&mut student, &mut chan_adapter, &mut inj_adapter)
            .iter()
            .map(|p| p.numel())
            .collect();
    let mut optim_state = OptimState::new(&cfg.optim, &param_lens);
    let mut early_stop = EarlyStop::new(cfg.patience);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "order"));

    let mut log = TrainLog::default();
    let mut step: u64 = 0;
    let mut best: Option<(f64, u32, Model, Option<ChannelAdapter>, Option<InjectionAdapter>)> =
        None;
    let mut epochs_run = 0;

    let mut indices: Vec<usize> = (0..train.samples.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs() {
        epochs_run = epoch;
        indices.shuffle(&mut order_rng);
        let lr = schedule.lr_at(epoch)?;
        let gamma = decay_factor(epoch, &cfg.weights)?;

        for chunk in indices.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            step += 1;
            let (losses, grads) = train_step(
                cfg,
                &student,
                teacher.as_ref(),
                chan_adapter.as_ref(),
                inj_adapter.as_ref(),
                &active,
                &samples,
                train,
                epoch,
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => {
                    Error::NonFinite(format!("loss diverged at epoch {epoch}, step {step}"))
                }
                other => other,
            })?;
            let grad_norm = grad_global_norm(&grads);
            let mut params = trainable_params(&mut student, &mut chan_adapter, &mut inj_adapter);
            adamw_step(&mut params, &grads, &mut optim_state, lr)?;
            log.rows.push(LogRow {
                epoch,
                step,
                loss_total: losses.total,
                loss_kp: losses.kp,
                loss_fm: losses.fm,
                loss_lg: losses.lg,
                loss_ri: losses.ri,
                loss_fi: losses.fi,
                gamma,
                lr,
                grad_norm,
            });
            on_event(TrainEvent::Step(log.rows.last().unwrap()))?;
        }

        let val_nme = evaluate(&student, val, cfg.eval_norm)?.nme;
        let stop = early_stop.update(val_nme)?;
        let improved = early_stop.epochs_since_best == 0;
        if improved {
            best = Some((
                val_nme,
                epoch,
                student.clone(),
                chan_adapter.clone(),
                inj_adapter.clone(),
            ));
        }
        log.val.push(ValRow { epoch, val_nme, improved });
        on_event(TrainEvent::Epoch { epoch, val_nme, improved })?;
        if stop {
            break 'epochs;
        }
    }

    let (best_val_nme, best_epoch, best_model, best_chan, best_inj) =
        best.ok_or_else(|| Error::contract("no epochs were run"))?;
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            version: CHECKPOINT_VERSION,
            config: cfg.clone(),
            model: best_model,
            chan_adapter: best_chan,
            inj_adapter: best_inj,
            log_ref: String::new(),
            config_digest: String::new(),
            best_val_nme,
            best_epoch,
        },
        log,
        warnings,
        epochs_run,
    })
}

/// The flat, ordered parameter list the optimizer walks: student, then the
/// channel adapter, then the two injection maps.
fn trainable_params<'a>(
    student: &'a mut Model,
    chan: &'a mut Option<ChannelAdapter>,
    inj: &'a mut Option<InjectionAdapter>,
) -> Vec<&'a mut ParamTensor> {
    let mut v: Vec<&mut ParamTensor> = student.params.params.iter_mut().collect();
    if let Some(a) = chan {
        v.extend(a.params.params.iter_mut());
    }
    if let Some(a) = inj {
        v.extend(a.teacher_to_student.params.params.iter_mut());
        v.extend(a.student_to_teacher.params.params.iter_mut());
    }
    v
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &StageConfig,
    student: &Model,
    teacher: Option<&Model>,
    chan_adapter: Option<&ChannelAdapter>,
    inj_adapter: Option<&InjectionAdapter>,
    active: &ActiveLosses,
    samples: &[&Sample],
    train: &Dataset,
    epoch: u32,
) -> Result<(StepLosses, Vec<Option<Vec<f64>>>)> {
    let swap = cfg.swap_injection_losses;
    let tape = Tape::new();
    let bound_student = student.bind(&tape)?;
    let bound_chan = match chan_adapter {
        Some(c) => Some(c.bind(&tape)?),
        None => None,
    };
    let bound_inj = match inj_adapter {
        Some(i) => Some(i.bind(&tape)?),
        None => None,
    };

    let student_batch = match student.modality {
        Modality::Rgb => batch_rgb(&tape, samples, train.resolution)?,
        Modality::Thermal => batch_thermal(&tape, samples, train.resolution)?,
    };
    let f_s = bound_student.features(&student_batch)?;
    let l_ss = bound_student.head(&f_s)?;

    let target = batch_targets(samples, train.resolution, cfg.head.k_split)?;
    let l_kp = keypoint_loss(&target, &l_ss)?;

    let zero = tape.scalar(0.0)?;
    let mut l_fm = zero.clone();
    let mut l_lg = zero.clone();
    let mut l_ri = zero.clone();
    let mut l_fi = zero.clone();

    if active.any() {
        let teacher = teacher.ok_or_else(|| Error::contract("distillation without a teacher"))?;
        let bound_teacher = teacher.bind(&tape)?;
        let teacher_batch = match teacher.modality {
            Modality::Rgb => batch_rgb(&tape, samples, train.resolution)?,
            Modality::Thermal => student_batch.clone(),
        };
        let f_t = bound_teacher.features(&teacher_batch)?;

        if active.fm {
            let chan = bound_chan
                .as_ref()
                .ok_or_else(|| Error::contract("feature mimicry without a channel adapter"))?;
            l_fm = feature_mimic_loss(&f_t, &f_s, chan)?;
        }

        let need_tt = active.lg || active.need_st(swap) || (swap && active.fi) || (!swap && active.fi);
        let l_tt: Option<SimCCLogits> =
            if need_tt { Some(bound_teacher.head(&f_t)?) } else { None };

        if active.lg {
            l_lg = logits_distill_loss(l_tt.as_ref().unwrap(), &l_ss)?;
        }

        if active.fi || active.ri {
            let inj = bound_inj
                .as_ref()
                .ok_or_else(|| Error::contract("injection loss without an injection adapter"))?;
            let l_ts: Option<SimCCLogits> = if active.need_ts(swap) {
                Some(bound_student.head(&inj.teacher_to_student.apply(&f_t)?)?)
            } else {
                None
            };
            let l_st: Option<SimCCLogits> = if active.need_st(swap) {
                Some(bound_teacher.head(&inj.student_to_teacher.apply(&f_s)?)?)
            } else {
                None
            };
            // As printed, the ri slot pairs (ss -> ts) and the fi slot pairs
            // (tt -> st); the swap switch exchanges the two formulas.
            if active.ri {
                l_ri = if swap {
                    logits_distill_loss(l_tt.as_ref().unwrap(), l_st.as_ref().unwrap())?
                } else {
                    logits_distill_loss(&l_ss, l_ts.as_ref().unwrap())?
                };
            }
            if active.fi {
                l_fi = if swap {
                    logits_distill_loss(&l_ss, l_ts.as_ref().unwrap())?
                } else {
                    logits_distill_loss(l_tt.as_ref().unwrap(), l_st.as_ref().unwrap())?
                };
            }
        }
    }

    let total = match cfg.kind {
        StageKind::Mcl => mcl_total(&l_kp, &l_fm, &l_lg, epoch, &cfg.weights)?,
        _ => {
            let l_dikd = dikd_total(&l_ri, &l_fi, &cfg.weights)?;
            ktl_total(&l_kp, &l_fm, &l_lg, &l_dikd, epoch, &cfg.weights)?
        }
    };
    let total_value = total.item()?;
    if !total_value.is_finite() {
        return Err(Error::NonFinite("training loss".to_string()));
    }
    total.backward()?;

    let mut grads = bound_student.take_grads();
    if let Some(bc) = &bound_chan {
        grads.extend(bc.bound.take_grads());
    }
    if let Some(bi) = &bound_inj {
        grads.extend(bi.teacher_to_student.bound.take_grads());
        grads.extend(bi.student_to_teacher.bound.take_grads());
    }

    Ok((
        StepLosses {
            total: total_value,
            kp: l_kp.item()?,
            fm: l_fm.item()?,
            lg: l_lg.item()?,
            ri: l_ri.item()?,
            fi: l_fi.item()?,
        },
        grads,
    ))
}
