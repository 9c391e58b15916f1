//! Distillation and supervision losses.
//!
//! Conventions pinned here once, used everywhere:
//!
//! - Feature mimicry is the MSE between the teacher feature map and the
//!   adapted student feature map, normalized by C*H*W and additionally
//!   averaged over the batch, so the value is batch-size invariant.
//! - Every logits-level loss treats both sides as softmax distributions over
//!   the coordinate bins (no temperature) and sums the x- and y-axis terms.
//!   The target side is always detached: gradients flow only into the
//!   prediction path.
//! - The keypoint loss keeps its printed form verbatim: an unnormalized sum
//!   over samples and keypoints, a visibility mask W in {0,1}, and a 1/L
//!   factor inside the bin sum. Any rescaling is absorbed by `lambda_kp`.
//! - The time-adaptive decay gamma(t) is 1 during the first `alpha` epochs
//!   and 1 - (t - alpha)/T afterwards, strictly positive at t = T.
//!
//! The dual-injection losses are implemented exactly as their formulas are
//! printed: the reverse term pairs the student's own logits (target) with the
//! student-head decoding of teacher features, and the forward term pairs the
//! teacher's logits (target) with the teacher-head decoding of student
//! features. The usual prose description labels the pathways the other way
//! around; `swap_injection_losses` in the stage config rewires them for that
//! reading.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Bound, BoundModel, FeatureMap, ParamSet, SimCCLogits};

/// All loss-combination hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_lg: f64,
    pub lambda_dikd: f64,
    pub lambda_ri: f64,
    pub lambda_fi: f64,
    pub lambda_kp: f64,
    /// Warm-up epochs during which gamma(t) = 1.
    pub alpha: u32,
    /// Total epochs T of the schedule.
    pub total_epochs: u32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_fm: 1e-3,
            lambda_lg: 1e-3,
            lambda_dikd: 1.0,
            lambda_ri: 1e-3,
            lambda_fi: 1e-3,
            lambda_kp: 0.1,
            alpha: 10,
            total_epochs: 60,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_fm,
            self.lambda_lg,
            self.lambda_dikd,
            self.lambda_ri,
            self.lambda_fi,
            self.lambda_kp,
        ];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::config("loss weights must be finite and >= 0"));
        }
        if self.total_epochs < 1 {
            return Err(Error::config("total_epochs must be >= 1"));
        }
        if self.alpha > self.total_epochs {
            return Err(Error::config("alpha must satisfy 0 <= alpha <= total_epochs"));
        }
        Ok(())
    }
}

/// Time-adaptive distillation decay gamma(t) for epoch t in [1, T].
pub fn decay_factor(t: u32, w: &LossWeights) -> Result<f64> {
    if t < 1 || t > w.total_epochs {
        return Err(Error::contract(format!(
            "epoch {t} outside [1, {}]",
            w.total_epochs
        )));
    }
    if t <= w.alpha {
        Ok(1.0)
    } else {
        Ok(1.0 - (t - w.alpha) as f64 / w.total_epochs as f64)
    }
}

/// A trainable 1x1 convolution mapping one channel count to another, used to
/// reshape student features into the teacher's feature space (and as either
/// half of an [`InjectionAdapter`]). Identity-initialized when the channel
/// counts are equal. Assumes matching spatial dims, which every shipped
/// backbone satisfies at a shared input resolution.
#[derive(Clone, Debug)]
pub struct ChannelAdapter {
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: ParamSet,
}

impl ChannelAdapter {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        if in_channels == out_channels {
            let mut w = vec![0.0; out_channels * in_channels];
            for c in 0..in_channels {
                w[c * in_channels + c] = 1.0;
            }
            params.push_values(&format!("{name}.weight"), vec![out_channels, in_channels, 1, 1], w);
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            params.push_uniform(
                &format!("{name}.weight"),
                vec![out_channels, in_channels, 1, 1],
                in_channels,
                &mut rng,
            );
        }
        params.push_zeros(&format!("{name}.bias"), vec![out_channels]);
        ChannelAdapter { in_channels, out_channels, params }
    }

    /// Identity map over `channels` (square case of `new`).
    pub fn identity(name: &str, channels: usize) -> Self {
        ChannelAdapter::new(name, channels, channels, 0)
    }

    pub fn bind(&self, tape: &Tape) -> Result<BoundChannelAdapter<'_>> {
        Ok(BoundChannelAdapter { adapter: self, bound: self.params.bind(tape, false)? })
    }
}

pub struct BoundChannelAdapter<'a> {
    pub adapter: &'a ChannelAdapter,
    pub bound: Bound,
}

impl BoundChannelAdapter<'_> {
    pub fn apply(&self, f: &FeatureMap) -> Result<FeatureMap> {
        let (_, c, _, _) = f.dims();
        if c != self.adapter.in_channels {
            return Err(Error::shape(
                "channel_adapter",
                format!("{c} input channels, adapter expects {}", self.adapter.in_channels),
            ));
        }
        let out = f.0.conv2d(&self.bound.tensors[0], &self.bound.tensors[1], 0, 1)?;
        Ok(FeatureMap(out))
    }
}

/// The pair of 1x1 maps used for cross-injection: teacher-C -> student-C
/// (so teacher features fit the student head) and student-C -> teacher-C
/// (so student features fit the teacher head). Trained jointly with the
/// student, discarded at inference.
#[derive(Clone, Debug)]
pub struct InjectionAdapter {
    pub teacher_to_student: ChannelAdapter,
    pub student_to_teacher: ChannelAdapter,
}

impl InjectionAdapter {
    pub fn new(teacher_channels: usize, student_channels: usize, seed: u64) -> Self {
        InjectionAdapter {
            teacher_to_student: ChannelAdapter::new(
                "inject.t2s",
                teacher_channels,
                student_channels,
                crate::hash::derive_seed(seed, "inject.t2s"),
            ),
            student_to_teacher: ChannelAdapter::new(
                "inject.s2t",
                student_channels,
                teacher_channels,
                crate::hash::derive_seed(seed, "inject.s2t"),
            ),
        }
    }

    pub fn bind(&self, tape: &Tape) -> Result<BoundInjectionAdapter<'_>> {
        Ok(BoundInjectionAdapter {
            teacher_to_student: self.teacher_to_student.bind(tape)?,
            student_to_teacher: self.student_to_teacher.bind(tape)?,
        })
    }
}

pub struct BoundInjectionAdapter<'a> {
    pub teacher_to_student: BoundChannelAdapter<'a>,
    pub student_to_teacher: BoundChannelAdapter<'a>,
}

/// One-hot SimCC training targets with a visibility mask.
///
/// `x` and `y` are (N, K, L) row-major; every visible (n, k) row is one-hot
/// and every invisible row is all-zero. `visibility` is (N, K) in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct SimCCTarget {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub visibility: Vec<f64>,
}

impl SimCCTarget {
    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.n * self.k * self.l
            || self.y.len() != self.n * self.k * self.l
            || self.visibility.len() != self.n * self.k
        {
            return Err(Error::shape("simcc_target", "buffer lengths inconsistent with dims"));
        }
        for (i, &w) in self.visibility.iter().enumerate() {
            if w != 0.0 && w != 1.0 {
                return Err(Error::contract(format!("visibility[{i}] = {w}, must be 0 or 1")));
            }
            for axis in [&self.x, &self.y] {
                let row = &axis[i * self.l..(i + 1) * self.l];
                let nonzero = row.iter().filter(|&&v| v != 0.0).count();
                let sum: f64 = row.iter().sum();
                if w == 1.0 && (nonzero != 1 || (sum - 1.0).abs() > 1e-12) {
                    return Err(Error::contract(format!("visible target row {i} is not one-hot")));
                }
                if w == 0.0 && nonzero != 0 {
                    return Err(Error::contract(format!("invisible target row {i} is not all-zero")));
                }
            }
        }
        Ok(())
    }
}

/// Feature mimicry (MSE) between the teacher feature map and the adapted
/// student feature map.
pub fn feature_mimic_loss(
    f_teacher: &FeatureMap,
    f_student: &FeatureMap,
    adapter: &BoundChannelAdapter,
) -> Result<Tensor> {
    let adapted = adapter.apply(f_student)?;
    if adapted.0.shape() != f_teacher.0.shape() {
        return Err(Error::shape(
            "feature_mimic_loss",
            format!("adapted {:?} vs teacher {:?}", adapted.0.shape(), f_teacher.0.shape()),
        ));
    }
    f_teacher.0.mse(&adapted.0)
}

/// Soft cross-entropy between two SimCC logit sets, summed over the x and y
/// axes and normalized by batch size: -(1/N) sum softmax(target) * log
/// softmax(pred). The target side is detached.
fn simcc_soft_ce(target: &SimCCLogits, pred: &SimCCLogits, op: &'static str) -> Result<Tensor> {
    if target.x.shape() != pred.x.shape() || target.y.shape() != pred.y.shape() {
        return Err(Error::shape(
            op,
            format!("target {:?} vs pred {:?}", target.x.shape(), pred.x.shape()),
        ));
    }
    let n = target.dims().0 as f64;
    let mut total: Option<Tensor> = None;
    for (t_axis, p_axis) in [(&target.x, &pred.x), (&target.y, &pred.y)] {
        let p_t = t_axis.detach()?.softmax()?;
        let term = p_t.mul(&p_axis.log_softmax()?)?.sum()?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    total.unwrap().scale(-1.0 / n)
}

/// Logits-based distillation: the student's bin distributions chase the
/// teacher's, per axis.
pub fn logits_distill_loss(teacher: &SimCCLogits, student: &SimCCLogits) -> Result<Tensor> {
    simcc_soft_ce(teacher, student, "logits_distill_loss")
}

/// Visibility-masked keypoint supervision against one-hot targets:
/// -sum_n sum_k W_nk sum_i (1/L) P_GT^i log p^i, summed over both axes.
/// Note the outer sums (not means) and the 1/L factor.
pub fn keypoint_loss(target: &SimCCTarget, student: &SimCCLogits) -> Result<Tensor> {
    target.validate()?;
    let (n, k, l) = student.dims();
    if (n, k, l) != (target.n, target.k, target.l) {
        return Err(Error::shape(
            "keypoint_loss",
            format!("target ({},{},{}) vs logits ({n},{k},{l})", target.n, target.k, target.l),
        ));
    }
    let coeff = |axis: &[f64]| -> Vec<f64> {
        axis.iter()
            .enumerate()
            .map(|(idx, &p)| target.visibility[idx / l] * p / l as f64)
            .collect()
    };
    let mut total: Option<Tensor> = None;
    for (tvals, p_axis) in [(coeff(&target.x), &student.x), (coeff(&target.y), &student.y)] {
        let c = p_axis.tape_handle().constant(tvals, vec![n, k, l])?;
        let term = c.mul(&p_axis.log_softmax()?)?.sum()?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    total.unwrap().scale(-1.0)
}

/// The four logit sets produced by one cross-injected forward pass.
pub struct CrossLogits {
    /// teacher head on teacher features (rgb)
    pub tt: SimCCLogits,
    /// student head on student features (thermal)
    pub ss: SimCCLogits,
    /// student head on adapted teacher features
    pub ts: SimCCLogits,
    /// teacher head on adapted student features
    pub st: SimCCLogits,
}

/// Run both models on a paired batch and produce the unimodal and
/// cross-injected logits. The teacher should be bound frozen so its
/// parameters receive no gradient; gradients still flow through its head
/// into the student-side adapters and backbone.
pub fn cross_inject(
    teacher: &BoundModel,
    student: &BoundModel,
    adapters: &BoundInjectionAdapter,
    batch_rgb: &Tensor,
    batch_thermal: &Tensor,
) -> Result<CrossLogits> {
    if batch_rgb.shape()[0] != batch_thermal.shape()[0] {
        return Err(Error::contract(format!(
            "unpaired batches: rgb N={}, thermal N={}",
            batch_rgb.shape()[0],
            batch_thermal.shape()[0]
        )));
    }
    let f_t = teacher.features(batch_rgb)?;
    let f_s = student.features(batch_thermal)?;
    let tt = teacher.head(&f_t)?;
    let ss = student.head(&f_s)?;
    let ts = student.head(&adapters.teacher_to_student.apply(&f_t)?)?;
    let st = teacher.head(&adapters.student_to_teacher.apply(&f_s)?)?;
    Ok(CrossLogits { tt, ss, ts, st })
}

/// Reverse-injection loss as printed: the student's own logits (detached)
/// are the target for the student-head decoding of teacher features.
pub fn dikd_ri_loss(l_ss: &SimCCLogits, l_ts: &SimCCLogits) -> Result<Tensor> {
    simcc_soft_ce(l_ss, l_ts, "dikd_ri_loss")
}

/// Forward-injection loss as printed: the teacher's logits (detached) are
/// the target for the teacher-head decoding of student features.
pub fn dikd_fi_loss(l_tt: &SimCCLogits, l_st: &SimCCLogits) -> Result<Tensor> {
    simcc_soft_ce(l_tt, l_st, "dikd_fi_loss")
}

/// Weighted sum of the two injection losses.
pub fn dikd_total(ri: &Tensor, fi: &Tensor, w: &LossWeights) -> Result<Tensor> {
    ri.scale(w.lambda_ri)?.add(&fi.scale(w.lambda_fi)?)
}

/// Knowledge-transfer objective:
/// lambda_kp * L_kp + gamma(t) * (lambda_fm * L_fm + lambda_lg * L_lg + lambda_dikd * L_dikd).
pub fn ktl_total(
    l_kp: &Tensor,
    l_fm: &Tensor,
    l_lg: &Tensor,
    l_dikd: &Tensor,
    t: u32,
    w: &LossWeights,
) -> Result<Tensor> {
    let gamma = decay_factor(t, w)?;
    let distill = l_fm
        .scale(w.lambda_fm)?
        .add(&l_lg.scale(w.lambda_lg)?)?
        .add(&l_dikd.scale(w.lambda_dikd)?)?;
    l_kp.scale(w.lambda_kp)?.add(&distill.scale(gamma)?)
}

/// Model-compression objective: the KTL objective without the DIKD term.
pub fn mcl_total(l_kp: &Tensor, l_fm: &Tensor, l_lg: &Tensor, t: u32, w: &LossWeights) -> Result<Tensor> {
    let gamma = decay_factor(t, w)?;
    let distill = l_fm.scale(w.lambda_fm)?.add(&l_lg.scale(w.lambda_lg)?)?;
    l_kp.scale(w.lambda_kp)?.add(&distill.scale(gamma)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::nn::{init_model, BackboneConfig, HeadSpec, Modality, Variant};

    const LN2: f64 = std::f64::consts::LN_2;

    fn logits(tape: &Tape, x: Vec<f64>, y: Vec<f64>, n: usize, k: usize, l: usize, grad: bool) -> SimCCLogits {
        SimCCLogits::new(
            tape.leaf(x, vec![n, k, l], grad).unwrap(),
            tape.leaf(y, vec![n, k, l], grad).unwrap(),
        )
        .unwrap()
    }

    /// Brute-force soft cross-entropy oracle over raw buffers.
    fn soft_ce_oracle(t_x: &[f64], t_y: &[f64], p_x: &[f64], p_y: &[f64], n: usize, l: usize) -> f64 {
        let softmax_at = |row: &[f64], i: usize| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            (row[i] - m).exp() / z
        };
        let logp_at = |row: &[f64], i: usize| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row[i] - m - z.ln()
        };
        let mut total = 0.0;
        for (t, p) in [(t_x, p_x), (t_y, p_y)] {
            for (tr, pr) in t.chunks(l).zip(p.chunks(l)) {
                for i in 0..l {
                    total -= softmax_at(tr, i) * logp_at(pr, i);
                }
            }
        }
        total / n as f64
    }

    #[test]
    fn feature_mimic_zero_and_unit_cases() {
        let tape = Tape::new();
        let ident = ChannelAdapter::identity("f", 2);
        let bound = ident.bind(&tape).unwrap();
        let f1 = FeatureMap(tape.leaf(vec![0.3; 8], vec![1, 2, 2, 2], true).unwrap());
        let f2 = FeatureMap(tape.leaf(vec![0.3; 8], vec![1, 2, 2, 2], true).unwrap());
        assert_eq!(feature_mimic_loss(&f1, &f2, &bound).unwrap().item().unwrap(), 0.0);

        let ones = FeatureMap(tape.leaf(vec![1.0; 8], vec![1, 2, 2, 2], true).unwrap());
        let zeros = FeatureMap(tape.leaf(vec![0.0; 8], vec![1, 2, 2, 2], true).unwrap());
        assert_eq!(feature_mimic_loss(&ones, &zeros, &bound).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn feature_mimic_matches_bruteforce() {
        let tape = Tape::new();
        let ident = ChannelAdapter::identity("f", 2);
        let bound = ident.bind(&tape).unwrap();
        let a: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).sin()).collect();
        let b: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
        let fa = FeatureMap(tape.leaf(a.clone(), vec![1, 2, 2, 2], true).unwrap());
        let fb = FeatureMap(tape.leaf(b.clone(), vec![1, 2, 2, 2], true).unwrap());
        let loss = feature_mimic_loss(&fa, &fb, &bound).unwrap().item().unwrap();
        let oracle: f64 =
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 8.0;
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn logits_distill_uniform_symmetry() {
        let tape = Tape::new();
        let t = logits(&tape, vec![0.0, 0.0], vec![0.0, 0.0], 1, 1, 2, false);
        let s = logits(&tape, vec![0.0, 0.0], vec![0.0, 0.0], 1, 1, 2, true);
        let loss = logits_distill_loss(&t, &s).unwrap().item().unwrap();
        assert!((loss - 2.0 * LN2).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn logits_distill_self_distillation_is_entropy() {
        // student == teacher: loss equals the teacher distribution's entropy
        let tape = Tape::new();
        let raw = vec![2.0, -0.5, 0.3, 1.1];
        let t = logits(&tape, raw.clone(), raw.clone(), 1, 1, 4, false);
        let s = logits(&tape, raw.clone(), raw.clone(), 1, 1, 4, true);
        let loss = logits_distill_loss(&t, &s).unwrap().item().unwrap();
        let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = raw.iter().map(|v| (v - m).exp()).sum();
        let entropy: f64 = raw
            .iter()
            .map(|v| {
                let p = (v - m).exp() / z;
                -p * p.ln()
            })
            .sum();
        assert!((loss - 2.0 * entropy).abs() < 1e-12);
    }

    #[test]
    fn logits_distill_hand_value_single_axis() {
        // x-axis: teacher ~ (1,0) one-hot, student logits (1,0): ln(1 + e^-1).
        // y-axis: teacher ~ one-hot with student matching sharply: ~0.
        let tape = Tape::new();
        let t = logits(&tape, vec![40.0, 0.0], vec![40.0, 0.0], 1, 1, 2, false);
        let s = logits(&tape, vec![1.0, 0.0], vec![40.0, 0.0], 1, 1, 2, true);
        let loss = logits_distill_loss(&t, &s).unwrap().item().unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
        let oracle = soft_ce_oracle(&[40.0, 0.0], &[40.0, 0.0], &[1.0, 0.0], &[40.0, 0.0], 1, 2);
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn logits_distill_matches_bruteforce_random() {
        let tape = Tape::new();
        let mk = |seed: u64, len: usize| -> Vec<f64> {
            (0..len).map(|i| ((i as f64 + seed as f64) * 0.77).sin() * 2.0).collect()
        };
        let (n, k, l) = (2, 3, 8);
        let (tx, ty, px, py) = (mk(1, n * k * l), mk(2, n * k * l), mk(3, n * k * l), mk(4, n * k * l));
        let t = logits(&tape, tx.clone(), ty.clone(), n, k, l, false);
        let s = logits(&tape, px.clone(), py.clone(), n, k, l, true);
        let loss = logits_distill_loss(&t, &s).unwrap().item().unwrap();
        let oracle = soft_ce_oracle(&tx, &ty, &px, &py, n, l);
        assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
    }

    #[test]
    fn logits_distill_teacher_gets_no_gradient() {
        let tape = Tape::new();
        let t = logits(&tape, vec![1.0, 0.2], vec![0.1, 0.9], 1, 1, 2, true);
        let s = logits(&tape, vec![0.5, 0.5], vec![0.3, 0.2], 1, 1, 2, true);
        logits_distill_loss(&t, &s).unwrap().backward().unwrap();
        assert!(t.x.grad().is_none() && t.y.grad().is_none());
        assert!(s.x.grad().is_some() && s.y.grad().is_some());
    }

    fn one_hot_target(n: usize, k: usize, l: usize, bins: &[(usize, usize)], vis: Vec<f64>) -> SimCCTarget {
        let mut x = vec![0.0; n * k * l];
        let mut y = vec![0.0; n * k * l];
        for (row, &(bx, by)) in bins.iter().enumerate() {
            if vis[row] == 1.0 {
                x[row * l + bx] = 1.0;
                y[row * l + by] = 1.0;
            }
        }
        SimCCTarget { n, k, l, x, y, visibility: vis }
    }

    #[test]
    fn keypoint_loss_all_invisible_is_zero_with_zero_grad() {
        let tape = Tape::new();
        let target = one_hot_target(1, 2, 4, &[(0, 1), (2, 3)], vec![0.0, 0.0]);
        let s = logits(&tape, vec![0.3; 8], vec![-0.2; 8], 1, 2, 4, true);
        let loss = keypoint_loss(&target, &s).unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
        loss.backward().unwrap();
        let gx = s.x.grad().unwrap();
        assert!(gx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn keypoint_loss_uniform_hand_value() {
        // one visible keypoint, L = 2, uniform student: (1/2) ln 2 per axis.
        let tape = Tape::new();
        let target = one_hot_target(1, 1, 2, &[(0, 0)], vec![1.0]);
        let s = logits(&tape, vec![0.0, 0.0], vec![0.0, 0.0], 1, 1, 2, true);
        let loss = keypoint_loss(&target, &s).unwrap().item().unwrap();
        assert!((loss - LN2).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn keypoint_loss_matches_bruteforce_random() {
        let tape = Tape::new();
        let (n, k, l) = (2, 3, 8);
        let vis = vec![1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let bins: Vec<(usize, usize)> = (0..n * k).map(|i| (i % l, (3 * i) % l)).collect();
        let target = one_hot_target(n, k, l, &bins, vis.clone());
        let px: Vec<f64> = (0..n * k * l).map(|i| (i as f64 * 0.31).sin()).collect();
        let py: Vec<f64> = (0..n * k * l).map(|i| (i as f64 * 0.17).cos()).collect();
        let s = logits(&tape, px.clone(), py.clone(), n, k, l, true);
        let loss = keypoint_loss(&target, &s).unwrap().item().unwrap();

        // independent triple-sum oracle
        let mut oracle = 0.0;
        for (axis_t, axis_p) in [(&target.x, &px), (&target.y, &py)] {
            for row in 0..n * k {
                let pr = &axis_p[row * l..(row + 1) * l];
                let m = pr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = pr.iter().map(|v| (v - m).exp()).sum();
                for i in 0..l {
                    let logp = pr[i] - m - z.ln();
                    oracle -= vis[row] * axis_t[row * l + i] * logp / l as f64;
                }
            }
        }
        assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
    }

    #[test]
    fn keypoint_loss_rejects_bad_visibility() {
        let tape = Tape::new();
        let mut target = one_hot_target(1, 1, 2, &[(0, 0)], vec![1.0]);
        target.visibility[0] = 0.5;
        let s = logits(&tape, vec![0.0; 2], vec![0.0; 2], 1, 1, 2, true);
        assert!(matches!(keypoint_loss(&target, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn dikd_losses_uniform_and_bruteforce() {
        let tape = Tape::new();
        let a = logits(&tape, vec![0.0; 2], vec![0.0; 2], 1, 1, 2, true);
        let b = logits(&tape, vec![0.0; 2], vec![0.0; 2], 1, 1, 2, true);
        assert!((dikd_ri_loss(&a, &b).unwrap().item().unwrap() - 2.0 * LN2).abs() < 1e-12);
        assert!((dikd_fi_loss(&a, &b).unwrap().item().unwrap() - 2.0 * LN2).abs() < 1e-12);

        let (n, k, l) = (2, 2, 5);
        let mk = |s: u64| -> Vec<f64> {
            (0..n * k * l).map(|i| ((i as f64) * 0.37 + s as f64).sin() * 1.5).collect()
        };
        let (tx, ty, px, py) = (mk(9), mk(5), mk(7), mk(3));
        let t = logits(&tape, tx.clone(), ty.clone(), n, k, l, true);
        let p = logits(&tape, px.clone(), py.clone(), n, k, l, true);
        let loss = dikd_ri_loss(&t, &p).unwrap().item().unwrap();
        let oracle = soft_ce_oracle(&tx, &ty, &px, &py, n, l);
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn dikd_gradient_flows_into_prediction_path_only() {
        let tape = Tape::new();
        let t = logits(&tape, vec![0.4, -0.4], vec![0.2, 0.0], 1, 1, 2, true);
        let p = logits(&tape, vec![0.0, 0.3], vec![-0.1, 0.6], 1, 1, 2, true);
        dikd_ri_loss(&t, &p).unwrap().backward().unwrap();
        assert!(t.x.grad().is_none(), "target path must be detached");
        assert!(p.x.grad().is_some());
    }

    #[test]
    fn dikd_self_consistency_fixed_point() {
        // identical logit sets: both losses equal the entropy of the target
        let tape = Tape::new();
        let raw: Vec<f64> = (0..6).map(|i| (i as f64 * 0.9).sin()).collect();
        let a = logits(&tape, raw.clone(), raw.clone(), 1, 1, 6, true);
        let b = logits(&tape, raw.clone(), raw.clone(), 1, 1, 6, true);
        let loss = dikd_ri_loss(&a, &b).unwrap().item().unwrap();
        let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = raw.iter().map(|v| (v - m).exp()).sum();
        let entropy: f64 = raw
            .iter()
            .map(|v| {
                let p = (v - m).exp() / z;
                -p * p.ln()
            })
            .sum();
        assert!((loss - 2.0 * entropy).abs() < 1e-12);
    }

    #[test]
    fn dikd_total_arithmetic() {
        let tape = Tape::new();
        let ri = tape.scalar(2.0).unwrap();
        let fi = tape.scalar(4.0).unwrap();
        let w0 = LossWeights { lambda_ri: 0.0, lambda_fi: 0.0, ..Default::default() };
        assert_eq!(dikd_total(&ri, &fi, &w0).unwrap().item().unwrap(), 0.0);
        let w1 = LossWeights { lambda_ri: 1.0, lambda_fi: 0.0, ..Default::default() };
        assert_eq!(dikd_total(&ri, &fi, &w1).unwrap().item().unwrap(), 2.0);
        let w = LossWeights { lambda_ri: 1e-3, lambda_fi: 1e-3, ..Default::default() };
        assert!((dikd_total(&ri, &fi, &w).unwrap().item().unwrap() - 0.006).abs() < 1e-15);
    }

    #[test]
    fn decay_factor_branches() {
        let w = LossWeights { alpha: 30, total_epochs: 150, ..Default::default() };
        assert_eq!(decay_factor(1, &w).unwrap(), 1.0);
        assert_eq!(decay_factor(30, &w).unwrap(), 1.0);
        assert!((decay_factor(90, &w).unwrap() - 0.6).abs() < 1e-15);
        assert!((decay_factor(150, &w).unwrap() - 0.2).abs() < 1e-15);
        assert!(decay_factor(0, &w).is_err());
        assert!(decay_factor(151, &w).is_err());
    }

    #[test]
    fn ktl_total_cases() {
        let tape = Tape::new();
        let s = |v: f64| tape.scalar(v).unwrap();
        // all distillation lambdas zero: pure supervision
        let w = LossWeights {
            lambda_fm: 0.0,
            lambda_lg: 0.0,
            lambda_dikd: 0.0,
            lambda_kp: 0.1,
            ..Default::default()
        };
        let total = ktl_total(&s(3.0), &s(9.0), &s(9.0), &s(9.0), 1, &w).unwrap();
        assert!((total.item().unwrap() - 0.3).abs() < 1e-15);

        // gamma = 1 with all lambdas 1: plain sum of the four losses
        let w1 = LossWeights {
            lambda_fm: 1.0,
            lambda_lg: 1.0,
            lambda_dikd: 1.0,
            lambda_kp: 1.0,
            ..Default::default()
        };
        let total = ktl_total(&s(1.0), &s(2.0), &s(3.0), &s(4.0), 5, &w1).unwrap();
        assert!((total.item().unwrap() - 10.0).abs() < 1e-15);

        // worked example: gamma = 0.5 at t = alpha + T/2
        let w2 = LossWeights {
            lambda_fm: 1e-3,
            lambda_lg: 1e-3,
            lambda_dikd: 1e-3,
            lambda_kp: 0.1,
            alpha: 10,
            total_epochs: 60,
            ..Default::default()
        };
        let total = ktl_total(&s(2.0), &s(2.0), &s(2.0), &s(2.0), 40, &w2).unwrap();
        assert!((total.item().unwrap() - 0.203).abs() < 1e-15, "{}", total.item().unwrap());
    }

    #[test]
    fn ktl_total_nonincreasing_in_epoch() {
        let tape = Tape::new();
        let s = |v: f64| tape.scalar(v).unwrap();
        let w = LossWeights::default();
        let first = ktl_total(&s(1.0), &s(1.0), &s(1.0), &s(1.0), 1, &w).unwrap().item().unwrap();
        let mut prev = f64::INFINITY;
        for t in 1..=w.total_epochs {
            let v = ktl_total(&s(1.0), &s(1.0), &s(1.0), &s(1.0), t, &w).unwrap().item().unwrap();
            assert!(v <= prev + 1e-15);
            if t <= w.alpha {
                assert_eq!(v, first);
            }
            prev = v;
        }
    }

    #[test]
    fn mcl_total_equals_ktl_with_zero_dikd() {
        let tape = Tape::new();
        let s = |v: f64| tape.scalar(v).unwrap();
        let w = LossWeights { lambda_dikd: 0.0, ..Default::default() };
        let a = mcl_total(&s(1.0), &s(2.0), &s(3.0), 20, &w).unwrap().item().unwrap();
        let b = ktl_total(&s(1.0), &s(2.0), &s(3.0), &s(7.0), 20, &w).unwrap().item().unwrap();
        assert_eq!(a, b);

        let w3 = LossWeights { lambda_kp: 0.1, lambda_fm: 1e-3, lambda_lg: 1e-3, ..Default::default() };
        let v = mcl_total(&s(1.0), &s(1.0), &s(1.0), 1, &w3).unwrap().item().unwrap();
        assert!((v - 0.102).abs() < 1e-15);
    }

    #[test]
    fn cross_inject_degenerate_self_injection() {
        // teacher == student (same arch, same params), identity adapters:
        // L_ts must equal L_ss on identical inputs.
        let cfg = BackboneConfig::new(Variant::T, Modality::Thermal);
        let head = HeadSpec::default();
        let mut teacher = init_model(cfg.clone(), head, 42).unwrap();
        teacher.set_frozen(true);
        let student = init_model(cfg, head, 42).unwrap();
        let adapters = InjectionAdapter::new(8, 8, 0); // square: identity init

        let tape = Tape::new();
        let bt = teacher.bind(&tape).unwrap();
        let bs = student.bind(&tape).unwrap();
        let ba = adapters.bind(&tape).unwrap();
        let img: Vec<f64> = (0..64 * 64).map(|i| ((i % 41) as f64) / 41.0).collect();
        let batch = tape.constant(img, vec![1, 1, 64, 64]).unwrap();
        let cross = cross_inject(&bt, &bs, &ba, &batch, &batch).unwrap();
        let (ss, ts) = (cross.ss.x.values(), cross.ts.x.values());
        for (a, b) in ss.iter().zip(ts.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_inject_frozen_teacher_and_live_student_paths() {
        let tcfg = BackboneConfig::new(Variant::S, Modality::Rgb);
        let scfg = BackboneConfig::new(Variant::T, Modality::Thermal);
        let head = HeadSpec::default();
        let mut teacher = init_model(tcfg, head, 1).unwrap();
        teacher.set_frozen(true);
        let student = init_model(scfg, head, 2).unwrap();
        let adapters = InjectionAdapter::new(12, 8, 3);

        let tape = Tape::new();
        let bt = teacher.bind(&tape).unwrap();
        let bs = student.bind(&tape).unwrap();
        let ba = adapters.bind(&tape).unwrap();
        let rgb = tape
            .constant((0..3 * 64 * 64).map(|i| ((i % 13) as f64) / 13.0).collect(), vec![1, 3, 64, 64])
            .unwrap();
        let thermal = tape
            .constant((0..64 * 64).map(|i| ((i % 7) as f64) / 7.0).collect(), vec![1, 1, 64, 64])
            .unwrap();
        let cross = cross_inject(&bt, &bs, &ba, &rgb, &thermal).unwrap();

        // any function of L_st: zero grad into teacher params, nonzero into
        // the student backbone (through the frozen teacher head)
        cross.st.x.mean().unwrap().backward().unwrap();
        assert!(bt.grads().iter().all(|g| g.is_none()));
        let student_grads = bs.grads();
        let backbone_grad_exists = student
            .params
            .params
            .iter()
            .zip(student_grads.iter())
            .filter(|(p, _)| p.name.starts_with("backbone."))
            .any(|(_, g)| g.as_ref().is_some_and(|v| v.iter().any(|&x| x != 0.0)));
        assert!(backbone_grad_exists, "L_st must drive the student backbone");
    }

    #[test]
    fn cross_inject_rejects_unpaired_batches() {
        let cfg = BackboneConfig::new(Variant::T, Modality::Thermal);
        let head = HeadSpec::default();
        let mut teacher = init_model(cfg.clone(), head, 1).unwrap();
        teacher.set_frozen(true);
        let student = init_model(cfg, head, 2).unwrap();
        let adapters = InjectionAdapter::new(8, 8, 0);
        let tape = Tape::new();
        let bt = teacher.bind(&tape).unwrap();
        let bs = student.bind(&tape).unwrap();
        let ba = adapters.bind(&tape).unwrap();
        let one = tape.constant(vec![0.0; 64 * 64], vec![1, 1, 64, 64]).unwrap();
        let two = tape.constant(vec![0.0; 2 * 64 * 64], vec![2, 1, 64, 64]).unwrap();
        assert!(matches!(cross_inject(&bt, &bs, &ba, &one, &two), Err(Error::Contract(_))));
    }
}
