//! SimCC decoding, NME under both normalizations, evaluation reports, and
//! ablation-arm comparison.
//!
//! Decoding is plain per-axis argmax (ties broken toward the lowest bin)
//! divided by the split factor; an expectation decoder is available behind
//! [`Decoder::Expectation`] for sensitivity studies. Invisible keypoints are
//! excluded from the NME numerator and from the per-sample keypoint count.

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{batch_rgb, batch_thermal, Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::{Modality, Model, SimCCLogits};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    InterOcular,
    BboxDiag,
}

impl NormMode {
    pub fn name(self) -> &'static str {
        match self {
            NormMode::InterOcular => "inter_ocular",
            NormMode::BboxDiag => "bbox_diag",
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inter_ocular" | "io" => Ok(NormMode::InterOcular),
            "bbox_diag" | "bbox" => Ok(NormMode::BboxDiag),
            other => Err(Error::config(format!(
                "unknown norm mode '{other}' (expected inter_ocular|bbox_diag)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Decoder {
    #[default]
    Argmax,
    /// Softmax-weighted expectation over bin positions.
    Expectation,
}

/// Decode per-axis logits into pixel coordinates, one [x, y] per (n, k).
pub fn decode_simcc(logits: &SimCCLogits, k_split: usize) -> Vec<[f64; 2]> {
    decode_simcc_with(logits, k_split, Decoder::Argmax)
}

pub fn decode_simcc_with(logits: &SimCCLogits, k_split: usize, decoder: Decoder) -> Vec<[f64; 2]> {
    let (n, k, l) = logits.dims();
    let xv = logits.x.values();
    let yv = logits.y.values();
    decode_simcc_raw(&xv, &yv, n * k, l, k_split, decoder)
}

/// Raw-buffer decoder; `rows` = N*K rows of length `l` per axis.
pub fn decode_simcc_raw(
    x: &[f64],
    y: &[f64],
    rows: usize,
    l: usize,
    k_split: usize,
    decoder: Decoder,
) -> Vec<[f64; 2]> {
    let coord = |row: &[f64]| -> f64 {
        match decoder {
            Decoder::Argmax => {
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as f64 / k_split as f64
            }
            Decoder::Expectation => {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                let e: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(i, v)| i as f64 * (v - m).exp() / z)
                    .sum();
                e / k_split as f64
            }
        }
    };
    (0..rows)
        .map(|r| [coord(&x[r * l..(r + 1) * l]), coord(&y[r * l..(r + 1) * l])])
        .collect()
}

/// Ground-truth side of one sample for NME computation.
#[derive(Clone, Copy)]
pub struct NmeSample<'a> {
    pub gts: &'a [[f64; 2]],
    pub visibility: &'a [u8],
    pub bbox: [f64; 4],
    pub eye_left: usize,
    pub eye_right: usize,
}

impl<'a> From<&'a Sample> for NmeSample<'a> {
    fn from(s: &'a Sample) -> Self {
        NmeSample {
            gts: &s.landmarks,
            visibility: &s.visibility,
            bbox: s.bbox,
            eye_left: s.eye_left,
            eye_right: s.eye_right,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmeOutcome {
    pub value: f64,
    /// Samples skipped for a degenerate normalizer or no visible keypoints.
    pub skipped: usize,
}

/// Normalized mean error: per sample, the mean Euclidean error over visible
/// keypoints divided by the reference distance (inter-ocular or bbox
/// diagonal), then averaged over samples. Samples with a non-positive
/// normalizer or no visible keypoints are skipped and counted.
pub fn nme(preds: &[Vec<[f64; 2]>], samples: &[NmeSample], mode: NormMode) -> Result<NmeOutcome> {
    if preds.len() != samples.len() || samples.is_empty() {
        return Err(Error::contract(format!(
            "nme: {} predictions for {} samples",
            preds.len(),
            samples.len()
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (p, s) in preds.iter().zip(samples.iter()) {
        if p.len() != s.gts.len() {
            return Err(Error::contract("nme: keypoint count mismatch".to_string()));
        }
        let d = match mode {
            NormMode::InterOcular => {
                let (a, b) = (s.gts[s.eye_left], s.gts[s.eye_right]);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            }
            NormMode::BboxDiag => (s.bbox[2].powi(2) + s.bbox[3].powi(2)).sqrt(),
        };
        let mut err = 0.0;
        let mut vis = 0usize;
        for ((pp, gp), &v) in p.iter().zip(s.gts.iter()).zip(s.visibility.iter()) {
            if v == 1 {
                err += ((pp[0] - gp[0]).powi(2) + (pp[1] - gp[1]).powi(2)).sqrt();
                vis += 1;
            }
        }
        if d <= 0.0 || vis == 0 {
            skipped += 1;
            continue;
        }
        total += err / (vis as f64 * d);
        used += 1;
    }
    if used == 0 {
        return Err(Error::contract("nme: every sample was skipped"));
    }
    Ok(NmeOutcome { value: total / used as f64, skipped })
}

/// Full per-model evaluation output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_digest: String,
    pub norm_mode: String,
    pub nme: f64,
    /// Mean pixel error per keypoint index, visible instances only.
    pub per_keypoint_px: Vec<f64>,
    pub params_trainable: usize,
    pub params_total: usize,
    pub flops: u64,
    pub n_samples: usize,
    pub skipped_samples: usize,
    pub config_digest: String,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "model_id,dataset_digest,norm_mode,nme,params_trainable,params_total,flops,n_samples"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.17e},{},{},{},{}",
            self.model_id,
            self.dataset_digest,
            self.norm_mode,
            self.nme,
            self.params_trainable,
            self.params_total,
            self.flops,
            self.n_samples
        )
    }
}

/// Deterministic full-dataset evaluation pass.
pub fn evaluate(model: &Model, ds: &Dataset, mode: NormMode) -> Result<EvalReport> {
    if ds.samples.is_empty() {
        return Err(Error::contract("evaluate: empty dataset"));
    }
    if ds.resolution != model.backbone.input_resolution {
        return Err(Error::shape(
            "evaluate",
            format!("dataset {} px vs model {} px", ds.resolution, model.backbone.input_resolution),
        ));
    }
    let k = model.head.keypoints;
    let mut preds: Vec<Vec<[f64; 2]>> = Vec::with_capacity(ds.samples.len());
    for chunk in ds.samples.chunks(32) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let tape = Tape::new();
        let bm = model.bind(&tape)?;
        let batch = match model.modality {
            Modality::Rgb => batch_rgb(&tape, &refs, ds.resolution)?,
            Modality::Thermal => batch_thermal(&tape, &refs, ds.resolution)?,
        };
        let logits = bm.forward(&batch)?;
        let flat = decode_simcc(&logits, model.head.k_split);
        for s in 0..refs.len() {
            preds.push(flat[s * k..(s + 1) * k].to_vec());
        }
    }

    let nme_samples: Vec<NmeSample> = ds.samples.iter().map(NmeSample::from).collect();
    let outcome = nme(&preds, &nme_samples, mode)?;

    let mut per_kp = vec![0.0; k];
    let mut per_kp_n = vec![0usize; k];
    for (p, s) in preds.iter().zip(ds.samples.iter()) {
        for (ki, ((pp, gp), &v)) in
            p.iter().zip(s.landmarks.iter()).zip(s.visibility.iter()).enumerate()
        {
            if v == 1 {
                per_kp[ki] += ((pp[0] - gp[0]).powi(2) + (pp[1] - gp[1]).powi(2)).sqrt();
                per_kp_n[ki] += 1;
            }
        }
    }
    for (acc, n) in per_kp.iter_mut().zip(per_kp_n.iter()) {
        if *n > 0 {
            *acc /= *n as f64;
        }
    }

    let count = model.param_count();
    Ok(EvalReport {
        model_id: format!("{}-{}", model.backbone.variant.name(), model.modality.name()),
        dataset_digest: format!("{:016x}", ds.digest()),
        norm_mode: mode.name().to_string(),
        nme: outcome.value,
        per_keypoint_px: per_kp,
        params_trainable: count.trainable,
        params_total: count.total,
        flops: model.flop_count(ds.resolution),
        n_samples: ds.samples.len(),
        skipped_samples: outcome.skipped,
        config_digest: String::new(),
    })
}

/// One arm x seed measurement for ordering checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub nme: f64,
    pub dataset_digest: String,
}

/// Ordering relation between two arms' seed-averaged NMEs.
#[derive(Clone, Debug)]
pub enum Order {
    /// left <= right
    Le,
    /// left < right by at least this relative margin: left <= right * (1 - m)
    LtRel(f64),
}

#[derive(Clone, Debug)]
pub struct OrderingCheck {
    pub left: String,
    pub right: String,
    pub order: Order,
}

#[derive(Clone, Debug)]
pub struct CompareOutcome {
    /// Seed-averaged mean NME per arm, in first-appearance order.
    pub means: Vec<(String, f64)>,
    pub verdicts: Vec<(String, bool)>,
    pub pass: bool,
}

impl CompareOutcome {
    pub fn csv(&self) -> String {
        let mut out = String::from("arm,mean_nme\n");
        for (arm, m) in &self.means {
            out.push_str(&format!("{arm},{m:.17e}\n"));
        }
        out.push_str("check,pass\n");
        for (c, ok) in &self.verdicts {
            out.push_str(&format!("{c},{ok}\n"));
        }
        out
    }
}

/// Check NME orderings across ablation arms over seed-averaged means.
/// All results must share one dataset digest.
pub fn compare_arms(results: &[ArmResult], checks: &[OrderingCheck]) -> Result<CompareOutcome> {
    if results.len() < 2 {
        return Err(Error::contract("compare_arms: need at least two results"));
    }
    let digest = &results[0].dataset_digest;
    if results.iter().any(|r| &r.dataset_digest != digest) {
        return Err(Error::contract("compare_arms: dataset digest mismatch across results"));
    }
    let mut means: Vec<(String, f64, usize)> = Vec::new();
    for r in results {
        match means.iter_mut().find(|(arm, _, _)| arm == &r.arm) {
            Some((_, sum, n)) => {
                *sum += r.nme;
                *n += 1;
            }
            None => means.push((r.arm.clone(), r.nme, 1)),
        }
    }
    let means: Vec<(String, f64)> =
        means.into_iter().map(|(arm, sum, n)| (arm, sum / n as f64)).collect();
    let mean_of = |arm: &str| -> Result<f64> {
        means
            .iter()
            .find(|(a, _)| a == arm)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::contract(format!("compare_arms: unknown arm '{arm}'")))
    };
    let mut verdicts = Vec::with_capacity(checks.len());
    let mut pass = true;
    for c in checks {
        let (l, r) = (mean_of(&c.left)?, mean_of(&c.right)?);
        let (label, ok) = match c.order {
            Order::Le => (format!("{} <= {}", c.left, c.right), l <= r),
            Order::LtRel(m) => (
                format!("{} < {} by >= {:.1}% rel", c.left, c.right, m * 100.0),
                l <= r * (1.0 - m),
            ),
        };
        pass &= ok;
        verdicts.push((label, ok));
    }
    Ok(CompareOutcome { means, verdicts, pass })
}
