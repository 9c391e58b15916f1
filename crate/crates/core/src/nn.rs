//! Scalable convolutional backbones with SimCC coordinate-classification
//! heads.
//!
//! A model is a backbone (feature encoder) plus a head (per-keypoint linear
//! classifiers over discretized x/y coordinate bins). The two halves are
//! strictly separable: `forward` is literally `head(features(x))`, which is
//! what lets the distillation pipeline route one model's features through
//! another model's head.
//!
//! Backbone stages pair a 3x3 stride-1 conv with a small strided conv for
//! downsampling (a 3x3 stride-2 conv cannot halve an even resolution under
//! the exact-geometry contract of `conv2d`). At the default 64 px input the
//! three stages emit an 8x8 feature map.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};

/// Model size ladder; parameter counts strictly increase t < s < m.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    T,
    S,
    M,
}

impl Variant {
    pub fn stage_widths(self) -> Vec<usize> {
        match self {
            Variant::T => vec![4, 6, 8],
            Variant::S => vec![6, 8, 12],
            Variant::M => vec![8, 12, 16],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::T => "t",
            Variant::S => "s",
            Variant::M => "m",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t" => Ok(Variant::T),
            "s" => Ok(Variant::S),
            "m" => Ok(Variant::M),
            other => Err(Error::config(format!("unknown variant '{other}' (expected t|s|m)"))),
        }
    }
}

/// Input modality; fixes the channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Rgb,
    Thermal,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Thermal => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Thermal => "thermal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: Variant,
    pub input_channels: usize,
    pub input_resolution: usize,
    pub stage_widths: Vec<usize>,
    pub stage_strides: Vec<usize>,
}

impl BackboneConfig {
    pub fn new(variant: Variant, modality: Modality) -> Self {
        BackboneConfig {
            variant,
            input_channels: modality.channels(),
            input_resolution: 64,
            stage_widths: variant.stage_widths(),
            stage_strides: vec![2, 2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.stage_strides.len() {
            return Err(Error::config("stage_widths/stage_strides length mismatch"));
        }
        if self.stage_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("zero-width stage"));
        }
        if self.stage_strides.iter().any(|&s| s == 0) {
            return Err(Error::config("zero stride"));
        }
        let total: usize = self.stage_strides.iter().product();
        if self.input_resolution % total != 0 {
            return Err(Error::config(format!(
                "resolution {} not divisible by total stride {total}",
                self.input_resolution
            )));
        }
        Ok(())
    }

    /// (C, H_f, W_f) of the emitted feature map.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let total: usize = self.stage_strides.iter().product();
        let side = self.input_resolution / total;
        (*self.stage_widths.last().unwrap(), side, side)
    }

    pub fn feature_len(&self) -> usize {
        let (c, h, w) = self.feature_shape();
        c * h * w
    }
}

/// SimCC head hyperparameters. Each axis has `bins() = k_split * resolution`
/// coordinate bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub keypoints: usize,
    pub k_split: usize,
}

impl HeadSpec {
    pub fn bins(&self, resolution: usize) -> usize {
        self.k_split * resolution
    }
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec { keypoints: 12, k_split: 2 }
    }
}

/// Per-keypoint classification logits over x and y coordinate bins,
/// each of shape (N, K, L).
#[derive(Clone)]
pub struct SimCCLogits {
    pub x: Tensor,
    pub y: Tensor,
}

impl SimCCLogits {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        let (sx, sy) = (x.shape(), y.shape());
        if sx.len() != 3 || sx != sy {
            return Err(Error::shape("simcc_logits", format!("x {sx:?} vs y {sy:?}")));
        }
        Ok(SimCCLogits { x, y })
    }

    /// (N, K, L)
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.x.shape();
        (s[0], s[1], s[2])
    }
}

/// Feature map emitted by a backbone, shape (N, C, H_f, W_f).
#[derive(Clone)]
pub struct FeatureMap(pub Tensor);

impl FeatureMap {
    /// (N, C, H, W)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2], s[3])
    }
}

/// One named parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Ordered collection of named parameters. Order is creation order and is
/// part of the determinism contract (the optimizer walks it in order).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub params: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.params.push(ParamTensor { name: name.to_string(), shape, values, trainable: true });
    }

    pub fn push_zeros(&mut self, name: &str, shape: Vec<usize>) {
        let n: usize = shape.iter().product();
        self.params.push(ParamTensor {
            name: name.to_string(),
            shape,
            values: vec![0.0; n],
            trainable: true,
        });
    }

    pub fn push_values(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.params.push(ParamTensor { name: name.to_string(), shape, values, trainable: true });
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn numel_total(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn numel_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.numel()).sum()
    }

    /// Create tape leaves for every parameter, in order. Leaves require
    /// gradients only when the parameter is trainable and the set is not
    /// bound as frozen; frozen parameters still participate in the forward
    /// graph as constants, so gradients flow *through* them.
    pub fn bind(&self, tape: &Tape, frozen: bool) -> Result<Bound> {
        let tensors = self
            .params
            .iter()
            .map(|p| tape.leaf(p.values.clone(), p.shape.clone(), p.trainable && !frozen))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { tensors })
    }
}

/// Tape leaves for one bound ParamSet, index-aligned with `params`.
pub struct Bound {
    pub tensors: Vec<Tensor>,
}

impl Bound {
    /// Gradients per parameter, index-aligned; `None` where backward did not
    /// reach the leaf.
    pub fn grads(&self) -> Vec<Option<Vec<f64>>> {
        self.tensors.iter().map(|t| t.grad()).collect()
    }

    /// Like [`Bound::grads`] but moves the buffers out of the tape.
    pub fn take_grads(&self) -> Vec<Option<Vec<f64>>> {
        self.tensors.iter().map(|t| t.take_grad()).collect()
    }
}

/// Trainable/total parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
}

/// A backbone+head pair with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub backbone: BackboneConfig,
    pub head: HeadSpec,
    pub modality: Modality,
    pub frozen: bool,
    pub params: ParamSet,
}

/// Deterministic model initialization: fan-in-scaled uniform weights, zero
/// biases, all draws from a ChaCha8 stream seeded by `seed`.
pub fn init_model(cfg: BackboneConfig, head: HeadSpec, seed: u64) -> Result<Model> {
    cfg.validate()?;
    if head.keypoints == 0 || head.k_split == 0 {
        return Err(Error::config("head needs keypoints >= 1 and k_split >= 1"));
    }
    let modality = match cfg.input_channels {
        3 => Modality::Rgb,
        1 => Modality::Thermal,
        other => return Err(Error::config(format!("unsupported channel count {other}"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut c_in = cfg.input_channels;
    for (i, (&w, &s)) in cfg.stage_widths.iter().zip(cfg.stage_strides.iter()).enumerate() {
        params.push_uniform(&format!("backbone.stage{i}.conv.weight"), vec![w, c_in, 3, 3], c_in * 9, &mut rng);
        params.push_zeros(&format!("backbone.stage{i}.conv.bias"), vec![w]);
        if s > 1 {
            params.push_uniform(&format!("backbone.stage{i}.down.weight"), vec![w, w, s, s], w * s * s, &mut rng);
            params.push_zeros(&format!("backbone.stage{i}.down.bias"), vec![w]);
        }
        c_in = w;
    }
    let feat = cfg.feature_len();
    let bins = head.bins(cfg.input_resolution);
    let out = head.keypoints * bins;
    for axis in ["x", "y"] {
        params.push_uniform(&format!("head.{axis}.weight"), vec![feat, out], feat, &mut rng);
        params.push_zeros(&format!("head.{axis}.bias"), vec![out]);
    }
    Ok(Model { backbone: cfg, head, modality, frozen: false, params })
}

impl Model {
    /// Mark (or unmark) all parameters as frozen. Frozen models never enter
    /// an optimizer's parameter set and their bytes are unchanged by
    /// training; gradients still flow through them to upstream tensors.
    pub fn set_frozen(&mut self, flag: bool) {
        self.frozen = flag;
    }

    pub fn param_count(&self) -> ParamCount {
        let total = self.params.numel_total();
        ParamCount {
            trainable: if self.frozen { 0 } else { self.params.numel_trainable() },
            total,
        }
    }

    /// Analytic FLOP count for one forward pass at batch 1.
    ///
    /// Convention: convolutions count 2 FLOPs per multiply-accumulate (bias
    /// folds into the accumulator and is not counted); linear layers count
    /// `2 * in * out + out`, the bias add counted once per output.
    pub fn flop_count(&self, input_resolution: usize) -> u64 {
        let mut flops: u64 = 0;
        let mut side = input_resolution;
        let mut c_in = self.backbone.input_channels;
        for (&w, &s) in self.backbone.stage_widths.iter().zip(self.backbone.stage_strides.iter()) {
            flops += 2 * (w * c_in * 9 * side * side) as u64;
            if s > 1 {
                side /= s;
                flops += 2 * (w * w * s * s * side * side) as u64;
            }
            c_in = w;
        }
        let feat = c_in * side * side;
        let out = self.head.keypoints * self.head.bins(input_resolution);
        flops += 2 * (2 * feat * out + out) as u64;
        flops
    }

    /// Bind parameters onto a tape for one forward/backward pass.
    pub fn bind<'m>(&'m self, tape: &Tape) -> Result<BoundModel<'m>> {
        let bound = self.params.bind(tape, self.frozen)?;
        Ok(BoundModel { model: self, bound, tape: tape.clone() })
    }
}

/// A model bound to a tape: parameters exist as leaves and forward passes
/// can be recorded.
pub struct BoundModel<'m> {
    pub model: &'m Model,
    pub bound: Bound,
    tape: Tape,
}

impl<'m> BoundModel<'m> {
    fn tensor(&self, name: &str) -> Result<&Tensor> {
        let idx = self
            .model
            .params
            .index_of(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))?;
        Ok(&self.bound.tensors[idx])
    }

    /// Backbone forward: batch (N, C, R, R) -> feature map (N, C_f, H_f, W_f).
    pub fn features(&self, batch: &Tensor) -> Result<FeatureMap> {
        let s = batch.shape();
        if s.len() != 4 || s[1] != self.model.backbone.input_channels {
            return Err(Error::shape(
                "forward_features",
                format!(
                    "batch {s:?} for {} input ({} channels)",
                    self.model.modality.name(),
                    self.model.backbone.input_channels
                ),
            ));
        }
        let mut cur = batch.clone();
        for (i, &stride) in self.model.backbone.stage_strides.iter().enumerate() {
            let w = self.tensor(&format!("backbone.stage{i}.conv.weight"))?;
            let b = self.tensor(&format!("backbone.stage{i}.conv.bias"))?;
            cur = cur.conv2d(w, b, 1, 1)?.relu()?;
            if stride > 1 {
                // linear strided conv: learnable pooling without a second
                // relu, so narrow stages keep more live pathways
                let dw = self.tensor(&format!("backbone.stage{i}.down.weight"))?;
                let db = self.tensor(&format!("backbone.stage{i}.down.bias"))?;
                cur = cur.conv2d(dw, db, 0, stride)?;
            }
        }
        Ok(FeatureMap(cur))
    }

    /// Head forward: feature map -> per-axis logits (N, K, L). The feature
    /// map may come from any backbone whose flattened length matches this
    /// head's expected input (cross-injection relies on this).
    pub fn head(&self, features: &FeatureMap) -> Result<SimCCLogits> {
        let s = features.0.shape();
        let (n, flat) = (s[0], s[1..].iter().product::<usize>());
        let expect = self.model.backbone.feature_len();
        if flat != expect {
            return Err(Error::shape(
                "forward_head",
                format!("feature length {flat} vs head input {expect} (no adapter interposed)"),
            ));
        }
        let k = self.model.head.keypoints;
        let l = self.model.head.bins(self.model.backbone.input_resolution);
        let flat_t = features.0.reshape(vec![n, flat])?;
        let mut logits = Vec::with_capacity(2);
        for axis in ["x", "y"] {
            let w = self.tensor(&format!("head.{axis}.weight"))?;
            let b = self.tensor(&format!("head.{axis}.bias"))?;
            logits.push(flat_t.matmul(w)?.add(b)?.reshape(vec![n, k, l])?);
        }
        let y = logits.pop().unwrap();
        let x = logits.pop().unwrap();
        SimCCLogits::new(x, y)
    }

    /// Full forward: exactly `head(features(batch))`.
    pub fn forward(&self, batch: &Tensor) -> Result<SimCCLogits> {
        let f = self.features(batch)?;
        self.head(&f)
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Gradients aligned with `model.params`.
    pub fn grads(&self) -> Vec<Option<Vec<f64>>> {
        self.bound.grads()
    }

    /// Like [`BoundModel::grads`] but moves the buffers out of the tape.
    pub fn take_grads(&self) -> Vec<Option<Vec<f64>>> {
        self.bound.take_grads()
    }
}
