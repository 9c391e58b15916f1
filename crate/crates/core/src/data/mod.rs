//! Seeded procedural generator of paired RGB/thermal landmark scenes.
//!
//! Each scene is a textured face ellipse with 12 canonical landmarks
//! (4 eye corners, 2 eye centers, nose tip, 2 mouth corners, chin, 2 jaw
//! points). The RGB render carries high-frequency texture and high-contrast
//! landmark blobs scaled by an illumination level; the thermal render is a
//! smooth temperature field: blurred, contrast-compressed toward mid-gray and
//! noised, independent of illumination. That asymmetry is the cross-modal
//! gap the distillation pipeline bridges.
//!
//! Everything is a pure function of (seed, config). All per-sample payloads
//! are quantized through f32 at generation time so in-memory data and the
//! on-disk format (little-endian f32) agree exactly.

pub mod io;
mod render;

pub use render::{render_rgb, render_thermal, thermal_intensity_map};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::SimCCTarget;

/// Canonical landmark template in unit face coordinates (x right, y down,
/// origin at face center). Symmetric about x = 0.
pub const TEMPLATE: [[f64; 2]; 12] = [
    [-0.55, -0.30], // 0  left eye outer corner
    [-0.20, -0.30], // 1  left eye inner corner
    [0.20, -0.30],  // 2  right eye inner corner
    [0.55, -0.30],  // 3  right eye outer corner
    [-0.375, -0.30], // 4 left eye center
    [0.375, -0.30], // 5  right eye center
    [0.0, 0.10],    // 6  nose tip
    [-0.35, 0.45],  // 7  left mouth corner
    [0.35, 0.45],   // 8  right mouth corner
    [0.0, 0.80],    // 9  chin
    [-0.72, 0.35],  // 10 left jaw
    [0.72, 0.35],   // 11 right jaw
];

pub const KEYPOINTS: usize = TEMPLATE.len();
pub const EYE_LEFT: usize = 4;
pub const EYE_RIGHT: usize = 5;

/// Far-side landmarks become invisible above this yaw.
pub const YAW_OCCLUSION: f64 = 0.7;

/// Yaw narrows the whole face by up to this fraction...
const YAW_GLOBAL_SQUEEZE: f64 = 0.30;
/// ...and the far half by this much more.
const YAW_FAR_SQUEEZE: f64 = 0.55;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n: usize,
    pub resolution: usize,
    pub k_split: usize,
    pub split: String,
    /// Face center jitter around the image center, px.
    pub center_jitter: f64,
    /// Face half-width range as a fraction of the resolution.
    pub axes_min: f64,
    pub axes_max: f64,
    pub rot_max_deg: f64,
    pub yaw_max: f64,
    pub illum_min: f64,
    pub illum_max: f64,
    pub thermal_noise_sigma: f64,
    pub thermal_blur_passes: usize,
    pub thermal_compression: f64,
    /// Per-sample contrast gain drawn from [1 - j, 1 + j]: a sensor
    /// nuisance the RGB modality never sees.
    pub thermal_gain_jitter: f64,
    /// Per-sample level offset drawn from [-j, j].
    pub thermal_offset_jitter: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            n: 512,
            resolution: 64,
            k_split: 2,
            split: "train".to_string(),
            center_jitter: 3.0,
            axes_min: 0.30,
            axes_max: 0.40,
            rot_max_deg: 12.0,
            yaw_max: 0.875,
            illum_min: 0.55,
            illum_max: 1.0,
            thermal_noise_sigma: 0.015,
            thermal_blur_passes: 1,
            thermal_compression: 0.45,
            thermal_gain_jitter: 0.15,
            thermal_offset_jitter: 0.06,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::config("n must be >= 1"));
        }
        if self.resolution < 16 {
            return Err(Error::config("resolution must be >= 16"));
        }
        if self.k_split < 1 {
            return Err(Error::config("k_split must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.yaw_max)
            || !(0.0..=1.0).contains(&self.thermal_compression)
            || self.axes_min <= 0.0
            || self.axes_max < self.axes_min
            || self.illum_max < self.illum_min
            || self.thermal_noise_sigma < 0.0
            || !(0.0..1.0).contains(&self.thermal_gain_jitter)
            || !(0.0..0.5).contains(&self.thermal_offset_jitter)
        {
            return Err(Error::config("generator ranges out of bounds"));
        }
        Ok(())
    }
}

/// One sampled scene, fully determining both renders and the annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub resolution: usize,
    pub center: [f64; 2],
    /// Half-extents in px, [x, y].
    pub axes: [f64; 2],
    pub rotation_deg: f64,
    /// Lateral compression factor in [0, 1].
    pub yaw: f64,
    /// +1.0: the +x template half is the far side; -1.0: the -x half.
    pub yaw_side: f64,
    pub texture_seed: u64,
    pub illumination: f64,
    pub noise_sigma: f64,
    pub blur_passes: usize,
    pub compression: f64,
    /// Contrast gain applied around mid-gray before degradation.
    pub gain: f64,
    /// Level offset applied before degradation.
    pub offset: f64,
}

impl SceneParams {
    /// Forward map from template coordinates to pixel coordinates.
    pub fn place(&self, t: [f64; 2]) -> [f64; 2] {
        let mut x = t[0] * (1.0 - YAW_GLOBAL_SQUEEZE * self.yaw);
        if t[0] * self.yaw_side > 0.0 {
            x *= 1.0 - YAW_FAR_SQUEEZE * self.yaw;
        }
        let y = t[1];
        let th = self.rotation_deg.to_radians();
        let (s, c) = th.sin_cos();
        let xr = c * x - s * y;
        let yr = s * x + c * y;
        [self.center[0] + xr * self.axes[0], self.center[1] + yr * self.axes[1]]
    }

    /// Inverse of `place` up to the unit-disk radius: returns template-space
    /// coordinates for a pixel position, used by the renderers for the
    /// inside-the-face test.
    pub fn unplace(&self, p: [f64; 2]) -> [f64; 2] {
        let th = self.rotation_deg.to_radians();
        let (s, c) = th.sin_cos();
        let dx = (p[0] - self.center[0]) / self.axes[0];
        let dy = (p[1] - self.center[1]) / self.axes[1];
        let gx = c * dx + s * dy;
        let gy = -s * dx + c * dy;
        let mut tx = gx / (1.0 - YAW_GLOBAL_SQUEEZE * self.yaw);
        if gx * self.yaw_side > 0.0 {
            tx /= 1.0 - YAW_FAR_SQUEEZE * self.yaw;
        }
        [tx, gy]
    }

    /// Landmark pixel positions with visibility flags.
    pub fn landmarks(&self) -> (Vec<[f64; 2]>, Vec<u8>) {
        let r = self.resolution as f64;
        let mut pts = Vec::with_capacity(KEYPOINTS);
        let mut vis = Vec::with_capacity(KEYPOINTS);
        for t in TEMPLATE {
            let p = self.place(t);
            let occluded = self.yaw > YAW_OCCLUSION && t[0] * self.yaw_side > 0.0;
            let inside = p[0] >= 0.0 && p[0] < r && p[1] >= 0.0 && p[1] < r;
            pts.push(p);
            vis.push(u8::from(!occluded && inside));
        }
        (pts, vis)
    }
}

/// One paired scene: both renders plus annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// 3 x R x R in [0, 1]
    pub rgb: Vec<f64>,
    /// 1 x R x R in [0, 1]
    pub thermal: Vec<f64>,
    /// K x (x, y) px
    pub landmarks: Vec<[f64; 2]>,
    /// K flags in {0, 1}
    pub visibility: Vec<u8>,
    /// (x, y, w, h) px
    pub bbox: [f64; 4],
    pub eye_left: usize,
    pub eye_right: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub version: u32,
    pub seed: u64,
    pub split: String,
    pub resolution: usize,
    pub keypoints: usize,
    pub k_split: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Digest identifying the exact payload (checksum of the serialized
    /// samples); equal digests mean equal data.
    pub fn digest(&self) -> u64 {
        io::payload_checksum(self)
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Generate `cfg.n` paired samples deterministically from `cfg.seed`.
pub fn generate(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::hash::derive_seed(cfg.seed, "scenes"));
    let r = cfg.resolution as f64;
    let mut samples = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let jitter = cfg.center_jitter;
        let ax = r * rng.gen_range(cfg.axes_min..=cfg.axes_max);
        let scene = SceneParams {
            resolution: cfg.resolution,
            center: [
                r / 2.0 + rng.gen_range(-jitter..=jitter),
                r / 2.0 + rng.gen_range(-jitter..=jitter),
            ],
            axes: [ax, ax * rng.gen_range(1.05..=1.2)],
            rotation_deg: rng.gen_range(-cfg.rot_max_deg..=cfg.rot_max_deg),
            yaw: rng.gen_range(0.0..=cfg.yaw_max),
            yaw_side: if rng.gen::<bool>() { 1.0 } else { -1.0 },
            texture_seed: rng.gen(),
            illumination: rng.gen_range(cfg.illum_min..=cfg.illum_max),
            noise_sigma: cfg.thermal_noise_sigma,
            blur_passes: cfg.thermal_blur_passes,
            compression: cfg.thermal_compression,
            gain: 1.0 + rng.gen_range(-cfg.thermal_gain_jitter..=cfg.thermal_gain_jitter),
            offset: rng.gen_range(-cfg.thermal_offset_jitter..=cfg.thermal_offset_jitter),
        };
        samples.push(build_sample(&scene));
    }
    Ok(Dataset {
        version: io::FORMAT_VERSION,
        seed: cfg.seed,
        split: cfg.split.clone(),
        resolution: cfg.resolution,
        keypoints: KEYPOINTS,
        k_split: cfg.k_split,
        samples,
    })
}

fn build_sample(scene: &SceneParams) -> Sample {
    let (landmarks, visibility) = scene.landmarks();
    let rgb: Vec<f64> = render_rgb(scene).into_iter().map(quantize).collect();
    let thermal: Vec<f64> = render_thermal(scene).into_iter().map(quantize).collect();

    let r = scene.resolution as f64;
    let margin = 3.0;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, 0.0f64, 0.0f64);
    for (p, &v) in landmarks.iter().zip(visibility.iter()) {
        if v == 1 {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
    }
    if !x0.is_finite() {
        // no visible landmarks: fall back to the face center
        x0 = scene.center[0];
        y0 = scene.center[1];
        x1 = x0;
        y1 = y0;
    }
    let bx0 = (x0 - margin).max(0.0);
    let by0 = (y0 - margin).max(0.0);
    let bx1 = (x1 + margin).min(r - 1e-3);
    let by1 = (y1 + margin).min(r - 1e-3);

    Sample {
        rgb,
        thermal,
        landmarks: landmarks.iter().map(|p| [quantize(p[0]), quantize(p[1])]).collect(),
        visibility,
        bbox: [quantize(bx0), quantize(by0), quantize(bx1 - bx0), quantize(by1 - by0)],
        eye_left: EYE_LEFT,
        eye_right: EYE_RIGHT,
    }
}

/// SimCC bin index for a pixel coordinate: round(coord * k_split), clamped
/// to [0, L-1].
pub fn coord_to_bin(coord: f64, k_split: usize, bins: usize) -> usize {
    let b = (coord * k_split as f64).round();
    (b.max(0.0) as usize).min(bins - 1)
}

/// One-hot SimCC target for a single sample. Visible landmark coordinates
/// must lie within [0, resolution); invisible landmarks contribute all-zero
/// rows whatever their coordinates.
pub fn encode_target(
    landmarks: &[[f64; 2]],
    visibility: &[u8],
    resolution: usize,
    k_split: usize,
) -> Result<SimCCTarget> {
    encode_targets(&[(landmarks, visibility)], resolution, k_split)
}

/// Batched version of [`encode_target`].
pub fn encode_targets(
    batch: &[(&[[f64; 2]], &[u8])],
    resolution: usize,
    k_split: usize,
) -> Result<SimCCTarget> {
    let n = batch.len();
    let k = batch.first().map(|(lm, _)| lm.len()).unwrap_or(0);
    if n == 0 || k == 0 {
        return Err(Error::contract("encode_target: empty batch"));
    }
    let l = k_split * resolution;
    let mut x = vec![0.0; n * k * l];
    let mut y = vec![0.0; n * k * l];
    let mut vis = Vec::with_capacity(n * k);
    for (ni, (landmarks, visibility)) in batch.iter().enumerate() {
        if landmarks.len() != k || visibility.len() != k {
            return Err(Error::contract("encode_target: ragged batch"));
        }
        for (ki, (p, &v)) in landmarks.iter().zip(visibility.iter()).enumerate() {
            vis.push(v as f64);
            if v == 0 {
                continue;
            }
            let r = resolution as f64;
            if !(0.0..r).contains(&p[0]) || !(0.0..r).contains(&p[1]) {
                return Err(Error::contract(format!(
                    "visible landmark ({}, {}) outside [0, {r})",
                    p[0], p[1]
                )));
            }
            let row = (ni * k + ki) * l;
            x[row + coord_to_bin(p[0], k_split, l)] = 1.0;
            y[row + coord_to_bin(p[1], k_split, l)] = 1.0;
        }
    }
    let target = SimCCTarget { n, k, l, x, y, visibility: vis };
    target.validate()?;
    Ok(target)
}

/// Stack RGB images into an (N, 3, R, R) constant tensor.
pub fn batch_rgb(tape: &Tape, samples: &[&Sample], resolution: usize) -> Result<Tensor> {
    let mut vals = Vec::with_capacity(samples.len() * 3 * resolution * resolution);
    for s in samples {
        vals.extend_from_slice(&s.rgb);
    }
    tape.constant(vals, vec![samples.len(), 3, resolution, resolution])
}

/// Stack thermal images into an (N, 1, R, R) constant tensor.
pub fn batch_thermal(tape: &Tape, samples: &[&Sample], resolution: usize) -> Result<Tensor> {
    let mut vals = Vec::with_capacity(samples.len() * resolution * resolution);
    for s in samples {
        vals.extend_from_slice(&s.thermal);
    }
    tape.constant(vals, vec![samples.len(), 1, resolution, resolution])
}

/// SimCC targets for a batch of samples.
pub fn batch_targets(samples: &[&Sample], resolution: usize, k_split: usize) -> Result<SimCCTarget> {
    let pairs: Vec<(&[[f64; 2]], &[u8])> = samples
        .iter()
        .map(|s| (s.landmarks.as_slice(), s.visibility.as_slice()))
        .collect();
    encode_targets(&pairs, resolution, k_split)
}
