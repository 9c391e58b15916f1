//! Renderers for the two modalities.
//!
//! RGB: anti-aliased face ellipse with seeded sinusoidal texture and strong
//! alternating-polarity blobs at visible landmark sites, all scaled by the
//! illumination level. Thermal: a smooth temperature field built from the
//! scene geometry, box-blurred, compressed toward mid-gray and noised;
//! illumination never enters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SceneParams;

const BLOB_SIGMA: f64 = 1.4;
const RGB_BLOB_AMP: f64 = 0.55;
const THERMAL_BLOB_AMP: f64 = 0.3;

struct Texture {
    waves: Vec<(f64, f64, f64, f64)>, // (fx, fy, phase, amplitude)
}

impl Texture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = [0.28, 0.18, 0.12, 0.08];
        let waves = amps
            .iter()
            .map(|&a| {
                (
                    rng.gen_range(1.2..2.4),
                    rng.gen_range(1.2..2.4),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    a,
                )
            })
            .collect();
        Texture { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin())
            .sum()
    }
}

/// Smooth ellipse coverage in [0, 1] with a ~1 px transition band.
fn face_coverage(scene: &SceneParams, px: f64, py: f64) -> f64 {
    let t = scene.unplace([px, py]);
    let r = (t[0] * t[0] + t[1] * t[1]).sqrt();
    let edge_scale = scene.axes[0].min(scene.axes[1]);
    ((1.0 - r) * edge_scale * 0.9 + 0.5).clamp(0.0, 1.0)
}

fn blob_field(scene: &SceneParams, px: f64, py: f64, amp: f64) -> f64 {
    let (landmarks, visibility) = scene.landmarks();
    let mut v = 0.0;
    for (i, (p, &vis)) in landmarks.iter().zip(visibility.iter()).enumerate() {
        if vis == 0 {
            continue;
        }
        let d2 = (px - p[0]).powi(2) + (py - p[1]).powi(2);
        if d2 < (4.0 * BLOB_SIGMA) * (4.0 * BLOB_SIGMA) {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            v += sign * amp * (-d2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
        }
    }
    v
}

/// 3 x R x R RGB render in [0, 1].
pub fn render_rgb(scene: &SceneParams) -> Vec<f64> {
    let r = scene.resolution;
    let tex = Texture::new(scene.texture_seed);
    let bg_tex = Texture::new(scene.texture_seed.wrapping_add(1));
    let mut out = vec![0.0; 3 * r * r];
    let tints = [1.0, 0.82, 0.70];
    for iy in 0..r {
        for ix in 0..r {
            let (px, py) = (ix as f64 + 0.5, iy as f64 + 0.5);
            let alpha = face_coverage(scene, px, py);
            let face = 0.55 + tex.at(px, py) * 0.5;
            let bg = 0.12
                + 0.05 * ((px + py) / (2.0 * r as f64))
                + 0.04 * bg_tex.at(px * 0.35, py * 0.35);
            let base = bg * (1.0 - alpha) + face * alpha;
            let v = base + alpha * blob_field(scene, px, py, RGB_BLOB_AMP);
            for (ch, tint) in tints.iter().enumerate() {
                out[ch * r * r + iy * r + ix] =
                    (v * tint * scene.illumination).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// The undegraded thermal field (the scene's geometry mask): warm face
/// ellipse over a cool background with landmark-site temperature marks.
/// `render_thermal` with zero blur, compression and noise returns exactly
/// this map.
pub fn thermal_intensity_map(scene: &SceneParams) -> Vec<f64> {
    let r = scene.resolution;
    let mut out = vec![0.0; r * r];
    for iy in 0..r {
        for ix in 0..r {
            let (px, py) = (ix as f64 + 0.5, iy as f64 + 0.5);
            let alpha = face_coverage(scene, px, py);
            let t = scene.unplace([px, py]);
            let radial = (t[0] * t[0] + t[1] * t[1]).sqrt().min(1.0);
            let face = 0.60 + 0.10 * (1.0 - radial);
            let base = 0.30 * (1.0 - alpha) + face * alpha;
            let v = base + alpha * blob_field(scene, px, py, THERMAL_BLOB_AMP);
            out[iy * r + ix] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// 3x3 box blur (one pass), zero-gradient borders via edge clamping.
fn box_blur(img: &[f64], r: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * r];
    let at = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, r as i64 - 1) as usize;
        let yc = y.clamp(0, r as i64 - 1) as usize;
        img[yc * r + xc]
    };
    for iy in 0..r as i64 {
        for ix in 0..r as i64 {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += at(ix + dx, iy + dy);
                }
            }
            out[iy as usize * r as usize + ix as usize] = s / 9.0;
        }
    }
    out
}

/// 1 x R x R thermal render in [0, 1]: blurred, contrast-compressed and
/// noised geometry map. Independent of the illumination level.
pub fn render_thermal(scene: &SceneParams) -> Vec<f64> {
    let r = scene.resolution;
    let mut img = thermal_intensity_map(scene);
    if scene.gain != 1.0 || scene.offset != 0.0 {
        for v in img.iter_mut() {
            *v = 0.5 + (*v - 0.5) * scene.gain + scene.offset;
        }
    }
    for _ in 0..scene.blur_passes {
        img = box_blur(&img, r);
    }
    let c = scene.compression;
    if c > 0.0 {
        for v in img.iter_mut() {
            *v = 0.5 + (*v - 0.5) * (1.0 - c);
        }
    }
    if scene.noise_sigma > 0.0 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(scene.texture_seed.wrapping_mul(0x9e3779b97f4a7c15));
        for v in img.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += scene.noise_sigma * z;
        }
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}
