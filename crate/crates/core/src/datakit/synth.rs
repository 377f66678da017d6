//! Synthetic three-stage corpus generator.
//!
//! Renders capsule-shaped "instruments" entering from the image border over
//! textured backgrounds. Stage 1 shares the training distribution, stage 2
//! draws from a held-out (brighter) background palette pool, and stage 3
//! shifts the shape family (tapered tools) and layers heavy nuisances:
//! specular blobs, haze, low light and near-transparent instruments.
//! Everything is reproducible from (stage, count, seed); each frame derives
//! its own seed so frames can be rendered in any order.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labelmap::{write_labelmap, InstanceLabelMap};
use crate::tensor::Tensor;

use super::manifest::{load_manifest, save_manifest, DatasetManifest, FrameRecord, Stage};
use super::write_image;

/// Frame side length of the generated corpus.
pub const SYNTH_SIZE: usize = 64;

/// Stages 1 shares the training distribution; stages 2/3 have their own.
fn distribution_id(stage: Stage) -> u64 {
    match stage {
        Stage::Train | Stage::Stage1 => 0,
        Stage::Stage2 => 2,
        Stage::Stage3 => 3,
    }
}

fn frame_rng(stage: Stage, seed: u64, index: usize) -> ChaCha8Rng {
    let mixed = seed
        ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (distribution_id(stage) << 56);
    ChaCha8Rng::seed_from_u64(mixed)
}

struct Capsule {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    radius: f64,
    /// Tip radius as a fraction of `radius` (1 = constant width).
    taper: f64,
    /// Blend weight of the instrument over the background.
    alpha: f64,
    shade: f64,
}

impl Capsule {
    /// (distance to axis, position along axis in [0,1]) for a pixel.
    fn axis_distance(&self, px: f64, py: f64) -> (f64, f64) {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((px - self.x0) * dx + (py - self.y0) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (self.x0 + t * dx, self.y0 + t * dy);
        (((px - cx).powi(2) + (py - cy).powi(2)).sqrt(), t)
    }

    fn covers(&self, px: f64, py: f64) -> bool {
        let (d, t) = self.axis_distance(px, py);
        d <= self.radius * (1.0 - (1.0 - self.taper) * t)
    }
}

/// A capsule entering from a random border point, pointing inward.
fn sample_capsule(rng: &mut ChaCha8Rng, stage: Stage, size: usize) -> Capsule {
    let s = size as f64;
    let side = rng.random_range(0u32..4);
    let along = rng.random_range(0.1..0.9) * s;
    let (x0, y0, inward) = match side {
        0 => (along, 0.0, std::f64::consts::FRAC_PI_2),
        1 => (along, s, -std::f64::consts::FRAC_PI_2),
        2 => (0.0, along, 0.0),
        _ => (s, along, std::f64::consts::PI),
    };
    let angle = inward + rng.random_range(-0.6..0.6);
    let length = rng.random_range(0.45..0.95) * s;
    let stage3 = stage == Stage::Stage3;
    Capsule {
        x0,
        y0,
        x1: x0 + angle.cos() * length,
        y1: y0 + angle.sin() * length,
        radius: rng.random_range(3.5..7.0),
        taper: if stage3 { rng.random_range(0.25..0.5) } else { 1.0 },
        alpha: if stage3 && rng.random_range(0.0..1.0) < 0.4 {
            rng.random_range(0.15..0.35) // near-transparent tool
        } else {
            rng.random_range(0.85..1.0)
        },
        shade: rng.random_range(0.55..0.8),
    }
}

/// Smooth sinusoidal background from a palette index; the palette pool is
/// what separates the training distribution from stage 2's held-out one.
fn background(palette: u64, rng: &mut ChaCha8Rng, size: usize, brighten: f64) -> Tensor {
    let mut prng = ChaCha8Rng::seed_from_u64(0xBAC4_0000 ^ palette);
    let base: [f64; 3] = std::array::from_fn(|_| prng.random_range(0.25..0.55) + brighten);
    let freq: [f64; 3] = std::array::from_fn(|_| prng.random_range(2.0..6.0));
    let phase_jitter: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut t = Tensor::zeros(vec![3, size, size]);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let fy = y as f64 / size as f64;
                let fx = x as f64 / size as f64;
                let v = base[c]
                    + 0.12 * (freq[c] * fx * std::f64::consts::TAU + phase_jitter).sin()
                    + 0.08 * (freq[(c + 1) % 3] * fy * std::f64::consts::TAU - phase_jitter).cos();
                t.set3(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    t
}

fn render_frame(
    stage: Stage,
    rng: &mut ChaCha8Rng,
    size: usize,
) -> (Tensor, InstanceLabelMap) {
    // train/stage1 share palettes 0..8; stage2 holds out 8..16 and brightens
    let (palette, brighten) = match stage {
        Stage::Train | Stage::Stage1 | Stage::Stage3 => (rng.random_range(0u64..8), 0.0),
        Stage::Stage2 => (rng.random_range(8u64..16), 0.12),
    };
    let mut image = background(palette, rng, size, brighten);
    let mut labels = InstanceLabelMap::empty(size, size);

    let n_instruments = rng.random_range(1u32..=3);
    let capsules: Vec<Capsule> = (0..n_instruments)
        .map(|_| sample_capsule(rng, stage, size))
        .collect();
    for (idx, cap) in capsules.iter().enumerate() {
        let id = idx as u32 + 1;
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if cap.covers(px, py) {
                    labels.set(x, y, id); // later instruments occlude earlier
                    let (d, t) = cap.axis_distance(px, py);
                    let shade = cap.shade * (1.0 - 0.35 * (d / cap.radius)) * (1.0 - 0.2 * t);
                    for c in 0..3 {
                        let tool = shade * [1.0, 0.98, 0.94][c]; // metallic gray
                        let bg = image.at3(c, y, x);
                        image.set3(c, y, x, bg + cap.alpha * (tool - bg));
                    }
                }
            }
        }
    }

    if stage == Stage::Stage3 {
        // specular blobs
        for _ in 0..rng.random_range(2u32..=5) {
            let (bx, by) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
            let r = rng.random_range(1.5..4.0);
            for y in 0..size {
                for x in 0..size {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    let w = (-d2 / (2.0 * r * r)).exp();
                    for c in 0..3 {
                        let v = image.at3(c, y, x);
                        image.set3(c, y, x, v + w * (1.0 - v));
                    }
                }
            }
        }
        // haze toward white, then low light
        let haze = rng.random_range(0.15..0.35);
        let light = rng.random_range(0.35..0.6);
        for v in image.data_mut() {
            *v = (*v + haze * (0.95 - *v)) * light;
        }
    }

    // occlusion may have erased an instrument entirely; keep ids contiguous
    labels.normalize_labels();
    (image, labels)
}

/// Generate `count` frames for one stage under `out_dir` (created if
/// needed), write a `manifest.json`, and return the loaded manifest.
pub fn synth_generate(
    stage: Stage,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let images = out_dir.join("images");
    let annotations = out_dir.join("annotations");
    for d in [&images, &annotations] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = frame_rng(stage, seed, i);
        let (image, labels) = render_frame(stage, &mut rng, SYNTH_SIZE);
        let name = format!("{stage}_{i:04}.png");
        write_image(&image, &images.join(&name))?;
        write_labelmap(&labels, &annotations.join(&name))?;
        records.push(FrameRecord {
            frame_id: format!("{stage}_{i:04}"),
            procedure: format!("synth_proc_{}", i % 7),
            stage,
            // relative paths keep the corpus relocatable
            image: Path::new("images").join(&name),
            annotation: Path::new("annotations").join(&name),
        });
    }
    let manifest_path = out_dir.join("manifest.json");
    save_manifest(&DatasetManifest::new(records), &manifest_path)?;
    load_manifest(&manifest_path)
}
