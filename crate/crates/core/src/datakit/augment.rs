//! Training-time augmentation: photometric distortion, scaling, sample
//! cropping and mirroring.
//!
//! Photometric operations touch the image only; geometric operations apply
//! identically to image and label map, with nearest-neighbor label
//! resampling so instance ids survive untouched.

use rand::{Rng, RngExt};

fn sample_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

use crate::error::{Error, Result};
use crate::labelmap::InstanceLabelMap;
use crate::tensor::{bilinear_resize, Tensor};

/// Sampling ranges for one augmentation family.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentationConfig {
    /// Max absolute additive brightness shift (image values are in [0,1]).
    pub brightness: f64,
    /// Multiplicative contrast range around the mid-gray point.
    pub contrast: (f64, f64),
    /// Multiplicative saturation range.
    pub saturation: (f64, f64),
    /// Max absolute hue rotation in degrees.
    pub hue_degrees: f64,
    /// Geometric scale range.
    pub scale: (f64, f64),
    /// Crop window size as a fraction of the (scaled) extents.
    pub crop_fraction: (f64, f64),
    /// Number of crop placements tried before falling back to a center crop.
    pub crop_attempts: usize,
    pub mirror_probability: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            brightness: 32.0 / 255.0,
            contrast: (0.5, 1.5),
            saturation: (0.5, 1.5),
            hue_degrees: 18.0,
            scale: (0.75, 1.25),
            crop_fraction: (0.6, 1.0),
            crop_attempts: 50,
            mirror_probability: 0.5,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("scale", self.scale),
            ("crop_fraction", self.crop_fraction),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::config(format!(
                    "augmentation {name} range ({lo}, {hi}) is empty or non-positive"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.mirror_probability) {
            return Err(Error::config("mirror probability outside [0,1]"));
        }
        if self.crop_fraction.1 > 1.0 {
            return Err(Error::config("crop fraction above 1"));
        }
        Ok(())
    }
}

/// One concrete sample from the config's ranges. Crop placement candidates
/// are pre-drawn (as unit offsets) so applying a draw is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_degrees: f64,
    pub scale: f64,
    pub crop_fraction: f64,
    pub crop_candidates: Vec<(f64, f64)>,
    pub mirror: bool,
}

impl AugmentDraw {
    /// The draw that makes `augment` the identity.
    pub fn identity() -> Self {
        AugmentDraw {
            brightness: 0.0,
            contrast: 1.0,
            saturation: 1.0,
            hue_degrees: 0.0,
            scale: 1.0,
            crop_fraction: 1.0,
            crop_candidates: vec![(0.0, 0.0)],
            mirror: false,
        }
    }

    pub fn sample(cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(AugmentDraw {
            brightness: rng.random_range(-cfg.brightness..=cfg.brightness),
            contrast: sample_range(rng, cfg.contrast),
            saturation: sample_range(rng, cfg.saturation),
            hue_degrees: rng.random_range(-cfg.hue_degrees..=cfg.hue_degrees),
            scale: sample_range(rng, cfg.scale),
            crop_fraction: sample_range(rng, cfg.crop_fraction),
            crop_candidates: (0..cfg.crop_attempts.max(1))
                .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
                .collect(),
            mirror: rng.random_range(0.0..1.0) < cfg.mirror_probability,
        })
    }
}

fn photometric(image: &Tensor, draw: &AugmentDraw) -> Tensor {
    // skip no-op channels so the identity draw is bit-exact (the YIQ
    // hue-rotation matrices are approximate inverses of each other)
    let rotate_hue = draw.hue_degrees != 0.0;
    if !rotate_hue && draw.saturation == 1.0 && draw.contrast == 1.0 && draw.brightness == 0.0 {
        return image.clone();
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut out = image.clone();
    let (sin, cos) = draw.hue_degrees.to_radians().sin_cos();
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (image.at3(0, y, x), image.at3(1, y, x), image.at3(2, y, x));
            let mut rgb = if rotate_hue {
                // hue rotation in YIQ space (luma preserved)
                let yl = 0.299 * r + 0.587 * g + 0.114 * b;
                let i = 0.596 * r - 0.274 * g - 0.322 * b;
                let q = 0.211 * r - 0.523 * g + 0.312 * b;
                let ir = i * cos - q * sin;
                let qr = i * sin + q * cos;
                [
                    yl + 0.956 * ir + 0.621 * qr,
                    yl - 0.272 * ir - 0.647 * qr,
                    yl - 1.106 * ir + 1.703 * qr,
                ]
            } else {
                [r, g, b]
            };
            let gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
            for v in &mut rgb {
                *v = gray + draw.saturation * (*v - gray); // saturation
                *v = 0.5 + draw.contrast * (*v - 0.5); // contrast around mid-gray
                *v = (*v + draw.brightness).clamp(0.0, 1.0);
            }
            for c in 0..3 {
                out.set3(c, y, x, rgb[c]);
            }
        }
    }
    out
}

fn scale_labels(labels: &InstanceLabelMap, out_h: usize, out_w: usize) -> InstanceLabelMap {
    let (h, w) = (labels.height(), labels.width());
    let mut out = InstanceLabelMap::empty(out_w, out_h);
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64).floor() as usize;
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64).floor() as usize;
            out.set(x, y, labels.get(sx.min(w - 1), sy.min(h - 1)));
        }
    }
    out
}

fn crop_has_instance(labels: &InstanceLabelMap, x0: usize, y0: usize, cw: usize, ch: usize) -> bool {
    for y in y0..y0 + ch {
        for x in x0..x0 + cw {
            if labels.get(x, y) != 0 {
                return true;
            }
        }
    }
    false
}

/// Apply one augmentation draw to an aligned image / label-map pair.
///
/// Order: photometric → scale → crop → mirror. The crop uses the first
/// pre-drawn placement that retains at least one instance pixel (when the
/// frame has any), falling back to a center crop after the candidates are
/// exhausted.
pub fn augment(
    image: &Tensor,
    labels: &InstanceLabelMap,
    draw: &AugmentDraw,
) -> Result<(Tensor, InstanceLabelMap)> {
    if image.rank() != 3
        || image.shape()[0] != 3
        || image.shape()[1] != labels.height()
        || image.shape()[2] != labels.width()
    {
        return Err(Error::contract(format!(
            "augment: image {:?} does not align with {}x{} label map",
            image.shape(),
            labels.height(),
            labels.width()
        )));
    }
    if draw.scale <= 0.0 || !(0.0 < draw.crop_fraction && draw.crop_fraction <= 1.0) {
        return Err(Error::config("augment: non-positive scale or bad crop fraction"));
    }

    let mut img = photometric(image, draw);

    let (h, w) = (labels.height(), labels.width());
    let (sh, sw) = (
        ((h as f64 * draw.scale).round() as usize).max(1),
        ((w as f64 * draw.scale).round() as usize).max(1),
    );
    let mut lab = if (sh, sw) == (h, w) {
        labels.clone()
    } else {
        img = bilinear_resize(&img, sh, sw)?;
        scale_labels(labels, sh, sw)
    };

    let ch = ((sh as f64 * draw.crop_fraction).round() as usize).clamp(1, sh);
    let cw = ((sw as f64 * draw.crop_fraction).round() as usize).clamp(1, sw);
    if (ch, cw) != (sh, sw) {
        let has_instances = !lab.is_empty_frame();
        let place = |ux: f64, uy: f64| {
            (
                (ux * (sw - cw) as f64).round() as usize,
                (uy * (sh - ch) as f64).round() as usize,
            )
        };
        let mut chosen = None;
        for &(ux, uy) in &draw.crop_candidates {
            let (x0, y0) = place(ux, uy);
            if !has_instances || crop_has_instance(&lab, x0, y0, cw, ch) {
                chosen = Some((x0, y0));
                break;
            }
        }
        let (x0, y0) = chosen.unwrap_or(((sw - cw) / 2, (sh - ch) / 2));
        let mut cimg = Tensor::zeros(vec![3, ch, cw]);
        let mut clab = InstanceLabelMap::empty(cw, ch);
        for y in 0..ch {
            for x in 0..cw {
                for c in 0..3 {
                    cimg.set3(c, y, x, img.at3(c, y0 + y, x0 + x));
                }
                clab.set(x, y, lab.get(x0 + x, y0 + y));
            }
        }
        img = cimg;
        lab = clab;
    }

    if draw.mirror {
        let (mh, mw) = (lab.height(), lab.width());
        let mut mimg = Tensor::zeros(vec![3, mh, mw]);
        let mut mlab = InstanceLabelMap::empty(mw, mh);
        for y in 0..mh {
            for x in 0..mw {
                for c in 0..3 {
                    mimg.set3(c, y, x, img.at3(c, y, mw - 1 - x));
                }
                mlab.set(x, y, lab.get(mw - 1 - x, y));
            }
        }
        img = mimg;
        lab = mlab;
    }

    Ok((img, lab))
}
