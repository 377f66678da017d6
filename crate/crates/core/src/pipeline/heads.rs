//! Anchors, box decoding, Fast NMS and prototype mask assembly.

use crate::error::{Error, Result};
use crate::labelmap::BinaryMask;
use crate::tensor::{activation, Activation, Tensor};

use super::Detection;

/// Axis-aligned box, pixel units, corners (x0,y0) inclusive-exclusive
/// convention is not enforced; IoU treats coordinates as continuous.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxXyxy {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoxXyxy {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn iou(&self, other: &BoxXyxy) -> f64 {
        let ix = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let iy = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn clip(&self, width: f64, height: f64) -> BoxXyxy {
        BoxXyxy {
            x0: self.x0.clamp(0.0, width),
            y0: self.y0.clamp(0.0, height),
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
        }
    }
}

/// Grid-centered anchors for one pyramid level, clipped to the image.
///
/// For each cell (i,j) and ratio r: width = scale·√r, height = scale/√r,
/// centered at ((j+0.5)·stride, (i+0.5)·stride). Cell-major order, ratios
/// innermost.
pub fn generate_anchors(
    feature_h: usize,
    feature_w: usize,
    stride: usize,
    image_w: usize,
    image_h: usize,
    scale: f64,
    ratios: &[f64],
) -> Result<Vec<BoxXyxy>> {
    if ratios.is_empty() {
        return Err(Error::config("generate_anchors: empty ratio list"));
    }
    if scale <= 0.0 {
        return Err(Error::config("generate_anchors: scale must be positive"));
    }
    let mut anchors = Vec::with_capacity(feature_h * feature_w * ratios.len());
    for i in 0..feature_h {
        for j in 0..feature_w {
            let cx = (j as f64 + 0.5) * stride as f64;
            let cy = (i as f64 + 0.5) * stride as f64;
            for &r in ratios {
                let w = scale * r.sqrt();
                let h = scale / r.sqrt();
                anchors.push(
                    BoxXyxy {
                        x0: cx - w / 2.0,
                        y0: cy - h / 2.0,
                        x1: cx + w / 2.0,
                        y1: cy + h / 2.0,
                    }
                    .clip(image_w as f64, image_h as f64),
                );
            }
        }
    }
    Ok(anchors)
}

/// Standard center/size exponential box decoding.
///
/// (dx,dy) shift the center by fractions of the anchor extents; (dw,dh)
/// scale them exponentially (clamped to ±8 so malformed regressions cannot
/// produce infinities).
pub fn decode_box(anchor: &BoxXyxy, dx: f64, dy: f64, dw: f64, dh: f64) -> BoxXyxy {
    let aw = anchor.width();
    let ah = anchor.height();
    let acx = anchor.x0 + aw / 2.0;
    let acy = anchor.y0 + ah / 2.0;
    let cx = acx + dx * aw;
    let cy = acy + dy * ah;
    let w = aw * dw.clamp(-8.0, 8.0).exp();
    let h = ah * dh.clamp(-8.0, 8.0).exp();
    BoxXyxy {
        x0: cx - w / 2.0,
        y0: cy - h / 2.0,
        x1: cx + w / 2.0,
        y1: cy + h / 2.0,
    }
}

/// Fast NMS: one-shot matrix formulation.
///
/// Input must be sorted by confidence descending; it is truncated to
/// `top_k`. Detection i survives iff its max IoU against every
/// higher-scoring detection (kept or not) is ≤ `iou_threshold`. This can
/// suppress slightly more than sequential NMS: a box may be removed by a
/// box that is itself removed.
pub fn fast_nms(mut detections: Vec<Detection>, iou_threshold: f64, top_k: usize) -> Vec<Detection> {
    detections.truncate(top_k);
    let n = detections.len();
    let mut keep = vec![true; n];
    for i in 1..n {
        let mut max_iou: f64 = 0.0;
        for j in 0..i {
            max_iou = max_iou.max(detections[i].bbox.iou(&detections[j].bbox));
        }
        if max_iou > iou_threshold {
            keep[i] = false;
        }
    }
    detections
        .into_iter()
        .zip(keep)
        .filter_map(|(d, k)| k.then_some(d))
        .collect()
}

/// Pre-threshold mask probabilities for one detection at prototype
/// resolution: sigmoid of the coefficient-weighted prototype sum, zeroed
/// outside the (scaled) detection box.
pub fn mask_probabilities(
    prototypes: &Tensor,
    detection: &Detection,
    image_w: usize,
    image_h: usize,
) -> Result<Tensor> {
    let k = prototypes.shape()[0];
    if detection.coefficients.len() != k {
        return Err(Error::contract(format!(
            "assemble_masks: {} coefficients for {} prototypes",
            detection.coefficients.len(),
            k
        )));
    }
    let (ph, pw) = (prototypes.shape()[1], prototypes.shape()[2]);
    let mut lin = Tensor::zeros(vec![1, ph, pw]);
    {
        let out = lin.data_mut();
        let pd = prototypes.data();
        let n = ph * pw;
        for (j, &c) in detection.coefficients.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(&pd[j * n..(j + 1) * n]) {
                *o += c * p;
            }
        }
    }
    let mut prob = activation(&lin, Activation::Sigmoid);
    // crop: zero outside the detection box scaled to prototype resolution
    let sx = pw as f64 / image_w as f64;
    let sy = ph as f64 / image_h as f64;
    let bx0 = (detection.bbox.x0 * sx).floor().max(0.0) as usize;
    let by0 = (detection.bbox.y0 * sy).floor().max(0.0) as usize;
    let bx1 = ((detection.bbox.x1 * sx).ceil() as usize).min(pw);
    let by1 = ((detection.bbox.y1 * sy).ceil() as usize).min(ph);
    for y in 0..ph {
        for x in 0..pw {
            if x < bx0 || x >= bx1 || y < by0 || y >= by1 {
                prob.set3(0, y, x, 0.0);
            }
        }
    }
    Ok(prob)
}

/// Binary full-resolution mask: probabilities thresholded strictly above
/// 0.5 at prototype resolution, then nearest-neighbor upsampled.
pub fn assemble_mask(
    prototypes: &Tensor,
    detection: &Detection,
    image_w: usize,
    image_h: usize,
) -> Result<BinaryMask> {
    let prob = mask_probabilities(prototypes, detection, image_w, image_h)?;
    let (ph, pw) = (prob.shape()[1], prob.shape()[2]);
    let mut mask = BinaryMask::empty(image_w, image_h);
    for y in 0..image_h {
        let py = (y * ph) / image_h;
        for x in 0..image_w {
            let px = (x * pw) / image_w;
            if prob.at3(0, py, px) > 0.5 {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}
