//! Desk-scale YOLACT-style instance segmentation pipeline with optional
//! criss-cross attention at the backbone outputs, the pyramid outputs, or
//! both.
//!
//! The pipeline is pure: a frame plus a weight set maps deterministically to
//! a label map and a detection list, so frames can be processed in any order
//! or concurrently with identical results.

pub mod features;
pub mod heads;
pub mod weights;

use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::attention::AttentionConfig;
use crate::error::{Error, Result};
use crate::labelmap::InstanceLabelMap;
use crate::tensor::Tensor;

use heads::{assemble_mask, decode_box, fast_nms, generate_anchors, BoxXyxy};
use weights::{seed_attention_site, seed_conv, PipelineWeights, WeightInit};

/// Where attention modules are inserted, defining the four model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Insertion {
    None,
    Backbone,
    Fpn,
    Both,
}

impl Insertion {
    pub const ALL: [Insertion; 4] = [
        Insertion::None,
        Insertion::Backbone,
        Insertion::Fpn,
        Insertion::Both,
    ];

    pub fn at_backbone(self) -> bool {
        matches!(self, Insertion::Backbone | Insertion::Both)
    }

    pub fn at_fpn(self) -> bool {
        matches!(self, Insertion::Fpn | Insertion::Both)
    }
}

impl FromStr for Insertion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Insertion::None),
            "backbone" => Ok(Insertion::Backbone),
            "fpn" => Ok(Insertion::Fpn),
            "both" => Ok(Insertion::Both),
            other => Err(Error::config(format!(
                "unknown insertion '{other}' (expected none|backbone|fpn|both)"
            ))),
        }
    }
}

impl std::fmt::Display for Insertion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Insertion::None => "none",
            Insertion::Backbone => "backbone",
            Insertion::Fpn => "fpn",
            Insertion::Both => "both",
        })
    }
}

/// Full hyperparameter set of one pipeline variant.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VariantSpec {
    pub insertion: Insertion,
    /// Channel widths of the three backbone stages (C3/C4/C5).
    pub backbone_channels: [usize; 3],
    /// Width of every pyramid level.
    pub fpn_channels: usize,
    /// Number of mask prototypes (k).
    pub prototype_count: usize,
    /// Anchor scale as a multiple of the level stride.
    pub anchor_scale: f64,
    /// Aspect ratios per anchor position.
    pub anchor_ratios: Vec<f64>,
    pub nms_iou: f64,
    pub pre_nms_confidence: f64,
    pub display_confidence: f64,
    pub top_k: usize,
    pub attention_reduction: usize,
    pub attention_recurrence: usize,
}

impl VariantSpec {
    pub fn new(insertion: Insertion) -> Self {
        VariantSpec {
            insertion,
            backbone_channels: [32, 64, 128],
            fpn_channels: 64,
            prototype_count: 8,
            anchor_scale: 3.0,
            anchor_ratios: vec![1.0, 0.5, 2.0],
            nms_iou: 0.5,
            pre_nms_confidence: 0.05,
            display_confidence: 0.3,
            top_k: 200,
            attention_reduction: 8,
            attention_recurrence: 2,
        }
    }

    /// Published variant name.
    pub fn name(&self) -> &'static str {
        match self.insertion {
            Insertion::None => "Base YOLACT++",
            Insertion::Backbone => "CCAM-Backbone",
            Insertion::Fpn => "CCAM-FPN",
            Insertion::Both => "CCAM-Full",
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchor_ratios.is_empty() {
            return Err(Error::config("variant: empty anchor ratio list"));
        }
        if self.prototype_count == 0 {
            return Err(Error::config("variant: prototype count must be positive"));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::config("variant: nms_iou outside [0,1]"));
        }
        for (name, v) in [
            ("pre_nms_confidence", self.pre_nms_confidence),
            ("display_confidence", self.display_confidence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("variant: {name} outside [0,1]")));
            }
        }
        if self.attention_recurrence == 0 {
            return Err(Error::config("variant: attention recurrence must be ≥ 1"));
        }
        Ok(())
    }

    /// Input images must be RGB with both extents divisible by 32 so every
    /// pyramid level has integral extents.
    pub fn validate_input(&self, image: &Tensor) -> Result<()> {
        if image.rank() != 3 || image.shape()[0] != 3 {
            return Err(Error::config(format!(
                "input image must be [3,H,W], got {:?}",
                image.shape()
            )));
        }
        let (h, w) = (image.shape()[1], image.shape()[2]);
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::config(format!(
                "input extents {h}x{w} must be positive and divisible by 32"
            )));
        }
        Ok(())
    }

    /// Attention tensor prefixes this variant requires in a weight file.
    pub fn required_attention_sites(&self) -> Vec<String> {
        let mut sites = Vec::new();
        if self.insertion.at_backbone() {
            for c in 3..=5 {
                sites.push(format!("attn.backbone.c{c}"));
            }
        }
        if self.insertion.at_fpn() {
            for p in 3..=7 {
                sites.push(format!("attn.fpn.p{p}"));
            }
        }
        sites
    }
}

/// One detection: instrument confidence, pixel-space box and prototype
/// coefficients (tanh-activated, so each lies in (−1,1)).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Detection {
    pub confidence: f64,
    pub bbox: BoxXyxy,
    pub coefficients: Vec<f64>,
}

/// Wall-time per pipeline stage, accumulated across frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub backbone: Duration,
    pub attention: Duration,
    pub fpn: Duration,
    pub heads: Duration,
    pub nms: Duration,
    pub assembly: Duration,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.backbone + self.attention + self.fpn + self.heads + self.nms + self.assembly
    }
}

/// Fail early, naming the first missing tensor, when a weight file does not
/// carry the attention sites the variant needs.
pub fn validate_weights(weights: &PipelineWeights, variant: &VariantSpec) -> Result<()> {
    for site in variant.required_attention_sites() {
        weights.attention_site(&site)?;
    }
    Ok(())
}

/// Deterministic seeded weight set covering every layer of every variant
/// (all attention sites included), so one file can drive any insertion mode.
pub fn seeded_weights(variant: &VariantSpec, seed: u64) -> PipelineWeights {
    let [bc0, bc1, bc2] = variant.backbone_channels;
    let f = variant.fpn_channels;
    let k = variant.prototype_count;
    let a = variant.anchors_per_cell();
    let stem_mid = (bc0 / 2).max(1);

    let mut w = PipelineWeights::new();
    let mut init = WeightInit::new(seed);

    seed_conv(&mut w, &mut init, "backbone.stem.0", stem_mid, 3, 3);
    seed_conv(&mut w, &mut init, "backbone.stem.1", bc0, stem_mid, 3);
    for (s, (c_in, c_out)) in [(bc0, bc0), (bc0, bc1), (bc1, bc2)].into_iter().enumerate() {
        let s = s + 1;
        seed_conv(&mut w, &mut init, &format!("backbone.s{s}.down"), c_out, c_in, 3);
        for b in 1..=2 {
            seed_conv(&mut w, &mut init, &format!("backbone.s{s}.b{b}.conv1"), c_out, c_out, 3);
            seed_conv(&mut w, &mut init, &format!("backbone.s{s}.b{b}.conv2"), c_out, c_out, 3);
        }
    }
    for (l, c) in [(3, bc0), (4, bc1), (5, bc2)] {
        seed_conv(&mut w, &mut init, &format!("fpn.lateral.{l}"), f, c, 1);
    }
    for l in 3..=5 {
        seed_conv(&mut w, &mut init, &format!("fpn.smooth.{l}"), f, f, 3);
    }
    for l in 6..=7 {
        seed_conv(&mut w, &mut init, &format!("fpn.down.{l}"), f, f, 3);
    }
    seed_conv(&mut w, &mut init, "proto.conv1", f, f, 3);
    seed_conv(&mut w, &mut init, "proto.conv2", f, f, 3);
    seed_conv(&mut w, &mut init, "proto.out", k, f, 1);
    seed_conv(&mut w, &mut init, "head.tower", f, f, 3);
    seed_conv(&mut w, &mut init, "head.cls", 2 * a, f, 1);
    // nonzero class bias keeps seeded confidences spread across anchors
    w.insert("head.cls.bias", init.small_bias(2 * a));
    seed_conv(&mut w, &mut init, "head.box", 4 * a, f, 1);
    seed_conv(&mut w, &mut init, "head.coef", k * a, f, 1);

    for (site, c) in [("attn.backbone.c3", bc0), ("attn.backbone.c4", bc1), ("attn.backbone.c5", bc2)] {
        let cfg = AttentionConfig {
            channels: c,
            reduction: variant.attention_reduction,
            recurrence: variant.attention_recurrence,
            share_weights: true,
        };
        seed_attention_site(&mut w, &mut init, site, &cfg);
    }
    for p in 3..=7 {
        let cfg = AttentionConfig {
            channels: f,
            reduction: variant.attention_reduction,
            recurrence: variant.attention_recurrence,
            share_weights: true,
        };
        seed_attention_site(&mut w, &mut init, &format!("attn.fpn.p{p}"), &cfg);
    }
    w
}

fn stable_instrument_confidence(bg_logit: f64, fg_logit: f64) -> f64 {
    let m = bg_logit.max(fg_logit);
    let eb = (bg_logit - m).exp();
    let ef = (fg_logit - m).exp();
    ef / (eb + ef)
}

/// Full pipeline for one frame, recording per-stage wall time.
///
/// Detections below `display_confidence` are dropped. Overlapping masks are
/// resolved in confidence order (higher confidence claims contested pixels);
/// instance ids are assigned in descending confidence order starting at 1,
/// skipping detections whose mask claims no pixels.
pub fn infer_frame_timed(
    image: &Tensor,
    pipeline_weights: &PipelineWeights,
    variant: &VariantSpec,
    timings: &mut Timings,
) -> Result<(InstanceLabelMap, Vec<Detection>)> {
    variant.validate()?;
    variant.validate_input(image)?;
    validate_weights(pipeline_weights, variant)?;

    let (image_h, image_w) = (image.shape()[1], image.shape()[2]);
    let maps = features::extract_features(image, pipeline_weights, variant, timings)?;

    let t_heads = Instant::now();
    let prototypes =
        features::protonet_forward(&maps.pyramid[0], pipeline_weights, variant, image_h, image_w)?;

    let a = variant.anchors_per_cell();
    let k = variant.prototype_count;
    let mut candidates: Vec<Detection> = Vec::new();
    for (level, p) in maps.pyramid.iter().enumerate() {
        let stride = features::PYRAMID_STRIDES[level];
        let (fh, fw) = (p.shape()[1], p.shape()[2]);
        let anchors = generate_anchors(
            fh,
            fw,
            stride,
            image_w,
            image_h,
            variant.anchor_scale * stride as f64,
            &variant.anchor_ratios,
        )?;
        let out = features::head_forward(p, pipeline_weights, variant)?;
        for i in 0..fh {
            for j in 0..fw {
                for ai in 0..a {
                    let conf = stable_instrument_confidence(
                        out.class_logits.at3(2 * ai, i, j),
                        out.class_logits.at3(2 * ai + 1, i, j),
                    );
                    if conf < variant.pre_nms_confidence {
                        continue;
                    }
                    let anchor = &anchors[(i * fw + j) * a + ai];
                    let bbox = decode_box(
                        anchor,
                        out.box_regression.at3(4 * ai, i, j),
                        out.box_regression.at3(4 * ai + 1, i, j),
                        out.box_regression.at3(4 * ai + 2, i, j),
                        out.box_regression.at3(4 * ai + 3, i, j),
                    )
                    .clip(image_w as f64, image_h as f64);
                    if bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 {
                        continue;
                    }
                    let coefficients: Vec<f64> =
                        (0..k).map(|c| out.coefficients.at3(ai * k + c, i, j)).collect();
                    candidates.push(Detection {
                        confidence: conf,
                        bbox,
                        coefficients,
                    });
                }
            }
        }
    }
    // stable sort: ties keep deterministic level/cell/anchor traversal order
    candidates.sort_by(|x, y| y.confidence.partial_cmp(&x.confidence).unwrap());
    timings.heads += t_heads.elapsed();

    let t_nms = Instant::now();
    let kept = fast_nms(candidates, variant.nms_iou, variant.top_k);
    let detections: Vec<Detection> = kept
        .into_iter()
        .filter(|d| d.confidence >= variant.display_confidence)
        .collect();
    timings.nms += t_nms.elapsed();

    let t_asm = Instant::now();
    let mut label_map = InstanceLabelMap::empty(image_w, image_h);
    let mut next_id = 1u32;
    for det in &detections {
        let mask = assemble_mask(&prototypes, det, image_w, image_h)?;
        let mut claimed = false;
        for y in 0..image_h {
            for x in 0..image_w {
                if mask.get(x, y) && label_map.get(x, y) == 0 {
                    label_map.set(x, y, next_id);
                    claimed = true;
                }
            }
        }
        if claimed {
            next_id += 1;
        }
    }
    timings.assembly += t_asm.elapsed();

    Ok((label_map, detections))
}

/// Process frames concurrently. Per-frame inference is pure, so the result
/// is identical to mapping [`infer_frame`] sequentially, for any number of
/// worker threads.
pub fn infer_frames_parallel(
    frames: &[Tensor],
    pipeline_weights: &PipelineWeights,
    variant: &VariantSpec,
) -> Result<Vec<(InstanceLabelMap, Vec<Detection>)>> {
    use rayon::prelude::*;
    frames
        .par_iter()
        .map(|f| infer_frame(f, pipeline_weights, variant))
        .collect()
}

/// [`infer_frame_timed`] without the timing plumbing.
pub fn infer_frame(
    image: &Tensor,
    pipeline_weights: &PipelineWeights,
    variant: &VariantSpec,
) -> Result<(InstanceLabelMap, Vec<Detection>)> {
    infer_frame_timed(image, pipeline_weights, variant, &mut Timings::default())
}
