//! Backbone and feature pyramid.
//!
//! Desk-scale stand-in for the full-size backbone: a two-conv stem (stride 4
//! overall) followed by three residual stages at strides 8/16/32 producing
//! C3/C4/C5, then a five-level FPN (P3..P7). Criss-cross attention modules
//! are applied at the backbone outputs and/or the FPN outputs depending on
//! the variant.

use std::time::Instant;

use crate::attention::{AttentionConfig, RccaModule};
use crate::error::Result;
use crate::tensor::{activation, bilinear_resize, conv2d, Activation, Tensor};

use super::weights::PipelineWeights;
use super::{Insertion, Timings, VariantSpec};

/// Backbone and pyramid maps for one frame.
pub struct FeatureMaps {
    pub c3: Tensor,
    pub c4: Tensor,
    pub c5: Tensor,
    /// P3..P7 in order.
    pub pyramid: Vec<Tensor>,
}

/// Strides of P3..P7 relative to the input image.
pub const PYRAMID_STRIDES: [usize; 5] = [8, 16, 32, 64, 128];

fn conv_relu(
    w: &PipelineWeights,
    name: &str,
    x: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (kernel, bias) = w.conv(name)?;
    Ok(activation(
        &conv2d(x, kernel, &bias, stride, padding)?,
        Activation::Relu,
    ))
}

fn conv_plain(
    w: &PipelineWeights,
    name: &str,
    x: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (kernel, bias) = w.conv(name)?;
    conv2d(x, kernel, &bias, stride, padding)
}

/// Two 3×3 convs with a skip connection.
fn residual_block(w: &PipelineWeights, name: &str, x: &Tensor) -> Result<Tensor> {
    let h = conv_relu(w, &format!("{name}.conv1"), x, 1, 1)?;
    let h = conv_plain(w, &format!("{name}.conv2"), &h, 1, 1)?;
    Ok(activation(&h.add(x)?, Activation::Relu))
}

fn attention_module(
    w: &PipelineWeights,
    variant: &VariantSpec,
    prefix: &str,
    channels: usize,
) -> Result<RccaModule> {
    let cfg = AttentionConfig {
        channels,
        reduction: variant.attention_reduction,
        recurrence: variant.attention_recurrence,
        share_weights: true,
    };
    RccaModule::new(cfg, vec![w.attention_site(prefix)?])
}

/// Run the backbone and FPN; attention timings are accumulated separately
/// from the conv stages so the benchmark can report them per stage.
pub fn extract_features(
    image: &Tensor,
    weights: &PipelineWeights,
    variant: &VariantSpec,
    timings: &mut Timings,
) -> Result<FeatureMaps> {
    variant.validate_input(image)?;

    let t0 = Instant::now();
    let stem = conv_relu(weights, "backbone.stem.0", image, 2, 1)?;
    let stem = conv_relu(weights, "backbone.stem.1", &stem, 2, 1)?;
    let mut stages = Vec::with_capacity(3);
    let mut cur = stem;
    for s in 1..=3 {
        cur = conv_relu(weights, &format!("backbone.s{s}.down"), &cur, 2, 1)?;
        cur = residual_block(weights, &format!("backbone.s{s}.b1"), &cur)?;
        cur = residual_block(weights, &format!("backbone.s{s}.b2"), &cur)?;
        stages.push(cur.clone());
    }
    let [mut c3, mut c4, mut c5] = <[Tensor; 3]>::try_from(stages).expect("three stages");
    timings.backbone += t0.elapsed();

    if matches!(variant.insertion, Insertion::Backbone | Insertion::Both) {
        let t = Instant::now();
        for (map, site, ch) in [
            (&mut c3, "attn.backbone.c3", variant.backbone_channels[0]),
            (&mut c4, "attn.backbone.c4", variant.backbone_channels[1]),
            (&mut c5, "attn.backbone.c5", variant.backbone_channels[2]),
        ] {
            let module = attention_module(weights, variant, site, ch)?;
            *map = module.forward(map)?;
        }
        timings.attention += t.elapsed();
    }

    let t1 = Instant::now();
    let l5 = conv_plain(weights, "fpn.lateral.5", &c5, 1, 0)?;
    let l4 = conv_plain(weights, "fpn.lateral.4", &c4, 1, 0)?;
    let l3 = conv_plain(weights, "fpn.lateral.3", &c3, 1, 0)?;
    let p5_pre = l5;
    let up5 = bilinear_resize(&p5_pre, l4.shape()[1], l4.shape()[2])?;
    let p4_pre = l4.add(&up5)?;
    let up4 = bilinear_resize(&p4_pre, l3.shape()[1], l3.shape()[2])?;
    let p3_pre = l3.add(&up4)?;
    let p3 = conv_plain(weights, "fpn.smooth.3", &p3_pre, 1, 1)?;
    let p4 = conv_plain(weights, "fpn.smooth.4", &p4_pre, 1, 1)?;
    let p5 = conv_plain(weights, "fpn.smooth.5", &p5_pre, 1, 1)?;
    let p6 = conv_plain(weights, "fpn.down.6", &p5, 2, 1)?;
    let p7 = conv_plain(weights, "fpn.down.7", &p6, 2, 1)?;
    let mut pyramid = vec![p3, p4, p5, p6, p7];
    timings.fpn += t1.elapsed();

    if matches!(variant.insertion, Insertion::Fpn | Insertion::Both) {
        let t = Instant::now();
        for (i, p) in pyramid.iter_mut().enumerate() {
            let site = format!("attn.fpn.p{}", i + 3);
            let module = attention_module(weights, variant, &site, variant.fpn_channels)?;
            *p = module.forward(p)?;
        }
        timings.attention += t.elapsed();
    }

    Ok(FeatureMaps {
        c3,
        c4,
        c5,
        pyramid,
    })
}

/// Prototype branch: two 3×3 convs on P3, upsample to quarter resolution,
/// 1×1 to `k` relu-activated prototype maps.
pub fn protonet_forward(
    p3: &Tensor,
    weights: &PipelineWeights,
    variant: &VariantSpec,
    image_h: usize,
    image_w: usize,
) -> Result<Tensor> {
    let h = conv_relu(weights, "proto.conv1", p3, 1, 1)?;
    let h = conv_relu(weights, "proto.conv2", &h, 1, 1)?;
    let h = bilinear_resize(&h, image_h / 4, image_w / 4)?;
    let h = conv_plain(weights, "proto.out", &h, 1, 0)?;
    debug_assert_eq!(h.shape()[0], variant.prototype_count);
    Ok(activation(&h, Activation::Relu))
}

/// Raw per-level head outputs: class logits, box regressions, coefficients.
pub struct HeadOutput {
    /// `[2a, h, w]` background/instrument logits per anchor.
    pub class_logits: Tensor,
    /// `[4a, h, w]`.
    pub box_regression: Tensor,
    /// `[k·a, h, w]`, tanh-activated.
    pub coefficients: Tensor,
}

/// Shared prediction head applied to one pyramid level.
pub fn head_forward(
    p: &Tensor,
    weights: &PipelineWeights,
    _variant: &VariantSpec,
) -> Result<HeadOutput> {
    let tower = conv_relu(weights, "head.tower", p, 1, 1)?;
    let class_logits = conv_plain(weights, "head.cls", &tower, 1, 0)?;
    let box_regression = conv_plain(weights, "head.box", &tower, 1, 0)?;
    let coefficients = activation(
        &conv_plain(weights, "head.coef", &tower, 1, 0)?,
        Activation::Tanh,
    );
    Ok(HeadOutput {
        class_logits,
        box_regression,
        coefficients,
    })
}
