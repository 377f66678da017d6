//! Throughput measurement protocol and analytic complexity accounting.
//!
//! The benchmark runs a frame sequence through the full pipeline several
//! times (warmup runs excluded), reports frames/second per run and their
//! mean, and asserts that every measured run reproduces the first run's
//! outputs bit-exactly — there is no separate "fast" path to drift from
//! single-run inference. Timing covers `infer_frame` only; frames are held
//! in memory so disk I/O never enters the measurement.
//!
//! Runs are timed with process CPU time rather than wall time: inference is
//! single-threaded, so the two coincide on an idle core, but CPU time is
//! immune to preemption by unrelated load and gives stable fps figures on
//! shared machines.

use cpu_time::ProcessTime;

use crate::error::{Error, Result};
use crate::pipeline::weights::PipelineWeights;
use crate::pipeline::{infer_frame_timed, Timings, VariantSpec};
use crate::tensor::Tensor;

/// Seconds spent per pipeline stage over the measured runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct StageBreakdown {
    pub backbone: f64,
    pub attention: f64,
    pub fpn: f64,
    pub heads: f64,
    pub nms: f64,
    pub assembly: f64,
}

impl From<Timings> for StageBreakdown {
    fn from(t: Timings) -> Self {
        StageBreakdown {
            backbone: t.backbone.as_secs_f64(),
            attention: t.attention.as_secs_f64(),
            fpn: t.fpn.as_secs_f64(),
            heads: t.heads.as_secs_f64(),
            nms: t.nms.as_secs_f64(),
            assembly: t.assembly.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchResult {
    pub variant: String,
    pub input_height: usize,
    pub input_width: usize,
    pub frame_count: usize,
    /// Frames/second of each measured run, in run order.
    pub runs: Vec<f64>,
    pub mean_fps: f64,
    pub stages: StageBreakdown,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Run the sequence `warmup + repetitions` times; report per-run fps for
/// the measured repetitions and their arithmetic mean.
pub fn measure_throughput(
    variant: &VariantSpec,
    weights: &PipelineWeights,
    frames: &[Tensor],
    repetitions: usize,
    warmup: usize,
) -> Result<BenchResult> {
    if frames.is_empty() {
        return Err(Error::contract("measure_throughput: empty frame sequence"));
    }
    if repetitions == 0 {
        return Err(Error::config("measure_throughput: zero repetitions"));
    }
    let (h, w) = (frames[0].shape()[1], frames[0].shape()[2]);
    let mut reference = None;
    let mut runs = Vec::with_capacity(repetitions);
    let mut timings = Timings::default();
    for rep in 0..warmup + repetitions {
        let measured = rep >= warmup;
        let mut scratch = Timings::default();
        let t = if measured { &mut timings } else { &mut scratch };
        let start = ProcessTime::now();
        let mut outputs = Vec::with_capacity(frames.len());
        for frame in frames {
            outputs.push(infer_frame_timed(frame, weights, variant, t)?);
        }
        let elapsed = start.elapsed().as_secs_f64();
        match &reference {
            None => reference = Some(outputs),
            Some(r) => {
                if *r != outputs {
                    return Err(Error::contract(
                        "benchmark run diverged from earlier outputs; pipeline is not deterministic",
                    ));
                }
            }
        }
        if measured {
            runs.push(frames.len() as f64 / elapsed);
        }
    }
    Ok(BenchResult {
        variant: variant.name().to_string(),
        input_height: h,
        input_width: w,
        frame_count: frames.len(),
        mean_fps: mean(&runs),
        runs,
        stages: timings.into(),
    })
}

/// Affinity entry counts for one attention site.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct AttentionSiteCount {
    pub site: String,
    pub height: usize,
    pub width: usize,
    /// H·W·(H+W−1): entries a criss-cross affinity map holds.
    pub criss_cross_entries: u64,
    /// (H·W)²: what a dense non-local affinity would hold.
    pub dense_entries: u64,
}

/// Analytic per-stage multiply-accumulate and attention-entry counts; no
/// execution involved.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OpCountReport {
    pub variant: String,
    pub input_height: usize,
    pub input_width: usize,
    pub attention_sites: Vec<AttentionSiteCount>,
    pub total_criss_cross_entries: u64,
    pub total_dense_entries: u64,
    /// (stage name, MAC count) for backbone/attention/fpn/protonet/heads.
    pub stage_macs: Vec<(String, u64)>,
}

fn conv_macs(c_out: usize, c_in: usize, k: usize, h: usize, w: usize) -> u64 {
    (c_out * c_in * k * k * h * w) as u64
}

fn site_count(site: &str, h: usize, w: usize) -> AttentionSiteCount {
    AttentionSiteCount {
        site: site.to_string(),
        height: h,
        width: w,
        criss_cross_entries: crate::attention::affinity_entry_count(h, w),
        dense_entries: ((h * w) as u64).pow(2),
    }
}

/// MACs of one attention site: four projections, affinity and aggregation,
/// per recurrence pass.
fn attention_macs(c: usize, reduction: usize, recurrence: usize, h: usize, w: usize) -> u64 {
    let cq = (c / reduction).max(1);
    let n = (h * w) as u64;
    let span = (h + w - 1) as u64;
    let projections = n * ((2 * cq * c + c * c + 2 * c * c) as u64);
    let affinity = n * span * cq as u64;
    let aggregation = n * span * c as u64;
    recurrence as u64 * (projections + affinity + aggregation)
}

pub fn op_count_report(variant: &VariantSpec, input_h: usize, input_w: usize) -> Result<OpCountReport> {
    variant.validate_input(&Tensor::zeros(vec![3, input_h, input_w]))?;

    let [bc0, bc1, bc2] = variant.backbone_channels;
    let f = variant.fpn_channels;
    let k = variant.prototype_count;
    let a = variant.anchors_per_cell();
    let kp = variant.prototype_count;
    let (h, w) = (input_h, input_w);
    // P3..P5 follow the backbone strides; P6/P7 come from stride-2 convs
    // whose output extent is ceil(n/2), so they bottom out at 1, never 0
    let mut levels = [(h / 8, w / 8), (h / 16, w / 16), (h / 32, w / 32), (0, 0), (0, 0)];
    levels[3] = (levels[2].0.div_ceil(2), levels[2].1.div_ceil(2));
    levels[4] = (levels[3].0.div_ceil(2), levels[3].1.div_ceil(2));

    let mut sites = Vec::new();
    if variant.insertion.at_backbone() {
        for (c, s) in [("c3", 8), ("c4", 16), ("c5", 32)] {
            sites.push(site_count(&format!("attn.backbone.{c}"), h / s, w / s));
        }
    }
    if variant.insertion.at_fpn() {
        for (p, (lh, lw)) in (3..=7).zip(levels) {
            sites.push(site_count(&format!("attn.fpn.p{p}"), lh, lw));
        }
    }
    let total_cc: u64 = sites.iter().map(|s| s.criss_cross_entries).sum();
    let total_dense: u64 = sites.iter().map(|s| s.dense_entries).sum();

    let stem_mid = (bc0 / 2).max(1);
    let mut backbone = conv_macs(stem_mid, 3, 3, h / 2, w / 2)
        + conv_macs(bc0, stem_mid, 3, h / 4, w / 4);
    for (c_in, c_out, s) in [(bc0, bc0, 8), (bc0, bc1, 16), (bc1, bc2, 32)] {
        backbone += conv_macs(c_out, c_in, 3, h / s, w / s)
            + 4 * conv_macs(c_out, c_out, 3, h / s, w / s);
    }

    let mut attention = 0u64;
    if variant.insertion.at_backbone() {
        for (c, s) in [(bc0, 8), (bc1, 16), (bc2, 32)] {
            attention += attention_macs(
                c,
                variant.attention_reduction,
                variant.attention_recurrence,
                h / s,
                w / s,
            );
        }
    }
    if variant.insertion.at_fpn() {
        for (lh, lw) in levels {
            attention += attention_macs(
                f,
                variant.attention_reduction,
                variant.attention_recurrence,
                lh,
                lw,
            );
        }
    }

    let mut fpn = 0u64;
    for (c, s) in [(bc0, 8), (bc1, 16), (bc2, 32)] {
        fpn += conv_macs(f, c, 1, h / s, w / s); // lateral
        fpn += conv_macs(f, f, 3, h / s, w / s); // smooth
    }
    fpn += conv_macs(f, f, 3, levels[3].0, levels[3].1)
        + conv_macs(f, f, 3, levels[4].0, levels[4].1);

    let protonet = 2 * conv_macs(f, f, 3, h / 8, w / 8) + conv_macs(kp, f, 1, h / 4, w / 4);

    let mut heads = 0u64;
    for (lh, lw) in levels {
        heads += conv_macs(f, f, 3, lh, lw); // tower
        heads += conv_macs(2 * a + 4 * a + k * a, f, 1, lh, lw);
    }

    Ok(OpCountReport {
        variant: variant.name().to_string(),
        input_height: h,
        input_width: w,
        attention_sites: sites,
        total_criss_cross_entries: total_cc,
        total_dense_entries: total_dense,
        stage_macs: vec![
            ("backbone".to_string(), backbone),
            ("attention".to_string(), attention),
            ("fpn".to_string(), fpn),
            ("protonet".to_string(), protonet),
            ("heads".to_string(), heads),
        ],
    })
}
