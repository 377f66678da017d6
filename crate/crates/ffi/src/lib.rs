//! C ABI for the segmentation toolkit.
//!
//! Conventions:
//! - Every fallible function returns an `int32_t` status: 0 success,
//!   1 contract/configuration violation, 2 I/O or format error, 3 invalid
//!   argument (null pointer, bad UTF-8, bad enum string).
//! - On failure a thread-local message is set; fetch it with
//!   `ccseg_last_error_message`.
//! - The pipeline is an opaque handle created by `ccseg_pipeline_new_seeded`
//!   or `ccseg_pipeline_load` and released with `ccseg_pipeline_free`.
//!   Handles are immutable after creation and safe to share across threads.
//! - Images are row-major f64 CHW (3·h·w values in [0,1]); label maps are
//!   row-major u32, 0 = background, instances 1..N.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;

use ccseg::error::Error;
use ccseg::labelmap::InstanceLabelMap;
use ccseg::metrics::frame_scores;
use ccseg::pipeline::weights::read_weights;
use ccseg::pipeline::{infer_frame, seeded_weights, validate_weights, Insertion, VariantSpec};
use ccseg::ranking::percentile;
use ccseg::tensor::Tensor;

/// Status codes returned by every fallible function.
pub const CCSEG_OK: i32 = 0;
/// A precondition or contract was violated.
pub const CCSEG_ERR_CONTRACT: i32 = 1;
/// File I/O or format failure.
pub const CCSEG_ERR_IO: i32 = 2;
/// Null pointer, bad UTF-8 or unknown enum string.
pub const CCSEG_ERR_ARGUMENT: i32 = 3;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_from(err: Error) -> i32 {
    let code = match err.exit_code() {
        1 => CCSEG_ERR_CONTRACT,
        _ => CCSEG_ERR_IO,
    };
    set_error(err.to_string());
    code
}

fn argument_error(msg: impl Into<String>) -> i32 {
    set_error(msg);
    CCSEG_ERR_ARGUMENT
}

/// Opaque pipeline handle: one variant plus its weights.
pub struct CcsegPipeline {
    variant: VariantSpec,
    weights: ccseg::pipeline::weights::PipelineWeights,
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len` bytes). Returns the full message length in bytes,
/// excluding the NUL. `buf` may be null to query the length.
#[no_mangle]
pub unsafe extern "C" fn ccseg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

unsafe fn parse_insertion(insertion: *const c_char) -> Result<Insertion, i32> {
    if insertion.is_null() {
        return Err(argument_error("insertion string is null"));
    }
    let s = unsafe { CStr::from_ptr(insertion) }
        .to_str()
        .map_err(|_| argument_error("insertion string is not valid UTF-8"))?;
    s.parse::<Insertion>().map_err(|e| {
        set_error(e.to_string());
        CCSEG_ERR_ARGUMENT
    })
}

unsafe fn finish_pipeline(
    variant: VariantSpec,
    weights: ccseg::pipeline::weights::PipelineWeights,
    out: *mut *mut CcsegPipeline,
) -> i32 {
    if let Err(e) = validate_weights(&weights, &variant) {
        return status_from(e);
    }
    let handle = Box::new(CcsegPipeline { variant, weights });
    unsafe { *out = Box::into_raw(handle) };
    CCSEG_OK
}

/// Create a pipeline with deterministic seeded weights.
/// `insertion` is one of "none", "backbone", "fpn", "both".
#[no_mangle]
pub unsafe extern "C" fn ccseg_pipeline_new_seeded(
    insertion: *const c_char,
    seed: u64,
    out: *mut *mut CcsegPipeline,
) -> i32 {
    if out.is_null() {
        return argument_error("output handle pointer is null");
    }
    let ins = match unsafe { parse_insertion(insertion) } {
        Ok(i) => i,
        Err(code) => return code,
    };
    let variant = VariantSpec::new(ins);
    let weights = seeded_weights(&variant, seed);
    unsafe { finish_pipeline(variant, weights, out) }
}

/// Create a pipeline from a CCSEG1 weights file.
#[no_mangle]
pub unsafe extern "C" fn ccseg_pipeline_load(
    insertion: *const c_char,
    weights_path: *const c_char,
    out: *mut *mut CcsegPipeline,
) -> i32 {
    if out.is_null() {
        return argument_error("output handle pointer is null");
    }
    if weights_path.is_null() {
        return argument_error("weights path is null");
    }
    let ins = match unsafe { parse_insertion(insertion) } {
        Ok(i) => i,
        Err(code) => return code,
    };
    let path = match unsafe { CStr::from_ptr(weights_path) }.to_str() {
        Ok(p) => p,
        Err(_) => return argument_error("weights path is not valid UTF-8"),
    };
    let weights = match read_weights(Path::new(path)) {
        Ok(w) => w,
        Err(e) => return status_from(e),
    };
    unsafe { finish_pipeline(VariantSpec::new(ins), weights, out) }
}

/// Release a pipeline handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ccseg_pipeline_free(pipeline: *mut CcsegPipeline) {
    if !pipeline.is_null() {
        drop(unsafe { Box::from_raw(pipeline) });
    }
}

/// Run inference on one frame.
///
/// `image`: 3·height·width f64 values, CHW, row-major, range [0,1].
/// `labels_out`: height·width u32 slots receiving the instance label map.
/// `instance_count_out` (optional, may be null): number of instances found.
/// Both extents must be divisible by 32.
#[no_mangle]
pub unsafe extern "C" fn ccseg_pipeline_infer(
    pipeline: *const CcsegPipeline,
    image: *const f64,
    height: usize,
    width: usize,
    labels_out: *mut u32,
    instance_count_out: *mut u32,
) -> i32 {
    if pipeline.is_null() || image.is_null() || labels_out.is_null() {
        return argument_error("pipeline, image and labels_out must be non-null");
    }
    let p = unsafe { &*pipeline };
    let n = 3 * height * width;
    let data = unsafe { std::slice::from_raw_parts(image, n) }.to_vec();
    let tensor = match Tensor::new(vec![3, height, width], data) {
        Ok(t) => t,
        Err(e) => return status_from(e),
    };
    match infer_frame(&tensor, &p.weights, &p.variant) {
        Ok((map, _detections)) => {
            let labels = map.labels();
            unsafe {
                std::ptr::copy_nonoverlapping(labels.as_ptr(), labels_out, labels.len());
            }
            if !instance_count_out.is_null() {
                unsafe { *instance_count_out = map.instance_count() };
            }
            CCSEG_OK
        }
        Err(e) => status_from(e),
    }
}

/// Multi-instance DSC and NSD of one frame pair.
///
/// `gt` / `pred`: height·width u32 label maps (0 background, ids 1..N).
/// `tau`: NSD boundary tolerance in pixels (the published protocol uses 13).
#[no_mangle]
pub unsafe extern "C" fn ccseg_frame_scores(
    gt: *const u32,
    pred: *const u32,
    height: usize,
    width: usize,
    tau: f64,
    mi_dsc_out: *mut f64,
    mi_nsd_out: *mut f64,
) -> i32 {
    if gt.is_null() || pred.is_null() || mi_dsc_out.is_null() || mi_nsd_out.is_null() {
        return argument_error("all pointers must be non-null");
    }
    let n = height * width;
    let to_map = |ptr: *const u32| -> Result<InstanceLabelMap, Error> {
        let labels = unsafe { std::slice::from_raw_parts(ptr, n) }.to_vec();
        InstanceLabelMap::new(width, height, labels)
    };
    let (g, p) = match (to_map(gt), to_map(pred)) {
        (Ok(g), Ok(p)) => (g, p),
        (Err(e), _) | (_, Err(e)) => return status_from(e),
    };
    match frame_scores(&g, &p, tau) {
        Ok(eval) => {
            unsafe {
                *mi_dsc_out = eval.mi_dsc;
                *mi_nsd_out = eval.mi_nsd;
            }
            CCSEG_OK
        }
        Err(e) => status_from(e),
    }
}

/// Linear-interpolation percentile of a sample (the ranking convention used
/// by the robustness aggregate; `p` in [0,1]).
#[no_mangle]
pub unsafe extern "C" fn ccseg_percentile(
    values: *const f64,
    len: usize,
    p: f64,
    out: *mut f64,
) -> i32 {
    if values.is_null() || out.is_null() {
        return argument_error("values and out must be non-null");
    }
    let sample = unsafe { std::slice::from_raw_parts(values, len) };
    match percentile(sample, p) {
        Ok(v) => {
            unsafe { *out = v };
            CCSEG_OK
        }
        Err(e) => status_from(e),
    }
}

/// Number of affinity entries a criss-cross attention map holds for an
/// `height` × `width` site: H·W·(H+W−1).
#[no_mangle]
pub extern "C" fn ccseg_affinity_entry_count(height: usize, width: usize) -> u64 {
    if height == 0 || width == 0 {
        return 0;
    }
    ccseg::attention::affinity_entry_count(height, width)
}
