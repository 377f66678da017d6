//! Minimal dense-tensor substrate.
//!
//! Row-major `f64` tensors plus the handful of numeric kernels the rest of
//! the toolkit builds on: cross-correlation conv2d, stable softmax, bilinear
//! resize, elementwise activations and matmul. Everything is a pure function
//! of its inputs and deterministic.

use crate::error::{Error, Result};

/// Dense N-dimensional array, row-major, 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::contract(format!(
                "tensor data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extent along one axis.
    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// Flat index for a `[C,H,W]` tensor.
    #[inline]
    pub fn idx3(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = (c * self.shape[1] + y) * self.shape[2] + x;
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::contract(format!(
                "add: shape {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// Concatenate two `[C,H,W]` tensors along the channel axis.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 3 || other.rank() != 3 || self.shape[1..] != other.shape[1..] {
            return Err(Error::contract(format!(
                "concat_channels: incompatible shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::new(
            vec![self.shape[0] + other.shape[0], self.shape[1], self.shape[2]],
            data,
        )
    }
}

/// 2-D cross-correlation with zero padding (no kernel flip).
///
/// `input` is `[C_in,H,W]`, `kernel` `[C_out,C_in,kH,kW]`, `bias` length
/// `C_out`. Output extent uses floor semantics,
/// `H' = floor((H + 2·pad − kH)/stride) + 1`; trailing rows/columns that do
/// not fit a full stride step are not sampled.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::contract(format!(
            "conv2d: input must be [C,H,W], got rank {}",
            input.rank()
        )));
    }
    if kernel.rank() != 4 {
        return Err(Error::contract(format!(
            "conv2d: kernel must be [C_out,C_in,kH,kW], got rank {}",
            kernel.rank()
        )));
    }
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (c_out, kc, kh, kw) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    if kc != c_in {
        return Err(Error::contract(format!(
            "conv2d: kernel input channels {} do not match input channels {}",
            kc, c_in
        )));
    }
    if bias.len() != c_out {
        return Err(Error::contract(format!(
            "conv2d: bias length {} does not match output channels {}",
            bias.len(),
            c_out
        )));
    }
    if stride == 0 {
        return Err(Error::config("conv2d: stride must be positive"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::config(format!(
            "conv2d: kernel {}x{} larger than padded input {}x{}",
            kh,
            kw,
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let out_h = (h + 2 * padding - kh) / stride + 1;
    let out_w = (w + 2 * padding - kw) / stride + 1;

    // Blocked row accumulation: four output channels advance together over
    // each output row, sharing every input-row load and amortizing loop
    // overhead. Every output element still receives its terms in
    // (ci, ky, kx) order starting from the bias, so the result is
    // bit-identical to the naive triple loop.
    const BLOCK: usize = 4;
    let mut out = Tensor::zeros(vec![c_out, out_h, out_w]);
    let k_data = kernel.data();
    let mut acc = vec![0.0f64; BLOCK * out_w];
    // kernel taps reorganized per channel block as [ci][ky][b][kx]
    let mut tb = vec![0.0f64; c_in * kh * BLOCK * kw];
    for co0 in (0..c_out).step_by(BLOCK) {
        let nb = BLOCK.min(c_out - co0);
        for ci in 0..c_in {
            for ky in 0..kh {
                for b in 0..nb {
                    let src = (((co0 + b) * c_in + ci) * kh + ky) * kw;
                    let dst = ((ci * kh + ky) * BLOCK + b) * kw;
                    tb[dst..dst + kw].copy_from_slice(&k_data[src..src + kw]);
                }
            }
        }
        for oy in 0..out_h {
            for (b, chunk) in acc.chunks_exact_mut(out_w).take(nb).enumerate() {
                chunk.fill(bias[co0 + b]);
            }
            let base_y = (oy * stride) as isize - padding as isize;
            for ci in 0..c_in {
                let in_chan = &input.data[ci * h * w..(ci + 1) * h * w];
                for ky in 0..kh {
                    let iy = base_y + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = &in_chan[(iy as usize) * w..(iy as usize + 1) * w];
                    let taps = &tb[((ci * kh + ky) * BLOCK) * kw..][..nb * kw];
                    if stride == 1 && kw == 3 {
                        let lo = padding.min(out_w);
                        let hi = (w + padding).saturating_sub(2).clamp(lo, out_w);
                        for b in 0..nb {
                            let (t0, t1, t2) = (taps[b * 3], taps[b * 3 + 1], taps[b * 3 + 2]);
                            let arow = &mut acc[b * out_w..(b + 1) * out_w];
                            if hi > lo {
                                // interior: all three taps in bounds
                                let src = &in_row[lo - padding..hi - padding + 2];
                                for (a, win) in arow[lo..hi].iter_mut().zip(src.windows(3)) {
                                    let mut v = *a;
                                    v += t0 * win[0];
                                    v += t1 * win[1];
                                    v += t2 * win[2];
                                    *a = v;
                                }
                            }
                            for ox in (0..lo).chain(hi..out_w) {
                                let mut v = arow[ox];
                                for (kx, &t) in [t0, t1, t2].iter().enumerate() {
                                    let ix = ox + kx;
                                    if ix >= padding && ix - padding < w {
                                        v += t * in_row[ix - padding];
                                    }
                                }
                                arow[ox] = v;
                            }
                        }
                    } else if stride == 1 && kw == 1 && padding == 0 {
                        for b in 0..nb {
                            let t = taps[b];
                            let arow = &mut acc[b * out_w..(b + 1) * out_w];
                            for (a, &x) in arow.iter_mut().zip(in_row) {
                                *a += t * x;
                            }
                        }
                    } else {
                        // general case: one guard-free pass per tap; output
                        // elements still gain their kx terms in ascending
                        // order because passes run in kx order
                        for b in 0..nb {
                            let arow = &mut acc[b * out_w..(b + 1) * out_w];
                            for kx in 0..kw {
                                let t = taps[b * kw + kx];
                                // valid ox satisfy 0 ≤ ox·stride + kx − padding < w
                                let ox_min = if kx >= padding {
                                    0
                                } else {
                                    (padding - kx).div_ceil(stride)
                                };
                                let ox_max = if w + padding > kx {
                                    ((w + padding - kx - 1) / stride + 1).min(out_w)
                                } else {
                                    0
                                };
                                for (ox, a) in arow[ox_min..ox_max.max(ox_min)]
                                    .iter_mut()
                                    .enumerate()
                                {
                                    let ix = (ox + ox_min) * stride + kx - padding;
                                    *a += t * in_row[ix];
                                }
                            }
                        }
                    }
                }
            }
            for (b, chunk) in acc.chunks_exact(out_w).take(nb).enumerate() {
                let dst = ((co0 + b) * out_h + oy) * out_w;
                out.data[dst..dst + out_w].copy_from_slice(chunk);
            }
        }
    }
    Ok(out)
}

/// Softmax along one axis, computed with max-subtraction.
pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::contract(format!(
            "softmax_axis: axis {} out of range for rank {}",
            axis,
            x.rank()
        )));
    }
    let extent = x.shape[axis];
    if extent == 0 {
        return Err(Error::contract(
            "softmax_axis: zero extent along axis",
        ));
    }
    let inner: usize = x.shape[axis + 1..].iter().product();
    let outer: usize = x.shape[..axis].iter().product();
    let mut out = x.clone();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..extent {
                max = max.max(x.data[base + k * inner]);
            }
            let mut sum = 0.0;
            for k in 0..extent {
                let e = (x.data[base + k * inner] - max).exp();
                out.data[base + k * inner] = e;
                sum += e;
            }
            for k in 0..extent {
                out.data[base + k * inner] /= sum;
            }
        }
    }
    Ok(out)
}

/// Bilinear resize of a `[C,H,W]` tensor, align-corners-false convention.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::contract(format!(
            "bilinear_resize: input must be [C,H,W], got rank {}",
            x.rank()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract(
            "bilinear_resize: output extents must be >= 1",
        ));
    }
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Tensor::zeros(vec![c, out_h, out_w]);
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let v = x.at3(ch, y0, x0) * (1.0 - wy) * (1.0 - wx)
                    + x.at3(ch, y0, x1) * (1.0 - wy) * wx
                    + x.at3(ch, y1, x0) * wy * (1.0 - wx)
                    + x.at3(ch, y1, x1) * wy * wx;
                out.set3(ch, oy, ox, v);
            }
        }
    }
    Ok(out)
}

/// Elementwise activation.
pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(|v| 1.0 / (1.0 + (-v).exp())),
        Activation::Tanh => x.map(f64::tanh),
    }
}

/// Exact matrix product of `[M,K]` by `[K,N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::contract("matmul: operands must be rank 2"));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::contract(format!(
            "matmul: inner extents differ ({} vs {})",
            k, k2
        )));
    }
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out.data[i * n + j] += av * b.data[p * n + j];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn conv2d_all_ones_3x3() {
        let input = Tensor::filled(vec![1, 3, 3], 1.0);
        let kernel = Tensor::filled(vec![1, 1, 3, 3], 1.0);
        let out = conv2d(&input, &kernel, &[0.0], 1, 1).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert_eq!(out.at3(0, 1, 1), 9.0);
        assert_eq!(out.at3(0, 0, 0), 4.0);
        assert_eq!(out.at3(0, 2, 2), 4.0);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let input = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let kernel = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let out = conv2d(&input, &kernel, &[0.0], 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv2d_stride_2_subsamples_even_indices() {
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let input = Tensor::new(vec![1, 4, 4], data).unwrap();
        let kernel = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let out = conv2d(&input, &kernel, &[0.0], 2, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn conv2d_channel_mismatch_is_contract_error() {
        let input = Tensor::filled(vec![2, 3, 3], 1.0);
        let kernel = Tensor::filled(vec![1, 3, 3, 3], 1.0);
        let err = conv2d(&input, &kernel, &[0.0], 1, 1).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(err.to_string().contains("channels"));
    }

    #[test]
    fn conv2d_linearity() {
        let mut rng = 1234567u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        let x = Tensor::new(vec![2, 4, 4], (0..32).map(|_| next()).collect()).unwrap();
        let y = Tensor::new(vec![2, 4, 4], (0..32).map(|_| next()).collect()).unwrap();
        let k = Tensor::new(vec![3, 2, 3, 3], (0..54).map(|_| next()).collect()).unwrap();
        let bias = [0.0; 3];
        let (alpha, beta) = (0.7, -1.3);
        let combo = x.scale(alpha).add(&y.scale(beta)).unwrap();
        let lhs = conv2d(&combo, &k, &bias, 1, 1).unwrap();
        let rhs = conv2d(&x, &k, &bias, 1, 1)
            .unwrap()
            .scale(alpha)
            .add(&conv2d(&y, &k, &bias, 1, 1).unwrap().scale(beta))
            .unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            assert!(close(*a, *b, 1e-9));
        }
    }

    #[test]
    fn softmax_uniform() {
        let x = Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let s = softmax_axis(&x, 0).unwrap();
        for v in s.data() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_shift_invariance_and_closed_form() {
        let x = Tensor::new(vec![3], vec![1f64.ln(), 2f64.ln(), 7f64.ln()]).unwrap();
        let s = softmax_axis(&x, 0).unwrap();
        assert!(close(s.data()[0], 0.1, 1e-12));
        assert!(close(s.data()[1], 0.2, 1e-12));
        assert!(close(s.data()[2], 0.7, 1e-12));
        let shifted = x.map(|v| v + 42.5);
        let s2 = softmax_axis(&shifted, 0).unwrap();
        for (a, b) in s.data().iter().zip(s2.data()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn softmax_large_magnitude_sums_to_one() {
        let x = Tensor::new(vec![4], vec![1e3, -1e3, 999.0, 998.0]).unwrap();
        let s = softmax_axis(&x, 0).unwrap();
        let sum: f64 = s.data().iter().sum();
        assert!(close(sum, 1.0, 1e-12));
        assert!(s.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn softmax_invalid_axis() {
        let x = Tensor::zeros(vec![2, 2]);
        assert!(matches!(
            softmax_axis(&x, 2).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn resize_constant_and_identity() {
        let x = Tensor::filled(vec![2, 3, 5], 5.0);
        let up = bilinear_resize(&x, 7, 11).unwrap();
        assert!(up.data().iter().all(|v| close(*v, 5.0, 1e-12)));
        let same = bilinear_resize(&x, 3, 5).unwrap();
        assert_eq!(same, x);
    }

    #[test]
    fn resize_1x2_to_1x4() {
        let x = Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
        let out = bilinear_resize(&x, 1, 4).unwrap();
        let expect = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in out.data().iter().zip(expect) {
            assert!(close(*a, b, 1e-12));
        }
    }

    #[test]
    fn resize_round_trip_on_ramp() {
        let mut x = Tensor::zeros(vec![1, 8, 8]);
        for y in 0..8 {
            for xx in 0..8 {
                x.set3(0, y, xx, y as f64 + xx as f64);
            }
        }
        let up = bilinear_resize(&x, 16, 16).unwrap();
        let back = bilinear_resize(&up, 8, 8).unwrap();
        // interior of a linear ramp survives up/down; edges are clamped
        for y in 1..7 {
            for xx in 1..7 {
                assert!(close(back.at3(0, y, xx), x.at3(0, y, xx), 1e-9));
            }
        }
        let c = Tensor::filled(vec![1, 8, 8], 3.25);
        let c2 = bilinear_resize(&bilinear_resize(&c, 13, 17).unwrap(), 8, 8).unwrap();
        for v in c2.data() {
            assert!(close(*v, 3.25, 1e-9));
        }
    }

    #[test]
    fn resize_zero_extent_rejected() {
        let x = Tensor::zeros(vec![1, 2, 2]);
        assert!(bilinear_resize(&x, 0, 4).is_err());
    }

    #[test]
    fn activations() {
        let x = Tensor::new(vec![2], vec![-2.0, 3.0]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 3.0]);
        let z = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(activation(&z, Activation::Sigmoid).data(), &[0.5]);
        assert_eq!(activation(&z, Activation::Tanh).data(), &[0.0]);
    }

    #[test]
    fn matmul_cases() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let b = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);
        let zero = Tensor::zeros(vec![2, 2]);
        assert!(matmul(&zero, &a).unwrap().data().iter().all(|v| *v == 0.0));
        let bad = Tensor::zeros(vec![3, 2]);
        assert!(matmul(&a, &bad).is_err());
    }
}
