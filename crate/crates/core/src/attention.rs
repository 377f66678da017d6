//! Recurrent criss-cross attention.
//!
//! Each position attends to its own row and column only (H+W−1 context
//! positions instead of H·W). Two stacked passes give every position a path
//! to every other position. The module carries analytic gradients so the
//! mechanism can be checked against finite differences, and an influence-map
//! probe that verifies the sparse/full-context structure directly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters of one criss-cross attention site.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    /// Input/output channel count C.
    pub channels: usize,
    /// Q/K channel shrink; C' = max(1, C / reduction).
    pub reduction: usize,
    /// Number of consecutive criss-cross passes.
    pub recurrence: usize,
    /// Reuse one weight set for every pass.
    pub share_weights: bool,
}

impl AttentionConfig {
    pub fn new(channels: usize) -> Self {
        AttentionConfig {
            channels,
            reduction: 8,
            recurrence: 2,
            share_weights: true,
        }
    }

    /// Reduced channel count C' for the query/key projections.
    pub fn qk_channels(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.reduction == 0 || self.recurrence == 0 {
            return Err(Error::config(
                "attention config: channels, reduction and recurrence must be positive",
            ));
        }
        Ok(())
    }
}

/// A 1×1 projection: per-pixel affine map, weight `[out,in]` plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl Projection {
    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        Projection {
            weight: Tensor::zeros(vec![out_ch, in_ch]),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Apply to a `[C_in,H,W]` map.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (ci, h, w) = dims3(x)?;
        if ci != self.in_channels() {
            return Err(Error::contract(format!(
                "projection: input has {} channels, weight expects {}",
                ci,
                self.in_channels()
            )));
        }
        let co = self.out_channels();
        let n = h * w;
        let mut out = Tensor::zeros(vec![co, h, w]);
        let xd = x.data();
        let wd = self.weight.data();
        let od = out.data_mut();
        for o in 0..co {
            let row = &wd[o * ci..(o + 1) * ci];
            let dst = &mut od[o * n..(o + 1) * n];
            dst.fill(self.bias[o]);
            for (i, &wv) in row.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let src = &xd[i * n..(i + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
            }
        }
        Ok(out)
    }

    /// Backward pass: given upstream grad on the output map, accumulate
    /// weight/bias grads into `grad` and return the grad wrt the input.
    fn backward(&self, x: &Tensor, upstream: &Tensor, grad: &mut Projection) -> Tensor {
        let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let co = self.out_channels();
        let n = h * w;
        let xd = x.data();
        let ud = upstream.data();
        let wd = self.weight.data();
        let mut gx = Tensor::zeros(vec![ci, h, w]);
        let gxd = gx.data_mut();
        let gwd = grad.weight.data_mut();
        for o in 0..co {
            let u = &ud[o * n..(o + 1) * n];
            grad.bias[o] += u.iter().sum::<f64>();
            for i in 0..ci {
                let src = &xd[i * n..(i + 1) * n];
                let mut acc = 0.0;
                for (uu, ss) in u.iter().zip(src) {
                    acc += uu * ss;
                }
                gwd[o * ci + i] += acc;
                let wv = wd[o * ci + i];
                if wv != 0.0 {
                    let dst = &mut gxd[i * n..(i + 1) * n];
                    for (d, uu) in dst.iter_mut().zip(u) {
                        *d += wv * uu;
                    }
                }
            }
        }
        gx
    }
}

/// One weight set for a criss-cross pass plus the fusion projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CcWeights {
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
    /// Fusion 1×1 over the channel concatenation `[X ; H^(R)]`, 2C → C.
    pub fusion: Projection,
}

impl CcWeights {
    pub fn zeros(cfg: &AttentionConfig) -> Self {
        let c = cfg.channels;
        let cq = cfg.qk_channels();
        CcWeights {
            query: Projection::zeros(cq, c),
            key: Projection::zeros(cq, c),
            value: Projection::zeros(c, c),
            fusion: Projection::zeros(c, 2 * c),
        }
    }

    fn validate(&self, cfg: &AttentionConfig) -> Result<()> {
        let c = cfg.channels;
        let cq = cfg.qk_channels();
        let shapes = [
            ("query", self.query.out_channels(), cq, self.query.in_channels(), c),
            ("key", self.key.out_channels(), cq, self.key.in_channels(), c),
            ("value", self.value.out_channels(), c, self.value.in_channels(), c),
            ("fusion", self.fusion.out_channels(), c, self.fusion.in_channels(), 2 * c),
        ];
        for (name, got_o, want_o, got_i, want_i) in shapes {
            if got_o != want_o || got_i != want_i {
                return Err(Error::contract(format!(
                    "cc weights: {name} projection is {got_o}x{got_i}, expected {want_o}x{want_i}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-position criss-cross affinity logits.
///
/// For position u=(i,j) the context set Ω_u is row i followed by column j
/// with the self duplicate removed: entries 0..W are (i,0..W) left to right,
/// entries W..H+W−1 are (i',j) for i' = 0..H skipping i, top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMap {
    pub height: usize,
    pub width: usize,
    /// `[H, W, H+W−1]` row-major.
    pub logits: Tensor,
}

impl AffinityMap {
    pub fn entries_per_position(&self) -> usize {
        self.height + self.width - 1
    }

    /// Context position for entry `n` of position (i,j).
    #[inline]
    pub fn neighbor(&self, i: usize, j: usize, n: usize) -> (usize, usize) {
        if n < self.width {
            (i, n)
        } else {
            let mut row = n - self.width;
            if row >= i {
                row += 1;
            }
            (row, j)
        }
    }

    /// Per-position softmax over the context axis.
    pub fn softmax(&self) -> AffinityMap {
        let m = self.entries_per_position();
        let mut out = self.logits.clone();
        let data = out.data_mut();
        for chunk in data.chunks_mut(m) {
            let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in chunk.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in chunk.iter_mut() {
                *v /= sum;
            }
        }
        AffinityMap {
            height: self.height,
            width: self.width,
            logits: out,
        }
    }
}

fn dims3(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::contract(format!(
            "expected a [C,H,W] tensor, got rank {}",
            x.rank()
        )));
    }
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

/// Criss-cross affinity logits: dot products Q_u · K_v over Ω_u.
pub fn cc_affinity(q: &Tensor, k: &Tensor) -> Result<AffinityMap> {
    if q.shape() != k.shape() {
        return Err(Error::contract(format!(
            "cc_affinity: Q shape {:?} differs from K shape {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let (c, h, w) = dims3(q)?;
    let m = h + w - 1;
    let mut out = AffinityMap {
        height: h,
        width: w,
        logits: Tensor::zeros(vec![h, w, m]),
    };
    let qd = q.data();
    let kd = k.data();
    let n = h * w;
    let od = out.logits.data_mut();
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * m;
            for e in 0..m {
                let (vi, vj) = neighbor_of(h, w, i, j, e);
                let mut acc = 0.0;
                for ch in 0..c {
                    acc += qd[ch * n + i * w + j] * kd[ch * n + vi * w + vj];
                }
                od[base + e] = acc;
            }
        }
    }
    Ok(out)
}

#[inline]
fn neighbor_of(_h: usize, w: usize, i: usize, j: usize, n: usize) -> (usize, usize) {
    if n < w {
        (i, n)
    } else {
        let mut row = n - w;
        if row >= i {
            row += 1;
        }
        (row, j)
    }
}

/// Context aggregation with residual: H_u = Σ_{v∈Ω_u} A_{u,v} V_v + X_u.
///
/// `attn` must already be normalized per position.
pub fn cc_aggregate(attn: &AffinityMap, v: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims3(v)?;
    if x.shape() != v.shape() {
        return Err(Error::contract(format!(
            "cc_aggregate: V shape {:?} differs from X shape {:?}",
            v.shape(),
            x.shape()
        )));
    }
    if attn.height != h || attn.width != w {
        return Err(Error::contract(
            "cc_aggregate: affinity extents do not match feature map",
        ));
    }
    let m = attn.entries_per_position();
    let ad = attn.logits.data();
    for (p, chunk) in ad.chunks(m).enumerate() {
        let sum: f64 = chunk.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "cc_aggregate: attention weights at position {} sum to {}, expected 1",
                p, sum
            )));
        }
    }
    let n = h * w;
    let vd = v.data();
    let mut out = x.clone();
    let od = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * m;
            for e in 0..m {
                let a = ad[base + e];
                if a == 0.0 {
                    continue;
                }
                let (vi, vj) = neighbor_of(h, w, i, j, e);
                let vp = vi * w + vj;
                for ch in 0..c {
                    od[ch * n + i * w + j] += a * vd[ch * n + vp];
                }
            }
        }
    }
    Ok(out)
}

/// A full recurrent criss-cross attention module: config plus weights.
///
/// `weights` holds one entry when weights are shared across passes,
/// otherwise one entry per pass. Only the last entry's fusion projection is
/// used (fusion happens once, after the final pass).
#[derive(Debug, Clone)]
pub struct RccaModule {
    pub cfg: AttentionConfig,
    pub weights: Vec<CcWeights>,
}

impl RccaModule {
    pub fn new(cfg: AttentionConfig, weights: Vec<CcWeights>) -> Result<Self> {
        cfg.validate()?;
        let expect = if cfg.share_weights { 1 } else { cfg.recurrence };
        if weights.len() != expect {
            return Err(Error::contract(format!(
                "rcca: expected {} weight sets, got {}",
                expect,
                weights.len()
            )));
        }
        for w in &weights {
            w.validate(&cfg)?;
        }
        Ok(RccaModule { cfg, weights })
    }

    fn pass_weights(&self, pass: usize) -> &CcWeights {
        if self.cfg.share_weights {
            &self.weights[0]
        } else {
            &self.weights[pass]
        }
    }

    fn fusion_weights(&self) -> &CcWeights {
        self.weights.last().expect("validated nonempty")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_taped(x)?.output)
    }

    fn forward_taped(&self, x: &Tensor) -> Result<Tape> {
        let (c, _h, _w) = dims3(x)?;
        if c != self.cfg.channels {
            return Err(Error::contract(format!(
                "rcca: input has {} channels, config expects {}",
                c, self.cfg.channels
            )));
        }
        let mut h_cur = x.clone();
        let mut passes = Vec::with_capacity(self.cfg.recurrence);
        for p in 0..self.cfg.recurrence {
            let w = self.pass_weights(p);
            let q = w.query.apply(&h_cur)?;
            let k = w.key.apply(&h_cur)?;
            let v = w.value.apply(&h_cur)?;
            let attn = cc_affinity(&q, &k)?.softmax();
            let h_next = cc_aggregate(&attn, &v, &h_cur)?;
            passes.push(PassTape {
                input: h_cur,
                q,
                k,
                v,
                attn,
            });
            h_cur = h_next;
        }
        let cat = x.concat_channels(&h_cur)?;
        let fused = self.fusion_weights().fusion.apply(&cat)?;
        let output = fused.add(x)?;
        Ok(Tape {
            passes,
            cat,
            output,
        })
    }

    /// Analytic gradients of the full forward chain.
    ///
    /// Returns the grad wrt the input and one `CcWeights`-shaped grad per
    /// stored weight set (shared weights accumulate over passes).
    pub fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<(Tensor, Vec<CcWeights>)> {
        let tape = self.forward_taped(x)?;
        if upstream.shape() != tape.output.shape() {
            return Err(Error::contract(format!(
                "rcca backward: upstream shape {:?} does not match output shape {:?}",
                upstream.shape(),
                tape.output.shape()
            )));
        }
        let c = self.cfg.channels;
        let (h, w_ext) = (x.shape()[1], x.shape()[2]);
        let n = h * w_ext;

        let mut grads: Vec<CcWeights> = self
            .weights
            .iter()
            .map(|_| CcWeights::zeros(&self.cfg))
            .collect();

        // fusion: y = Wf [x; hR] + bf + x
        let last = grads.len() - 1;
        let g_cat = {
            let wf = &self.fusion_weights().fusion;
            wf.backward(&tape.cat, upstream, &mut grads[last].fusion)
        };
        let mut g_x = upstream.clone(); // residual term
        let (gc_x, gc_h) = split_channels(&g_cat, c);
        g_x = g_x.add(&gc_x)?;
        let mut g_h = gc_h;

        for p in (0..self.cfg.recurrence).rev() {
            let wi = if self.cfg.share_weights { 0 } else { p };
            let tape_p = &tape.passes[p];
            let weights = self.pass_weights(p);
            let m = tape_p.attn.entries_per_position();
            let ad = tape_p.attn.logits.data();
            let vd = tape_p.v.data();
            let ghd = g_h.data();

            // grads wrt attention weights and V
            let mut g_attn = vec![0.0; h * w_ext * m];
            let mut g_v = Tensor::zeros(vec![c, h, w_ext]);
            {
                let gvd = g_v.data_mut();
                for i in 0..h {
                    for j in 0..w_ext {
                        let pos = i * w_ext + j;
                        let base = pos * m;
                        for e in 0..m {
                            let (vi, vj) = neighbor_of(h, w_ext, i, j, e);
                            let vp = vi * w_ext + vj;
                            let a = ad[base + e];
                            let mut acc = 0.0;
                            for ch in 0..c {
                                let g = ghd[ch * n + pos];
                                acc += g * vd[ch * n + vp];
                                gvd[ch * n + vp] += a * g;
                            }
                            g_attn[base + e] = acc;
                        }
                    }
                }
            }

            // softmax backward per position
            let mut g_logits = vec![0.0; h * w_ext * m];
            for pos in 0..h * w_ext {
                let base = pos * m;
                let a = &ad[base..base + m];
                let ga = &g_attn[base..base + m];
                let dot: f64 = a.iter().zip(ga).map(|(x, y)| x * y).sum();
                for e in 0..m {
                    g_logits[base + e] = a[e] * (ga[e] - dot);
                }
            }

            // affinity backward: logit(u,e) = Q_u · K_{neigh(u,e)}
            let cq = self.cfg.qk_channels();
            let qd = tape_p.q.data();
            let kd = tape_p.k.data();
            let mut g_q = Tensor::zeros(vec![cq, h, w_ext]);
            let mut g_k = Tensor::zeros(vec![cq, h, w_ext]);
            {
                let gqd = g_q.data_mut();
                let gkd = g_k.data_mut();
                for i in 0..h {
                    for j in 0..w_ext {
                        let pos = i * w_ext + j;
                        let base = pos * m;
                        for e in 0..m {
                            let gl = g_logits[base + e];
                            if gl == 0.0 {
                                continue;
                            }
                            let (vi, vj) = neighbor_of(h, w_ext, i, j, e);
                            let vp = vi * w_ext + vj;
                            for ch in 0..cq {
                                gqd[ch * n + pos] += gl * kd[ch * n + vp];
                                gkd[ch * n + vp] += gl * qd[ch * n + pos];
                            }
                        }
                    }
                }
            }

            // projection backwards into the pass input
            let g_in_res = g_h.clone(); // residual H_u = ... + X_u
            let g_from_q = weights.query.backward(&tape_p.input, &g_q, &mut grads[wi].query);
            let g_from_k = weights.key.backward(&tape_p.input, &g_k, &mut grads[wi].key);
            let g_from_v = weights.value.backward(&tape_p.input, &g_v, &mut grads[wi].value);
            g_h = g_in_res
                .add(&g_from_q)?
                .add(&g_from_k)?
                .add(&g_from_v)?;
        }

        g_x = g_x.add(&g_h)?;
        Ok((g_x, grads))
    }

    /// Output positions whose value changes when one input position is
    /// perturbed, probed with δ=1e−3 on channel 0 against tolerance 1e−12.
    pub fn influence_map(
        &self,
        x: &Tensor,
        position: (usize, usize),
        passes: usize,
    ) -> Result<Vec<(usize, usize)>> {
        let (_c, h, w) = dims3(x)?;
        let (pi, pj) = position;
        if pi >= h || pj >= w {
            return Err(Error::contract(format!(
                "influence_map: position ({pi},{pj}) outside {h}x{w} map"
            )));
        }
        let probe_cfg = AttentionConfig {
            recurrence: passes,
            ..self.cfg
        };
        let weights = if self.cfg.share_weights {
            self.weights.clone()
        } else {
            // reuse the available sets cyclically for the probe
            (0..passes)
                .map(|p| self.weights[p % self.weights.len()].clone())
                .collect()
        };
        let probe = RccaModule::new(probe_cfg, weights)?;
        let base = probe.forward(x)?;
        let mut perturbed = x.clone();
        let delta = 1e-3;
        perturbed.set3(0, pi, pj, perturbed.at3(0, pi, pj) + delta);
        let bumped = probe.forward(&perturbed)?;
        let c = x.shape()[0];
        let mut changed = Vec::new();
        for i in 0..h {
            for j in 0..w {
                let moved = (0..c).any(|ch| (base.at3(ch, i, j) - bumped.at3(ch, i, j)).abs() > 1e-12);
                if moved {
                    changed.push((i, j));
                }
            }
        }
        Ok(changed)
    }
}

struct PassTape {
    input: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    attn: AffinityMap,
}

struct Tape {
    passes: Vec<PassTape>,
    cat: Tensor,
    output: Tensor,
}

fn split_channels(x: &Tensor, first: usize) -> (Tensor, Tensor) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    debug_assert!(first <= c);
    let n = h * w;
    let a = Tensor::new(vec![first, h, w], x.data()[..first * n].to_vec()).unwrap();
    let b = Tensor::new(vec![c - first, h, w], x.data()[first * n..].to_vec()).unwrap();
    (a, b)
}

/// Number of affinity entries one criss-cross pass materializes on an H×W
/// map: H·W·(H+W−1). For H=W=√N this is Θ(N√N), against (H·W)² dense.
pub fn affinity_entry_count(h: usize, w: usize) -> u64 {
    (h as u64) * (w as u64) * ((h + w - 1) as u64)
}

/// Verification utilities: seeded random modules, a dense masked-attention
/// oracle and a finite-difference gradient check. Shared by the unit tests,
/// the CLI self-check subcommands and the acceptance harness.
pub mod check {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    pub fn rand_weights(rng: &mut ChaCha8Rng, cfg: &AttentionConfig) -> CcWeights {
        let c = cfg.channels;
        let cq = cfg.qk_channels();
        CcWeights {
            query: Projection {
                weight: rand_tensor(rng, vec![cq, c]),
                bias: (0..cq).map(|_| rng.random_range(-0.1..0.1)).collect(),
            },
            key: Projection {
                weight: rand_tensor(rng, vec![cq, c]),
                bias: (0..cq).map(|_| rng.random_range(-0.1..0.1)).collect(),
            },
            value: Projection {
                weight: rand_tensor(rng, vec![c, c]),
                bias: (0..c).map(|_| rng.random_range(-0.1..0.1)).collect(),
            },
            fusion: Projection {
                weight: rand_tensor(rng, vec![c, 2 * c]),
                bias: (0..c).map(|_| rng.random_range(-0.1..0.1)).collect(),
            },
        }
    }

    pub fn module_for_test(seed: u64, cfg: AttentionConfig) -> RccaModule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_weights(&mut rng, &cfg);
        RccaModule::new(cfg, vec![w]).unwrap()
    }

    /// Brute-force oracle: dense attention with −∞ outside Ω, matching the
    /// module's definition position by position.
    pub fn dense_masked_forward(m: &RccaModule, x: &Tensor) -> Tensor {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let n = h * w;
        let mut cur = x.clone();
        for p in 0..m.cfg.recurrence {
            let wts = if m.cfg.share_weights {
                &m.weights[0]
            } else {
                &m.weights[p]
            };
            let q = wts.query.apply(&cur).unwrap();
            let k = wts.key.apply(&cur).unwrap();
            let v = wts.value.apply(&cur).unwrap();
            let cq = q.shape()[0];
            let mut next = cur.clone();
            for i in 0..h {
                for j in 0..w {
                    // dense logits, masked to row i ∪ column j
                    let mut logits = vec![f64::NEG_INFINITY; n];
                    for vi in 0..h {
                        for vj in 0..w {
                            if vi != i && vj != j {
                                continue;
                            }
                            let mut acc = 0.0;
                            for ch in 0..cq {
                                acc += q.at3(ch, i, j) * k.at3(ch, vi, vj);
                            }
                            logits[vi * w + vj] = acc;
                        }
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits
                        .iter()
                        .map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 })
                        .collect();
                    let sum: f64 = exps.iter().sum();
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for pos in 0..n {
                            if exps[pos] > 0.0 {
                                acc += exps[pos] / sum * v.data()[ch * n + pos];
                            }
                        }
                        next.set3(ch, i, j, cur.at3(ch, i, j) + acc);
                    }
                }
            }
            cur = next;
        }
        let cat = x.concat_channels(&cur).unwrap();
        let fused = m.weights.last().unwrap().fusion.apply(&cat).unwrap();
        fused.add(x).unwrap()
    }

    /// Scalar loss = sum of outputs; compare analytic grads to central
    /// finite differences over inputs and every weight group.
    fn pick_weight(m: &mut RccaModule, wi: usize, group: usize) -> &mut Tensor {
        match group {
            0 => &mut m.weights[wi].query.weight,
            1 => &mut m.weights[wi].key.weight,
            2 => &mut m.weights[wi].value.weight,
            _ => &mut m.weights[wi].fusion.weight,
        }
    }

    fn pick_bias(m: &mut RccaModule, wi: usize, group: usize) -> &mut Vec<f64> {
        match group {
            0 => &mut m.weights[wi].query.bias,
            1 => &mut m.weights[wi].key.bias,
            2 => &mut m.weights[wi].value.bias,
            _ => &mut m.weights[wi].fusion.bias,
        }
    }

    pub fn gradcheck_max_rel_error(module: &RccaModule, x: &Tensor) -> f64 {
        let ones = Tensor::filled(x.shape().to_vec(), 1.0);
        let (gx, gw) = module.backward(x, &ones).unwrap();
        let eps = 1e-5;
        let loss = |m: &RccaModule, xx: &Tensor| -> f64 { m.forward(xx).unwrap().data().iter().sum() };
        let mut max_rel: f64 = 0.0;
        let mut check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * eps);
            // The 1e-4 floor keeps near-zero gradient components from
            // amplifying central-difference roundoff (~1e-9 absolute here)
            // into spurious relative error; typical components are O(1).
            let denom = analytic.abs().max(numeric.abs()).max(1e-4);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
        };
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            check(gx.data()[i], loss(module, &xp), loss(module, &xm));
        }
        for (wi, grad_set) in gw.iter().enumerate() {
            for group in 0..4 {
                let len = match group {
                    0 => module.weights[wi].query.weight.len(),
                    1 => module.weights[wi].key.weight.len(),
                    2 => module.weights[wi].value.weight.len(),
                    _ => module.weights[wi].fusion.weight.len(),
                };
                for i in 0..len {
                    let mut mp = module.clone();
                    let mut mm = module.clone();
                    let (gp, gm) = {
                        pick_weight(&mut mp, wi, group).data_mut()[i] += eps;
                        pick_weight(&mut mm, wi, group).data_mut()[i] -= eps;
                        (loss(&mp, x), loss(&mm, x))
                    };
                    let analytic = match group {
                        0 => grad_set.query.weight.data()[i],
                        1 => grad_set.key.weight.data()[i],
                        2 => grad_set.value.weight.data()[i],
                        _ => grad_set.fusion.weight.data()[i],
                    };
                    check(analytic, gp, gm);
                }
                // biases
                let blen = match group {
                    0 => module.weights[wi].query.bias.len(),
                    1 => module.weights[wi].key.bias.len(),
                    2 => module.weights[wi].value.bias.len(),
                    _ => module.weights[wi].fusion.bias.len(),
                };
                for i in 0..blen {
                    let mut mp = module.clone();
                    let mut mm = module.clone();
                    pick_bias(&mut mp, wi, group)[i] += eps;
                    pick_bias(&mut mm, wi, group)[i] -= eps;
                    let analytic = match group {
                        0 => grad_set.query.bias[i],
                        1 => grad_set.key.bias[i],
                        2 => grad_set.value.bias[i],
                        _ => grad_set.fusion.bias[i],
                    };
                    check(analytic, loss(&mp, x), loss(&mm, x));
                }
            }
        }
        max_rel
    }
}
