//! Per-frame multi-instance segmentation metrics.
//!
//! DSC, normalized surface dice (NSD) with a pixel tolerance τ, one-to-one
//! instance matching and the per-frame MI_DSC / MI_NSD aggregation. Matching
//! maximizes summed DSC over pairs with DSC > 0; unmatched instances on
//! either side enter the per-frame mean with score 0.

use crate::error::{Error, Result};
use crate::labelmap::{BinaryMask, InstanceLabelMap};

/// Default NSD tolerance for the ROBUST-MIS annotation variability.
pub const DEFAULT_TAU: f64 = 13.0;

/// Per-frame evaluation record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FrameEval {
    pub mi_dsc: f64,
    pub mi_nsd: f64,
    /// Matched (gt id, pred id, dsc, nsd) triples.
    pub matched: Vec<MatchedPair>,
    pub gt_count: usize,
    pub pred_count: usize,
    pub matched_count: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MatchedPair {
    pub gt_id: u32,
    pub pred_id: u32,
    pub dsc: f64,
    pub nsd: f64,
}

/// Dice similarity coefficient, 2|Y∩Ŷ| / (|Y|+|Ŷ|).
///
/// At least one mask must be nonempty; the both-empty case is a frame-level
/// convention and never reaches this function.
pub fn dsc(y: &BinaryMask, yhat: &BinaryMask) -> Result<f64> {
    if y.width != yhat.width || y.height != yhat.height {
        return Err(Error::contract(format!(
            "dsc: mask extents {}x{} vs {}x{}",
            y.width, y.height, yhat.width, yhat.height
        )));
    }
    let mut inter = 0usize;
    let mut a = 0usize;
    let mut b = 0usize;
    for (p, q) in y.pixels.iter().zip(&yhat.pixels) {
        a += *p as usize;
        b += *q as usize;
        inter += (*p && *q) as usize;
    }
    if a + b == 0 {
        return Err(Error::contract("dsc: both masks are empty"));
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Boundary pixels of a mask: members with a 4-neighbor outside the mask.
/// Image-edge pixels count as boundary (background assumed beyond).
pub fn boundary(mask: &BinaryMask) -> Result<BinaryMask> {
    if mask.is_empty() {
        return Err(Error::contract("boundary: mask is empty"));
    }
    let (w, h) = (mask.width, mask.height);
    let mut out = BinaryMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x == w - 1
                || y == h - 1
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            if edge {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Exact Euclidean distance to the nearest set pixel, for every pixel.
///
/// Two-pass squared distance transform (1-D lower-envelope transform along
/// rows, then columns), followed by a square root; exact in f64 for image
/// coordinates.
pub fn distance_transform(points: &BinaryMask) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::contract("distance_transform: empty point set"));
    }
    let (w, h) = (points.width, points.height);
    const INF: f64 = 1e20;
    let mut grid: Vec<f64> = points
        .pixels
        .iter()
        .map(|&p| if p { 0.0 } else { INF })
        .collect();

    let mut scratch = vec![0.0f64; w.max(h)];
    // rows
    for y in 0..h {
        dt1d(&grid[y * w..(y + 1) * w], &mut scratch[..w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&scratch[..w]);
    }
    // columns
    let mut col = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        dt1d(&col, &mut scratch[..h]);
        for y in 0..h {
            grid[y * w + x] = scratch[y];
        }
    }
    Ok(grid.into_iter().map(f64::sqrt).collect())
}

/// 1-D squared distance transform (lower envelope of parabolas).
fn dt1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Normalized surface dice at tolerance `tau`; both masks must be nonempty.
pub fn nsd(y: &BinaryMask, yhat: &BinaryMask, tau: f64) -> Result<f64> {
    if y.width != yhat.width || y.height != yhat.height {
        return Err(Error::contract("nsd: mask extents differ"));
    }
    let by = boundary(y)?;
    let byh = boundary(yhat)?;
    let d_to_yh = distance_transform(&byh)?;
    let d_to_y = distance_transform(&by)?;
    let w = y.width;
    let mut hits = 0usize;
    let mut total = 0usize;
    for yy in 0..y.height {
        for xx in 0..w {
            if by.get(xx, yy) {
                total += 1;
                if d_to_yh[yy * w + xx] <= tau {
                    hits += 1;
                }
            }
            if byh.get(xx, yy) {
                total += 1;
                if d_to_y[yy * w + xx] <= tau {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

/// One-to-one matching between gt and predicted instances maximizing summed
/// DSC over pairs with DSC > 0. Exhaustive for min(N,M) ≤ 6, Hungarian
/// assignment above; ties broken by (gt id, pred id) lexicographic order.
///
/// Returns (gt id, pred id) pairs, gt ids ascending.
pub fn match_instances(gt: &InstanceLabelMap, pred: &InstanceLabelMap) -> Result<Vec<(u32, u32)>> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::contract("match_instances: map extents differ"));
    }
    let gt_masks = gt.instance_masks();
    let pred_masks = pred.instance_masks();
    let (n, m) = (gt_masks.len(), pred_masks.len());
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    let mut scores = vec![0.0f64; n * m];
    for (i, g) in gt_masks.iter().enumerate() {
        for (j, p) in pred_masks.iter().enumerate() {
            scores[i * m + j] = dsc(g, p)?;
        }
    }
    let assignment = if n.min(m) <= 6 {
        exhaustive_assignment(&scores, n, m)
    } else {
        hungarian_max(&scores, n, m)
    };
    let mut pairs = Vec::new();
    for (i, j) in assignment.iter().enumerate() {
        if let Some(j) = j {
            if scores[i * m + j] > 0.0 {
                pairs.push(((i + 1) as u32, (*j + 1) as u32));
            }
        }
    }
    Ok(pairs)
}

/// Exhaustive max-sum assignment over gt rows; deterministic lexicographic
/// tie-break (smaller pred id at the first differing gt wins).
fn exhaustive_assignment(scores: &[f64], n: usize, m: usize) -> Vec<Option<usize>> {
    fn better(sum_a: f64, a: &[Option<usize>], sum_b: f64, b: &[Option<usize>]) -> bool {
        if (sum_a - sum_b).abs() > 1e-12 {
            return sum_a > sum_b;
        }
        for (x, y) in a.iter().zip(b) {
            match (x, y) {
                (Some(p), Some(q)) if p != q => return p < q,
                (Some(_), None) => return true,
                (None, Some(_)) => return false,
                _ => {}
            }
        }
        false
    }
    let mut best: Vec<Option<usize>> = vec![None; n];
    let mut best_sum = 0.0;
    let mut cur: Vec<Option<usize>> = vec![None; n];
    let mut used = vec![false; m];
    fn recurse(
        i: usize,
        n: usize,
        m: usize,
        scores: &[f64],
        cur: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        sum: f64,
        best: &mut Vec<Option<usize>>,
        best_sum: &mut f64,
        better: &dyn Fn(f64, &[Option<usize>], f64, &[Option<usize>]) -> bool,
    ) {
        if i == n {
            if better(sum, cur, *best_sum, best) {
                *best_sum = sum;
                best.clone_from(cur);
            }
            return;
        }
        for j in 0..m {
            if used[j] {
                continue;
            }
            used[j] = true;
            cur[i] = Some(j);
            recurse(i + 1, n, m, scores, cur, used, sum + scores[i * m + j], best, best_sum, better);
            used[j] = false;
        }
        cur[i] = None;
        recurse(i + 1, n, m, scores, cur, used, sum, best, best_sum, better);
    }
    recurse(
        0, n, m, scores, &mut cur, &mut used, 0.0, &mut best, &mut best_sum, &better,
    );
    best
}

/// O(n³) Hungarian algorithm maximizing summed score. Rows = gt (n ≤ m is
/// arranged by transposition internally).
fn hungarian_max(scores: &[f64], n: usize, m: usize) -> Vec<Option<usize>> {
    let transpose = n > m;
    let (rows, cols) = if transpose { (m, n) } else { (n, m) };
    let cost = |i: usize, j: usize| -> f64 {
        // minimize negated score
        if transpose {
            -scores[j * m + i]
        } else {
            -scores[i * m + j]
        }
    };
    // potentials + augmenting paths (1-indexed internally)
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; n];
    for j in 1..=cols {
        if p[j] != 0 {
            let (gi, pj) = if transpose { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) };
            assignment[gi] = Some(pj);
        }
    }
    assignment
}

/// MI_DSC / MI_NSD for one frame.
///
/// Denominator = matched pairs + unmatched gt + unmatched predictions.
/// Both maps empty scores (1, 1); exactly one side empty scores (0, 0).
pub fn frame_scores(
    gt: &InstanceLabelMap,
    pred: &InstanceLabelMap,
    tau: f64,
) -> Result<FrameEval> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::contract(format!(
            "frame_scores: gt {}x{} vs pred {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    let n = gt.instance_count() as usize;
    let m = pred.instance_count() as usize;
    if n == 0 && m == 0 {
        return Ok(FrameEval {
            mi_dsc: 1.0,
            mi_nsd: 1.0,
            matched: Vec::new(),
            gt_count: 0,
            pred_count: 0,
            matched_count: 0,
        });
    }
    let pairs = match_instances(gt, pred)?;
    let mut matched = Vec::with_capacity(pairs.len());
    let mut sum_dsc = 0.0;
    let mut sum_nsd = 0.0;
    for (gi, pj) in &pairs {
        let g = gt.instance_mask(*gi);
        let p = pred.instance_mask(*pj);
        let d = dsc(&g, &p)?;
        let s = nsd(&g, &p, tau)?;
        sum_dsc += d;
        sum_nsd += s;
        matched.push(MatchedPair {
            gt_id: *gi,
            pred_id: *pj,
            dsc: d,
            nsd: s,
        });
    }
    let denom = (n + m - pairs.len()) as f64;
    Ok(FrameEval {
        mi_dsc: sum_dsc / denom,
        mi_nsd: sum_nsd / denom,
        matched,
        gt_count: n,
        pred_count: m,
        matched_count: pairs.len(),
    })
}
