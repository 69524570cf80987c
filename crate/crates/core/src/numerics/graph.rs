use super::tensor::{interp_taps, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`ComputeGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Focal loss settings. `alpha: None` disables class balancing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: Option<f64>,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: Some(0.25) }
    }
}

/// Log-width offsets are clamped to this magnitude before exponentiation.
pub const LOG_WIDTH_CLAMP: f64 = 6.0;

const GN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Deconv1d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    GroupNorm { x: Var, scale: Var, shift: Var, groups: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Relu { x: Var },
    Sigmoid { x: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, k: f64 },
    Sum { x: Var },
    ConcatChannels { parts: Vec<Var> },
    ConcatRows { parts: Vec<Var> },
    GatherRows { x: Var, rows: Vec<usize> },
    Reshape { x: Var },
    InterpRows { x: Var, taps: Vec<(usize, usize, f64)> },
    EdgeConv { x: Var, w: Var, b: Var, argmax: Vec<usize> },
    AnchorDecode { offsets: Var, anchors: Vec<(f64, f64)>, clamped: Vec<bool> },
    BoundaryShift { deltas: Var, widths: Vec<f64> },
    GiouLoss { pred: Var, targets: Vec<(f64, f64)> },
    FocalLoss { logits: Var, targets: Vec<Option<usize>>, params: FocalParams, norm: f64 },
    BalancedBce { logits: Var, targets: Vec<f64>, weights: Vec<f64>, rows: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of executed operations, replayed in reverse by [`ComputeGraph::backward`].
///
/// Nodes are appended in execution order, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
    fingerprint: u64,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; all zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::shape(msg()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `a (n x k) * b (k x m)`.
fn matmul(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a^T (k x n)^T * b (n x m)` accumulated into `out (k x m)`.
fn matmul_tn_acc(a: &[f64], n: usize, k: usize, b: &[f64], m: usize, out: &mut [f64]) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a (n x m) * b^T` where `b` is `(k x m)`, accumulated into `out (n x k)`.
fn matmul_nt_acc(a: &[f64], n: usize, m: usize, b: &[f64], k: usize, out: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every discrete branch taken so far (rectifier masks, max
    /// selections, clamps). Two evaluations with equal fingerprints took
    /// the same piecewise-smooth branch.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Folds an externally made discrete choice (neighbour selection,
    /// label assignment) into the fingerprint.
    pub fn record_decision(&mut self, v: u64) {
        self.note(v);
    }

    fn note(&mut self, v: u64) {
        // FNV-1a over 64-bit words
        self.fingerprint ^= v;
        self.fingerprint = self.fingerprint.wrapping_mul(0x0000_0100_0000_01b3);
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        check(xv.shape().len() == 2, || format!("conv1d input must be T x C, got {:?}", xv.shape()))?;
        check(wv.shape().len() == 3, || format!("conv1d weight must be k x Cin x Cout, got {:?}", wv.shape()))?;
        let (t, cin) = (xv.rows(), xv.cols());
        let (k, wcin, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if wcin != cin {
            return Err(Error::config(format!("conv1d weight expects {wcin} input channels, input has {cin}")));
        }
        check(bv.len() == cout, || format!("conv1d bias has {} entries, expected {cout}", bv.len()))?;
        if k == 0 || stride == 0 || t + 2 * pad < k {
            return Err(Error::argument(format!("conv1d geometry invalid: T={t} k={k} s={stride} p={pad}")));
        }
        let tout = (t + 2 * pad - k) / stride + 1;
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; tout * cout];
        for to in 0..tout {
            let orow = &mut out[to * cout..(to + 1) * cout];
            orow.copy_from_slice(bd);
            for kk in 0..k {
                let ti = (to * stride + kk) as isize - pad as isize;
                if ti < 0 || ti >= t as isize {
                    continue;
                }
                let ti = ti as usize;
                for ci in 0..cin {
                    let xval = xd[ti * cin + ci];
                    if xval == 0.0 {
                        continue;
                    }
                    let wrow = &wd[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xval * wv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![tout, cout], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, stride, pad }))
    }

    /// Transposed convolution; output length `(T - 1) * stride - 2 * pad + k`.
    pub fn deconv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        check(xv.shape().len() == 2 && wv.shape().len() == 3, || "deconv1d expects T x C input and k x Cin x Cout weight".into())?;
        let (t, cin) = (xv.rows(), xv.cols());
        let (k, wcin, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if wcin != cin {
            return Err(Error::config(format!("deconv1d weight expects {wcin} input channels, input has {cin}")));
        }
        check(bv.len() == cout, || "deconv1d bias length mismatch".into())?;
        if t == 0 || stride == 0 || (t - 1) * stride + k <= 2 * pad {
            return Err(Error::argument("deconv1d geometry invalid"));
        }
        let tout = (t - 1) * stride + k - 2 * pad;
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = Vec::with_capacity(tout * cout);
        for _ in 0..tout {
            out.extend_from_slice(bd);
        }
        for i in 0..t {
            for kk in 0..k {
                let o = (i * stride + kk) as isize - pad as isize;
                if o < 0 || o >= tout as isize {
                    continue;
                }
                let o = o as usize;
                let orow = &mut out[o * cout..(o + 1) * cout];
                for ci in 0..cin {
                    let xval = xd[i * cin + ci];
                    let wrow = &wd[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                    for (ov, wv) in orow.iter_mut().zip(wrow) {
                        *ov += xval * wv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![tout, cout], out)?;
        Ok(self.push(value, Op::Deconv1d { x, w, b, stride, pad }))
    }

    pub fn group_norm(&mut self, x: Var, scale: Var, shift: Var, groups: usize) -> Result<Var> {
        let xv = self.value(x);
        let (t, c) = (xv.rows(), xv.cols());
        if groups == 0 || c % groups != 0 {
            return Err(Error::config(format!("{c} channels not divisible into {groups} groups")));
        }
        check(self.value(scale).len() == c && self.value(shift).len() == c, || "group_norm affine length mismatch".into())?;
        let cg = c / groups;
        let n = (t * cg) as f64;
        let xd = xv.data();
        let mut xhat = vec![0.0; t * c];
        let mut rstd = vec![0.0; groups];
        for g in 0..groups {
            let mut mean = 0.0;
            for ti in 0..t {
                mean += xd[ti * c + g * cg..ti * c + (g + 1) * cg].iter().sum::<f64>();
            }
            mean /= n;
            let mut var = 0.0;
            for ti in 0..t {
                var += xd[ti * c + g * cg..ti * c + (g + 1) * cg].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= n;
            let r = 1.0 / (var + GN_EPS).sqrt();
            rstd[g] = r;
            for ti in 0..t {
                for ch in g * cg..(g + 1) * cg {
                    xhat[ti * c + ch] = (xd[ti * c + ch] - mean) * r;
                }
            }
        }
        let (sd, hd) = (self.value(scale).data(), self.value(shift).data());
        let out: Vec<f64> = xhat.iter().enumerate().map(|(i, v)| v * sd[i % c] + hd[i % c]).collect();
        let value = Tensor::new(vec![t, c], out)?;
        Ok(self.push(value, Op::GroupNorm { x, scale, shift, groups, xhat, rstd }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|v| v.max(0.0)).collect();
        let shape = xv.shape().to_vec();
        let mut h = 0u64;
        for (i, v) in xv.data().iter().enumerate() {
            if *v > 0.0 {
                h = h.wrapping_mul(31).wrapping_add(i as u64 + 1);
            }
        }
        self.note(h);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Sigmoid { x })
    }

    /// Channel-wise max over windows of 2 with stride 2; ties pick the earlier index.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (t, c) = (xv.rows(), xv.cols());
        if t < 2 {
            return Err(Error::argument(format!("max_pool1d needs at least 2 steps, got {t}")));
        }
        let tout = t / 2;
        let xd = xv.data();
        let mut out = vec![0.0; tout * c];
        let mut argmax = vec![0; tout * c];
        let mut h = 0u64;
        for to in 0..tout {
            for ch in 0..c {
                let (i0, i1) = ((2 * to) * c + ch, (2 * to + 1) * c + ch);
                let pick = if xd[i0] >= xd[i1] { i0 } else { i1 };
                out[to * c + ch] = xd[pick];
                argmax[to * c + ch] = pick;
                h = h.wrapping_mul(31).wrapping_add(pick as u64);
            }
        }
        self.note(h);
        let value = Tensor::new(vec![tout, c], out)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check(av.shape() == bv.shape(), || format!("add shape mismatch {:?} vs {:?}", av.shape(), bv.shape()))?;
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check(av.shape() == bv.shape(), || format!("mul shape mismatch {:?} vs {:?}", av.shape(), bv.shape()))?;
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * k).collect()).expect("same shape");
        self.push(value, Op::Scale { x, k })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        check(parts.iter().all(|p| self.value(*p).rows() == rows), || "concat_channels row mismatch".into())?;
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(value, Op::ConcatChannels { parts: parts.to_vec() }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        check(parts.iter().all(|p| self.value(*p).cols() == cols), || "concat_rows column mismatch".into())?;
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
            rows += self.value(*p).rows();
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(value, Op::ConcatRows { parts: parts.to_vec() }))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        check(rows.iter().all(|&r| r < xv.rows()), || "gather_rows index out of range".into())?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(xv.row(r));
        }
        let value = Tensor::new(vec![rows.len(), c], out)?;
        Ok(self.push(value, Op::GatherRows { x, rows: rows.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Rows sampled at fractional positions (clamped to `[0, rows-1]`) by linear blending.
    pub fn interp_rows(&mut self, x: Var, positions: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        check(xv.rows() >= 1, || "interp_rows on empty input".into())?;
        let taps = interp_taps(xv.rows(), positions);
        let c = xv.cols();
        let mut out = Vec::with_capacity(taps.len() * c);
        for &(lo, hi, a) in &taps {
            out.extend(xv.row(lo).iter().zip(xv.row(hi)).map(|(l, h)| (1.0 - a) * l + a * h));
        }
        let value = Tensor::new(vec![taps.len(), c], out)?;
        Ok(self.push(value, Op::InterpRows { x, taps }))
    }

    /// Dynamic edge convolution: for target `t`,
    /// `out[t] = max_k (x[src_k] || x[t]) W + b` channel-wise. A target with
    /// no sources pairs with itself.
    pub fn edge_conv(&mut self, x: Var, sources: &[Vec<usize>], w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (j, c) = (xv.rows(), xv.cols());
        check(sources.len() == j, || format!("edge list covers {} nodes, features have {j}", sources.len()))?;
        check(wv.shape() == [2 * c, c], || format!("edge weight must be {}x{c}, got {:?}", 2 * c, wv.shape()))?;
        check(bv.len() == c, || "edge bias length mismatch".into())?;
        check(sources.iter().flatten().all(|&s| s < j), || "edge source out of range".into())?;
        let wd = wv.data();
        let a = matmul(xv.data(), j, c, &wd[..c * c], c);
        let bm = matmul(xv.data(), j, c, &wd[c * c..], c);
        let bd = bv.data();
        let mut out = vec![0.0; j * c];
        let mut argmax = vec![0; j * c];
        let mut h = 0u64;
        for t in 0..j {
            let self_only = [t];
            let srcs: &[usize] = if sources[t].is_empty() { &self_only } else { &sources[t] };
            for ch in 0..c {
                let mut best = srcs[0];
                let mut best_v = a[best * c + ch];
                for &s in &srcs[1..] {
                    let v = a[s * c + ch];
                    if v > best_v {
                        best_v = v;
                        best = s;
                    }
                }
                out[t * c + ch] = best_v + bm[t * c + ch] + bd[ch];
                argmax[t * c + ch] = best;
                h = h.wrapping_mul(31).wrapping_add(best as u64);
            }
        }
        self.note(h);
        let value = Tensor::new(vec![j, c], out)?;
        Ok(self.push(value, Op::EdgeConv { x, w, b, argmax }))
    }

    /// Center/log-width offsets `(dc, dl)` applied to anchors `(center, width)`,
    /// producing `(start, end)` rows.
    pub fn anchor_decode(&mut self, offsets: Var, anchors: &[(f64, f64)]) -> Result<Var> {
        let ov = self.value(offsets);
        check(ov.shape() == [anchors.len(), 2], || format!("offsets {:?} vs {} anchors", ov.shape(), anchors.len()))?;
        let mut out = Vec::with_capacity(anchors.len() * 2);
        let mut clamped = Vec::with_capacity(anchors.len());
        for (i, &(c, w)) in anchors.iter().enumerate() {
            let (dc, dl) = (ov.data()[2 * i], ov.data()[2 * i + 1]);
            let cl = dl.abs() > LOG_WIDTH_CLAMP;
            let dl = dl.clamp(-LOG_WIDTH_CLAMP, LOG_WIDTH_CLAMP);
            let center = c + dc * w;
            let half = 0.5 * w * dl.exp();
            out.push(center - half);
            out.push(center + half);
            clamped.push(cl);
        }
        let h = clamped.iter().enumerate().filter(|(_, c)| **c).fold(0u64, |h, (i, _)| h.wrapping_mul(31).wrapping_add(i as u64 + 1));
        self.note(h);
        let value = Tensor::new(vec![anchors.len(), 2], out)?;
        Ok(self.push(value, Op::AnchorDecode { offsets, anchors: anchors.to_vec(), clamped }))
    }

    /// Boundary offsets `(ds, de)` scaled by segment width and added to `(start, end)`.
    pub fn boundary_shift(&mut self, deltas: Var, segments: &[(f64, f64)]) -> Result<Var> {
        let dv = self.value(deltas);
        check(dv.shape() == [segments.len(), 2], || format!("deltas {:?} vs {} segments", dv.shape(), segments.len()))?;
        let mut out = Vec::with_capacity(segments.len() * 2);
        let mut widths = Vec::with_capacity(segments.len());
        for (i, &(s, e)) in segments.iter().enumerate() {
            let w = e - s;
            out.push(s + dv.data()[2 * i] * w);
            out.push(e + dv.data()[2 * i + 1] * w);
            widths.push(w);
        }
        let value = Tensor::new(vec![segments.len(), 2], out)?;
        Ok(self.push(value, Op::BoundaryShift { deltas, widths }))
    }

    /// Mean of `1 - GIoU(pred_i, target_i)` over rows; zero for no rows.
    pub fn giou_loss(&mut self, pred: Var, targets: &[(f64, f64)]) -> Result<Var> {
        let pv = self.value(pred);
        check(pv.shape() == [targets.len(), 2], || format!("predictions {:?} vs {} targets", pv.shape(), targets.len()))?;
        let mut total = 0.0;
        let mut h = 0u64;
        for (i, &(gs, ge)) in targets.iter().enumerate() {
            let (ps, pe) = (pv.data()[2 * i], pv.data()[2 * i + 1]);
            let g = giou_terms(ps, pe, gs, ge);
            total += g.loss;
            h = h.wrapping_mul(31).wrapping_add(g.branch);
        }
        self.note(h);
        let mean = if targets.is_empty() { 0.0 } else { total / targets.len() as f64 };
        Ok(self.push(Tensor::scalar(mean), Op::GiouLoss { pred, targets: targets.to_vec() }))
    }

    /// Sigmoid focal loss over `N x K` logits. `targets[n]` is the positive
    /// class of row `n`, if any. The sum is divided by `norm`.
    pub fn focal_loss(&mut self, logits: Var, targets: &[Option<usize>], params: FocalParams, norm: f64) -> Result<Var> {
        let lv = self.value(logits);
        let (n, k) = (lv.rows(), lv.cols());
        check(targets.len() == n, || format!("{} targets for {n} rows", targets.len()))?;
        check(targets.iter().flatten().all(|&c| c < k), || "focal target class out of range".into())?;
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            for cls in 0..k {
                let x = lv.data()[r * k + cls];
                total += focal_term(x, *t == Some(cls), params).0;
            }
        }
        Ok(self.push(Tensor::scalar(total / norm), Op::FocalLoss { logits, targets: targets.to_vec(), params, norm }))
    }

    /// Sum over columns of class-balanced binary cross-entropy, each column
    /// averaged over rows. Positives and negatives of a column each carry
    /// half of the total weight when both are present.
    pub fn balanced_bce(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let lv = self.value(logits);
        check(lv.shape() == targets.shape(), || format!("logits {:?} vs targets {:?}", lv.shape(), targets.shape()))?;
        let (j, c) = (lv.rows(), lv.cols());
        let mut weights = vec![0.0; j * c];
        for ch in 0..c {
            let pos = (0..j).filter(|&r| targets.data()[r * c + ch] > 0.5).count();
            let neg = j - pos;
            let (wp, wn) = match (pos, neg) {
                (0, _) => (0.0, 1.0),
                (_, 0) => (1.0, 0.0),
                _ => (0.5 * j as f64 / pos as f64, 0.5 * j as f64 / neg as f64),
            };
            for r in 0..j {
                weights[r * c + ch] = if targets.data()[r * c + ch] > 0.5 { wp } else { wn };
            }
        }
        let mut total = 0.0;
        for i in 0..j * c {
            let x = lv.data()[i];
            let y = targets.data()[i];
            total += weights[i] * (y * softplus(-x) + (1.0 - y) * softplus(x));
        }
        let rows = j as f64;
        Ok(self.push(
            Tensor::scalar(total / rows),
            Op::BalancedBce { logits, targets: targets.data().to_vec(), weights, rows },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::argument(format!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let acc = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let zeros_like = |v: Var| Tensor::zeros(self.value(v).shape());
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (t, cin) = (xv.rows(), xv.cols());
                let (k, cout) = (wv.shape()[0], wv.shape()[2]);
                let tout = node.value.rows();
                let (xd, wd) = (xv.data(), wv.data());
                let mut dx = zeros_like(*x);
                let mut dw = zeros_like(*w);
                let mut db = zeros_like(*b);
                for to in 0..tout {
                    let grow = &gd[to * cout..(to + 1) * cout];
                    for (d, gv) in db.data_mut().iter_mut().zip(grow) {
                        *d += gv;
                    }
                    for kk in 0..k {
                        let ti = (to * stride + kk) as isize - *pad as isize;
                        if ti < 0 || ti >= t as isize {
                            continue;
                        }
                        let ti = ti as usize;
                        for ci in 0..cin {
                            let off = (kk * cin + ci) * cout;
                            let wrow = &wd[off..off + cout];
                            dx.data_mut()[ti * cin + ci] += wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                            let xval = xd[ti * cin + ci];
                            if xval != 0.0 {
                                for (d, gv) in dw.data_mut()[off..off + cout].iter_mut().zip(grow) {
                                    *d += xval * gv;
                                }
                            }
                        }
                    }
                }
                acc(*x, dx, grads);
                acc(*w, dw, grads);
                acc(*b, db, grads);
            }
            Op::Deconv1d { x, w, b, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (t, cin) = (xv.rows(), xv.cols());
                let (k, cout) = (wv.shape()[0], wv.shape()[2]);
                let tout = node.value.rows();
                let (xd, wd) = (xv.data(), wv.data());
                let mut dx = zeros_like(*x);
                let mut dw = zeros_like(*w);
                let mut db = zeros_like(*b);
                for o in 0..tout {
                    for (d, gv) in db.data_mut().iter_mut().zip(&gd[o * cout..(o + 1) * cout]) {
                        *d += gv;
                    }
                }
                for i in 0..t {
                    for kk in 0..k {
                        let o = (i * stride + kk) as isize - *pad as isize;
                        if o < 0 || o >= tout as isize {
                            continue;
                        }
                        let o = o as usize;
                        let grow = &gd[o * cout..(o + 1) * cout];
                        for ci in 0..cin {
                            let off = (kk * cin + ci) * cout;
                            dx.data_mut()[i * cin + ci] += wd[off..off + cout].iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                            let xval = xd[i * cin + ci];
                            for (d, gv) in dw.data_mut()[off..off + cout].iter_mut().zip(grow) {
                                *d += xval * gv;
                            }
                        }
                    }
                }
                acc(*x, dx, grads);
                acc(*w, dw, grads);
                acc(*b, db, grads);
            }
            Op::GroupNorm { x, scale, shift, groups, xhat, rstd } => {
                let xv = self.value(*x);
                let (t, c) = (xv.rows(), xv.cols());
                let cg = c / groups;
                let n = (t * cg) as f64;
                let sd = self.value(*scale).data();
                let mut dscale = vec![0.0; c];
                let mut dshift = vec![0.0; c];
                for idx in 0..t * c {
                    dscale[idx % c] += gd[idx] * xhat[idx];
                    dshift[idx % c] += gd[idx];
                }
                let mut dx = vec![0.0; t * c];
                for gi in 0..*groups {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for ti in 0..t {
                        for ch in gi * cg..(gi + 1) * cg {
                            let idx = ti * c + ch;
                            let dxh = gd[idx] * sd[ch];
                            sum_d += dxh;
                            sum_dx += dxh * xhat[idx];
                        }
                    }
                    for ti in 0..t {
                        for ch in gi * cg..(gi + 1) * cg {
                            let idx = ti * c + ch;
                            let dxh = gd[idx] * sd[ch];
                            dx[idx] = rstd[gi] / n * (n * dxh - sum_d - xhat[idx] * sum_dx);
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"), grads);
                acc(*scale, Tensor::new(vec![c], dscale).expect("shape"), grads);
                acc(*shift, Tensor::new(vec![c], dshift).expect("shape"), grads);
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let d = xv.data().iter().zip(gd).map(|(v, g)| if *v > 0.0 { *g } else { 0.0 }).collect();
                acc(*x, Tensor::new(xv.shape().to_vec(), d).expect("shape"), grads);
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                let d = y.iter().zip(gd).map(|(s, g)| g * s * (1.0 - s)).collect();
                acc(*x, Tensor::new(node.value.shape().to_vec(), d).expect("shape"), grads);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = zeros_like(*x);
                for (o, &src) in argmax.iter().enumerate() {
                    dx.data_mut()[src] += gd[o];
                }
                acc(*x, dx, grads);
            }
            Op::Add { a, b } => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = bv.data().iter().zip(gd).map(|(y, g)| y * g).collect();
                let db = av.data().iter().zip(gd).map(|(y, g)| y * g).collect();
                acc(*a, Tensor::new(av.shape().to_vec(), da).expect("shape"), grads);
                acc(*b, Tensor::new(bv.shape().to_vec(), db).expect("shape"), grads);
            }
            Op::Scale { x, k } => {
                let d = gd.iter().map(|g| g * k).collect();
                acc(*x, Tensor::new(node.value.shape().to_vec(), d).expect("shape"), grads);
            }
            Op::Sum { x } => {
                acc(*x, Tensor::full(self.value(*x).shape(), gd[0]), grads);
            }
            Op::ConcatChannels { parts } => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    acc(*p, Tensor::new(self.value(*p).shape().to_vec(), d).expect("shape"), grads);
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    let d = gd[offset..offset + n].to_vec();
                    offset += n;
                    acc(*p, Tensor::new(self.value(*p).shape().to_vec(), d).expect("shape"), grads);
                }
            }
            Op::GatherRows { x, rows } => {
                let mut dx = zeros_like(*x);
                let c = dx.cols();
                for (o, &r) in rows.iter().enumerate() {
                    for (d, gv) in dx.row_mut(r).iter_mut().zip(&gd[o * c..(o + 1) * c]) {
                        *d += gv;
                    }
                }
                acc(*x, dx, grads);
            }
            Op::Reshape { x } => {
                let d = Tensor::new(self.value(*x).shape().to_vec(), gd.to_vec()).expect("shape");
                acc(*x, d, grads);
            }
            Op::InterpRows { x, taps } => {
                let mut dx = zeros_like(*x);
                let c = dx.cols();
                for (o, &(lo, hi, a)) in taps.iter().enumerate() {
                    for ch in 0..c {
                        let gv = gd[o * c + ch];
                        dx.data_mut()[lo * c + ch] += (1.0 - a) * gv;
                        dx.data_mut()[hi * c + ch] += a * gv;
                    }
                }
                acc(*x, dx, grads);
            }
            Op::EdgeConv { x, w, b, argmax } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (j, c) = (xv.rows(), xv.cols());
                let mut da = vec![0.0; j * c];
                for (idx, &src) in argmax.iter().enumerate() {
                    da[src * c + idx % c] += gd[idx];
                }
                let db_m = gd;
                let wd = wv.data();
                let mut dx = vec![0.0; j * c];
                matmul_nt_acc(&da, j, c, &wd[..c * c], c, &mut dx);
                matmul_nt_acc(db_m, j, c, &wd[c * c..], c, &mut dx);
                let mut dw = vec![0.0; 2 * c * c];
                matmul_tn_acc(xv.data(), j, c, &da, c, &mut dw[..c * c]);
                matmul_tn_acc(xv.data(), j, c, db_m, c, &mut dw[c * c..]);
                let mut dbias = vec![0.0; c];
                for idx in 0..j * c {
                    dbias[idx % c] += gd[idx];
                }
                acc(*x, Tensor::new(vec![j, c], dx).expect("shape"), grads);
                acc(*w, Tensor::new(vec![2 * c, c], dw).expect("shape"), grads);
                acc(*b, Tensor::new(vec![c], dbias).expect("shape"), grads);
            }
            Op::AnchorDecode { offsets, anchors, clamped } => {
                let ov = self.value(*offsets);
                let mut d = vec![0.0; anchors.len() * 2];
                for (i, &(_, w)) in anchors.iter().enumerate() {
                    let (gs, ge) = (gd[2 * i], gd[2 * i + 1]);
                    d[2 * i] = w * (gs + ge);
                    if !clamped[i] {
                        let half = 0.5 * w * ov.data()[2 * i + 1].exp();
                        d[2 * i + 1] = half * (ge - gs);
                    }
                }
                acc(*offsets, Tensor::new(vec![anchors.len(), 2], d).expect("shape"), grads);
            }
            Op::BoundaryShift { deltas, widths } => {
                let d = gd.iter().enumerate().map(|(i, g)| g * widths[i / 2]).collect();
                acc(*deltas, Tensor::new(vec![widths.len(), 2], d).expect("shape"), grads);
            }
            Op::GiouLoss { pred, targets } => {
                let pv = self.value(*pred);
                let n = targets.len();
                let mut d = vec![0.0; n * 2];
                for (i, &(gs, ge)) in targets.iter().enumerate() {
                    let t = giou_terms(pv.data()[2 * i], pv.data()[2 * i + 1], gs, ge);
                    d[2 * i] = gd[0] * t.d_start / n as f64;
                    d[2 * i + 1] = gd[0] * t.d_end / n as f64;
                }
                acc(*pred, Tensor::new(vec![n, 2], d).expect("shape"), grads);
            }
            Op::FocalLoss { logits, targets, params, norm } => {
                let lv = self.value(*logits);
                let k = lv.cols();
                let mut d = vec![0.0; lv.len()];
                for (r, t) in targets.iter().enumerate() {
                    for cls in 0..k {
                        let idx = r * k + cls;
                        d[idx] = gd[0] * focal_term(lv.data()[idx], *t == Some(cls), *params).1 / norm;
                    }
                }
                acc(*logits, Tensor::new(lv.shape().to_vec(), d).expect("shape"), grads);
            }
            Op::BalancedBce { logits, targets, weights, rows } => {
                let lv = self.value(*logits);
                let d = lv
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| gd[0] * weights[i] * (sigmoid(x) - targets[i]) / rows)
                    .collect();
                acc(*logits, Tensor::new(lv.shape().to_vec(), d).expect("shape"), grads);
            }
        }
    }
}

struct GiouTerms {
    loss: f64,
    d_start: f64,
    d_end: f64,
    branch: u64,
}

/// `1 - GIoU` for one predicted interval and its partial derivatives.
fn giou_terms(ps: f64, pe: f64, gs: f64, ge: f64) -> GiouTerms {
    const TINY: f64 = 1e-12;
    let pred_lo_inter = ps >= gs;
    let pred_hi_inter = pe <= ge;
    let lo = if pred_lo_inter { ps } else { gs };
    let hi = if pred_hi_inter { pe } else { ge };
    let overlap = hi > lo;
    let inter = if overlap { hi - lo } else { 0.0 };
    let raw_union = (pe - ps) + (ge - gs) - inter;
    let union_clamped = raw_union < TINY;
    let union = raw_union.max(TINY);
    let pred_lo_enc = ps <= gs;
    let pred_hi_enc = pe >= ge;
    let raw_enc = (if pred_hi_enc { pe } else { ge }) - (if pred_lo_enc { ps } else { gs });
    let enc_clamped = raw_enc < TINY;
    let enc = raw_enc.max(TINY);
    let loss = 2.0 - inter / union - union / enc;

    // dL/dI, dL/dU, dL/dE with U = lp + lg - I; clamped quantities are constant.
    let du = if union_clamped { 0.0 } else { 1.0 };
    let dl_du = du * (inter / (union * union) - 1.0 / enc);
    let dl_di = -1.0 / union - dl_du;
    let dl_de = if enc_clamped { 0.0 } else { union / (enc * enc) };
    let di_ds = if overlap && pred_lo_inter { -1.0 } else { 0.0 };
    let di_de = if overlap && pred_hi_inter { 1.0 } else { 0.0 };
    let de_ds = if pred_lo_enc { -1.0 } else { 0.0 };
    let de_de = if pred_hi_enc { 1.0 } else { 0.0 };
    let d_start = dl_di * di_ds - dl_du + dl_de * de_ds;
    let d_end = dl_di * di_de + dl_du + dl_de * de_de;
    let branch = (pred_lo_inter as u64)
        | (pred_hi_inter as u64) << 1
        | (overlap as u64) << 2
        | (pred_lo_enc as u64) << 3
        | (pred_hi_enc as u64) << 4
        | (union_clamped as u64) << 5
        | (enc_clamped as u64) << 6;
    GiouTerms { loss, d_start, d_end, branch }
}

/// Focal loss term and its derivative with respect to the logit.
fn focal_term(x: f64, positive: bool, params: FocalParams) -> (f64, f64) {
    let p = sigmoid(x);
    let gamma = params.gamma;
    if positive {
        let weight = params.alpha.unwrap_or(1.0);
        let log_p = -softplus(-x);
        let q = 1.0 - p;
        let loss = -weight * q.powf(gamma) * log_p;
        // d/dx [-(1-p)^g log p] = g (1-p)^g p log p - (1-p)^(g+1)
        let grad = weight * (gamma * q.powf(gamma) * p * log_p - q.powf(gamma + 1.0));
        (loss, grad)
    } else {
        let weight = params.alpha.map_or(1.0, |a| 1.0 - a);
        let log_q = -softplus(x);
        let loss = -weight * p.powf(gamma) * log_q;
        // d/dx [-p^g log(1-p)] = p^(g+1) - g p^g (1-p) log(1-p)
        let grad = weight * (p.powf(gamma + 1.0) - gamma * p.powf(gamma) * (1.0 - p) * log_q);
        (loss, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_hand_case() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(t2(3, 1, &[1.0, 2.0, 3.0]));
        let w = g.leaf(Tensor::new(vec![3, 1, 1], vec![1.0, 0.0, -1.0]).unwrap());
        let b = g.leaf(Tensor::zeros(&[1]));
        let y = g.conv1d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &[-2.0, -2.0, 2.0]);
    }

    #[test]
    fn conv1d_identity_kernel_and_same_padding() {
        let mut g = ComputeGraph::new();
        let data: Vec<f64> = (0..8).map(|i| i as f64 * 0.7 - 1.0).collect();
        let x = g.leaf(t2(8, 1, &data));
        let w = g.leaf(Tensor::new(vec![3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap());
        let b = g.leaf(Tensor::zeros(&[1]));
        let y = g.conv1d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[8, 1]);
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv1d_channel_mismatch_is_config_error() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::zeros(&[4, 2]));
        let w = g.leaf(Tensor::zeros(&[3, 3, 1]));
        let b = g.leaf(Tensor::zeros(&[1]));
        assert!(matches!(g.conv1d(x, w, b, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn deconv_doubles_length_and_zero_input_gives_bias() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::zeros(&[4, 2]));
        let w = g.leaf(Tensor::full(&[4, 2, 3], 0.3));
        let b = g.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = g.deconv1d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[8, 3]);
        for r in 0..8 {
            assert_eq!(g.value(y).row(r), &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn group_norm_cases() {
        let mut g = ComputeGraph::new();
        let one = g.leaf(Tensor::full(&[2], 1.0));
        let zero = g.leaf(Tensor::zeros(&[2]));
        let x = g.leaf(Tensor::full(&[5, 2], 3.5));
        let y = g.group_norm(x, one, zero, 1).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));

        let x = g.leaf(t2(1, 2, &[1.0, 3.0]));
        let y = g.group_norm(x, one, zero, 1).unwrap();
        let d = g.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-5 && (d[1] - 1.0).abs() < 1e-5);

        let shift = g.leaf(Tensor::new(vec![2], vec![0.25, -4.0]).unwrap());
        let x = g.leaf(t2(2, 2, &[1.0, 9.0, -3.0, 2.0]));
        let y = g.group_norm(x, zero, shift, 2).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, -4.0, 0.25, -4.0]);

        let three = g.leaf(Tensor::full(&[3], 1.0));
        let x3 = g.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.group_norm(x3, three, three, 2), Err(Error::Config(_))));
    }

    #[test]
    fn max_pool_cases() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(t2(4, 1, &[1.0, 3.0, 2.0, 5.0]));
        let y = g.max_pool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
        let x = g.leaf(t2(6, 1, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let y = g.max_pool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn max_pool_tie_routes_to_earliest() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(t2(2, 1, &[2.0, 2.0]));
        let y = g.max_pool2(x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[1.0, 0.0]);
    }

    #[test]
    fn backward_simple_cases() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(t2(2, 3, &[1.0, -2.0, 0.5, 4.0, 0.0, 1.0]));
        let s = g.sum(x);
        assert!(g.backward(s).unwrap().get(x).data().iter().all(|v| *v == 1.0));

        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.backward(y).unwrap().get(x).item(), 6.0);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let unused = g.leaf(Tensor::zeros(&[2, 2]));
        let y = g.scale(x, 2.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn edge_conv_passthrough_weights() {
        let mut g = ComputeGraph::new();
        let feats = t2(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let x = g.leaf(feats.clone());
        let mut wd = vec![0.0; 8];
        wd[4] = 1.0;
        wd[7] = 1.0;
        let w = g.leaf(Tensor::new(vec![4, 2], wd).unwrap());
        let b = g.leaf(Tensor::zeros(&[2]));
        let y = g.edge_conv(x, &[vec![1, 2], vec![0], vec![]], w, b).unwrap();
        assert_eq!(g.value(y), &feats);
    }

    #[test]
    fn focal_hand_value() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(t2(1, 1, &[0.0]));
        let y = g.focal_loss(x, &[Some(0)], FocalParams::default(), 1.0).unwrap();
        let expected = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((g.value(y).item() - expected).abs() < 1e-12);
        assert!((expected - 0.0433).abs() < 5e-5);
    }

    #[test]
    fn focal_degenerates_to_bce() {
        let logits = [0.3, -1.2, 2.0, 0.0];
        let mut g = ComputeGraph::new();
        let x = g.leaf(t2(4, 1, &logits));
        let params = FocalParams { gamma: 0.0, alpha: None };
        let y = g.focal_loss(x, &[Some(0); 4], params, 4.0).unwrap();
        let bce: f64 = logits.iter().map(|&l| -(1.0 / (1.0 + (-l as f64).exp())).ln()).sum::<f64>() / 4.0;
        assert!((g.value(y).item() - bce).abs() < 1e-12);
    }

    #[test]
    fn balanced_bce_at_half_is_ln2_per_column() {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::zeros(&[6, 3]));
        let mut tg = Tensor::zeros(&[6, 3]);
        tg.data_mut()[0] = 1.0;
        tg.data_mut()[4] = 1.0;
        tg.data_mut()[5] = 1.0;
        tg.data_mut()[8] = 1.0;
        let y = g.balanced_bce(x, &tg).unwrap();
        assert!((g.value(y).item() - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }
}
