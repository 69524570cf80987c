//! Anchors and the four heads: location offsets, classification, boundary
//! adjustment and start/end/actionness curves.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{interpolate_rows, BoundParams, ComputeGraph, Tensor, Var, LOG_WIDTH_CLAMP};
use crate::xgpn::PyramidFeatures;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub center: f64,
    pub width: f64,
    /// Detection level, 0 = finest.
    pub level: usize,
    pub position: usize,
    pub size: usize,
}

impl Anchor {
    pub fn segment(&self) -> (f64, f64) {
        (self.center - 0.5 * self.width, self.center + 0.5 * self.width)
    }
}

/// Two anchors per position, position-major; widths `base * 2^level`.
pub fn generate_anchors(level: usize, len: usize, stride: f64, base: [f64; 2]) -> Vec<Anchor> {
    let scale = (1u64 << level) as f64;
    let mut out = Vec::with_capacity(2 * len);
    for position in 0..len {
        for (size, b) in base.iter().enumerate() {
            out.push(Anchor { center: (position as f64 + 0.5) * stride, width: b * scale, level, position, size });
        }
    }
    out
}

/// `c' = c + dc*w`, `w' = w*exp(dl)`, clamped to `[0, limit]`.
pub fn apply_offsets(anchor: &Anchor, dc: f64, dl: f64, limit: f64) -> (f64, f64) {
    let (s, e) = decode_offsets(anchor, dc, dl);
    (s.clamp(0.0, limit), e.clamp(0.0, limit))
}

/// The unclamped transform.
pub fn decode_offsets(anchor: &Anchor, dc: f64, dl: f64) -> (f64, f64) {
    let c = anchor.center + dc * anchor.width;
    let half = 0.5 * anchor.width * dl.clamp(-LOG_WIDTH_CLAMP, LOG_WIDTH_CLAMP).exp();
    (c - half, c + half)
}

/// Offsets that map `anchor` onto `segment`.
pub fn encode_offsets(anchor: &Anchor, segment: (f64, f64)) -> (f64, f64) {
    let c = 0.5 * (segment.0 + segment.1);
    let w = segment.1 - segment.0;
    ((c - anchor.center) / anchor.width, (w / anchor.width).ln())
}

/// Per-level loc offsets `2J x 2` and class logits `2J x classes` (rows in
/// anchor order), plus the finest-level score logits `J x 3`.
#[derive(Debug)]
pub struct HeadOutputs {
    pub loc: Vec<Var>,
    pub cls: Vec<Var>,
    pub score_logits: Var,
}

fn conv(g: &mut ComputeGraph, p: &BoundParams, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    g.conv1d(x, p.var(&format!("{name}.weight"))?, p.var(&format!("{name}.bias"))?, stride, pad)
}

fn head_stack(g: &mut ComputeGraph, p: &BoundParams, cfg: &ModelConfig, head: &str, x: Var) -> Result<Var> {
    let mut h = x;
    for b in 0..cfg.head_blocks {
        h = conv(g, p, &format!("{head}.block{b}.conv"), h, 1, 1)?;
        h = g.group_norm(h, p.var(&format!("{head}.block{b}.gn.scale"))?, p.var(&format!("{head}.block{b}.gn.shift"))?, cfg.gn_groups)?;
        h = g.relu(h);
    }
    conv(g, p, &format!("{head}.out"), h, 1, 0)
}

pub fn loc_head(g: &mut ComputeGraph, p: &BoundParams, cfg: &ModelConfig, map: Var) -> Result<Var> {
    let out = head_stack(g, p, cfg, "loc", map)?;
    let j = g.value(out).rows();
    g.reshape(out, &[2 * j, 2])
}

pub fn cls_head(g: &mut ComputeGraph, p: &BoundParams, cfg: &ModelConfig, map: Var) -> Result<Var> {
    let out = head_stack(g, p, cfg, "cls", map)?;
    let j = g.value(out).rows();
    g.reshape(out, &[2 * j, cfg.num_classes])
}

pub fn score_head(g: &mut ComputeGraph, p: &BoundParams, map: Var) -> Result<Var> {
    let h = conv(g, p, "scr.conv", map, 1, 1)?;
    let h = g.relu(h);
    conv(g, p, "scr.out", h, 1, 0)
}

pub fn run_heads(g: &mut ComputeGraph, p: &BoundParams, cfg: &ModelConfig, pyramid: &PyramidFeatures) -> Result<HeadOutputs> {
    let mut loc = Vec::with_capacity(pyramid.num_levels());
    let mut cls = Vec::with_capacity(pyramid.num_levels());
    for l in 0..pyramid.num_levels() {
        let (map, _) = pyramid.detection_level(l);
        loc.push(loc_head(g, p, cfg, map)?);
        cls.push(cls_head(g, p, cfg, map)?);
    }
    let score_logits = score_head(g, p, pyramid.detection_level(0).0)?;
    Ok(HeadOutputs { loc, cls, score_logits })
}

/// A segment awaiting boundary adjustment, on detection level `level`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSegment {
    pub level: usize,
    pub start: f64,
    pub end: f64,
}

/// Sampling points (input coordinates) of the start, middle and end regions.
pub fn adjust_sample_points(start: f64, end: f64) -> [[f64; 3]; 3] {
    let d = 0.1 * (end - start);
    let c = 0.5 * (start + end);
    [[start - d, start, start + d], [c - d, c, c + d], [end - d, end, end + d]]
}

/// Boundary offsets `(ds, de)` for each segment, `n x 2`, in input order.
/// Each segment samples its own level's decoder map. Returns `None` when
/// `segments` is empty.
pub fn adjust_boundaries(
    g: &mut ComputeGraph,
    p: &BoundParams,
    cfg: &ModelConfig,
    pyramid: &PyramidFeatures,
    segments: &[LevelSegment],
) -> Result<Option<Var>> {
    if segments.is_empty() {
        return Ok(None);
    }
    let n = segments.len();
    let mut grouped = vec![Vec::new(); pyramid.num_levels()];
    for (i, s) in segments.iter().enumerate() {
        if s.level >= pyramid.num_levels() {
            return Err(Error::argument(format!("segment level {} beyond pyramid", s.level)));
        }
        grouped[s.level].push(i);
    }
    let limit = cfg.input_len as f64;
    let mut region_parts: [Vec<Var>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut slot = vec![0usize; n];
    let mut next = 0;
    for (level, members) in grouped.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let stride = pyramid.detection_level(level).1.stride;
        let map = pyramid.detection_level(level).0;
        let mut positions: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for &i in members {
            slot[i] = next;
            next += 1;
            let s = &segments[i];
            let pts = adjust_sample_points(s.start.clamp(0.0, limit), s.end.clamp(0.0, limit));
            for (r, region) in pts.iter().enumerate() {
                positions[r].extend(region.iter().map(|x| x / stride - 0.5));
            }
        }
        for (r, name) in ["adj.start", "adj.mid", "adj.end"].iter().enumerate() {
            let sampled = g.interp_rows(map, &positions[r])?;
            let h = conv(g, p, name, sampled, 3, 0)?;
            region_parts[r].push(g.relu(h));
        }
    }
    let mut regions = Vec::with_capacity(3);
    for parts in &region_parts {
        regions.push(g.concat_rows(parts)?);
    }
    let stacked = g.concat_rows(&regions)?;
    let order: Vec<usize> = (0..n).flat_map(|i| [slot[i], n + slot[i], 2 * n + slot[i]]).collect();
    let composite = g.gather_rows(stacked, &order)?;
    Ok(Some(conv(g, p, "adj.out", composite, 3, 0)?))
}

/// Sigmoid actionness/startness/endness curves at the finest stride.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCurves {
    pub stride: f64,
    pub values: Tensor,
}

pub const ACTIONNESS: usize = 0;
pub const STARTNESS: usize = 1;
pub const ENDNESS: usize = 2;

impl ScoreCurves {
    pub fn from_logits(logits: &Tensor, stride: f64) -> Self {
        let data = logits.data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let values = Tensor::new(logits.shape().to_vec(), data).expect("same shape");
        Self { stride, values }
    }

    /// Linear interpolation of curve `channel` at input coordinate `x`.
    pub fn query(&self, x: f64, channel: usize) -> f64 {
        let u = x / self.stride - 0.5;
        interpolate_rows(&self.values, &[u]).data()[channel]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn anchors_first_level() {
        let a = generate_anchors(0, 320, 4.0, [32.0, 48.0]);
        assert_eq!(a.len(), 640);
        assert_eq!((a[0].center, a[0].width, a[1].width), (2.0, 32.0, 48.0));
        assert_eq!(a[2].center, 6.0);
        let top = generate_anchors(4, 20, 64.0, [32.0, 48.0]);
        assert_eq!(top.len(), 40);
        assert_eq!((top[0].width, top[1].width), (512.0, 768.0));
    }

    #[test]
    fn offsets_arithmetic() {
        let a = Anchor { center: 100.0, width: 32.0, level: 0, position: 0, size: 0 };
        let (s, e) = apply_offsets(&a, 0.5, 2f64.ln(), 1280.0);
        assert!(close(s, 84.0) && close(e, 148.0));
        assert_eq!(apply_offsets(&a, 0.0, 0.0, 1280.0), (84.0, 116.0));
        let (dc, dl) = encode_offsets(&a, (90.0, 130.0));
        let (s, e) = decode_offsets(&a, dc, dl);
        assert!(close(s, 90.0) && close(e, 130.0));
        assert_eq!(apply_offsets(&a, -10.0, 0.0, 1280.0), (0.0, 0.0));
    }

    #[test]
    fn curve_query_hits_raw_values() {
        let logits = Tensor::from_rows(&[vec![0.0, 1.0, -1.0], vec![2.0, 0.5, 0.0], vec![-3.0, 0.0, 4.0]]).unwrap();
        let c = ScoreCurves::from_logits(&logits, 4.0);
        for j in 0..3 {
            for ch in 0..3 {
                assert!(close(c.query((j as f64 + 0.5) * 4.0, ch), c.values.row(j)[ch]));
            }
        }
        assert!(c.values.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn sample_points_symmetric() {
        let p = adjust_sample_points(10.0, 30.0);
        assert_eq!(p, [[8.0, 10.0, 12.0], [18.0, 20.0, 22.0], [28.0, 30.0, 32.0]]);
    }
}
