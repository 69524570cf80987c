//! Inference decoding: scored candidates from head outputs, clip remapping,
//! gap filtering and Gaussian soft-NMS.

use crate::heads::{self, Anchor, LevelSegment, ScoreCurves, ENDNESS, STARTNESS};
use crate::objective::{tiou, Segment};
use crate::numerics::Tensor;
use crate::vss::{ClipLayout, Layout, Region};

/// A detection in source-video snippet coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub start: f64,
    pub end: f64,
    pub score: f64,
    pub label: usize,
    pub provenance: Region,
    /// The same interval in the coordinates of the network input it came from.
    pub stitched: Segment,
    /// Gap span of that input, if it was stitched.
    pub gap: Option<Segment>,
}

impl Prediction {
    pub fn segment(&self) -> Segment {
        (self.start, self.end)
    }

    pub fn touches_gap(&self) -> bool {
        self.gap.map_or(false, |(gs, ge)| intersects_gap(self.stitched, gs, ge))
    }
}

fn intersects_gap(seg: Segment, gs: f64, ge: f64) -> bool {
    // An empty gap still separates the clips: crossing its position counts.
    if ge > gs {
        seg.0 < ge && seg.1 > gs
    } else {
        seg.0 < gs && seg.1 > gs
    }
}

/// A scored segment in network-input coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub anchor: usize,
    pub level: usize,
    pub segment: Segment,
    pub class_score: f64,
    pub label: usize,
    pub region: Region,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Applies loc offsets and keeps anchors whose best class probability
/// reaches `floor`. Rows of `loc` and `cls` follow `anchors`.
pub fn decode_predictions(anchors: &[Anchor], loc: &Tensor, cls: &Tensor, layout: &Layout, limit: f64, floor: f64) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (i, a) in anchors.iter().enumerate() {
        let (label, score) = cls
            .row(i)
            .iter()
            .enumerate()
            .map(|(k, &x)| (k, sigmoid(x)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if score < floor {
            continue;
        }
        let segment = heads::apply_offsets(a, loc.row(i)[0], loc.row(i)[1], limit);
        let region = layout.region_at(0.5 * (segment.0 + segment.1));
        out.push(Candidate { anchor: i, level: a.level, segment, class_score: score, label, region });
    }
    out
}

/// Candidates as inputs to the boundary adjustment head.
pub fn adjust_inputs(candidates: &[Candidate]) -> Vec<LevelSegment> {
    candidates.iter().map(|c| LevelSegment { level: c.level, start: c.segment.0, end: c.segment.1 }).collect()
}

/// `[s + ds*w, e + de*w)` for each candidate, clamped to `[0, limit]`.
pub fn apply_adjustments(candidates: &mut [Candidate], deltas: &Tensor, limit: f64) {
    for (i, c) in candidates.iter_mut().enumerate() {
        let (s, e) = c.segment;
        let w = e - s;
        let ns = (s + deltas.row(i)[0] * w).clamp(0.0, limit);
        let ne = (e + deltas.row(i)[1] * w).clamp(0.0, limit);
        c.segment = (ns, ne);
    }
}

pub fn fuse_scores(class_score: f64, startness: f64, endness: f64) -> f64 {
    class_score * startness * endness
}

/// Stitched Clip-U coordinate back to the source video.
pub fn remap_clip_u(x: f64, layout: &ClipLayout) -> f64 {
    let m = layout.original_len as f64;
    let u0 = (layout.original_len + layout.gap) as f64;
    layout.source_start as f64 + (x - u0) * m / layout.upscaled_len() as f64
}

/// Removes candidates that intersect the gap or span both clips.
pub fn drop_gap_spanning(candidates: Vec<Candidate>, layout: &Layout) -> Vec<Candidate> {
    match layout {
        Layout::Unpartitioned { .. } => candidates,
        Layout::Stitched(c) => {
            let gap = c.gap_span();
            candidates.into_iter().filter(|cand| !intersects_gap(cand.segment, gap.start as f64, gap.end as f64)).collect()
        }
    }
}

/// Fused, source-coordinate predictions from filtered candidates.
pub fn finalize(candidates: &[Candidate], curves: &ScoreCurves, layout: &Layout) -> Vec<Prediction> {
    let gap = match layout {
        Layout::Stitched(c) => Some((c.gap_span().start as f64, c.gap_span().end as f64)),
        Layout::Unpartitioned { .. } => None,
    };
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let (s, e) = c.segment;
        if e <= s {
            continue;
        }
        let score = fuse_scores(c.class_score, curves.query(s, STARTNESS), curves.query(e, ENDNESS));
        let (start, end, provenance) = match layout {
            Layout::Stitched(cl) if c.region == Region::ClipU => (remap_clip_u(s, cl), remap_clip_u(e, cl), Region::ClipU),
            Layout::Stitched(cl) if c.region == Region::ClipO => {
                let off = cl.source_start as f64;
                (s + off, e + off, Region::ClipO)
            }
            Layout::Unpartitioned { source_start, .. } if c.region == Region::Unpartitioned => {
                let off = *source_start as f64;
                (s + off, e + off, Region::Unpartitioned)
            }
            _ => continue,
        };
        out.push(Prediction { start, end, score, label: c.label, provenance, stitched: c.segment, gap });
    }
    out
}

/// Gaussian soft-NMS: repeatedly keep the best remaining prediction and
/// decay the others by `exp(-tIoU^2 / sigma)`. Stops once the best score
/// falls below `floor` or `keep_n` are kept. Ties go to the earlier input.
pub fn soft_nms(mut preds: Vec<Prediction>, sigma: f64, floor: f64, keep_n: usize) -> Vec<Prediction> {
    let mut kept = Vec::new();
    while !preds.is_empty() && kept.len() < keep_n {
        let best = preds
            .iter()
            .enumerate()
            .fold(0, |b, (i, p)| if p.score > preds[b].score { i } else { b });
        if preds[best].score < floor {
            break;
        }
        let top = preds.remove(best);
        for p in &mut preds {
            let iou = tiou(top.segment(), p.segment());
            p.score *= (-iou * iou / sigma).exp();
        }
        kept.push(top);
    }
    kept
}

/// Class-wise greedy NMS discarding overlaps of at least `threshold`.
pub fn class_nms(mut preds: Vec<Prediction>, threshold: f64) -> Vec<Prediction> {
    preds.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Prediction> = Vec::new();
    for p in preds {
        if kept.iter().all(|k| k.label != p.label || tiou(k.segment(), p.segment()) < threshold) {
            kept.push(p);
        }
    }
    kept
}
