//! Label assignment and the four-term training loss.

use log::warn;

use crate::error::{Error, Result};
use crate::heads::{self, Anchor, LevelSegment, ACTIONNESS, ENDNESS, STARTNESS};
use crate::model::{ForwardPass, ModelConfig};
use crate::numerics::{BoundParams, ComputeGraph, FocalParams, Tensor, Var};
use crate::vss::{Layout, PlacedAnnotation, Region};

pub type Segment = (f64, f64);

/// Temporal intersection over union; zero when the union is empty.
pub fn tiou(a: Segment, b: Segment) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU minus the share of the enclosing interval not covered by the union.
pub fn giou_temporal(a: Segment, b: Segment) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    let hull = a.1.max(b.1) - a.0.min(b.0);
    if union <= 0.0 || hull <= 0.0 {
        return 0.0;
    }
    inter / union - (hull - union) / hull
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Matched ground-truth index of each positive segment.
    pub matched: Vec<Option<usize>>,
    /// Best tIoU of each segment against its admissible ground truths.
    pub best_iou: Vec<f64>,
}

impl Assignment {
    pub fn positives(&self) -> usize {
        self.matched.iter().flatten().count()
    }

}

/// Argmax-tIoU matching, positive iff the best tIoU reaches `threshold`.
/// Ties go to the earlier ground truth.
pub fn assign_targets(segments: &[Segment], truths: &[Segment], threshold: f64) -> Assignment {
    let all = vec![Region::Unpartitioned; segments.len()];
    let placed: Vec<PlacedAnnotation> =
        truths.iter().map(|&(s, e)| PlacedAnnotation { start: s, end: e, label: 0, region: Region::Unpartitioned }).collect();
    assign_in_regions(segments, &all, &placed, threshold)
}

/// As [`assign_targets`], matching each segment only against ground truths
/// of its own region; gap and padding segments are always negative.
pub fn assign_in_regions(segments: &[Segment], regions: &[Region], truths: &[PlacedAnnotation], threshold: f64) -> Assignment {
    let mut matched = Vec::with_capacity(segments.len());
    let mut best_iou = Vec::with_capacity(segments.len());
    for (seg, region) in segments.iter().zip(regions) {
        let mut best: Option<(usize, f64)> = None;
        if region.is_content() {
            for (gi, gt) in truths.iter().enumerate() {
                if gt.region != *region {
                    continue;
                }
                let iou = tiou(*seg, (gt.start, gt.end));
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
        }
        let iou = best.map_or(0.0, |b| b.1);
        best_iou.push(iou);
        matched.push(best.filter(|&(_, b)| b >= threshold).map(|b| b.0));
    }
    Assignment { matched, best_iou }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub loc_threshold: f64,
    pub adj_threshold: f64,
    pub focal: FocalParams,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self { loc_threshold: 0.6, adj_threshold: 0.7, focal: FocalParams::default() }
    }
}

/// Start/end target half-width: a tenth of the action, at least half the finest stride.
pub fn boundary_half_width(duration: f64, stride: f64) -> f64 {
    (duration / 10.0).max(stride / 2.0)
}

/// Actionness/startness/endness targets at map positions centred on `(j + 0.5) * stride`.
pub fn score_targets(layout: &Layout, truths: &[PlacedAnnotation], len: usize, stride: f64) -> Tensor {
    let mut t = Tensor::zeros(&[len, 3]);
    for j in 0..len {
        let x = (j as f64 + 0.5) * stride;
        if !layout.region_at(x).is_content() {
            continue;
        }
        let row = t.row_mut(j);
        for gt in truths {
            let half = boundary_half_width(gt.end - gt.start, stride);
            if x >= gt.start && x < gt.end {
                row[ACTIONNESS] = 1.0;
            }
            if x >= gt.start - half && x < gt.start + half {
                row[STARTNESS] = 1.0;
            }
            if x >= gt.end - half && x < gt.end + half {
                row[ENDNESS] = 1.0;
            }
        }
    }
    t
}

/// Every discrete or detached target of one sample. Held fixed while the
/// loss is evaluated, which is what stops gradients through it.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPlan {
    /// Anchor index and matched ground truth of each location positive.
    pub loc: Vec<(usize, Segment)>,
    pub cls: Vec<Option<usize>>,
    /// Detached updated segment and matched ground truth of each adjust positive.
    pub adj: Vec<(LevelSegment, Segment)>,
    pub scr: Tensor,
}

impl TargetPlan {
    pub fn cls_positives(&self) -> usize {
        self.cls.iter().flatten().count()
    }

    /// Hash of the discrete assignments, for gradient-check kink detection.
    pub fn digest(&self) -> u64 {
        let mix = |h: u64, v: u64| (h ^ v).wrapping_mul(0x0000_0100_0000_01b3);
        let mut h = 0xcbf2_9ce4_8422_2325;
        for (i, _) in &self.loc {
            h = mix(h, *i as u64);
        }
        for (i, c) in self.cls.iter().enumerate() {
            if let Some(c) = c {
                h = mix(h, ((i as u64) << 16) | *c as u64);
            }
        }
        mix(h, self.adj.len() as u64)
    }
}

pub fn flat_anchors(cfg: &ModelConfig) -> Vec<Anchor> {
    cfg.anchors().into_iter().flatten().collect()
}

/// Builds the plan from loc offsets `N x 2` (all levels, anchor order).
pub fn plan_targets(
    cfg: &ModelConfig,
    anchors: &[Anchor],
    loc_offsets: &Tensor,
    layout: &Layout,
    truths: &[PlacedAnnotation],
    settings: &LossSettings,
) -> Result<TargetPlan> {
    if loc_offsets.shape() != [anchors.len(), 2] {
        return Err(Error::shape(format!("loc offsets {:?} for {} anchors", loc_offsets.shape(), anchors.len())));
    }
    let regions: Vec<Region> = anchors.iter().map(|a| layout.region_at(a.center)).collect();
    let limit = cfg.input_len as f64;
    let predefined: Vec<Segment> = anchors.iter().map(Anchor::segment).collect();
    let updated: Vec<Segment> = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| heads::apply_offsets(a, loc_offsets.row(i)[0], loc_offsets.row(i)[1], limit))
        .collect();

    let loc_assign = assign_in_regions(&predefined, &regions, truths, settings.loc_threshold);
    let cls_assign = assign_in_regions(&updated, &regions, truths, settings.loc_threshold);
    let adj_assign = assign_in_regions(&updated, &regions, truths, settings.adj_threshold);
    let gt = |g: usize| (truths[g].start, truths[g].end);

    let loc = loc_assign.matched.iter().enumerate().filter_map(|(i, m)| m.map(|g| (i, gt(g)))).collect();
    let cls = cls_assign.matched.iter().map(|m| m.map(|g| truths[g].label)).collect();
    let adj = adj_assign
        .matched
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            m.map(|g| (LevelSegment { level: anchors[i].level, start: updated[i].0, end: updated[i].1 }, gt(g)))
        })
        .collect();
    let scr = score_targets(layout, truths, cfg.detection_len(0), cfg.detection_stride(0));
    Ok(TargetPlan { loc, cls, adj, scr })
}

/// Values of one sample's loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub loc: f64,
    pub cls: f64,
    pub adj: f64,
    pub scr: f64,
    pub total: f64,
    pub loc_positives: usize,
    pub cls_positives: usize,
    pub adj_positives: usize,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.loc += other.loc;
        self.cls += other.cls;
        self.adj += other.adj;
        self.scr += other.scr;
        self.total += other.total;
        self.loc_positives += other.loc_positives;
        self.cls_positives += other.cls_positives;
        self.adj_positives += other.adj_positives;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown { loc: self.loc * k, cls: self.cls * k, adj: self.adj * k, scr: self.scr * k, total: self.total * k, ..*self }
    }

    pub fn log_line(&self, step: u64) -> String {
        format!("{step} {:.6} {:.6} {:.6} {:.6} {:.6}", self.loc, self.cls, self.adj, self.scr, self.total)
    }
}

/// All loc offsets and class logits, concatenated over levels in anchor order.
pub fn concat_heads(g: &mut ComputeGraph, fp: &ForwardPass) -> Result<(Var, Var)> {
    Ok((g.concat_rows(&fp.heads.loc)?, g.concat_rows(&fp.heads.cls)?))
}

/// Sum of the four terms under a fixed plan.
pub fn loss_from_plan(
    g: &mut ComputeGraph,
    p: &BoundParams,
    cfg: &ModelConfig,
    fp: &ForwardPass,
    loc_offsets: Var,
    cls_logits: Var,
    anchors: &[Anchor],
    plan: &TargetPlan,
    settings: &LossSettings,
) -> Result<(Var, LossBreakdown)> {
    let zero = |g: &mut ComputeGraph| g.leaf(Tensor::scalar(0.0));

    let loc = if plan.loc.is_empty() {
        zero(g)
    } else {
        let rows: Vec<usize> = plan.loc.iter().map(|(i, _)| *i).collect();
        let picked = g.gather_rows(loc_offsets, &rows)?;
        let geometry: Vec<(f64, f64)> = rows.iter().map(|&i| (anchors[i].center, anchors[i].width)).collect();
        let decoded = g.anchor_decode(picked, &geometry)?;
        let targets: Vec<Segment> = plan.loc.iter().map(|(_, t)| *t).collect();
        g.giou_loss(decoded, &targets)?
    };

    let norm = plan.cls_positives().max(1) as f64;
    let cls = g.focal_loss(cls_logits, &plan.cls, settings.focal, norm)?;

    let segments: Vec<LevelSegment> = plan.adj.iter().map(|(s, _)| *s).collect();
    let adj = match heads::adjust_boundaries(g, p, cfg, &fp.pyramid, &segments)? {
        None => zero(g),
        Some(deltas) => {
            let spans: Vec<Segment> = segments.iter().map(|s| (s.start, s.end)).collect();
            let shifted = g.boundary_shift(deltas, &spans)?;
            let targets: Vec<Segment> = plan.adj.iter().map(|(_, t)| *t).collect();
            g.giou_loss(shifted, &targets)?
        }
    };

    let scr = g.balanced_bce(fp.heads.score_logits, &plan.scr)?;

    let a = g.add(loc, cls)?;
    let b = g.add(adj, scr)?;
    let total = g.add(a, b)?;

    let value = |v: Var| g.value(v).item();
    let breakdown = LossBreakdown {
        loc: value(loc),
        cls: value(cls),
        adj: value(adj),
        scr: value(scr),
        total: value(total),
        loc_positives: plan.loc.len(),
        cls_positives: plan.cls_positives(),
        adj_positives: plan.adj.len(),
    };
    for (name, v) in [("loc", breakdown.loc), ("cls", breakdown.cls), ("adj", breakdown.adj), ("scr", breakdown.scr)] {
        if !v.is_finite() {
            return Err(Error::Training { component: format!("loss.{name}"), message: format!("non-finite value {v}") });
        }
    }
    Ok((total, breakdown))
}

/// Plans targets from the current forward pass, then builds the loss.
pub fn total_loss(
    g: &mut ComputeGraph,
    p: &BoundParams,
    cfg: &ModelConfig,
    fp: &ForwardPass,
    layout: &Layout,
    truths: &[PlacedAnnotation],
    settings: &LossSettings,
) -> Result<(Var, LossBreakdown)> {
    let anchors = flat_anchors(cfg);
    let (loc_offsets, cls_logits) = concat_heads(g, fp)?;
    let plan = plan_targets(cfg, &anchors, g.value(loc_offsets), layout, truths, settings)?;
    if plan.loc.is_empty() && !truths.is_empty() {
        warn!("no location positives for {} ground truths", truths.len());
    }
    g.record_decision(plan.digest());
    loss_from_plan(g, p, cfg, fp, loc_offsets, cls_logits, &anchors, &plan, settings)
}
