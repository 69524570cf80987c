//! Average precision at tIoU thresholds, average mAP, and length-group
//! accumulated mAP.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::objective::tiou;

/// Evaluation conventions of a benchmark family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    ActivityNet,
    Thumos,
    Synthetic,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activitynet" => Ok(Profile::ActivityNet),
            "thumos" => Ok(Profile::Thumos),
            "synthetic" => Ok(Profile::Synthetic),
            other => Err(Error::config(format!("unknown profile {other:?} (expected activitynet, thumos or synthetic)"))),
        }
    }
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::ActivityNet => "activitynet",
            Profile::Thumos => "thumos",
            Profile::Synthetic => "synthetic",
        }
    }

    pub fn thresholds(self) -> Vec<f64> {
        match self {
            Profile::Thumos => vec![0.3, 0.4, 0.5, 0.6, 0.7],
            _ => (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
        }
    }

    /// Upper bounds in seconds of the XS, S, M and L groups; XL is open.
    pub fn group_bounds(self) -> [f64; 4] {
        match self {
            Profile::ActivityNet => [30.0, 60.0, 120.0, 180.0],
            Profile::Thumos => [3.0, 6.0, 12.0, 18.0],
            Profile::Synthetic => [8.0, 16.0, 32.0, 48.0],
        }
    }
}

pub const GROUP_NAMES: [&str; 5] = ["XS", "S", "M", "L", "XL"];

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub video: String,
    pub start: f64,
    pub end: f64,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub video: String,
    pub start: f64,
    pub end: f64,
    pub score: f64,
    pub label: String,
}

/// Area under the precision envelope (each precision replaced by the
/// maximum precision at any higher recall), summed over recall steps.
pub fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut mprec = Vec::with_capacity(precision.len() + 2);
    mprec.push(0.0);
    mprec.extend_from_slice(precision);
    mprec.push(0.0);
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    mrec.push(0.0);
    mrec.extend_from_slice(recall);
    mrec.push(1.0);
    for i in (0..mprec.len() - 1).rev() {
        mprec[i] = mprec[i].max(mprec[i + 1]);
    }
    (1..mrec.len()).filter(|&i| mrec[i] != mrec[i - 1]).map(|i| (mrec[i] - mrec[i - 1]) * mprec[i]).sum()
}

/// AP of one class. `None` when there are neither ground truths nor detections.
pub fn average_precision(dets: &[&Detection], gts: &[&GroundTruth], threshold: f64) -> Option<f64> {
    if gts.is_empty() {
        return if dets.is_empty() { None } else { Some(0.0) };
    }
    let mut order: Vec<&Detection> = dets.to_vec();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.total_cmp(&b.start))
            .then(a.video.cmp(&b.video))
            .then(a.end.total_cmp(&b.end))
    });
    let mut by_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_video.entry(g.video.as_str()).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for &gi in by_video.get(d.video.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            if used[gi] {
                continue;
            }
            let iou = tiou((d.start, d.end), (gts[gi].start, gts[gi].end));
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, iou)) if iou >= threshold => {
                used[gi] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / gts.len() as f64);
    }
    Some(interpolated_ap(&precision, &recall))
}

/// Mean AP over classes present in the ground truth.
pub fn mean_ap(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> f64 {
    let classes: BTreeSet<&str> = gts.iter().map(|g| g.label.as_str()).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|c| {
            let d: Vec<&Detection> = dets.iter().filter(|x| x.label == *c).collect();
            let g: Vec<&GroundTruth> = gts.iter().filter(|x| x.label == *c).collect();
            average_precision(&d, &g, threshold).unwrap_or(0.0)
        })
        .sum();
    total / classes.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapSuite {
    pub thresholds: Vec<f64>,
    pub maps: Vec<f64>,
    pub average: f64,
}

pub fn map_suite(dets: &[Detection], gts: &[GroundTruth], thresholds: &[f64]) -> MapSuite {
    let maps: Vec<f64> = thresholds.iter().map(|&t| mean_ap(dets, gts, t)).collect();
    let average = if maps.is_empty() { 0.0 } else { maps.iter().sum::<f64>() / maps.len() as f64 };
    MapSuite { thresholds: thresholds.to_vec(), maps, average }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupResult {
    pub name: String,
    pub lower: f64,
    pub upper: Option<f64>,
    pub count: usize,
    pub map: f64,
    pub accumulated: f64,
}

/// Instance-weighted running average of group values; empty groups keep
/// the previous value.
pub fn accumulate(counts: &[usize], maps: &[f64]) -> Vec<f64> {
    let (mut n, mut sum) = (0usize, 0.0);
    counts
        .iter()
        .zip(maps)
        .map(|(&c, &m)| {
            n += c;
            sum += c as f64 * m;
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect()
}

fn group_of(len: f64, bounds: &[f64; 4]) -> usize {
    bounds.iter().position(|&b| len <= b).unwrap_or(4)
}

/// Per-group average mAP with ground truths and detections both restricted
/// to the group by their own length, plus the accumulated curve.
pub fn accumulated_map(dets: &[Detection], gts: &[GroundTruth], bounds: [f64; 4], thresholds: &[f64]) -> Vec<GroupResult> {
    let mut results = Vec::with_capacity(5);
    for (gi, name) in GROUP_NAMES.iter().enumerate() {
        let g: Vec<GroundTruth> = gts.iter().filter(|x| group_of(x.end - x.start, &bounds) == gi).cloned().collect();
        let d: Vec<Detection> = dets.iter().filter(|x| group_of(x.end - x.start, &bounds) == gi).cloned().collect();
        let map = if g.is_empty() { 0.0 } else { map_suite(&d, &g, thresholds).average };
        results.push(GroupResult {
            name: name.to_string(),
            lower: if gi == 0 { 0.0 } else { bounds[gi - 1] },
            upper: bounds.get(gi).copied(),
            count: g.len(),
            map,
            accumulated: 0.0,
        });
    }
    let counts: Vec<usize> = results.iter().map(|r| r.count).collect();
    let maps: Vec<f64> = results.iter().map(|r| r.map).collect();
    for (r, a) in results.iter_mut().zip(accumulate(&counts, &maps)) {
        r.accumulated = a;
    }
    results
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub profile: Profile,
    pub note: String,
    pub suite: MapSuite,
    pub groups: Vec<GroupResult>,
    pub num_ground_truths: usize,
    pub num_detections: usize,
}

pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], profile: Profile) -> EvalReport {
    let thresholds = profile.thresholds();
    EvalReport {
        profile,
        note: "length groups restrict ground truths and detections by their own lengths; \
               an approximation of normalized per-group mAP"
            .into(),
        suite: map_suite(dets, gts, &thresholds),
        groups: accumulated_map(dets, gts, profile.group_bounds(), &thresholds),
        num_ground_truths: gts.len(),
        num_detections: dets.len(),
    }
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "profile {}  ({} ground truths, {} detections)", self.profile.as_str(), self.num_ground_truths, self.num_detections);
        let _ = writeln!(out, "{:>8} {:>8}", "tIoU", "mAP");
        for (t, m) in self.suite.thresholds.iter().zip(&self.suite.maps) {
            let _ = writeln!(out, "{t:>8.2} {:>8.4}", m);
        }
        let _ = writeln!(out, "{:>8} {:>8.4}", "average", self.suite.average);
        let _ = writeln!(out, "{:>6} {:>14} {:>6} {:>8} {:>8}", "group", "length (s)", "N", "mAP", "acc");
        for g in &self.groups {
            let range = match g.upper {
                Some(u) => format!("({}, {}]", g.lower, u),
                None => format!("({}, inf)", g.lower),
            };
            let _ = writeln!(out, "{:>6} {:>14} {:>6} {:>8.4} {:>8.4}", g.name, range, g.count, g.map, g.accumulated);
        }
        out
    }

    pub fn accumulated_csv(&self) -> String {
        let mut out = String::from("group,count,map,accumulated\n");
        for g in &self.groups {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", g.name, g.count, g.map, g.accumulated);
        }
        out
    }
}
