//! Oracles and seeded suites shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vsgn::config::{KeyValues, RunConfig};
use vsgn::data::SyntheticSpec;
use vsgn::eval::{self, Detection, GroundTruth};
use vsgn::graph::{build_edges, EdgeKind};
use vsgn::numerics::Tensor;
use vsgn::objective::{giou_temporal, tiou};
use vsgn::postproc::{remap_clip_u, soft_nms, Prediction};
use vsgn::vss::{self, ActionAnnotation, ClipLayout, Region, Span};

pub type Outcome = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn toy_config() -> RunConfig {
    let kv = KeyValues::read(config_dir().join("toy.cfg")).expect("toy config");
    RunConfig::from_key_values(&kv).expect("valid toy config")
}

pub fn toy_spec() -> SyntheticSpec {
    let kv = KeyValues::read(config_dir().join("synthetic.spec")).expect("synthetic spec");
    SyntheticSpec::from_key_values(&kv).expect("valid spec")
}

pub fn random_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- graph

fn oracle_similarity(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    -s / a.len() as f64
}

/// Brute-force edge selection: repeated arg-max scans over all other nodes.
pub fn oracle_edges(f: &Tensor, tags: &[Region], k: usize, cross_scale: bool) -> Vec<BTreeSet<(usize, bool)>> {
    let j = f.rows();
    let is_source = |r: Region| matches!(r, Region::ClipO | Region::ClipU | Region::Unpartitioned);
    let both = cross_scale && tags.contains(&Region::ClipO) && tags.contains(&Region::ClipU);
    let mut out = Vec::with_capacity(j);
    for t in 0..j {
        let mut taken = vec![false; j];
        let mut edges = BTreeSet::new();
        let pick = |taken: &mut Vec<bool>, allow: &dyn Fn(usize) -> bool| -> Option<usize> {
            let mut best: Option<(usize, f64)> = None;
            for s in 0..j {
                if s == t || taken[s] || !is_source(tags[s]) || !allow(s) {
                    continue;
                }
                let sim = oracle_similarity(f.row(t), f.row(s));
                if best.map_or(true, |(_, b)| sim > b) {
                    best = Some((s, sim));
                }
            }
            let s = best?.0;
            taken[s] = true;
            Some(s)
        };
        let split = both && matches!(tags[t], Region::ClipO | Region::ClipU);
        for _ in 0..if split { k / 2 } else { k } {
            if let Some(s) = pick(&mut taken, &|_| true) {
                edges.insert((s, false));
            }
        }
        if split {
            let other = if tags[t] == Region::ClipO { Region::ClipU } else { Region::ClipO };
            for _ in 0..k / 2 {
                if let Some(s) = pick(&mut taken, &|s| tags[s] == other) {
                    edges.insert((s, true));
                }
            }
        }
        out.push(edges);
    }
    out
}

/// Region tags of a random unpartitioned or stitched level of `j` nodes.
pub fn random_tags(r: &mut ChaCha8Rng, j: usize) -> Vec<Region> {
    if r.gen_bool(1.0 / 3.0) {
        let valid = r.gen_range(1..=j);
        (0..j).map(|i| if i < valid { Region::Unpartitioned } else { Region::Padding }).collect()
    } else {
        let m = r.gen_range(0..=j);
        let g = r.gen_range(0..=j - m);
        (0..j)
            .map(|i| {
                if i < m {
                    Region::ClipO
                } else if i < m + g {
                    Region::Gap
                } else {
                    Region::ClipU
                }
            })
            .collect()
    }
}

/// Features with frequent exact ties when `quantized`.
pub fn random_features(r: &mut ChaCha8Rng, j: usize, c: usize, quantized: bool) -> Tensor {
    let data = (0..j * c)
        .map(|_| if quantized { [0.0, 0.5, 1.0][r.gen_range(0..3)] } else { r.gen_range(-1.0..1.0) })
        .collect();
    Tensor::new(vec![j, c], data).unwrap()
}

pub fn graph_oracle_suite(instances: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    let mut edges_total = 0;
    for case in 0..instances {
        let j = r.gen_range(1..=64);
        let c = r.gen_range(1..=4);
        let k = [2, 4, 6, 10][r.gen_range(0..4)];
        let cross = r.gen_bool(0.85);
        let tags = random_tags(&mut r, j);
        let quantized = r.gen_bool(0.4);
        let f = random_features(&mut r, j, c, quantized);
        let got = build_edges(&f, &tags, k, cross).map_err(|e| format!("case {case}: {e}"))?;
        let want = oracle_edges(&f, &tags, k, cross);
        for t in 0..j {
            let have: BTreeSet<(usize, bool)> =
                got.inward[t].iter().map(|e| (e.source, e.kind == EdgeKind::CrossScale)).collect();
            if have.len() != got.inward[t].len() {
                return Err(format!("case {case} node {t}: duplicate edges"));
            }
            if have != want[t] {
                return Err(format!("case {case} (J={j} K={k}) node {t}: got {have:?}, oracle {:?}", want[t]));
            }
            for e in &got.inward[t] {
                if (e.similarity - oracle_similarity(f.row(t), f.row(e.source))).abs() > 1e-12 {
                    return Err(format!("case {case} node {t}: similarity mismatch"));
                }
            }
        }
        edges_total += got.num_edges();
    }
    Ok(format!("{instances} instances, {edges_total} edges identical"))
}

// ---------------------------------------------------------------- vss

/// Non-overlapping integer actions of at least 2 snippets; some exceed `long`.
pub fn random_actions(r: &mut ChaCha8Rng, total: usize, long: usize) -> Vec<ActionAnnotation> {
    let mut out = Vec::new();
    let mut pos = r.gen_range(0..=long / 2);
    loop {
        let len = if r.gen_bool(0.15) { r.gen_range(long..=long * 2) } else { r.gen_range(2..long) };
        if pos + len > total {
            break;
        }
        out.push(ActionAnnotation::new(pos as f64, (pos + len) as f64, r.gen_range(0..5)));
        pos += len + r.gen_range(0..=long / 2);
    }
    out
}

fn crosses(a: &ActionAnnotation, c: Span) -> bool {
    let overlaps = a.start < c.end as f64 && a.end > c.start as f64;
    let inside = a.start >= c.start as f64 && a.end <= c.end as f64;
    overlaps && !inside
}

pub fn vss_suite(videos: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    let (mut clips_seen, mut stitched) = (0usize, 0usize);
    for v in 0..videos {
        let l = [128, 256, 512][r.gen_range(0..3)];
        let gamma = [0.3, 0.4][r.gen_range(0..2)];
        let short = vss::short_length(l, gamma);
        let gap = r.gen_range(0..=l - 2 * short);
        let total = r.gen_range(2..=3 * l);
        let actions = random_actions(&mut r, total, short);
        let features = random_tensor(&mut r, total, 3);
        for w in vss::slide_windows(total, l) {
            let off = w.start as f64;
            let local: Vec<ActionAnnotation> = actions
                .iter()
                .filter(|a| a.end > off && a.start < w.end as f64)
                .map(|a| ActionAnnotation::new(a.start.max(off) - off, a.end.min(w.end as f64) - off, a.label))
                .collect();
            let set = vss::cut_training(w.len(), &local, l, gamma).map_err(|e| format!("video {v}: {e}"))?;
            if set.original() != Span::new(0, w.len()) {
                return Err(format!("video {v}: first clip is not the uncut window"));
            }
            let shorts: Vec<Span> = set.short_clips().collect();
            for c in &shorts {
                clips_seen += 1;
                if c.len() > short {
                    return Err(format!("video {v}: clip {c:?} longer than {short}"));
                }
                if let Some(a) = local.iter().filter(|a| a.len() < short as f64).find(|a| crosses(a, *c)) {
                    return Err(format!("video {v}: clip {c:?} cuts action {a:?}"));
                }
            }
            for a in local.iter().filter(|a| a.len() < short as f64 && a.len() >= 2.0) {
                if !shorts.iter().any(|c| a.start >= c.start as f64 && a.end <= c.end as f64) {
                    return Err(format!("video {v}: action {a:?} not covered by {shorts:?}"));
                }
            }
            let sub = features.slice_rows(w.start, w.end);
            for c in shorts.iter().filter(|c| c.len() >= 2) {
                let (x, lay) = vss::stitch_clip(&sub, *c, l, gap, w.start).map_err(|e| format!("video {v}: {e}"))?;
                stitched += 1;
                if x.rows() != l || lay.stitched_len != l {
                    return Err(format!("video {v}: stitched length {}", x.rows()));
                }
                if lay.upscaled_len() < lay.original_len || lay.source_start != w.start + c.start {
                    return Err(format!("video {v}: bad layout {lay:?}"));
                }
                for i in lay.gap_span().start..lay.gap_span().end {
                    if x.row(i).iter().any(|&z| z.to_bits() != 0) {
                        return Err(format!("video {v}: non-zero gap row {i}"));
                    }
                }
                for i in 0..lay.original_len {
                    let same = x.row(i).iter().zip(sub.row(c.start + i)).all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same {
                        return Err(format!("video {v}: Clip O row {i} differs from the source"));
                    }
                }
            }
        }
    }
    Ok(format!("{videos} videos, {clips_seen} short clips, {stitched} stitched inputs"))
}

// ---------------------------------------------------------------- geometry

pub fn geometry_suite(pairs: usize, seed: u64) -> Outcome {
    let exact: [((f64, f64), (f64, f64), f64, f64); 4] = [
        ((0.0, 2.0), (1.0, 3.0), 1.0 / 3.0, 1.0 / 3.0),
        ((0.0, 1.0), (2.0, 3.0), 0.0, -1.0 / 3.0),
        ((0.0, 4.0), (2.0, 4.0), 0.5, 0.5),
        ((0.0, 1.0), (0.0, 1.0), 1.0, 1.0),
    ];
    for (a, b, iou, giou) in exact {
        if tiou(a, b) != iou || giou_temporal(a, b) != giou {
            return Err(format!("{a:?} vs {b:?}: tIoU {} GIoU {}", tiou(a, b), giou_temporal(a, b)));
        }
    }
    let mut r = rng(seed);
    for _ in 0..pairs {
        let seg = |r: &mut ChaCha8Rng| {
            let s: f64 = r.gen_range(0.0..100.0);
            (s, s + r.gen_range(0.01..50.0))
        };
        let (a, b) = (seg(&mut r), seg(&mut r));
        let (iou, giou) = (tiou(a, b), giou_temporal(a, b));
        if giou > iou + 1e-15 || !(-1.0..=1.0).contains(&giou) {
            return Err(format!("{a:?} vs {b:?}: GIoU {giou} above IoU {iou}"));
        }
        let inner = (a.0 + 0.25 * (a.1 - a.0), a.0 + 0.75 * (a.1 - a.0));
        if (giou_temporal(a, inner) - tiou(a, inner)).abs() > 1e-15 {
            return Err(format!("containment {a:?} {inner:?}: GIoU differs from IoU"));
        }
    }
    Ok(format!("hand cases exact, GIoU <= IoU on {pairs} pairs"))
}

// ---------------------------------------------------------------- soft-NMS

fn oracle_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Selection order and final scores from the closed form
/// `s_i * prod_{kept k} exp(-iou(k, i)^2 / sigma)`, recomputed from scratch each round.
pub fn oracle_soft_nms(segs: &[(f64, f64)], scores: &[f64], sigma: f64, floor: f64, keep: usize) -> Vec<(usize, f64)> {
    let mut kept: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    while out.len() < keep {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..segs.len()).filter(|i| !kept.contains(i)) {
            let decay: f64 = kept.iter().map(|&k| (-oracle_iou(segs[k], segs[i]).powi(2) / sigma).exp()).product();
            let cur = scores[i] * decay;
            if best.map_or(true, |(_, b)| cur > b) {
                best = Some((i, cur));
            }
        }
        match best {
            Some((i, cur)) if cur >= floor => {
                kept.push(i);
                out.push((i, cur));
            }
            _ => break,
        }
    }
    out
}

pub fn plain_prediction(start: f64, end: f64, score: f64, label: usize) -> Prediction {
    Prediction { start, end, score, label, provenance: Region::Unpartitioned, stitched: (start, end), gap: None }
}

pub fn soft_nms_suite(instances: usize, seed: u64) -> Outcome {
    let hand = soft_nms(vec![plain_prediction(0.0, 10.0, 0.9, 0), plain_prediction(0.0, 10.0, 0.8, 1)], 0.5, 1e-4, 100);
    if hand.len() != 2 || (hand[1].score - 0.10827).abs() > 1e-5 {
        return Err(format!("hand case gave {hand:?}"));
    }
    let mut r = rng(seed);
    let mut max_dev: f64 = 0.0;
    for case in 0..instances {
        let n = r.gen_range(1..=40);
        let mut segs = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && r.gen_bool(0.1) {
                let j = r.gen_range(0..i);
                segs.push(segs[j]);
                scores.push(scores[j]);
            } else {
                let s: f64 = r.gen_range(0.0..100.0);
                segs.push((s, s + r.gen_range(0.5..30.0)));
                scores.push(r.gen_range(0.0..1.0));
            }
        }
        let sigma = r.gen_range(0.1..1.0);
        let floor = [0.0, 1e-4, 0.05][r.gen_range(0..3)];
        let keep = if r.gen_bool(0.5) { n } else { r.gen_range(1..=n) };
        let preds: Vec<Prediction> = (0..n).map(|i| plain_prediction(segs[i].0, segs[i].1, scores[i], i)).collect();
        let got = soft_nms(preds, sigma, floor, keep);
        let want = oracle_soft_nms(&segs, &scores, sigma, floor, keep);
        if got.len() != want.len() {
            return Err(format!("case {case}: kept {} vs oracle {}", got.len(), want.len()));
        }
        for (g, (i, s)) in got.iter().zip(&want) {
            let dev = (g.score - s).abs();
            if g.label != *i || dev > 1e-9 {
                return Err(format!("case {case}: got #{} {:.12}, oracle #{i} {s:.12}", g.label, g.score));
            }
            max_dev = max_dev.max(dev);
        }
    }
    Ok(format!("hand case 0.8e^-2 reproduced, {instances} instances, max deviation {max_dev:.2e}"))
}

// ---------------------------------------------------------------- metrics

pub fn gt(video: &str, s: f64, e: f64, label: &str) -> GroundTruth {
    GroundTruth { video: video.into(), start: s, end: e, label: label.into() }
}

pub fn det(video: &str, s: f64, e: f64, score: f64, label: &str) -> Detection {
    Detection { video: video.into(), start: s, end: e, score, label: label.into() }
}

/// AP as the mean, over true positives, of the best precision at or after each one.
pub fn oracle_ap(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> f64 {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut used = vec![false; gts.len()];
    let mut hits = Vec::new();
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in gts.iter().enumerate() {
            if used[i] || g.video != d.video {
                continue;
            }
            let iou = oracle_iou((d.start, d.end), (g.start, g.end));
            if iou >= threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
        }
        hits.push(best.is_some());
    }
    let mut tp = 0;
    let precisions: Vec<f64> = hits
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            tp += usize::from(h);
            tp as f64 / (i + 1) as f64
        })
        .collect();
    let mut total = 0.0;
    for i in (0..hits.len()).filter(|&i| hits[i]) {
        total += precisions[i..].iter().cloned().fold(0.0, f64::max);
    }
    total / gts.len() as f64
}

pub fn metric_suite(seed: u64) -> Outcome {
    let g = [gt("a", 0.0, 10.0, "x")];
    let d = [det("a", 50.0, 60.0, 0.9, "x"), det("a", 0.0, 10.0, 0.8, "x")];
    let hand = eval::mean_ap(&d, &g, 0.5);
    if hand != 0.5 {
        return Err(format!("hand PR example gave {hand}"));
    }

    let mut r = rng(seed);
    let mut gts = Vec::new();
    for v in 0..30 {
        let mut pos = 0.0;
        for _ in 0..r.gen_range(1..=4) {
            pos += r.gen_range(1.0..20.0);
            let len = r.gen_range(1.0..60.0);
            gts.push(gt(&format!("v{v}"), pos, pos + len, &format!("c{}", r.gen_range(0..4))));
            pos += len;
        }
    }
    let perfect: Vec<Detection> = gts.iter().map(|g| det(&g.video, g.start, g.end, r.gen_range(0.1..1.0), &g.label)).collect();
    for profile in [eval::Profile::ActivityNet, eval::Profile::Thumos, eval::Profile::Synthetic] {
        let rep = eval::evaluate(&perfect, &gts, profile);
        if rep.suite.average != 1.0 {
            return Err(format!("perfect predictions give average mAP {} under {}", rep.suite.average, profile.as_str()));
        }
    }

    if eval::accumulate(&[8, 0, 0, 0, 2], &[0.5, 0.0, 0.0, 0.0, 1.0])[4] != 0.6 {
        return Err("accumulated hand case {8, 2} / {0.5, 1.0} is not 0.6".into());
    }
    for case in 0..1000 {
        let counts: Vec<usize> = (0..5).map(|_| if r.gen_bool(0.2) { 0 } else { r.gen_range(1..200) }).collect();
        let maps: Vec<f64> = (0..5).map(|_| r.gen_range(0.0..1.0)).collect();
        let acc = eval::accumulate(&counts, &maps);
        for k in 0..5 {
            let n: usize = counts[..=k].iter().sum();
            let want = if n == 0 { 0.0 } else { (0..=k).map(|i| counts[i] as f64 * maps[i]).sum::<f64>() / n as f64 };
            if (acc[k] - want).abs() > 1e-12 {
                return Err(format!("accumulation case {case} group {k}: {} vs {want}", acc[k]));
            }
        }
    }

    for case in 0..500 {
        let nv = r.gen_range(1..=3);
        let gts: Vec<GroundTruth> = (0..r.gen_range(1..=8))
            .map(|_| {
                let s = r.gen_range(0.0..50.0);
                gt(&format!("v{}", r.gen_range(0..nv)), s, s + r.gen_range(1.0..20.0), "x")
            })
            .collect();
        let dets: Vec<Detection> = (0..r.gen_range(0..=15))
            .map(|_| {
                let s = r.gen_range(0.0..50.0);
                det(&format!("v{}", r.gen_range(0..nv)), s, s + r.gen_range(1.0..20.0), r.gen_range(0.0..1.0), "x")
            })
            .collect();
        let t = r.gen_range(0.1..0.95);
        let (got, want) = (eval::mean_ap(&dets, &gts, t), oracle_ap(&dets, &gts, t));
        if (got - want).abs() > 1e-12 {
            return Err(format!("AP case {case}: {got} vs oracle {want}"));
        }
    }
    Ok("hand AP 0.5 exact, perfect mAP 1.0, accumulation identity on 1000 cases, AP oracle on 500 cases".into())
}

// ---------------------------------------------------------------- coordinates

pub fn coordinate_suite(cases: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let l = [64, 128, 256, 512, 1280][r.gen_range(0..5)];
        let short = vss::short_length(l, 0.4);
        let m = r.gen_range(2..=short);
        let gap = r.gen_range(0..=l - 2 * m);
        let s0 = r.gen_range(0..5000);
        let layout = ClipLayout { source_start: s0, original_len: m, gap, stitched_len: l };
        let (a, b) = if r.gen_bool(0.5) {
            let a = r.gen_range(0..m);
            ((s0 + a) as f64, (s0 + r.gen_range(a + 1..=m)) as f64)
        } else {
            let a = s0 as f64 + r.gen_range(0.0..m as f64 - 0.5);
            (a, r.gen_range(a + 0.25..=(s0 + m) as f64))
        };
        let placed = vss::map_annotations(&[ActionAnnotation::new(a, b, 0)], &layout).map_err(|e| format!("case {case}: {e}"))?;
        let u = placed.iter().find(|p| p.region == Region::ClipU).ok_or("no Clip U copy")?;
        let o = placed.iter().find(|p| p.region == Region::ClipO).ok_or("no Clip O copy")?;
        if o.start != a - s0 as f64 || o.end != b - s0 as f64 {
            return Err(format!("case {case}: Clip O copy {o:?}"));
        }
        for (src, mapped) in [(a, u.start), (b, u.end)] {
            let exact = (remap_clip_u(mapped, &layout) - src).abs();
            let snapped = (remap_clip_u(mapped.round(), &layout) - src).abs();
            worst = worst.max(exact).max(snapped);
            if exact > 1e-9 || snapped > 0.5 + 1e-9 {
                return Err(format!("case {case}: {src} -> {mapped} -> deviation {exact} / {snapped} under {layout:?}"));
            }
        }
    }
    Ok(format!("{cases} round trips, worst deviation {worst:.4} snippets"))
}
