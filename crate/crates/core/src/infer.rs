//! Inference over whole videos: windows, VSS inputs, decoding, and suppression.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{LoadedVideo, PredictionSet};
use crate::error::Result;
use crate::eval::{Detection, Profile};
use crate::heads::{self, ScoreCurves};
use crate::model::{self, ModelConfig};
use crate::numerics::{ComputeGraph, ParamStore, Tensor};
use crate::objective;
use crate::postproc::{self, Prediction};
use crate::train::thread_pool;
use crate::vss::{self, Layout};

/// Network inputs for one video in source order: per window the uncut pass
/// (when long, or whenever VSS is off) followed by the stitched short clips.
pub fn inference_inputs(run: &RunConfig, features: &Tensor) -> Result<Vec<(Tensor, Layout)>> {
    let l = run.input_len;
    let mut out = Vec::new();
    for w in vss::slide_windows(features.rows(), l) {
        let sub = features.slice_rows(w.start, w.end);
        let clips = vss::cut_inference(w.len(), l, run.gamma)?;
        if !run.vss || clips.has_long_original() {
            out.push(vss::pad_sequence(&sub, l, w.start)?);
        }
        if run.vss {
            for clip in clips.short_clips().filter(|c| c.len() >= 2) {
                let (input, layout) = vss::stitch_clip(&sub, clip, l, run.gap, w.start)?;
                out.push((input, Layout::Stitched(layout)));
            }
        }
    }
    Ok(out)
}

/// Decoded, adjusted, gap-filtered and fused predictions of one input, in
/// source snippet coordinates.
pub fn predict_input(
    run: &RunConfig,
    cfg: &ModelConfig,
    params: &ParamStore,
    input: &Tensor,
    layout: &Layout,
) -> Result<Vec<Prediction>> {
    let mut g = ComputeGraph::new();
    let p = params.bind(&mut g);
    let x = g.leaf(input.clone());
    let fp = model::forward(&mut g, &p, cfg, x, layout)?;
    let (loc, cls) = objective::concat_heads(&mut g, &fp)?;
    let anchors = objective::flat_anchors(cfg);
    let limit = cfg.input_len as f64;
    let mut cands = postproc::decode_predictions(&anchors, g.value(loc), g.value(cls), layout, limit, run.score_floor);
    if let Some(d) = heads::adjust_boundaries(&mut g, &p, cfg, &fp.pyramid, &postproc::adjust_inputs(&cands))? {
        let deltas = g.value(d).clone();
        postproc::apply_adjustments(&mut cands, &deltas, limit);
    }
    let cands = postproc::drop_gap_spanning(cands, layout);
    let curves = ScoreCurves::from_logits(g.value(fp.heads.score_logits), cfg.detection_stride(0));
    Ok(postproc::finalize(&cands, &curves, layout))
}

/// Final predictions of one video in snippets, best first.
pub fn predict_video(run: &RunConfig, cfg: &ModelConfig, params: &ParamStore, features: &Tensor) -> Result<Vec<Prediction>> {
    let total = features.rows() as f64;
    let mut pooled = Vec::new();
    for (input, layout) in inference_inputs(run, features)? {
        for mut pr in predict_input(run, cfg, params, &input, &layout)? {
            pr.start = pr.start.clamp(0.0, total);
            pr.end = pr.end.clamp(0.0, total);
            if pr.end > pr.start {
                pooled.push(pr);
            }
        }
    }
    if run.profile == Profile::Thumos {
        pooled = postproc::class_nms(pooled, run.class_nms_threshold);
    }
    Ok(postproc::soft_nms(pooled, run.nms_sigma, run.score_floor, run.keep_n()))
}

/// Predictions for every video, in seconds, labelled by `classes`.
pub fn predict_videos(
    run: &RunConfig,
    cfg: &ModelConfig,
    params: &ParamStore,
    videos: &[LoadedVideo],
    classes: &[String],
) -> Result<(PredictionSet, Vec<Vec<Prediction>>)> {
    let pool = thread_pool()?;
    let per_video: Vec<Result<Vec<Prediction>>> =
        pool.install(|| videos.par_iter().map(|v| predict_video(run, cfg, params, &v.features)).collect());
    let mut set = PredictionSet::default();
    let mut raw = Vec::with_capacity(videos.len());
    for (v, preds) in videos.iter().zip(per_video) {
        let preds = preds?;
        let dets = preds
            .iter()
            .map(|p| Detection {
                video: v.id.clone(),
                start: p.start * v.snippet_duration,
                end: p.end * v.snippet_duration,
                score: p.score,
                label: classes.get(p.label).cloned().unwrap_or_else(|| format!("class_{}", p.label)),
            })
            .collect();
        set.results.insert(v.id.clone(), dets);
        raw.push(preds);
    }
    Ok((set, raw))
}
