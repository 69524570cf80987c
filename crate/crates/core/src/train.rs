//! Training inputs and the epoch loop.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::LoadedVideo;
use crate::error::{Error, Result};
use crate::model::{self, ModelConfig};
use crate::numerics::checkpoint::write_checkpoint;
use crate::numerics::{ComputeGraph, OptimizerState, ParamStore, Tensor};
use crate::objective::{self, LossBreakdown, LossSettings};
use crate::vss::{self, ActionAnnotation, Layout, PlacedAnnotation, Span};

/// One network input with its placed ground truth.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub video: String,
    pub input: Tensor,
    pub layout: Layout,
    pub truths: Vec<PlacedAnnotation>,
}

fn inside(a: &ActionAnnotation, lo: f64, hi: f64) -> bool {
    a.start >= lo && a.end <= hi
}

/// Inputs for one video: sliding windows, then for each window the uncut
/// pass (when long, or whenever VSS is off) and one stitched input per short clip.
pub fn training_samples(run: &RunConfig, video: &LoadedVideo) -> Result<Vec<TrainingSample>> {
    let l = run.input_len;
    let mut out = Vec::new();
    for w in vss::slide_windows(video.features.rows(), l) {
        let sub = video.features.slice_rows(w.start, w.end);
        let uncut = |out: &mut Vec<TrainingSample>| -> Result<()> {
            let (input, layout) = vss::pad_sequence(&sub, l, w.start)?;
            let truths = vss::place_unpartitioned(&video.actions, w.start, w.len());
            out.push(TrainingSample { video: video.id.clone(), input, layout, truths });
            Ok(())
        };
        if !run.vss {
            uncut(&mut out)?;
            continue;
        }
        let off = w.start as f64;
        let local: Vec<ActionAnnotation> = video
            .actions
            .iter()
            .filter(|a| a.end > off && a.start < w.end as f64)
            .map(|a| ActionAnnotation::new(a.start - off, a.end - off, a.label))
            .collect();
        let clips = vss::cut_training(w.len(), &local, l, run.gamma)?;
        if clips.has_long_original() {
            uncut(&mut out)?;
        }
        for clip in clips.short_clips().filter(|c: &Span| c.len() >= 2) {
            let (input, layout) = vss::stitch_clip(&sub, clip, l, run.gap, w.start)?;
            let (lo, hi) = ((w.start + clip.start) as f64, (w.start + clip.end) as f64);
            let within: Vec<ActionAnnotation> = video.actions.iter().copied().filter(|a| inside(a, lo, hi)).collect();
            let truths = vss::map_annotations(&within, &layout)?;
            out.push(TrainingSample { video: video.id.clone(), input, layout: Layout::Stitched(layout), truths });
        }
    }
    Ok(out)
}

pub fn build_samples(run: &RunConfig, videos: &[LoadedVideo]) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for v in videos {
        out.extend(training_samples(run, v)?);
    }
    Ok(out)
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradients(
    cfg: &ModelConfig,
    params: &ParamStore,
    settings: &LossSettings,
    sample: &TrainingSample,
) -> Result<(BTreeMap<String, Tensor>, LossBreakdown)> {
    let mut g = ComputeGraph::new();
    let p = params.bind(&mut g);
    let x = g.leaf(sample.input.clone());
    let fp = model::forward(&mut g, &p, cfg, x, &sample.layout)?;
    let (loss, breakdown) = objective::total_loss(&mut g, &p, cfg, &fp, &sample.layout, &sample.truths, settings)?;
    let grads = g.backward(loss)?;
    Ok((p.collect(&grads), breakdown))
}

/// Worker count from `VSGN_THREADS`, default 1.
pub fn worker_count() -> Result<usize> {
    match std::env::var("VSGN_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("VSGN_THREADS must be a positive integer, got {v:?}"))),
    }
}

pub(crate) fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
}

#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: u64,
    /// Per-sample mean of every loss term.
    pub mean: LossBreakdown,
}

const ORDER_SALT: u64 = 0x5eed_0da7;

pub struct Trainer {
    pub run: RunConfig,
    pub model: ModelConfig,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    settings: LossSettings,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(run: RunConfig, model: ModelConfig) -> Result<Self> {
        let params = model::init_params(&model, run.seed)?;
        let optimizer = OptimizerState::new(run.adam());
        let settings = run.loss_settings();
        Ok(Self { run, model, params, optimizer, settings, pool: thread_pool()? })
    }

    /// Sample order shared by every epoch: one permutation drawn from the seed.
    pub fn order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.run.seed ^ ORDER_SALT));
        order
    }

    /// One optimizer step on the mean gradient of `batch`.
    pub fn step(&mut self, batch: &[&TrainingSample]) -> Result<LossBreakdown> {
        let (cfg, params, settings) = (&self.model, &self.params, &self.settings);
        let results: Vec<Result<_>> =
            self.pool.install(|| batch.par_iter().map(|s| sample_gradients(cfg, params, settings, s)).collect());
        let mut sum: Option<BTreeMap<String, Tensor>> = None;
        let mut losses = LossBreakdown::default();
        for r in results {
            let (grads, b) = r?;
            losses.accumulate(&b);
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (name, g) in grads {
                        let a = acc.get_mut(&name).expect("same parameter set");
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let mut grads = sum.ok_or_else(|| Error::argument("empty batch"))?;
        let k = 1.0 / batch.len() as f64;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
        self.optimizer.step(&mut self.params, &grads)?;
        Ok(losses.scaled(k))
    }

    /// Runs every epoch; `checkpoint` (when given) is rewritten after each one.
    pub fn fit(&mut self, samples: &[TrainingSample], checkpoint: Option<&Path>) -> Result<Vec<EpochSummary>> {
        if samples.is_empty() {
            return Err(Error::argument("no training samples"));
        }
        let order = self.order(samples.len());
        let mut summaries = Vec::with_capacity(self.run.epochs);
        for epoch in 1..=self.run.epochs {
            let mut total = LossBreakdown::default();
            let mut steps = 0;
            for chunk in order.chunks(self.run.batch_size) {
                let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
                let b = self.step(&batch)?;
                info!("epoch {epoch} {}", b.log_line(self.optimizer.step_count()));
                total.accumulate(&b.scaled(batch.len() as f64));
                steps += 1;
            }
            let mean = total.scaled(1.0 / samples.len() as f64);
            if mean.loc_positives == 0 {
                warn!("epoch {epoch}: no location positives in any sample");
            }
            info!("epoch {epoch} done: {}", mean.log_line(self.optimizer.step_count()));
            if let Some(path) = checkpoint {
                save(&self.run, &self.model, &self.params, path)?;
            }
            summaries.push(EpochSummary { epoch, steps, mean });
        }
        Ok(summaries)
    }
}

/// Path of the configuration written beside a checkpoint.
pub fn sidecar_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    s.into()
}

/// Writes the parameters and the effective configuration.
pub fn save(run: &RunConfig, model: &ModelConfig, params: &ParamStore, path: &Path) -> Result<()> {
    write_checkpoint(params, path)?;
    let mut effective = run.clone();
    effective.in_channels = model.in_channels;
    effective.num_classes = model.num_classes;
    std::fs::write(sidecar_path(path), effective.to_text())?;
    Ok(())
}
