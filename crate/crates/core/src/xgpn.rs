//! Cross-scale graph pyramid: stem, encoder levels of hybrid temporal/graph
//! blocks, and a deconvolution decoder with concatenated skip connections.

use crate::error::{Error, Result};
use crate::graph::{build_edges, edge_conv, EdgeSet};
use crate::model::ModelConfig;
use crate::numerics::{BoundParams, ComputeGraph, Var};
use crate::vss::{Layout, Region};

/// Region tags of one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelLayout {
    pub stride: f64,
    pub tags: Vec<Region>,
}

impl LevelLayout {
    pub fn new(layout: &Layout, positions: usize, stride: f64) -> Self {
        Self { stride, tags: layout.level_tags(positions, stride) }
    }
}

/// Encoder maps `E_1..E_n` (finest first) and decoder maps `D_1..D_n`
/// (coarsest first), with the layout of each decoder map.
#[derive(Debug)]
pub struct PyramidFeatures {
    pub encoder: Vec<Var>,
    pub decoder: Vec<Var>,
    pub decoder_layouts: Vec<LevelLayout>,
    pub edges: Vec<Option<EdgeSet>>,
}

impl PyramidFeatures {
    /// Decoder map and layout feeding detection level `l` (0 = finest).
    pub fn detection_level(&self, l: usize) -> (Var, &LevelLayout) {
        let idx = self.decoder.len() - 1 - l;
        (self.decoder[idx], &self.decoder_layouts[idx])
    }

    pub fn num_levels(&self) -> usize {
        self.decoder.len()
    }
}

pub struct LevelOutput {
    /// Rectified fused features at this level's resolution.
    pub features: Var,
    /// Max-pooled input for the next level.
    pub pooled: Option<Var>,
    pub edges: Option<EdgeSet>,
}

/// Two stride-2 convolution blocks mapping `L x C_in` to `L/4 x C`.
pub fn stem(g: &mut ComputeGraph, p: &BoundParams, x: Var) -> Result<Var> {
    let h = g.conv1d(x, p.var("stem.0.weight")?, p.var("stem.0.bias")?, 2, 1)?;
    let h = g.relu(h);
    let h = g.conv1d(h, p.var("stem.1.weight")?, p.var("stem.1.bias")?, 2, 1)?;
    Ok(g.relu(h))
}

/// One encoder level: temporal convolution plus graph edge convolution,
/// summed, rectified, then optionally pooled by 2.
pub fn xgn_level(
    g: &mut ComputeGraph,
    p: &BoundParams,
    cfg: &ModelConfig,
    level: usize,
    input: Var,
    tags: &[Region],
    pool: bool,
) -> Result<LevelOutput> {
    let temporal = g.conv1d(
        input,
        p.var(&format!("enc.{level}.temporal.weight"))?,
        p.var(&format!("enc.{level}.temporal.bias"))?,
        1,
        1,
    )?;
    let (fused, edges) = if cfg.graph_branch {
        let edges = build_edges(g.value(input), tags, cfg.edges_k, cfg.cross_scale_edges)?;
        g.record_decision(edges.digest());
        let aggregated = edge_conv(
            g,
            input,
            &edges,
            p.var(&format!("enc.{level}.edge.weight"))?,
            p.var(&format!("enc.{level}.edge.bias"))?,
        )?;
        (g.add(temporal, aggregated)?, Some(edges))
    } else {
        (temporal, None)
    };
    let features = g.relu(fused);
    let pooled = if pool { Some(g.max_pool2(features)?) } else { None };
    Ok(LevelOutput { features, pooled, edges })
}

/// Upsamples `deep` by 2, concatenates the encoder `skip`, and reduces back to `C`.
pub fn decoder_level(g: &mut ComputeGraph, p: &BoundParams, index: usize, deep: Var, skip: Var) -> Result<Var> {
    let up = g.deconv1d(
        deep,
        p.var(&format!("dec.{index}.deconv.weight"))?,
        p.var(&format!("dec.{index}.deconv.bias"))?,
        2,
        1,
    )?;
    let (got, want) = (g.value(up).rows(), g.value(skip).rows());
    if got != want {
        return Err(Error::config(format!("decoder level {index}: upsampled length {got} but skip has {want}")));
    }
    let cat = g.concat_channels(&[up, skip])?;
    let h = g.conv1d(
        cat,
        p.var(&format!("dec.{index}.reduce.weight"))?,
        p.var(&format!("dec.{index}.reduce.bias"))?,
        1,
        0,
    )?;
    Ok(g.relu(h))
}

pub fn forward(g: &mut ComputeGraph, p: &BoundParams, cfg: &ModelConfig, input: Var, layout: &Layout) -> Result<PyramidFeatures> {
    let len = g.value(input).rows();
    if len != cfg.input_len {
        return Err(Error::config(format!("input has {len} snippets, model expects {}", cfg.input_len)));
    }
    let n = cfg.levels;
    let mut x = stem(g, p, input)?;
    let mut encoder = Vec::with_capacity(n);
    let mut layouts = Vec::with_capacity(n);
    let mut edges = Vec::with_capacity(n);
    for level in 1..=n {
        let stride = cfg.stride(level);
        let lay = LevelLayout::new(layout, cfg.level_len(level), stride);
        let out = xgn_level(g, p, cfg, level, x, &lay.tags, level < n)?;
        encoder.push(out.features);
        layouts.push(lay);
        edges.push(out.edges);
        if let Some(pooled) = out.pooled {
            x = pooled;
        }
    }
    let mut decoder = vec![encoder[n - 1]];
    let mut decoder_layouts = vec![layouts[n - 1].clone()];
    for j in 1..n {
        let skip = encoder[n - 1 - j];
        let d = decoder_level(g, p, j + 1, decoder[j - 1], skip)?;
        decoder.push(d);
        decoder_layouts.push(layouts[n - 1 - j].clone());
    }
    Ok(PyramidFeatures { encoder, decoder, decoder_layouts, edges })
}
