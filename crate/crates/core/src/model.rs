//! Model configuration, parameter layout and initialisation, and the
//! composed forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heads::{self, Anchor, HeadOutputs};
use crate::numerics::{ComputeGraph, ParamStore, Tensor, Var};
use crate::vss::Layout;
use crate::xgpn::{self, PyramidFeatures};

/// Initial bias of the classifier output so each class starts near 1% probability.
pub const CLS_PRIOR: f64 = 0.01;
/// Deconvolution weights start at this fraction of the He bound.
pub const DECONV_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_len: usize,
    pub in_channels: usize,
    pub channels: usize,
    pub levels: usize,
    pub edges_k: usize,
    pub num_classes: usize,
    /// Anchor widths at the finest level; doubled per coarser level.
    pub anchor_base: [f64; 2],
    pub gn_groups: usize,
    pub head_blocks: usize,
    /// `false` keeps only the temporal branch in every encoder level.
    pub graph_branch: bool,
    pub cross_scale_edges: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: 1280,
            in_channels: 400,
            channels: 256,
            levels: 5,
            edges_k: 10,
            num_classes: 1,
            anchor_base: [32.0, 48.0],
            gn_groups: 32,
            head_blocks: 4,
            graph_branch: true,
            cross_scale_edges: true,
        }
    }
}

impl ModelConfig {
    /// The small configuration used by gradient checks.
    pub fn micro() -> Self {
        Self {
            input_len: 64,
            in_channels: 6,
            channels: 8,
            levels: 5,
            edges_k: 4,
            num_classes: 2,
            anchor_base: [4.0, 6.0],
            gn_groups: 2,
            head_blocks: 4,
            graph_branch: true,
            cross_scale_edges: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.levels == 0 {
            return bad("at least one pyramid level is required".into());
        }
        let div = 1usize << (self.levels + 1);
        if self.input_len == 0 || self.input_len % div != 0 {
            return bad(format!("input length {} must be a positive multiple of {div}", self.input_len));
        }
        if self.edges_k < 2 || self.edges_k % 2 != 0 {
            return bad(format!("edge count K must be even and at least 2, got {}", self.edges_k));
        }
        if self.channels == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return bad("channel and class counts must be positive".into());
        }
        if self.gn_groups == 0 || self.channels % self.gn_groups != 0 {
            return bad(format!("{} channels not divisible into {} groups", self.channels, self.gn_groups));
        }
        if !self.anchor_base.iter().all(|w| w.is_finite() && *w > 0.0) {
            return bad("anchor widths must be positive".into());
        }
        Ok(())
    }

    /// Stride of encoder level `level` (1-based) in input snippets.
    pub fn stride(&self, level: usize) -> f64 {
        (1usize << (level + 1)) as f64
    }

    pub fn level_len(&self, level: usize) -> usize {
        self.input_len >> (level + 1)
    }

    /// Stride of detection level `l` (0 = finest).
    pub fn detection_stride(&self, l: usize) -> f64 {
        self.stride(l + 1)
    }

    pub fn detection_len(&self, l: usize) -> usize {
        self.level_len(l + 1)
    }

    /// Every anchor of every detection level, finest level first.
    pub fn anchors(&self) -> Vec<Vec<Anchor>> {
        (0..self.levels)
            .map(|l| heads::generate_anchors(l, self.detection_len(l), self.detection_stride(l), self.anchor_base))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    HeUniform(usize),
    Uniform(f64),
    Const(f64),
}

/// Name, shape and initialiser of every trainable tensor.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (c, cin) = (cfg.channels, cfg.in_channels);
    let mut out = Vec::new();
    let conv = |out: &mut Vec<_>, name: String, k: usize, i: usize, o: usize, init: Init| {
        out.push((format!("{name}.weight"), vec![k, i, o], init));
        out.push((format!("{name}.bias"), vec![o], Init::Const(0.0)));
    };
    conv(&mut out, "stem.0".into(), 3, cin, c, Init::HeUniform(3 * cin));
    conv(&mut out, "stem.1".into(), 3, c, c, Init::HeUniform(3 * c));
    for level in 1..=cfg.levels {
        conv(&mut out, format!("enc.{level}.temporal"), 3, c, c, Init::HeUniform(3 * c));
        if cfg.graph_branch {
            out.push((format!("enc.{level}.edge.weight"), vec![2 * c, c], Init::HeUniform(2 * c)));
            out.push((format!("enc.{level}.edge.bias"), vec![c], Init::Const(0.0)));
        }
    }
    for j in 2..=cfg.levels {
        let bound = DECONV_INIT_SCALE * (6.0 / (2 * c) as f64).sqrt();
        conv(&mut out, format!("dec.{j}.deconv"), 4, c, c, Init::Uniform(bound));
        conv(&mut out, format!("dec.{j}.reduce"), 1, 2 * c, c, Init::HeUniform(2 * c));
    }
    for head in ["loc", "cls"] {
        for b in 0..cfg.head_blocks {
            conv(&mut out, format!("{head}.block{b}.conv"), 3, c, c, Init::HeUniform(3 * c));
            out.push((format!("{head}.block{b}.gn.scale"), vec![c], Init::Const(1.0)));
            out.push((format!("{head}.block{b}.gn.shift"), vec![c], Init::Const(0.0)));
        }
    }
    out.push(("loc.out.weight".into(), vec![1, c, 4], Init::Uniform(0.01)));
    out.push(("loc.out.bias".into(), vec![4], Init::Const(0.0)));
    out.push(("cls.out.weight".into(), vec![1, c, 2 * cfg.num_classes], Init::HeUniform(c)));
    out.push(("cls.out.bias".into(), vec![2 * cfg.num_classes], Init::Const(-((1.0 - CLS_PRIOR) / CLS_PRIOR).ln())));
    for region in ["start", "mid", "end"] {
        conv(&mut out, format!("adj.{region}"), 3, c, c, Init::HeUniform(3 * c));
    }
    out.push(("adj.out.weight".into(), vec![3, c, 2], Init::Uniform(0.001)));
    out.push(("adj.out.bias".into(), vec![2], Init::Const(0.0)));
    conv(&mut out, "scr.conv".into(), 3, c, c, Init::HeUniform(3 * c));
    conv(&mut out, "scr.out".into(), 1, c, 3, Init::HeUniform(c));
    out
}

/// Parameter names and shapes, in declaration order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Seeded He-uniform initialisation; biases zero, GN scale one.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in layout(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::HeUniform(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
            Init::Const(v) => vec![v; n],
        };
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

/// Checks that `params` holds exactly the tensors `cfg` requires.
pub fn check_params(cfg: &ModelConfig, params: &ParamStore) -> Result<()> {
    let expected = param_shapes(cfg);
    if expected.len() != params.len() {
        return Err(Error::config(format!("checkpoint has {} tensors, configuration needs {}", params.len(), expected.len())));
    }
    for (name, shape) in expected {
        let t = params.get(&name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::config(format!("parameter {name} has shape {:?}, configuration needs {shape:?}", t.shape())));
        }
    }
    Ok(())
}

/// Forward results of one input sequence.
pub struct ForwardPass {
    pub pyramid: PyramidFeatures,
    pub heads: HeadOutputs,
}

/// Pyramid plus the per-level detection heads and the score head.
pub fn forward(
    g: &mut ComputeGraph,
    p: &crate::numerics::BoundParams,
    cfg: &ModelConfig,
    input: Var,
    layout: &Layout,
) -> Result<ForwardPass> {
    let pyramid = xgpn::forward(g, p, cfg, input, layout)?;
    let heads = heads::run_heads(g, p, cfg, &pyramid)?;
    Ok(ForwardPass { pyramid, heads })
}
