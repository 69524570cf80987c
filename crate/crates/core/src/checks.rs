//! Registry of finite-difference gradient checks over every differentiable
//! operation, each network block, and the composed training loss.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::heads::{self, LevelSegment};
use crate::model::{self, ModelConfig};
use crate::numerics::gradcheck::{check_gradients, GradCheckReport, FD_STEP};
use crate::numerics::{BoundParams, ComputeGraph, FocalParams, ParamStore, Tensor, Var};
use crate::objective::{self, LossSettings};
use crate::vss::{self, ActionAnnotation, Layout};
use crate::xgpn::{self, LevelLayout};

pub type CheckFn = fn() -> Result<GradCheckReport>;

pub struct RegisteredCheck {
    pub module: &'static str,
    pub name: &'static str,
    pub run: CheckFn,
}

pub fn registry() -> Vec<RegisteredCheck> {
    let c = |module, name, run| RegisteredCheck { module, name, run };
    vec![
        c("numerics", "conv1d", conv1d),
        c("numerics", "conv1d_strided", conv1d_strided),
        c("numerics", "deconv1d", deconv1d),
        c("numerics", "group_norm", group_norm),
        c("numerics", "relu", relu),
        c("numerics", "sigmoid", sigmoid),
        c("numerics", "max_pool2", max_pool2),
        c("numerics", "elementwise", elementwise),
        c("numerics", "shape_ops", shape_ops),
        c("numerics", "interp_rows", interp_rows),
        c("numerics", "edge_conv", edge_conv),
        c("numerics", "anchor_decode", anchor_decode),
        c("numerics", "boundary_shift", boundary_shift),
        c("numerics", "giou_loss", giou_loss),
        c("numerics", "focal_loss", focal_loss),
        c("numerics", "focal_loss_unbalanced", focal_loss_unbalanced),
        c("numerics", "balanced_bce", balanced_bce),
        c("xgpn", "stem", stem),
        c("xgpn", "xgn_two_levels", xgn_two_levels),
        c("xgpn", "decoder_level", decoder_level),
        c("xgpn", "pyramid", pyramid),
        c("heads", "loc_head", loc_head),
        c("heads", "cls_head", cls_head),
        c("heads", "adjust_boundaries", adjust_boundaries),
        c("heads", "score_head", score_head),
        c("objective", "total_loss_stitched", total_loss_stitched),
        c("objective", "total_loss_unpartitioned", total_loss_unpartitioned),
    ]
}

pub fn modules() -> Vec<&'static str> {
    let mut m: Vec<_> = registry().iter().map(|c| c.module).collect();
    m.dedup();
    m
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-scale..scale)).collect()).expect("shape")
}

/// Random fixed weighting turning any output into a scalar.
fn project(g: &mut ComputeGraph, out: Var, seed: u64) -> Result<Var> {
    let w = random(&mut rng(seed), g.value(out).shape(), 1.0);
    let w = g.leaf(w);
    let m = g.mul(out, w)?;
    Ok(g.sum(m))
}

fn run<F>(name: &str, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ComputeGraph, &[Var]) -> Result<Var>,
{
    check_gradients(name, inputs, FD_STEP, f)
}

fn conv1d() -> Result<GradCheckReport> {
    let mut r = rng(1);
    let inputs = [random(&mut r, &[9, 3], 1.0), random(&mut r, &[3, 3, 4], 1.0), random(&mut r, &[4], 1.0)];
    run("conv1d", &inputs, |g, v| {
        let y = g.conv1d(v[0], v[1], v[2], 1, 1)?;
        project(g, y, 11)
    })
}

fn conv1d_strided() -> Result<GradCheckReport> {
    let mut r = rng(2);
    let inputs = [random(&mut r, &[12, 2], 1.0), random(&mut r, &[3, 2, 3], 1.0), random(&mut r, &[3], 1.0)];
    run("conv1d_strided", &inputs, |g, v| {
        let a = g.conv1d(v[0], v[1], v[2], 2, 1)?;
        let b = g.conv1d(v[0], v[1], v[2], 3, 0)?;
        let (a, b) = (project(g, a, 12)?, project(g, b, 13)?);
        g.add(a, b)
    })
}

fn deconv1d() -> Result<GradCheckReport> {
    let mut r = rng(3);
    let inputs = [random(&mut r, &[5, 3], 1.0), random(&mut r, &[4, 3, 2], 1.0), random(&mut r, &[2], 1.0)];
    run("deconv1d", &inputs, |g, v| {
        let y = g.deconv1d(v[0], v[1], v[2], 2, 1)?;
        project(g, y, 14)
    })
}

fn group_norm() -> Result<GradCheckReport> {
    let mut r = rng(4);
    let inputs = [random(&mut r, &[5, 6], 2.0), random(&mut r, &[6], 1.0), random(&mut r, &[6], 1.0)];
    run("group_norm", &inputs, |g, v| {
        let y = g.group_norm(v[0], v[1], v[2], 3)?;
        project(g, y, 15)
    })
}

fn relu() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(5), &[6, 4], 1.0)];
    run("relu", &inputs, |g, v| {
        let y = g.relu(v[0]);
        project(g, y, 16)
    })
}

fn sigmoid() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(6), &[6, 4], 3.0)];
    run("sigmoid", &inputs, |g, v| {
        let y = g.sigmoid(v[0]);
        project(g, y, 17)
    })
}

fn max_pool2() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(7), &[8, 3], 1.0)];
    run("max_pool2", &inputs, |g, v| {
        let y = g.max_pool2(v[0])?;
        project(g, y, 18)
    })
}

fn elementwise() -> Result<GradCheckReport> {
    let mut r = rng(8);
    let inputs = [random(&mut r, &[4, 3], 1.0), random(&mut r, &[4, 3], 1.0)];
    run("elementwise", &inputs, |g, v| {
        let s = g.add(v[0], v[1])?;
        let m = g.mul(s, v[0])?;
        let k = g.scale(m, -1.7);
        project(g, k, 19)
    })
}

fn shape_ops() -> Result<GradCheckReport> {
    let mut r = rng(9);
    let inputs = [random(&mut r, &[4, 3], 1.0), random(&mut r, &[4, 2], 1.0), random(&mut r, &[2, 3], 1.0)];
    run("shape_ops", &inputs, |g, v| {
        let cc = g.concat_channels(&[v[0], v[1]])?;
        let cr = g.concat_rows(&[v[0], v[2]])?;
        let gathered = g.gather_rows(cr, &[5, 0, 0, 3, 4])?;
        let reshaped = g.reshape(cc, &[10, 2])?;
        let (a, b) = (project(g, gathered, 20)?, project(g, reshaped, 21)?);
        g.add(a, b)
    })
}

fn interp_rows() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(10), &[6, 3], 1.0)];
    run("interp_rows", &inputs, |g, v| {
        let y = g.interp_rows(v[0], &[-0.5, 0.0, 0.3, 2.75, 4.999, 5.0, 7.0])?;
        project(g, y, 22)
    })
}

fn edge_conv() -> Result<GradCheckReport> {
    let mut r = rng(11);
    let inputs = [random(&mut r, &[6, 3], 1.0), random(&mut r, &[6, 3], 1.0), random(&mut r, &[3], 1.0)];
    let sources = vec![vec![1, 2], vec![0, 5], vec![], vec![2, 4], vec![3, 1], vec![0, 4]];
    run("edge_conv", &inputs, move |g, v| {
        let y = g.edge_conv(v[0], &sources, v[1], v[2])?;
        project(g, y, 23)
    })
}

fn anchor_decode() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(12), &[4, 2], 1.0)];
    let anchors = [(10.0, 4.0), (20.0, 8.0), (3.0, 6.0), (50.0, 16.0)];
    run("anchor_decode", &inputs, move |g, v| {
        let y = g.anchor_decode(v[0], &anchors)?;
        project(g, y, 24)
    })
}

fn boundary_shift() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(13), &[3, 2], 0.5)];
    let segments = [(0.0, 4.0), (10.0, 30.0), (5.5, 6.5)];
    run("boundary_shift", &inputs, move |g, v| {
        let y = g.boundary_shift(v[0], &segments)?;
        project(g, y, 25)
    })
}

fn giou_loss() -> Result<GradCheckReport> {
    let pred = Tensor::from_rows(&[
        vec![0.3, 4.1],
        vec![10.0, 12.5],
        vec![2.0, 9.0],
        vec![20.2, 21.0],
        vec![-3.0, 1.5],
    ])?;
    let targets = [(1.0, 5.0), (11.0, 20.0), (3.0, 8.0), (24.0, 30.0), (0.0, 1.0)];
    run("giou_loss", &[pred], move |g, v| g.giou_loss(v[0], &targets))
}

fn focal_loss() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(14), &[5, 3], 3.0)];
    let targets = [Some(0), None, Some(2), None, Some(1)];
    run("focal_loss", &inputs, move |g, v| g.focal_loss(v[0], &targets, FocalParams::default(), 3.0))
}

fn focal_loss_unbalanced() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(15), &[4, 2], 3.0)];
    let targets = [Some(1), None, None, Some(0)];
    let params = FocalParams { gamma: 1.5, alpha: None };
    run("focal_loss_unbalanced", &inputs, move |g, v| g.focal_loss(v[0], &targets, params, 1.0))
}

fn balanced_bce() -> Result<GradCheckReport> {
    let inputs = [random(&mut rng(16), &[7, 3], 3.0)];
    let mut t = Tensor::zeros(&[7, 3]);
    for (r, c) in [(0, 0), (1, 0), (2, 1), (6, 1)] {
        t.row_mut(r)[c] = 1.0;
    }
    run("balanced_bce", &inputs, move |g, v| g.balanced_bce(v[0], &t))
}

/// Micro model parameters, with those matching `prefixes` exposed as inputs.
struct ParamHarness {
    store: ParamStore,
    selected: Vec<String>,
}

impl ParamHarness {
    fn new(cfg: &ModelConfig, prefixes: &[&str]) -> Result<Self> {
        let store = model::init_params(cfg, 3)?;
        let mut store = store;
        // Non-zero biases and output weights so every path carries gradient.
        // Regression outputs stay small so segments keep positive width.
        let mut r = rng(99);
        for (name, t) in store.iter_mut() {
            let spread = if name.starts_with("loc.out") || name.starts_with("adj.out") {
                0.02
            } else if name.ends_with(".bias") || name.ends_with("out.weight") || name.contains(".gn.") {
                0.3
            } else {
                continue;
            };
            for v in t.data_mut() {
                *v += r.gen_range(-spread..spread);
            }
        }
        let selected = store.names().filter(|n| prefixes.iter().any(|p| n.starts_with(p))).cloned().collect();
        Ok(Self { store, selected })
    }

    fn inputs(&self) -> Vec<Tensor> {
        self.selected.iter().map(|n| self.store.get(n).expect("present").clone()).collect()
    }

    fn bind(&self, g: &mut ComputeGraph, vars: &[Var]) -> BoundParams {
        let mut map = BTreeMap::new();
        for (n, v) in self.selected.iter().zip(vars) {
            map.insert(n.clone(), *v);
        }
        for (n, t) in self.store.iter() {
            if !map.contains_key(n) {
                map.insert(n.clone(), g.leaf(t.clone()));
            }
        }
        BoundParams::from_vars(map)
    }
}

fn micro_input(cfg: &ModelConfig, seed: u64) -> Tensor {
    random(&mut rng(seed), &[cfg.input_len, cfg.in_channels], 1.0)
}

fn micro_stitched(cfg: &ModelConfig) -> Result<(Tensor, Layout, Vec<vss::PlacedAnnotation>)> {
    let source = micro_input(cfg, 40);
    let clip = vss::Span::new(8, 24);
    let (x, layout) = vss::stitch_clip(&source, clip, cfg.input_len, 6, 0)?;
    let actions = [ActionAnnotation::new(12.3, 18.1, 0), ActionAnnotation::new(19.0, 23.6, 1)];
    let placed = vss::map_annotations(&actions, &layout)?;
    Ok((x, Layout::Stitched(layout), placed))
}

fn stem() -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let h = ParamHarness::new(&cfg, &["stem."])?;
    let mut inputs = h.inputs();
    inputs.push(micro_input(&cfg, 41));
    let n = h.selected.len();
    run("stem", &inputs, |g, v| {
        let p = h.bind(g, &v[..n]);
        let y = xgpn::stem(g, &p, v[n])?;
        project(g, y, 26)
    })
}

fn xgn_two_levels() -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let h = ParamHarness::new(&cfg, &["enc.1.", "enc.2."])?;
    let (_, layout, _) = micro_stitched(&cfg)?;
    let l1 = LevelLayout::new(&layout, cfg.level_len(1), cfg.stride(1));
    let l2 = LevelLayout::new(&layout, cfg.level_len(2), cfg.stride(2));
    let mut inputs = h.inputs();
    inputs.push(random(&mut rng(42), &[cfg.level_len(1), cfg.channels], 1.0));
    let n = h.selected.len();
    run("xgn_two_levels", &inputs, |g, v| {
        let p = h.bind(g, &v[..n]);
        let a = xgpn::xgn_level(g, &p, &cfg, 1, v[n], &l1.tags, true)?;
        let b = xgpn::xgn_level(g, &p, &cfg, 2, a.pooled.expect("pooled"), &l2.tags, true)?;
        project(g, b.pooled.expect("pooled"), 27)
    })
}

fn decoder_level() -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let h = ParamHarness::new(&cfg, &["dec.3."])?;
    let mut r = rng(43);
    let mut inputs = h.inputs();
    inputs.push(random(&mut r, &[4, cfg.channels], 1.0));
    inputs.push(random(&mut r, &[8, cfg.channels], 1.0));
    let n = h.selected.len();
    run("decoder_level", &inputs, |g, v| {
        let p = h.bind(g, &v[..n]);
        let y = xgpn::decoder_level(g, &p, 3, v[n], v[n + 1])?;
        project(g, y, 28)
    })
}

fn pyramid() -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let h = ParamHarness::new(&cfg, &["stem.", "enc.", "dec."])?;
    let (x, layout, _) = micro_stitched(&cfg)?;
    let n = h.selected.len();
    run("pyramid", &h.inputs(), |g, v| {
        let p = h.bind(g, &v[..n]);
        let input = g.leaf(x.clone());
        let pf = xgpn::forward(g, &p, &cfg, input, &layout)?;
        let mut total = g.leaf(Tensor::scalar(0.0));
        for (i, d) in pf.decoder.iter().enumerate() {
            let s = project(g, *d, 30 + i as u64)?;
            total = g.add(total, s)?;
        }
        Ok(total)
    })
}

fn head_check(name: &str, prefix: &str, seed: u64, f: fn(&mut ComputeGraph, &BoundParams, &ModelConfig, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let h = ParamHarness::new(&cfg, &[prefix])?;
    let mut inputs = h.inputs();
    inputs.push(random(&mut rng(seed), &[cfg.detection_len(0), cfg.channels], 1.0));
    let n = h.selected.len();
    run(name, &inputs, |g, v| {
        let p = h.bind(g, &v[..n]);
        let y = f(g, &p, &cfg, v[n])?;
        project(g, y, seed + 100)
    })
}

fn loc_head() -> Result<GradCheckReport> {
    head_check("loc_head", "loc.", 44, heads::loc_head)
}

fn cls_head() -> Result<GradCheckReport> {
    head_check("cls_head", "cls.", 45, heads::cls_head)
}

fn score_head() -> Result<GradCheckReport> {
    head_check("score_head", "scr.", 46, |g, p, _, x| heads::score_head(g, p, x))
}

fn adjust_boundaries() -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let h = ParamHarness::new(&cfg, &["adj.", "dec.5."])?;
    let (x, layout, _) = micro_stitched(&cfg)?;
    let segments = [
        LevelSegment { level: 0, start: 3.2, end: 9.7 },
        LevelSegment { level: 1, start: 30.0, end: 47.5 },
        LevelSegment { level: 0, start: 40.1, end: 44.0 },
        LevelSegment { level: 2, start: 0.0, end: 60.0 },
    ];
    let n = h.selected.len();
    run("adjust_boundaries", &h.inputs(), |g, v| {
        let p = h.bind(g, &v[..n]);
        let input = g.leaf(x.clone());
        let pf = xgpn::forward(g, &p, &cfg, input, &layout)?;
        let d = heads::adjust_boundaries(g, &p, &cfg, &pf, &segments)?.expect("segments");
        project(g, d, 47)
    })
}

fn total_loss_check(name: &str, x: Tensor, layout: Layout, truths: Vec<vss::PlacedAnnotation>) -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let h = ParamHarness::new(&cfg, &[""])?;
    let settings = LossSettings { loc_threshold: 0.5, adj_threshold: 0.5, ..LossSettings::default() };
    let anchors = objective::flat_anchors(&cfg);
    let plan = {
        let mut g = ComputeGraph::new();
        let p = h.store.bind(&mut g);
        let input = g.leaf(x.clone());
        let fp = model::forward(&mut g, &p, &cfg, input, &layout)?;
        let (loc, _) = objective::concat_heads(&mut g, &fp)?;
        objective::plan_targets(&cfg, &anchors, g.value(loc), &layout, &truths, &settings)?
    };
    debug_assert!(!plan.loc.is_empty() && !plan.adj.is_empty());
    let n = h.selected.len();
    run(name, &h.inputs(), |g, v| {
        let p = h.bind(g, &v[..n]);
        let input = g.leaf(x.clone());
        let fp = model::forward(g, &p, &cfg, input, &layout)?;
        let (loc, cls) = objective::concat_heads(g, &fp)?;
        let (total, _) = objective::loss_from_plan(g, &p, &cfg, &fp, loc, cls, &anchors, &plan, &settings)?;
        Ok(total)
    })
}

fn total_loss_stitched() -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let (x, layout, truths) = micro_stitched(&cfg)?;
    total_loss_check("total_loss_stitched", x, layout, truths)
}

fn total_loss_unpartitioned() -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let source = micro_input(&cfg, 48).slice_rows(0, 50);
    let (x, layout) = vss::pad_sequence(&source, cfg.input_len, 0)?;
    let actions = [ActionAnnotation::new(2.4, 9.9, 1), ActionAnnotation::new(21.0, 45.3, 0)];
    let truths = vss::place_unpartitioned(&actions, 0, 50);
    total_loss_check("total_loss_unpartitioned", x, layout, truths)
}
