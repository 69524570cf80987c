//! Per-level graph over pyramid positions: free edges chosen by feature
//! similarity, cross-scale edges restricted to the opposite clip.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{ComputeGraph, Tensor, Var};
use crate::vss::Region;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Free,
    CrossScale,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Free => "free",
            EdgeKind::CrossScale => "cross_scale",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub kind: EdgeKind,
    pub similarity: f64,
}

/// Inward edges of every node of one level.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EdgeSet {
    pub inward: Vec<Vec<Edge>>,
}

impl EdgeSet {
    pub fn num_nodes(&self) -> usize {
        self.inward.len()
    }

    pub fn num_edges(&self) -> usize {
        self.inward.iter().map(Vec::len).sum()
    }

    pub fn sources(&self) -> Vec<Vec<usize>> {
        self.inward.iter().map(|es| es.iter().map(|e| e.source).collect()).collect()
    }

    /// Order-sensitive hash of the selected (target, source, kind) triples.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (t, es) in self.inward.iter().enumerate() {
            for e in es {
                for v in [t as u64, e.source as u64, e.kind as u64] {
                    h ^= v.wrapping_add(0x9e37_79b9);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// One line per edge: `target source category similarity`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, es) in self.inward.iter().enumerate() {
            for e in es {
                let _ = writeln!(out, "{} {} {} {:.6}", t, e.source, e.kind.as_str(), e.similarity);
            }
        }
        out
    }
}

/// Negative mean squared difference between two feature vectors.
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn opposite(tag: Region) -> Option<Region> {
    match tag {
        Region::ClipO => Some(Region::ClipU),
        Region::ClipU => Some(Region::ClipO),
        _ => None,
    }
}

/// Builds `k` inward edges per node from features `J x C` and region tags.
///
/// With both clips present a content node takes `k/2` free edges and up to
/// `k/2` cross-scale edges from the opposite clip, skipping sources that
/// already hold a free edge to it. Otherwise (un-stitched input, gap
/// targets, or `cross_scale == false`) all `k` edges are free. Gap and
/// padding nodes never act as sources. Ties go to the lower source index.
pub fn build_edges(features: &Tensor, tags: &[Region], k: usize, cross_scale: bool) -> Result<EdgeSet> {
    if k < 2 || k % 2 != 0 {
        return Err(Error::config(format!("edge count K must be even and at least 2, got {k}")));
    }
    let j = features.rows();
    if tags.len() != j {
        return Err(Error::shape(format!("{} region tags for {j} nodes", tags.len())));
    }
    let present = |r: Region| tags.iter().any(|t| *t == r);
    let both_clips = cross_scale && present(Region::ClipO) && present(Region::ClipU);

    let mut inward = Vec::with_capacity(j);
    for t in 0..j {
        let ft = features.row(t);
        let mut ranked: Vec<(f64, usize)> = (0..j)
            .filter(|&s| s != t && tags[s].is_content())
            .map(|s| (similarity(ft, features.row(s)), s))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let other = opposite(tags[t]).filter(|_| both_clips);
        let free_count = if other.is_some() { k / 2 } else { k };
        let mut edges: Vec<Edge> = ranked
            .iter()
            .take(free_count)
            .map(|&(sim, s)| Edge { source: s, kind: EdgeKind::Free, similarity: sim })
            .collect();
        if let Some(other) = other {
            let cross: Vec<Edge> = ranked
                .iter()
                .filter(|&&(_, s)| tags[s] == other && !edges.iter().any(|e| e.source == s))
                .take(k / 2)
                .map(|&(sim, s)| Edge { source: s, kind: EdgeKind::CrossScale, similarity: sim })
                .collect();
            edges.extend(cross);
        }
        inward.push(edges);
    }
    Ok(EdgeSet { inward })
}

/// Edge convolution over `features` with affine map `weight (2C x C)` and
/// `bias (C)`, channel-wise max over each node's sources.
pub fn edge_conv(graph: &mut ComputeGraph, features: Var, edges: &EdgeSet, weight: Var, bias: Var) -> Result<Var> {
    graph.edge_conv(features, &edges.sources(), weight, bias)
}
