mod common;

use proptest::prelude::*;
use rand::Rng;

use vsgn::graph::{build_edges, edge_conv, EdgeKind, EdgeSet};
use vsgn::numerics::{ComputeGraph, Tensor};
use vsgn::vss::Region;

#[test]
fn build_edges_matches_brute_force_on_1000_instances() {
    let detail = common::graph_oracle_suite(1000, 11).unwrap_or_else(|e| panic!("{e}"));
    println!("{detail}");
}

#[test]
fn odd_or_tiny_k_is_a_config_error() {
    let f = Tensor::zeros(&[4, 1]);
    for k in [0, 1, 3, 7] {
        let e = build_edges(&f, &[Region::Unpartitioned; 4], k, true).unwrap_err();
        assert!(matches!(e, vsgn::Error::Config(_)), "{e}");
    }
}

fn stitched_tags(m: usize, g: usize, u: usize) -> Vec<Region> {
    let mut t = vec![Region::ClipO; m];
    t.extend(vec![Region::Gap; g]);
    t.extend(vec![Region::ClipU; u]);
    t
}

fn conv_output(f: &Tensor, edges: &EdgeSet, w: &Tensor, b: &Tensor) -> Tensor {
    let mut g = ComputeGraph::new();
    let (x, w, b) = (g.leaf(f.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
    let y = edge_conv(&mut g, x, edges, w, b).unwrap();
    g.value(y).clone()
}

proptest! {
    #[test]
    fn cross_scale_edges_fill_up_to_what_the_opposite_clip_offers(
        half in 1usize..=5, m in 1usize..24, u in 1usize..24, gap in 0usize..6, seed in any::<u64>()
    ) {
        let k = 2 * half;
        let tags = stitched_tags(m, gap, u);
        let f = common::random_features(&mut common::rng(seed), tags.len(), 3, seed % 3 == 0);
        let edges = build_edges(&f, &tags, k, true).unwrap();
        for (t, es) in edges.inward.iter().enumerate() {
            prop_assert!(es.iter().all(|e| e.source != t && tags[e.source].is_content()));
            let mut srcs: Vec<usize> = es.iter().map(|e| e.source).collect();
            srcs.sort_unstable();
            srcs.dedup();
            prop_assert_eq!(srcs.len(), es.len());
            if tags[t] == Region::Gap {
                prop_assert_eq!(es.len(), k.min(m + u));
                prop_assert!(es.iter().all(|e| e.kind == EdgeKind::Free));
                continue;
            }
            let opposite = if tags[t] == Region::ClipO { u } else { m };
            let free: Vec<_> = es.iter().filter(|e| e.kind == EdgeKind::Free).collect();
            let cross: Vec<_> = es.iter().filter(|e| e.kind == EdgeKind::CrossScale).collect();
            prop_assert_eq!(free.len(), half.min(m + u - 1));
            let claimed = free.iter().filter(|e| tags[e.source] != tags[t]).count();
            prop_assert_eq!(cross.len(), half.min(opposite - claimed));
            prop_assert!(cross.iter().all(|e| tags[e.source] != tags[t]));
            if m >= k && u >= k {
                prop_assert_eq!((free.len(), cross.len()), (half, half));
            }
        }
    }

    #[test]
    fn unstitched_levels_have_no_cross_scale_edges(j in 1usize..40, half in 1usize..=5, seed in any::<u64>()) {
        let f = common::random_features(&mut common::rng(seed), j, 2, false);
        let edges = build_edges(&f, &vec![Region::Unpartitioned; j], 2 * half, true).unwrap();
        for es in &edges.inward {
            prop_assert_eq!(es.len(), (2 * half).min(j - 1));
            prop_assert!(es.iter().all(|e| e.kind == EdgeKind::Free));
        }
    }

    #[test]
    fn edge_conv_ignores_edge_order(m in 3usize..12, u in 3usize..12, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let tags = stitched_tags(m, 2, u);
        let f = common::random_tensor(&mut r, tags.len(), 3);
        let (w, b) = (common::random_tensor(&mut r, 6, 3), common::random_tensor(&mut r, 1, 3));
        let b = b.reshape(vec![3]).unwrap();
        let edges = build_edges(&f, &tags, 4, true).unwrap();
        let mut reversed = edges.clone();
        reversed.inward.iter_mut().for_each(|es| es.reverse());
        prop_assert_eq!(conv_output(&f, &edges, &w, &b), conv_output(&f, &reversed, &w, &b));
    }

    #[test]
    fn edge_conv_is_permutation_covariant(j in 2usize..24, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let tags = common::random_tags(&mut r, j);
        let f = common::random_tensor(&mut r, j, 3);
        let w = common::random_tensor(&mut r, 6, 3);
        let b = common::random_tensor(&mut r, 1, 3).reshape(vec![3]).unwrap();
        let mut perm: Vec<usize> = (0..j).collect();
        for i in (1..j).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let pf = Tensor::from_rows(&perm.iter().map(|&p| f.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        let ptags: Vec<Region> = perm.iter().map(|&p| tags[p]).collect();
        let base = conv_output(&f, &build_edges(&f, &tags, 4, true).unwrap(), &w, &b);
        let permuted = conv_output(&pf, &build_edges(&pf, &ptags, 4, true).unwrap(), &w, &b);
        for (i, &p) in perm.iter().enumerate() {
            for (a, c) in permuted.row(i).iter().zip(base.row(p)) {
                prop_assert!((a - c).abs() < 1e-12);
            }
        }
    }
}
