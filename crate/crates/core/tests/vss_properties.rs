mod common;

use proptest::prelude::*;

use vsgn::vss::{self, ActionAnnotation, Span};

#[test]
fn cutting_and_stitching_postconditions_on_500_videos() {
    let detail = common::vss_suite(500, 21).unwrap_or_else(|e| panic!("{e}"));
    println!("{detail}");
}

proptest! {
    #[test]
    fn windows_cover_every_snippet(total in 1usize..5000, quarter in 1usize..80) {
        let l = 4 * quarter;
        let ws = vss::slide_windows(total, l);
        let mut covered = vec![false; total];
        for w in &ws {
            prop_assert!(w.end <= total && w.len() == l.min(total));
            covered[w.start..w.end].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.into_iter().all(|c| c));
        prop_assert_eq!(ws.last().unwrap().end, total);
    }

    #[test]
    fn inference_clips_tile_the_sequence(len in 1usize..1280, quarter in 16usize..320) {
        let l = 4 * quarter;
        let len = len.min(l);
        let set = vss::cut_inference(len, l, 0.4).unwrap();
        let short = vss::short_length(l, 0.4);
        prop_assert_eq!(set.original(), Span::new(0, len));
        if len > short {
            let clips: Vec<Span> = set.clips[1..].to_vec();
            prop_assert!(clips.iter().all(|c| c.len() <= short && c.len() >= 2));
            let mut next = 0;
            for c in &clips {
                prop_assert_eq!(c.start, next);
                next = c.end;
            }
            prop_assert!(len - next < 2);
        }
    }

    #[test]
    fn upscaling_grows_as_clips_shrink(a in 2usize..=102, b in 2usize..=102) {
        let (l, g) = (256, 30);
        let f = |m: usize| vss::upscale_clip(&vsgn::numerics::Tensor::zeros(&[m, 2]), l, g).unwrap().rows();
        prop_assert_eq!(f(a), l - g - a);
        if a < b {
            prop_assert!(f(a) > f(b));
        }
    }

    #[test]
    fn mapping_preserves_order(m in 2usize..100, gap in 0usize..30, s0 in 0usize..1000, cuts in prop::collection::vec(0.0f64..1.0, 4)) {
        let l = 2 * m + gap + 5;
        let layout = vss::ClipLayout { source_start: s0, original_len: m, gap, stitched_len: l };
        let mut c = cuts.clone();
        c.sort_by(f64::total_cmp);
        prop_assume!(c[1] > c[0] && c[3] > c[2]);
        let at = |x: f64| s0 as f64 + x * m as f64;
        let acts = [ActionAnnotation::new(at(c[0]), at(c[1]), 0), ActionAnnotation::new(at(c[2]), at(c[3]), 1)];
        let placed = vss::map_annotations(&acts, &layout).unwrap();
        let (o1, u1, o2, u2) = (placed[0], placed[1], placed[2], placed[3]);
        prop_assert!(o1.start <= o2.start && u1.start <= u2.start);
        prop_assert!(o2.end <= (m as f64) + 1e-9 && u1.start >= (m + gap) as f64 - 1e-9 && u2.end <= l as f64 + 1e-9);
    }
}
