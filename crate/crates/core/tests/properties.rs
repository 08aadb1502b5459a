use maskrnn_core::fusion::{fuse, FusionConfig};
use maskrnn_core::locnet::{apply_delta, encode_delta, restrict};
use maskrnn_core::metrics::{aggregate, iou, temporal_stability, MetricsConfig};
use maskrnn_core::tensor::{Graph, Tensor};
use maskrnn_core::vision::{augment_pair, perturb_mask, tight_bbox, warp_backward, AugmentConfig, BBox, PerturbConfig};
use maskrnn_core::{BinaryMask, FlowField, Frame, Grid, ProbMap};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| Grid::from_vec(w, h, d).unwrap())
    })
}

fn prob_strategy(w: usize, h: usize) -> impl Strategy<Value = ProbMap> {
    prop::collection::vec(0.0f32..=1.0, w * h).prop_map(move |d| Grid::from_vec(w, h, d).unwrap())
}

fn flow_strategy(w: usize, h: usize) -> impl Strategy<Value = FlowField> {
    prop::collection::vec((-4.0f32..4.0, -4.0f32..4.0), w * h)
        .prop_map(move |d| FlowField::from_vec(w, h, d.into_iter().map(|(a, b)| [a, b]).collect()).unwrap())
}

fn box_strategy() -> impl Strategy<Value = BBox> {
    (-50.0f32..50.0, -50.0f32..50.0, 0.5f32..60.0, 0.5f32..60.0)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #[test]
    fn zero_flow_warp_is_identity(m in (1usize..10, 1usize..10).prop_flat_map(|(w, h)| prob_strategy(w, h))) {
        let (w, h) = m.dims();
        let out = warp_backward(&m, &FlowField::zeros(w, h)).unwrap();
        prop_assert_eq!(out, m);
    }

    #[test]
    fn warp_is_linear_in_the_map(
        (a, b, f) in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| (prob_strategy(w, h), prob_strategy(w, h), flow_strategy(w, h))),
        s in -2.0f32..2.0,
        t in -2.0f32..2.0,
    ) {
        let (w, h) = a.dims();
        let mix = Grid::from_fn(w, h, |x, y| s * a.get(x, y) + t * b.get(x, y));
        let lhs = warp_backward(&mix, &f).unwrap();
        let wa = warp_backward(&a, &f).unwrap();
        let wb = warp_backward(&b, &f).unwrap();
        for y in 0..h {
            for x in 0..w {
                let rhs = s * wa.get(x, y) + t * wb.get(x, y);
                prop_assert!((lhs.get(x, y) - rhs).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn tight_bbox_matches_exhaustive_scan(m in mask_strategy(16)) {
        let (w, h) = m.dims();
        let mut lo = (usize::MAX, usize::MAX);
        let mut hi = (0, 0);
        let mut any = false;
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) {
                    any = true;
                    lo = (lo.0.min(x), lo.1.min(y));
                    hi = (hi.0.max(x), hi.1.max(y));
                }
            }
        }
        match tight_bbox(&m, 1) {
            None => prop_assert!(!any),
            Some(b) => {
                prop_assert!(any);
                prop_assert_eq!((b.x_min, b.y_min), (lo.0 as f32, lo.1 as f32));
                prop_assert_eq!((b.x_max, b.y_max), (hi.0 as f32 + 1.0, hi.1 as f32 + 1.0));
            }
        }
    }

    #[test]
    fn delta_round_trip(p in box_strategy(), g in box_strategy()) {
        let back = apply_delta(&p, &encode_delta(&p, &g).unwrap()).unwrap();
        for (a, b) in [(back.x_min, g.x_min), (back.y_min, g.y_min), (back.x_max, g.x_max), (back.y_max, g.y_max)] {
            prop_assert!((a - b).abs() <= 1e-4, "{:?} vs {:?}", back, g);
        }
    }

    #[test]
    fn restrict_is_idempotent(m in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| prob_strategy(w, h)), b in box_strategy()) {
        let once = restrict(&m, &b);
        prop_assert_eq!(restrict(&once, &b), once);
    }

    #[test]
    fn roi_pool_commutes_with_channel_permutation(
        data in prop::collection::vec(-1.0f32..1.0, 3 * 6 * 5),
        x0 in 0.0f32..10.0, y0 in 0.0f32..10.0, bw in 1.0f32..20.0, bh in 1.0f32..20.0,
    ) {
        let roi = BBox::new(x0, y0, x0 + bw, y0 + bh).unwrap();
        let plane = 6 * 5;
        let perm = [2usize, 0, 1];
        let permuted: Vec<f32> = perm.iter().flat_map(|&c| data[c * plane..(c + 1) * plane].to_vec()).collect();
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(&[1, 3, 6, 5], data.clone()).unwrap());
        let b = g.constant(Tensor::new(&[1, 3, 6, 5], permuted).unwrap());
        let pa = g.roi_pool(a, &roi, 4.0, 3).unwrap();
        let pb = g.roi_pool(b, &roi, 4.0, 3).unwrap();
        let (pa, pb) = (g.value(pa).data().to_vec(), g.value(pb).data().to_vec());
        for (k, &c) in perm.iter().enumerate() {
            prop_assert_eq!(&pb[k * 9..(k + 1) * 9], &pa[c * 9..(c + 1) * 9]);
        }
    }

    #[test]
    fn fused_labels_stay_in_range(
        maps in (1usize..6, 1usize..8, 1usize..8).prop_flat_map(|(n, w, h)| prop::collection::vec(prob_strategy(w, h), n)),
        tau in 0.05f32..0.95,
    ) {
        let l = fuse(&maps, &FusionConfig { tau }).unwrap();
        prop_assert!(l.data().iter().all(|&v| (v as usize) <= maps.len()));
    }

    #[test]
    fn fusion_argmax_is_scale_invariant(
        maps in (2usize..5, 1usize..8, 1usize..8).prop_flat_map(|(n, w, h)| prop::collection::vec(prob_strategy(w, h), n)),
        c in 0.1f32..1.0,
    ) {
        // Scaling by c <= 1 needs no clamping; foreground pixels keep their winner.
        let cfg = FusionConfig { tau: 0.01 };
        let base = fuse(&maps, &cfg).unwrap();
        let scaled: Vec<ProbMap> = maps.iter().map(|m| m.map(|v| v * c)).collect();
        let after = fuse(&scaled, &cfg).unwrap();
        for (a, b) in base.data().iter().zip(after.data()) {
            if *a != 0 && *b != 0 {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn fusion_is_permutation_equivariant(
        maps in (1usize..5, 1usize..8, 1usize..8).prop_flat_map(|(n, w, h)| prop::collection::vec(prob_strategy(w, h), n)),
        seed in any::<u64>(),
    ) {
        // Distinct values per pixel so the tie-break never decides.
        let n = maps.len();
        let maps: Vec<ProbMap> = maps
            .iter()
            .enumerate()
            .map(|(i, m)| m.map(|v| ((v * 1000.0).round() * n as f32 + i as f32) / (1001.0 * n as f32)))
            .collect();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<ProbMap> = perm.iter().map(|&i| maps[i].clone()).collect();
        let cfg = FusionConfig::default();
        let a = fuse(&maps, &cfg).unwrap();
        let b = fuse(&permuted, &cfg).unwrap();
        for (la, lb) in a.data().iter().zip(b.data()) {
            let expect = if *la == 0 { 0 } else { perm.iter().position(|&i| i + 1 == *la as usize).unwrap() as u8 + 1 };
            prop_assert_eq!(*lb, expect);
        }
    }

    #[test]
    fn iou_is_symmetric(
        (a, b) in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| (
            prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| Grid::from_vec(w, h, d).unwrap()),
            prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| Grid::from_vec(w, h, d).unwrap()),
        )),
    ) {
        prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
    }

    #[test]
    fn iou_grows_with_correct_pixels(
        (pred, gt, k) in (2usize..12, 2usize..12).prop_flat_map(|(w, h)| (
            prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| Grid::from_vec(w, h, d).unwrap()),
            prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| Grid::from_vec(w, h, d).unwrap()),
            0..w * h,
        )),
    ) {
        let (w, _) = gt.dims();
        let (x, y) = (k % w, k / w);
        let mut better: BinaryMask = pred.clone();
        better.set(x, y, gt.get(x, y));
        prop_assert!(iou(&better, &gt).unwrap() >= iou(&pred, &gt).unwrap() - 1e-12);
    }

    #[test]
    fn mean_and_recall_ignore_frame_order(mut v in prop::collection::vec(0.0f64..=1.0, 1..30), seed in any::<u64>()) {
        let cfg = MetricsConfig::default();
        let a = aggregate(&v, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        v.shuffle(&mut rng);
        let b = aggregate(&v, &cfg).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
        prop_assert_eq!(a.recall, b.recall);
        prop_assert!((-1.0..=1.0).contains(&b.decay));
    }

    #[test]
    fn perturbation_keeps_binary_dims(m in mask_strategy(20), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = perturb_mask(&m, &PerturbConfig::default(), &mut rng);
        prop_assert_eq!(p.dims(), m.dims());
    }

    #[test]
    fn augmentation_keeps_alignment(seed in any::<u64>()) {
        // A frame whose red channel is the mask must still agree after the
        // shared transform wherever the frame is exactly 0 or 1. The border
        // is empty because frames clamp at the edge and masks do not.
        let (w, h) = (24, 20);
        let mask = Grid::from_fn(w, h, |x, y| x >= 6 && y >= 6 && x < w - 6 && y < h - 6 && (x / 4 + y / 5) % 2 == 0);
        let frame = Frame::from_fn(w, h, |x, y| if mask.get(x, y) { [1.0, 0.0, 0.0] } else { [0.0; 3] });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = AugmentConfig { max_rotation_deg: 0.0, min_scale: 1.0, max_scale: 1.0, ..AugmentConfig::default() };
        let (f, m, _) = augment_pair(&frame, &mask, &FlowField::zeros(w, h), &cfg, &mut rng).unwrap();
        prop_assert_eq!(m.dims(), (w, h));
        for y in 0..h {
            for x in 0..w {
                let r = f.get(x, y)[0];
                if r == 1.0 || r == 0.0 {
                    prop_assert_eq!(m.get(x, y), r == 1.0);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stability_ignores_global_translation(dx in 0usize..6, dy in 0usize..6, r in 3usize..7) {
        let cfg = MetricsConfig::default();
        let seq = |ox: usize, oy: usize| -> Vec<BinaryMask> {
            (0..3)
                .map(|t| {
                    Grid::from_fn(40, 40, |x, y| {
                        let (cx, cy) = ((12 + ox + t) as f32, (14 + oy) as f32);
                        let (ex, ey) = (x as f32 - cx, y as f32 - cy);
                        (ex * ex) / ((r + t) * (r + t)) as f32 + (ey * ey) / (r * r) as f32 <= 1.0
                    })
                })
                .collect()
        };
        let a = temporal_stability(&seq(0, 0), &cfg).unwrap();
        let b = temporal_stability(&seq(dx, dy), &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn perturbation_replay_is_deterministic(m in mask_strategy(16), seed in any::<u64>()) {
        let cfg = PerturbConfig::default();
        let a = perturb_mask(&m, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = perturb_mask(&m, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, b);
    }
}
