//! Property-based invariants across modules.

#[path = "common/oracles.rs"]
mod oracles;

use proptest::prelude::*;

use sudf::hsio::{normalize_cube, BinaryMask, HyperspectralCube, SaliencyMap};
use sudf::metrics::{auc_borji, cc, evaluate, kldiv, nss, pr_curve, EvalParams};
use sudf::mrank::{rank, saliency_from_features, AffinityGraph, MrParams};
use sudf::nncore::{glorot_init, softmax_cross_entropy, Network};
use sudf::slic::{compute_superpixels, majority_label, slic_kmeans, SlicParams, SuperpixelMap};
use sudf::FeatureView;

fn volume() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..4, 4usize..20, 4usize..20).prop_flat_map(|(c, h, w)| {
        (
            Just(c),
            Just(h),
            Just(w),
            prop::collection::vec(-1.0f64..1.0, c * h * w),
        )
    })
}

fn saliency_and_mask() -> impl Strategy<Value = (SaliencyMap, BinaryMask)> {
    (8usize..24, 8usize..24).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(0.0f64..=1.0, h * w),
            prop::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(s, mut m)| {
                m[0] = true;
                m[h * w - 1] = false;
                (
                    SaliencyMap::new(h, w, s).unwrap(),
                    BinaryMask::new(h, w, m).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn normalize_is_idempotent_and_monotone((c, h, w, data) in volume()) {
        let cube = HyperspectralCube::new(h, w, c, data).unwrap();
        let once = normalize_cube(&cube);
        let twice = normalize_cube(&once);
        for (a, b) in once.data.iter().zip(&twice.data) {
            prop_assert!((a - b).abs() <= f64::EPSILON);
        }
        for i in 1..cube.data.len() {
            if cube.data[i - 1] < cube.data[i] {
                prop_assert!(once.data[i - 1] <= once.data[i]);
            }
        }
    }

    #[test]
    fn slic_is_a_connected_partition(
        (c, h, w, data) in volume(),
        target in 2usize..20,
        compactness in 0.5f64..20.0,
    ) {
        let target = target.min(h * w);
        let view = FeatureView::new(c, h, w, &data).unwrap();
        let params = SlicParams { target_segments: target, compactness, ..Default::default() };
        let map = compute_superpixels(view, &params).unwrap();
        prop_assert_eq!(oracles::check_partition(&map), Ok(()));
        let again = compute_superpixels(view, &params).unwrap();
        prop_assert_eq!(map, again);
    }

    #[test]
    fn slic_objective_never_increases(
        (c, h, w, data) in volume(),
        target in 2usize..8,
    ) {
        let view = FeatureView::new(c, h, w, &data).unwrap();
        let params = SlicParams { target_segments: target, max_iterations: 10, ..Default::default() };
        let trace = slic_kmeans(view, &params).unwrap();
        for pair in trace.objective.windows(2) {
            prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{:?}", trace.objective);
        }
    }

    #[test]
    fn majority_is_idempotent_and_uniform(
        (c, h, w, data) in volume(),
        classes in 1usize..6,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let view = FeatureView::new(c, h, w, &data).unwrap();
        let map = compute_superpixels(view, &SlicParams { target_segments: 4.min(h * w), ..Default::default() }).unwrap();
        let mut r = oracles::rng(seed);
        let labels: Vec<usize> = (0..h * w).map(|_| r.gen_range(0..classes)).collect();
        let once = majority_label(&map, &labels).unwrap();
        let twice = majority_label(&map, &once).unwrap();
        prop_assert_eq!(&once, &twice);
        for (p, &s) in map.labels.iter().enumerate() {
            let first = map.labels.iter().position(|&t| t == s).unwrap();
            prop_assert_eq!(once[p], once[first]);
        }
    }

    #[test]
    fn rank_permutation_equivariant_and_linear(seed in any::<u64>(), n in 2usize..15, alpha in 0.1f64..0.99) {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut r = oracles::rng(seed);
        let g = oracles::random_graph(&mut r, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let mut pw = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                pw[perm[i] * n + perm[j]] = g.weight(i, j);
            }
        }
        let pg = AffinityGraph::from_weights(n, pw).unwrap();
        let mut y = vec![0.0; n];
        y[r.gen_range(0..n)] = 1.0;
        let mut py = vec![0.0; n];
        for i in 0..n {
            py[perm[i]] = y[i];
        }
        let f = rank(&g, &y, alpha).unwrap();
        let pf = rank(&pg, &py, alpha).unwrap();
        let scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            prop_assert!((f[i] - pf[perm[i]]).abs() <= 1e-9 * scale);
            prop_assert!(f[i] >= -1e-12 * scale);
        }
        // Disjoint indicator queries add.
        let other = (0..n).find(|&i| y[i] == 0.0).unwrap();
        let mut y2 = vec![0.0; n];
        y2[other] = 1.0;
        let both: Vec<f64> = y.iter().zip(&y2).map(|(a, b)| a + b).collect();
        let f2 = rank(&g, &y2, alpha).unwrap();
        let fb = rank(&g, &both, alpha).unwrap();
        for i in 0..n {
            prop_assert!((fb[i] - f[i] - f2[i]).abs() <= 1e-9 * scale.max(fb[i].abs()));
        }
    }

    #[test]
    fn saliency_in_unit_range_and_segment_constant((c, h, w, data) in volume()) {
        let view = FeatureView::new(c, h, w, &data).unwrap();
        let map = compute_superpixels(view, &SlicParams { target_segments: 6.min(h * w), ..Default::default() }).unwrap();
        let s = saliency_from_features(view, &map, &MrParams::default()).unwrap();
        let mut per_segment = vec![None; map.num_segments];
        for (p, &l) in map.labels.iter().enumerate() {
            let v = s.values[p];
            prop_assert!((0.0..=1.0).contains(&v));
            match per_segment[l] {
                None => per_segment[l] = Some(v),
                Some(u) => prop_assert_eq!(u, v),
            }
        }
    }

    #[test]
    fn cc_and_nss_affine_invariant((s, g) in saliency_and_mask(), a in 0.05f64..1.0, t in 0.0f64..1.0) {
        let b = t * (1.0 - a);
        let scaled = SaliencyMap::new(s.height, s.width, s.values.iter().map(|v| a * v + b).collect()).unwrap();
        prop_assert!((cc(&s, &g).unwrap() - cc(&scaled, &g).unwrap()).abs() <= 1e-9);
        prop_assert!((nss(&s, &g).unwrap() - nss(&scaled, &g).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn auc_invariant_under_level_preserving_monotone_map((s, g) in saliency_and_mask(), seed in any::<u64>()) {
        // Squeeze to the lower half of the levels, then double: strictly
        // increasing on levels and order-preserving after quantization.
        let half = SaliencyMap::new(s.height, s.width,
            s.values.iter().map(|v| (v * 127.0).round() / 255.0).collect()).unwrap();
        let doubled = SaliencyMap::new(s.height, s.width,
            half.values.iter().map(|v| (v * 255.0).round() * 2.0 / 255.0).collect()).unwrap();
        prop_assert_eq!(auc_borji(&half, &g, 5, seed).unwrap(), auc_borji(&doubled, &g, 5, seed).unwrap());
    }

    #[test]
    fn metric_orderings((s, g) in saliency_and_mask()) {
        prop_assert!(kldiv(&s, &g).unwrap() >= 0.0);
        let curve = pr_curve(&s, &g).unwrap();
        for pair in curve.points.windows(2) {
            prop_assert!(pair[1].recall <= pair[0].recall);
        }
        let r = evaluate(&s, &g, &EvalParams { auc_splits: 5, ..Default::default() }).unwrap();
        prop_assert!(r.max_f_beta >= r.f_beta && r.max_f_beta >= r.ave_f_beta);
    }

    #[test]
    fn softmax_gradient_sums_to_zero(seed in any::<u64>()) {
        use rand::Rng;
        let mut r = oracles::rng(seed);
        let x = oracles::random_tensor(&mut r, 5, 3, 3);
        let labels: Vec<usize> = (0..9).map(|_| r.gen_range(0..5)).collect();
        let (_, grad) = softmax_cross_entropy(&x, &labels).unwrap();
        for px in 0..9 {
            let s: f64 = (0..5).map(|c| grad.data[c * 9 + px]).sum();
            prop_assert!(s.abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn network_preserves_spatial_dims(hq in 1usize..4, wq in 1usize..4, bands in 1usize..4) {
        let (h, w) = (4 * hq, 4 * wq);
        let data = vec![0.25; bands * h * w];
        let net = glorot_init(Network::feature_extractor(bands), 1);
        let (f, _) = net.forward(FeatureView::new(bands, h, w, &data).unwrap()).unwrap();
        prop_assert_eq!(f.shape(), (64, h, w));
    }
}

#[test]
fn zero_network_on_zero_cube_is_zero() {
    let net = Network::feature_extractor(2);
    let data = vec![0.0; 2 * 8 * 8];
    let (f, _) = net.forward(FeatureView::new(2, 8, 8, &data).unwrap()).unwrap();
    assert!(f.data.iter().all(|&v| v == 0.0));
}

#[test]
fn superpixel_map_from_labels_relabels_contiguously() {
    let m = SuperpixelMap::from_labels(1, 4, vec![7, 7, 3, 9]).unwrap();
    assert_eq!(m.labels, vec![0, 0, 1, 2]);
    assert_eq!(m.num_segments, 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cube_and_mask_round_trip(
        (c, h, w, data) in volume(),
        bits in prop::collection::vec(any::<bool>(), 16 * 16),
    ) {
        use sudf::hsio::{load_cube, load_mask, save_cube, save_mask};
        let dir = tempfile::tempdir().unwrap();
        // The raw format stores f32.
        let data: Vec<f64> = data.iter().map(|&v| v as f32 as f64).collect();
        let cube = HyperspectralCube::new(h, w, c, data).unwrap();
        let (hdr, raw) = (dir.path().join("c.hdr"), dir.path().join("c.raw"));
        save_cube(&cube, &hdr, &raw).unwrap();
        let back = load_cube(&hdr, &raw).unwrap();
        prop_assert_eq!((back.height, back.width, back.bands), (h, w, c));
        prop_assert_eq!(&back.data, &cube.data);

        let mask = BinaryMask::new(16, 16, bits).unwrap();
        let path = dir.path().join("m.png");
        save_mask(&mask, &path).unwrap();
        prop_assert_eq!(load_mask(&path).unwrap(), mask);
    }
}
