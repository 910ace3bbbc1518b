use proptest::prelude::*;

use zonecast::evalkit::{ade, min_ade_over_samples};
use zonecast::geometry::Vec2;
use zonecast::grid::{Grid, GridSpec};
use zonecast::losses::{dispersion, eps_b, penetration, range_penalty, Threshold};
use zonecast::model::{Model, ModelConfig};
use zonecast::pipeline::{is_held_out, RunConfig};
use zonecast::predictor::{apportion, estimate_intention, sample_posterior, PosteriorParams};
use zonecast::raster::{decode_heatmap, density_channel, encode_heatmap, rasterize_frame, HeatmapSequence};
use zonecast::relnet::aggregate;
use zonecast::scenegen::ScanPoint;

fn spec() -> GridSpec {
    GridSpec::new(40, 40, 0.5, Vec2::ZERO)
}

fn point() -> impl Strategy<Value = Vec2> {
    (0.0..20.0f64, 0.0..20.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn traj(n: usize) -> impl Strategy<Value = Vec<Vec2>> {
    proptest::collection::vec(point(), n)
}

proptest! {
    #[test]
    fn raster_channels_stay_in_unit_range(
        pts in proptest::collection::vec((-5.0..25.0f64, -5.0..25.0f64, -2.0..6.0f64, -0.5..1.5f64), 0..200)
    ) {
        let scan: Vec<ScanPoint> = pts
            .iter()
            .map(|&(x, y, h, i)| ScanPoint { pos: Vec2::new(x, y), height: h, intensity: i })
            .collect();
        let r = rasterize_frame(&scan, &spec());
        for cell in &r.data {
            for v in cell {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn density_is_monotone(a in 0u32..100_000, b in 0u32..100_000) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(density_channel(lo) <= density_channel(hi));
        prop_assert!(density_channel(hi) <= 1.0);
    }

    #[test]
    fn codec_error_is_within_half_meter(p in point()) {
        let s = spec();
        let g = encode_heatmap(p, 2.0 * s.res, &s).unwrap();
        let back = decode_heatmap(&g, &s).unwrap();
        prop_assert!((back.x - p.x).abs() <= 0.5 && (back.y - p.y).abs() <= 0.5);
    }

    #[test]
    fn aggregate_ignores_message_order(
        msgs in proptest::collection::vec(proptest::collection::vec(0i32..1000, 6), 1..40),
        seed in any::<u64>()
    ) {
        // Integer-valued messages keep the float sums exact.
        let m: Vec<Vec<f64>> = msgs.iter().map(|v| v.iter().map(|x| *x as f64 * 0.25).collect()).collect();
        let mut shuffled = m.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = zonecast::util::mix64(s);
            shuffled.swap(i, (s % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(aggregate(&m), aggregate(&shuffled));
    }

    #[test]
    fn dispersion_ignores_shifts(d in proptest::collection::vec(-50i32..50, 64), k in 0u32..7, c in -20i32..20) {
        // Power-of-two lengths keep the mean exact.
        let base: Vec<f64> = d[..1 << k].iter().map(|x| *x as f64 * 0.5).collect();
        let shifted: Vec<f64> = base.iter().map(|x| x + c as f64).collect();
        prop_assert_eq!(dispersion(&base), dispersion(&shifted));
    }

    #[test]
    fn penetration_partitions_over_mask(
        probs in proptest::collection::vec(0.0..1.0f64, 16),
        mask in proptest::collection::vec(0u8..2, 16)
    ) {
        let total: f64 = probs.iter().sum();
        let grid = Grid::from_vec(4, 4, probs.iter().map(|p| p / total).collect());
        let seq = HeatmapSequence { maps: vec![grid], agent_id: 0 };
        let d = Grid::from_vec(4, 4, mask.clone());
        let inv = Grid::from_vec(4, 4, mask.iter().map(|m| 1 - m).collect());
        let all = Grid::filled(4, 4, 1u8);
        let eps = eps_b(16);
        for mode in [Threshold::Hard, Threshold::Soft] {
            let a = penetration(&seq, &d, eps, mode).unwrap();
            let b = penetration(&seq, &inv, eps, mode).unwrap();
            let c = penetration(&seq, &all, eps, mode).unwrap();
            prop_assert!((a + b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn range_penalty_is_symmetric_in_bounds(a in -10.0..10.0f64, x in -10.0..10.0f64, b in -10.0..10.0f64) {
        prop_assert_eq!(range_penalty(a, x, b), range_penalty(b, x, a));
        prop_assert!(range_penalty(a, x, b) >= 0.0);
    }

    #[test]
    fn min_ade_never_grows_with_more_samples(
        samples in proptest::collection::vec(traj(5), 1..6),
        extra in traj(5),
        truth in traj(5),
        h in 1usize..=5
    ) {
        let (before, _) = min_ade_over_samples(&samples, &truth, h).unwrap();
        let mut more = samples.clone();
        more.push(extra);
        let (after, i) = min_ade_over_samples(&more, &truth, h).unwrap();
        prop_assert!(after <= before);
        prop_assert_eq!(after, ade(&more[i], &truth, h).unwrap());
        for s in &samples {
            prop_assert!(before <= ade(s, &truth, h).unwrap());
        }
    }

    #[test]
    fn split_depends_only_on_seed(seeds in proptest::collection::vec(any::<u64>(), 1..50)) {
        let held: Vec<u64> = seeds.iter().copied().filter(|s| is_held_out(*s)).collect();
        let mut rev = seeds.clone();
        rev.reverse();
        let mut held_rev: Vec<u64> = rev.into_iter().filter(|s| is_held_out(*s)).collect();
        held_rev.reverse();
        prop_assert_eq!(held, held_rev);
    }

    #[test]
    fn apportion_sums_to_sample_count(raw in proptest::collection::vec(0.0..1.0f64, 1..26), s in 1usize..60) {
        let total: f64 = raw.iter().sum::<f64>() + 1e-3;
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let counts = apportion(&probs, s);
        prop_assert_eq!(counts.iter().sum::<usize>(), s);
    }

    #[test]
    fn reparameterization_is_affine(
        mu in proptest::collection::vec(-3.0..3.0f64, 4),
        lv in proptest::collection::vec(-4.0..4.0f64, 4),
        n1 in proptest::collection::vec(-3.0..3.0f64, 4),
        n2 in proptest::collection::vec(-3.0..3.0f64, 4),
        t in 0.0..1.0f64
    ) {
        let p = PosteriorParams { mu: mu.clone(), logvar: lv.clone() };
        let mix: Vec<f64> = n1.iter().zip(&n2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let z1 = sample_posterior(&p, &n1).unwrap().z;
        let z2 = sample_posterior(&p, &n2).unwrap().z;
        let zm = sample_posterior(&p, &mix).unwrap().z;
        for k in 0..4 {
            prop_assert!((zm[k] - (t * z1[k] + (1.0 - t) * z2[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn config_echo_round_trips(epochs in 0usize..100, seed in any::<u64>(), lr in 1e-5..1e-1f64, np in any::<bool>()) {
        let mut c = RunConfig::test_dims();
        c.epochs = epochs;
        c.seed = seed;
        c.lr = lr;
        c.no_penalty = np;
        prop_assert_eq!(RunConfig::from_text(&c.echo()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn intention_probs_form_a_distribution(f in proptest::collection::vec(-50.0..50.0f64, 16), seed in 0u64..1000) {
        let m = Model::init(ModelConfig::test_dims(20, 3, 4, 5), seed).unwrap();
        let d = estimate_intention(&m, &f).unwrap();
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(d.probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
