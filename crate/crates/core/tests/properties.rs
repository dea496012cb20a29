use isobound::banach_stone::{self, RecoveredIsometry};
use isobound::bounds;
use isobound::keps::{self, PiecewiseLinear};
use isobound::perturb::{self, PerturbationFunction};
use isobound::spaces::{self, MapKind, MapSpec, PhiIsometry, SpacePoint};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn any_phi() -> impl Strategy<Value = PerturbationFunction> {
    prop_oneof![
        Just(PerturbationFunction::Identity),
        (1.0..1.5f64, 0.0..5.0f64).prop_map(|(m, l)| PerturbationFunction::affine(m, l).unwrap()),
        (0.0..0.95f64, 0.01..3.0f64).prop_map(|(a, c)| PerturbationFunction::additive_power(a, c).unwrap()),
    ]
}

fn expanding_phi() -> impl Strategy<Value = PerturbationFunction> {
    prop_oneof![
        (1.0..1.3f64, 0.01..5.0f64).prop_map(|(m, l)| PerturbationFunction::affine(m, l).unwrap()),
        (0.0..0.95f64, 0.05..3.0f64).prop_map(|(a, c)| PerturbationFunction::additive_power(a, c).unwrap()),
        (0.1..2.0f64, prop::collection::vec((0.5..4.0f64, 1.0..2.0f64), 1..5)).prop_map(|(y0, steps)| {
            let mut knots = vec![(0.0, y0)];
            for (dx, slope) in steps {
                let (x, y) = knots[knots.len() - 1];
                knots.push((x + dx, y + slope * dx));
            }
            PerturbationFunction::tabulated(knots).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iterate_composes(phi in any_phi(), a in 0u128..40, b in 0u128..40, t in 0.0..50.0f64) {
        let whole = perturb::iterate(&phi, a + b, t).unwrap();
        let split = perturb::iterate(&phi, a, perturb::iterate(&phi, b, t).unwrap()).unwrap();
        prop_assert!(rel_close(whole, split, 1e-9), "{whole} vs {split}");
    }

    #[test]
    fn iterate_is_monotone(phi in any_phi(), m in 0u128..30, s in 0.0..20.0f64, ds in 0.0..20.0f64) {
        prop_assert!(perturb::iterate(&phi, m, s).unwrap() <= perturb::iterate(&phi, m, s + ds).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn affine_closed_form_matches_loop(m in 1.0..1.2f64, l in 0.0..3.0f64, n in 0u128..200, t in 0.0..10.0f64) {
        let phi = PerturbationFunction::affine(m, l).unwrap();
        let looped = (0..n).fold(t, |x, _| m * x + l);
        prop_assert!(rel_close(perturb::iterate(&phi, n, t).unwrap(), looped, 1e-9));
    }

    #[test]
    fn builtin_kinds_halve(phi in any_phi()) {
        let check = perturb::check_halving(&phi, &perturb::default_halving_grid());
        prop_assert!(check.holds, "{:?}", check.first_violation);
    }

    #[test]
    fn integral_never_exceeds_n(phi in expanding_phi(), t in 0.1..10.0f64, n in 1u64..20) {
        let r = perturb::integral_bound_check(&phi, t, n).unwrap();
        prop_assert!(r.pass && r.integral_value <= n as f64 + 1e-6, "{}", r.integral_value);
    }

    #[test]
    fn constant_excess_telescopes(l in 0.05..10.0f64, t in 0.1..10.0f64, n in 1u64..30) {
        let phi = PerturbationFunction::affine(1.0, l).unwrap();
        let r = perturb::integral_bound_check(&phi, t, n).unwrap();
        prop_assert!((r.integral_value - n as f64).abs() <= 1e-6);
    }

    #[test]
    fn optimized_bound_sound_and_monotone(phi in any_phi(), d in 1e-3..1e7f64, grow in 1.0..10.0f64) {
        let r = bounds::optimize_bound(&phi, d, bounds::DEFAULT_N_MAX);
        prop_assert!(r.bound >= 0.0);
        prop_assert!(r.bound <= bounds::trivial_bound(&phi, d) * (1.0 + 1e-12));
        let bigger = bounds::optimize_bound(&phi, d * grow, bounds::DEFAULT_N_MAX).bound;
        prop_assert!(r.bound <= bigger * (1.0 + 1e-9), "{} > {}", r.bound, bigger);
    }

    #[test]
    fn hyers_ulam_majorant_dominates(l in 0.0..20.0f64, d in 1.0..1e9f64) {
        let phi = PerturbationFunction::affine(1.0, l).unwrap();
        let b = bounds::optimize_bound(&phi, d, bounds::DEFAULT_N_MAX).bound;
        prop_assert!(b <= bounds::hyers_ulam_majorant(l, d) * (1.0 + 1e-12));
    }

    #[test]
    fn bilip_reference_dominates(eps in 0.001..0.199f64, l in 0.0..10.0f64, d in 1.0..1e6f64) {
        let phi = PerturbationFunction::affine(1.0 + eps, l).unwrap();
        let b = bounds::optimize_bound(&phi, d, bounds::DEFAULT_N_MAX).bound;
        prop_assert!(b <= bounds::bilip_bound(eps, l, d) * (1.0 + 1e-12));
        let k = bounds::dyadic_k_for_eps(eps).unwrap();
        prop_assert!(bounds::exp_majorant(eps, l, d, k).unwrap() >= b * (1.0 - 1e-12));
    }

    #[test]
    fn vestfrid_deviation_closed_form(eps in 0.001..1.0f64, x in 0.01..1e4f64) {
        let map = PhiIsometry::new(MapSpec::vestfrid(eps)).unwrap();
        let dev = spaces::midpoint_deviation(&map, &SpacePoint::sup(vec![-x]), &SpacePoint::sup(vec![x])).unwrap();
        let exact = x * ((1.0 + eps) - 1.0 / (1.0 + eps)) / 2.0;
        prop_assert!((dev - exact).abs() <= 1e-12 * x.max(1.0));
        prop_assert!((dev / (2.0 * eps * x) - keps::vestfrid_ratio(eps)).abs() <= 1e-9);
    }

    #[test]
    fn noisy_maps_invert(seed in any::<u64>(), dim in 1usize..6, amp in 0.0..0.9f64,
                         coords in prop::collection::vec(-100.0..100.0f64, 6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sigma, lambda) = spaces::random_signed_permutation(dim, &mut rng);
        let map = PhiIsometry::new(MapSpec::new(MapKind::NoisyIsometry { sigma, lambda, amplitude: amp, seed })).unwrap();
        let p = SpacePoint::sup(coords[..dim].to_vec());
        let back = map.invert(&map.apply(&p).unwrap()).unwrap();
        prop_assert!(p.dist(&back) <= 1e-9 * (1.0 + p.dist(&SpacePoint::sup(vec![0.0; dim]))));
    }

    #[test]
    fn recovery_round_trip(seed in any::<u64>(), n in 2usize..40, top in 0.0..0.03f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = (0..n).map(|i| top * ((i * 7 + 3) % 11) as f64 / 10.0).collect();
        let (sigma, lambda) = spaces::random_signed_permutation(n, &mut rng);
        let t = banach_stone::vestfrid_permutation_oracle(eps, sigma.clone(), lambda.clone()).unwrap();
        prop_assert!(t.claimed_m <= 1.03);
        let (iso, diag) = banach_stone::recover(&t).unwrap();
        prop_assert_eq!(iso, RecoveredIsometry { sigma, lambda });
        prop_assert_eq!(diag.candidate_sets.iter().map(Vec::len).max(), Some(1));
    }

    #[test]
    fn condition_margin_identity(m in 1.0..1.1f64) {
        prop_assert!((banach_stone::condition_ii_margin(m) - (16.0 - 15.0 * m * m)).abs() <= 1e-12);
        prop_assert_eq!(banach_stone::condition_ii_margin(m) > 0.0, m < banach_stone::m0());
    }

    #[test]
    fn keps_lattice_dominates_samples(eps in 0.01..0.19f64,
                                      gaps in prop::collection::vec(0.1..3.0f64, 3),
                                      u in prop::collection::vec(-1.0..1.0f64, 5),
                                      pairs in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 200)) {
        let mut bps = vec![0.0];
        for g in &gaps {
            bps.push(bps[bps.len() - 1] + g);
        }
        let c = (1.0 + eps).ln();
        let slopes: Vec<f64> = u.iter().map(|v| (v * c).exp().clamp(1.0 / (1.0 + eps), 1.0 + eps)).collect();
        let map = PiecewiseLinear::new(bps, slopes).unwrap();
        prop_assert!(map.slopes_within(eps));
        let (_, sup) = keps::lattice_sup(&map, eps);
        prop_assert!(sup <= keps::COR33_BOUND);
        for (a, b) in pairs {
            prop_assert!(keps::pair_ratio(&map, eps, a, b) <= sup + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn keps_search_brackets(eps in 0.01..0.19f64, knots in 1usize..6, seed in any::<u64>()) {
        let inst = keps::search_lower_bound(eps, knots, 400, seed).unwrap();
        prop_assert!(inst.ratio >= keps::vestfrid_ratio(eps) - 1e-9);
        prop_assert!(inst.ratio <= 3.0 + 1e-9);
        prop_assert!(inst.map_params.slopes_within(eps));
        let (a, b) = inst.best_pair;
        prop_assert!((keps::pair_ratio(&inst.map_params, eps, a, b) - inst.ratio).abs() <= 1e-10);
        prop_assert_eq!(keps::search_lower_bound(eps, knots, 400, seed).unwrap(), inst);
    }
}
