use dpsgd_core::accountant::normal::{phi, phi_inv};
use dpsgd_core::accountant::{
    advanced_composition, basic_composition, clt_h, clt_mu, compose_gaussian, curve_compare,
    framework_guarantee, gaussian_mechanism_sigma, gaussian_tradeoff, gaussian_tradeoff_on,
    group_privacy_epsdelta, group_privacy_gdp, layerwise_effective_sigma, privacy_loss, EpsDelta,
    TradeoffCurve,
};
use proptest::prelude::*;

#[test]
fn gaussian_curve_reference_points() {
    let g0 = gaussian_tradeoff(0.0).unwrap();
    for (a, f) in g0.alphas().zip(g0.values()) {
        assert!((f - (1.0 - a)).abs() < 1e-12);
    }
    for mu in [0.3, 1.0, 2.5] {
        assert!((gaussian_tradeoff(mu).unwrap().eval(0.5) - phi(-mu)).abs() < 1e-12);
    }
    // Φ(Φ⁻¹(0.95) − 1), Φ⁻¹(0.95) = 1.6448536269514722
    assert!((gaussian_tradeoff(1.0).unwrap().eval(0.05) - 0.740_488_977_158_555_8).abs() < 1e-10);
    assert!(gaussian_tradeoff(-0.1).is_err());
}

#[test]
fn composition_examples() {
    assert_eq!(compose_gaussian(&[0.7]).unwrap(), 0.7);
    assert_eq!(compose_gaussian(&[3.0, 4.0]).unwrap(), 5.0);
    let sigma = 2.0;
    let mu = compose_gaussian(&vec![1.0 / sigma; 62]).unwrap();
    assert!((mu - 62f64.sqrt() / sigma).abs() < 1e-12);
}

#[test]
fn layerwise_and_group_examples() {
    assert_eq!(layerwise_effective_sigma(2.0, 4).unwrap(), 1.0);
    assert_eq!(layerwise_effective_sigma(1.7, 1).unwrap(), 1.7);
    assert!((layerwise_effective_sigma(2.0, 62).unwrap() - 2.0 / 62f64.sqrt()).abs() < 1e-15);
    assert_eq!(group_privacy_gdp(0.8, 1).unwrap(), 0.8);
    assert_eq!(group_privacy_gdp(0.5, 2).unwrap(), 1.0);

    let (g, e, sigma) = (3usize, 7usize, 1.5);
    let per_epoch = group_privacy_gdp(1.0 / sigma, g).unwrap();
    let composed = compose_gaussian(&vec![per_epoch; e]).unwrap();
    let framework = framework_guarantee(1, e, sigma, 1, false).unwrap().mu;
    // group privacy scales linearly in g while the framework bound carries √g
    assert!((composed - g as f64 * framework).abs() < 1e-12);
    assert!(
        (framework_guarantee(g, e, sigma, 1, false).unwrap().mu - (g as f64).sqrt() * framework)
            .abs()
            < 1e-12
    );
}

#[test]
fn framework_examples() {
    assert_eq!(framework_guarantee(1, 1, 1.0, 1, false).unwrap().mu, 1.0);
    assert!(
        (framework_guarantee(1, 50, 2.0, 1, false).unwrap().mu - 50f64.sqrt() / 2.0).abs() < 1e-12
    );
    assert!(
        (framework_guarantee(1, 50, 2.0, 62, true).unwrap().mu - 3100f64.sqrt() / 2.0).abs()
            < 1e-12
    );
    let off = framework_guarantee(1, 5, 0.0, 1, false).unwrap();
    assert!(off.mu.is_infinite() && off.no_privacy);
}

#[test]
fn clt_examples() {
    let grid: Vec<f64> = (0..=95).map(|i| 0.5 + 0.1 * i as f64).collect();
    for w in grid.windows(2) {
        assert!(clt_h(w[1]).unwrap() < clt_h(w[0]).unwrap());
    }
    let ratio = clt_h(100.0).unwrap() / clt_h(50.0).unwrap();
    assert!((ratio - 0.5).abs() <= 0.025, "ratio {ratio}");
    let mu = clt_mu(54_000, 64, 50, 2.5 / 8f64.sqrt()).unwrap();
    assert!((mu - 0.52).abs() <= 0.02, "mu {mu}");
    assert!(clt_h(0.02).is_err());
}

#[test]
fn epsdelta_examples() {
    let c = (2.0 * 25f64.ln()).sqrt();
    assert!((gaussian_mechanism_sigma(0.5, 0.05, 1.0).unwrap() - c / 0.5).abs() < 1e-12);
    assert_eq!(gaussian_mechanism_sigma(0.5, 0.05, 0.0).unwrap(), 0.0);
    assert_eq!(
        gaussian_mechanism_sigma(0.3, 1e-5, 2.0).unwrap(),
        2.0 * gaussian_mechanism_sigma(0.3, 1e-5, 1.0).unwrap()
    );
    assert!(gaussian_mechanism_sigma(1.0, 1e-5, 1.0).is_err());

    assert_eq!(
        basic_composition(&[]),
        EpsDelta {
            epsilon: 0.0,
            delta: 0.0
        }
    );
    let one = EpsDelta::new(1.0, 0.0).unwrap();
    assert_eq!(
        basic_composition(&[one, one]),
        EpsDelta {
            epsilon: 2.0,
            delta: 0.0
        }
    );

    let want = 0.1 * (200.0 * 1e5f64.ln()).sqrt() + 100.0 * 0.1 * (0.1f64.exp() - 1.0);
    let adv = advanced_composition(0.1, 0.0, 100, 1e-5).unwrap();
    assert!((adv.epsilon - want).abs() <= 1e-12 * want);
    assert!((adv.delta - 1e-5).abs() < 1e-20);
    assert_eq!(
        advanced_composition(0.0, 0.0, 7, 1e-3).unwrap().epsilon,
        0.0
    );

    let grp = group_privacy_epsdelta(0.5, 1e-6, 3).unwrap();
    assert!((grp.epsilon - 1.5).abs() < 1e-15);
    assert!((grp.delta - 3.0 * 2f64.exp() * 1e-6).abs() < 1e-18);

    assert_eq!(privacy_loss(0.2, 0.2).unwrap(), 0.0);
    assert!((privacy_loss(std::f64::consts::E * 0.1, 0.1).unwrap() - 1.0).abs() < 1e-15);
    assert!(privacy_loss(0.0, 0.5).is_err());
}

#[test]
fn curve_comparison_examples() {
    let g1 = gaussian_tradeoff(1.0).unwrap();
    assert_eq!(curve_compare(&g1, &g1, 0.0).unwrap().sup_distance, 0.0);
    let g0 = gaussian_tradeoff(0.0).unwrap();
    let cmp = curve_compare(&g0, &g1, 0.0).unwrap();
    let scan = g0
        .alphas()
        .map(|a| phi(phi_inv(1.0 - a)) - phi(phi_inv(1.0 - a) - 1.0))
        .fold(0.0, f64::max);
    assert!((cmp.sup_distance - scan).abs() < 1e-12);
    assert!(cmp.argmax_alpha > 0.2 && cmp.argmax_alpha < 0.5);
    let perfect = TradeoffCurve::perfect(1000).unwrap();
    for mu in [0.1, 1.0, 4.0] {
        assert!(
            curve_compare(&perfect, &gaussian_tradeoff(mu).unwrap(), 0.0)
                .unwrap()
                .dominates
        );
    }
}

proptest! {
    #[test]
    fn gaussian_curves_are_tradeoff_functions(mu in 0.0f64..8.0, grid in 2usize..400) {
        prop_assert!(gaussian_tradeoff_on(mu, grid).unwrap().check_invariants().is_ok());
    }

    #[test]
    fn gaussian_curves_decrease_in_mu(a in 0.0f64..6.0, b in 0.0f64..6.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (f, g) = (gaussian_tradeoff(lo).unwrap(), gaussian_tradeoff(hi).unwrap());
        for (x, y) in f.values().iter().zip(g.values()) {
            prop_assert!(x >= y);
        }
    }

    #[test]
    fn composition_is_order_free(mut mus in prop::collection::vec(0.0f64..10.0, 1..12), rot in 0usize..12) {
        let base = compose_gaussian(&mus).unwrap();
        let k = rot % mus.len();
        mus.rotate_left(k);
        mus.reverse();
        prop_assert!((compose_gaussian(&mus).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn composition_is_associative(a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0) {
        let nested = compose_gaussian(&[compose_gaussian(&[a, b]).unwrap(), c]).unwrap();
        prop_assert!((nested - compose_gaussian(&[a, b, c]).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn layerwise_guarantee_is_full_guarantee_at_reduced_sigma(
        g in 1usize..5, e in 1usize..100, l in 1usize..64, sigma in 0.1f64..10.0,
    ) {
        let lw = framework_guarantee(g, e, sigma, l, true).unwrap().mu;
        let full = framework_guarantee(g, e, layerwise_effective_sigma(sigma, l).unwrap(), l, false).unwrap().mu;
        prop_assert!((lw - full).abs() <= 1e-12 * lw);
    }

    #[test]
    fn normal_quantile_round_trips(x in -6.0f64..5.0) {
        prop_assert!((phi_inv(phi(x)) - x).abs() < 1e-9);
    }

    #[test]
    fn upper_tail_round_trips_through_symmetry(x in 0.0f64..6.0) {
        // Φ(x) near 1 keeps too few tail digits in f64 to invert directly
        prop_assert!((-phi_inv(phi(-x)) - x).abs() < 1e-9);
    }
}
