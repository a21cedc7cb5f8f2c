use dpsgd_core::accountant::{compose_gaussian, gaussian_tradeoff};
use dpsgd_core::attack::{
    empirical_tradeoff, opposite_gradient_round, single_round_mech, verify_domination,
    ClippedSumMechanism, EmpiricalCurve,
};
use dpsgd_core::clipping::{ClipMode, ClipScope, ClipSpec, ConstantStrategy};
use dpsgd_core::engine::{InitScheme, NoiseConvention, TrainConfig};
use dpsgd_core::nn::LayeredVector;
use dpsgd_core::sampling::SamplingMode;

const TRIALS: usize = 20_000;

fn scalars(xs: &[f64]) -> Vec<LayeredVector> {
    xs.iter()
        .map(|x| LayeredVector::from_layers([vec![*x]]))
        .collect()
}

fn scalar_curve(sigma: f64, seed: u64) -> EmpiricalCurve {
    let mech = ClippedSumMechanism::scalar(1.0, sigma);
    empirical_tradeoff(
        &mech,
        &scalars(&[3.0, -5.0]),
        &scalars(&[3.0, 5.0]),
        TRIALS,
        seed,
    )
    .unwrap()
}

fn round_config(scope: ClipScope, master_c: f64, sigma: f64, m: usize) -> TrainConfig {
    TrainConfig {
        eta0: 0.1,
        eta_decay: 1.0,
        sigma,
        epochs: 1,
        batch_size: m,
        clip: ClipSpec {
            mode: ClipMode::Individual,
            scope,
            master_c,
            c_decay: 1.0,
            strategy: ConstantStrategy::Fixed,
            groups: None,
        },
        sampling: SamplingMode::Shuffle,
        ss_rounds: None,
        noise: NoiseConvention::General,
        init: InitScheme::Zeros,
        seed: 0,
    }
}

#[test]
fn scalar_mechanism_traces_its_gaussian_curve() {
    let emp = scalar_curve(0.5, 1);
    assert!(!emp.degenerate);
    let g2 = gaussian_tradeoff(2.0).unwrap();
    let d = emp.sup_distance(&g2);
    assert!(d <= 0.03, "sup distance {d}");
    assert!(verify_domination(&emp, &g2, None).passed);
    for w in emp.alpha_hat.windows(2) {
        assert!(w[0] <= w[1]);
    }
}

#[test]
fn stronger_claims_fail_and_weaker_claims_hold() {
    let emp = scalar_curve(0.5, 2);
    assert!(!verify_domination(&emp, &gaussian_tradeoff(1.0).unwrap(), None).passed);
    // G_4 lies below G_2
    assert!(verify_domination(&emp, &gaussian_tradeoff(4.0).unwrap(), None).passed);
}

#[test]
fn more_noise_raises_the_curve() {
    let grid = 200;
    let curves: Vec<Vec<f64>> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&s| scalar_curve(s, 3).lower_envelope(grid))
        .collect();
    let slack = 2.0 * dpsgd_core::attack::dkw_half_width(TRIALS, dpsgd_core::attack::DKW_GAMMA);
    for pair in curves.windows(2) {
        for (lo, hi) in pair[0].iter().zip(&pair[1]) {
            assert!(hi + slack >= *lo, "{hi} vs {lo}");
        }
    }
}

#[test]
fn raw_pairs_stay_below_the_diagonal() {
    for sigma in [0.5, 1.0, 2.0] {
        let emp = scalar_curve(sigma, 4);
        for (a, b) in emp.alpha_hat.iter().zip(&emp.beta_hat) {
            assert!(a + b <= 1.0 + 2.0 * emp.half_width, "{a} + {b}");
        }
    }
}

#[test]
fn worst_case_round_matches_one_over_sigma() {
    let sigma = 1.0;
    let (model, w, round, replacement) = opposite_gradient_round(4, 10.0).unwrap();
    let mech = single_round_mech(
        &round_config(ClipScope::Full, 1.0, sigma, 4),
        &model,
        &w,
        2,
        None,
    )
    .unwrap();
    let (d, d_prime) = mech.neighbors(&round, replacement).unwrap();
    let emp = empirical_tradeoff(&mech, &d, &d_prime, TRIALS, 5).unwrap();
    let theory = gaussian_tradeoff(1.0 / sigma).unwrap();
    assert!(
        emp.sup_distance(&theory) <= 0.03,
        "{}",
        emp.sup_distance(&theory)
    );
    assert!(verify_domination(&emp, &theory, None).passed);
}

#[test]
fn layerwise_round_with_two_groups_matches_composition() {
    let sigma = 1.0;
    let (model, w, round, replacement) = opposite_gradient_round(3, 10.0).unwrap();
    let cfg = round_config(ClipScope::Layerwise, 0.5, sigma, 3);
    let mech = single_round_mech(&cfg, &model, &w, 0, None).unwrap();
    let (d, d_prime) = mech.neighbors(&round, replacement).unwrap();
    let emp = empirical_tradeoff(&mech, &d, &d_prime, TRIALS, 6).unwrap();
    let mu = compose_gaussian(&[1.0 / sigma, 1.0 / sigma]).unwrap();
    let theory = gaussian_tradeoff(mu).unwrap();
    assert!(
        emp.sup_distance(&theory) <= 0.03,
        "{}",
        emp.sup_distance(&theory)
    );
    assert!(verify_domination(&emp, &theory, None).passed);
}

#[test]
fn identical_rounds_are_indistinguishable() {
    let (model, w, round, _) = opposite_gradient_round(2, 10.0).unwrap();
    let mech = single_round_mech(
        &round_config(ClipScope::Full, 1.0, 1.0, 2),
        &model,
        &w,
        0,
        None,
    )
    .unwrap();
    let emp = empirical_tradeoff(&mech, &round, &round, TRIALS, 7).unwrap();
    assert!(emp.degenerate);
    assert!(emp.sup_distance(&gaussian_tradeoff(0.0).unwrap()) <= 0.03);
}
