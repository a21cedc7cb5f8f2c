use dpsgd_core::clipping::{
    aggregate_clipped, alc_constants, clip_full, clip_layerwise, estimate_group_norms,
    fgc_with_multipliers, unscale, zhang_constants, ClipRule, LayerGroups, MultiplierSpec,
    CLIP_SLACK,
};
use dpsgd_core::data::synth_blobs;
use dpsgd_core::nn::{Activation, LayeredVector, ModelSpec};
use proptest::prelude::*;

fn arb_vector() -> impl Strategy<Value = LayeredVector> {
    prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 1..6), 1..5)
        .prop_map(LayeredVector::from_layers)
}

fn close(a: &LayeredVector, b: &LayeredVector, rel: f64) -> bool {
    let scale = a.norm().max(b.norm()).max(1e-300);
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .all(|(x, y)| (x - y).abs() <= rel * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn contraction(v in arb_vector(), c in 1e-3f64..50.0) {
        prop_assert!(clip_full(&v, c).unwrap().norm() <= c * (1.0 + CLIP_SLACK));
    }

    #[test]
    fn idempotence(v in arb_vector(), c in 1e-3f64..50.0) {
        let once = clip_full(&v, c).unwrap();
        prop_assert_eq!(clip_full(&once, c).unwrap(), once);
    }

    #[test]
    fn direction_preserved(v in arb_vector(), c in 1e-3f64..50.0) {
        let out = clip_full(&v, c).unwrap();
        let lambda = (c / v.norm()).min(1.0);
        for (o, x) in out.as_slice().iter().zip(v.as_slice()) {
            prop_assert!((o - lambda * x).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn homogeneity(v in arb_vector(), c in 1e-3f64..50.0, alpha in 1e-3f64..1e3) {
        let mut scaled = v.clone();
        scaled.scale(alpha);
        let mut want = clip_full(&v, c).unwrap();
        want.scale(alpha);
        prop_assert!(close(&clip_full(&scaled, alpha * c).unwrap(), &want, 1e-12));
    }

    #[test]
    fn neighbouring_aggregates_within_twice_c(
        grads in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..6),
        replacement in prop::collection::vec(-10.0f64..10.0, 3),
        pos in any::<prop::sample::Index>(),
        c in 0.01f64..5.0,
    ) {
        let a: Vec<LayeredVector> = grads.iter().map(|g| LayeredVector::from_layers([g.clone()])).collect();
        let mut b = a.clone();
        b[pos.index(a.len())] = LayeredVector::from_layers([replacement]);
        let rule = ClipRule::Full { c };
        let mut diff = aggregate_clipped(&a, &rule).unwrap();
        diff.axpy(-1.0, &aggregate_clipped(&b, &rule).unwrap()).unwrap();
        prop_assert!(diff.norm() <= 2.0 * c * (1.0 + 1e-12));
    }

    #[test]
    fn layerwise_is_per_layer_full_clip(v in arb_vector(), seed in 0.01f64..10.0) {
        let constants: Vec<f64> = (0..v.num_layers()).map(|h| seed * (h + 1) as f64).collect();
        let out = clip_layerwise(&v, &constants).unwrap();
        for h in 0..v.num_layers() {
            let single = LayeredVector::from_layers([v.layer(h).to_vec()]);
            let want = clip_full(&single, constants[h]).unwrap();
            prop_assert_eq!(out.layer(h), want.as_slice());
        }
    }

    #[test]
    fn unit_multipliers_equal_full_clip(v in arb_vector(), c in 1e-3f64..50.0) {
        let spec = MultiplierSpec::new(vec![1.0; v.num_layers()], c).unwrap();
        prop_assert_eq!(fgc_with_multipliers(&v, &spec).unwrap(), clip_full(&v, c).unwrap());
    }
}

#[test]
fn examples() {
    let v = LayeredVector::from_layers([vec![3.0, 4.0]]);
    let out = clip_full(&v, 1.0).unwrap();
    assert!((out.as_slice()[0] - 0.6).abs() < 1e-15 && (out.as_slice()[1] - 0.8).abs() < 1e-15);
    let z = LayeredVector::from_layers([vec![0.0, 0.0]]);
    assert_eq!(clip_full(&z, 1.0).unwrap(), z);

    let two = LayeredVector::from_layers([vec![3.0, 4.0], vec![1.0]]);
    let out = clip_layerwise(&two, &[1.0, 2.0]).unwrap();
    assert!((out.layer_norms()[0] - 1.0).abs() < 1e-15);
    assert_eq!(out.layer(1), &[1.0]);
    assert_eq!(clip_layerwise(&two, &[1e300, 1e300]).unwrap(), two);

    let scalars: Vec<LayeredVector> = [2.0, -2.0, 0.5]
        .iter()
        .map(|x| LayeredVector::from_layers([vec![*x]]))
        .collect();
    let u = aggregate_clipped(&scalars, &ClipRule::Full { c: 1.0 }).unwrap();
    assert_eq!(u.as_slice(), &[0.5]);
    let opposite = [scalars[0].clone(), scalars[1].clone()];
    assert_eq!(
        aggregate_clipped(&opposite, &ClipRule::Full { c: 1.0 })
            .unwrap()
            .as_slice(),
        &[0.0]
    );
}

#[test]
fn unscale_recovers_unclipped_gradient() {
    let g = LayeredVector::from_layers([vec![0.25, -0.5], vec![0.125]]);
    let spec = MultiplierSpec::new(vec![4.0, 2.0], 1e6).unwrap();
    assert_eq!(
        unscale(&fgc_with_multipliers(&g, &spec).unwrap(), &spec).unwrap(),
        g
    );
    assert!(MultiplierSpec::new(vec![0.5, 1.0], 1.0).is_err());
}

#[test]
fn public_set_constants() {
    let data = synth_blobs(200, 6, 3, 3.0, 2).unwrap();
    let public = data.as_batch().unwrap();
    let model = ModelSpec::mlp(6, &[5], 3, Activation::Tanh, false).unwrap();
    let w = model.init(8);
    let c1 = alc_constants(&model, &w, &public, 0.3).unwrap();
    let c2 = alc_constants(&model, &w, &public, 0.6).unwrap();
    let max = c1.iter().copied().fold(0.0, f64::max);
    assert!((max - 0.3).abs() < 1e-15);
    for (a, b) in c1.iter().zip(&c2) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b);
    }
    let zhang = zhang_constants(&model, &w, &public).unwrap();
    let m = zhang.iter().copied().fold(0.0, f64::max);
    for (a, b) in alc_constants(&model, &w, &public, m)
        .unwrap()
        .iter()
        .zip(&zhang)
    {
        assert!((a - b).abs() <= 1e-12 * m);
    }
    for h in 0..zhang.len() {
        for k in 0..zhang.len() {
            assert!(
                (c1[h] / c1[k] - zhang[h] / zhang[k]).abs()
                    < 1e-12 * (zhang[h] / zhang[k]).max(1.0)
            );
        }
    }
}

#[test]
fn multiplier_factors_equalize_layer_norms() {
    let data = synth_blobs(400, 6, 3, 3.0, 5).unwrap();
    let public = data.as_batch().unwrap();
    let model = ModelSpec::mlp(6, &[5], 3, Activation::Tanh, false).unwrap();
    let w = model.init(1);
    let layers = LayerGroups::identity(model.num_param_layers());
    let e = estimate_group_norms(&model, &w, &public, &layers).unwrap();
    let big_m = e.iter().copied().fold(0.0, f64::max);
    let spec = MultiplierSpec::from_estimates(&e, 1e9).unwrap();
    // mean over D_pub of the scaled per-sample layer norms
    let mut scaled = vec![0.0; e.len()];
    for i in 0..public.len() {
        let g = dpsgd_core::nn::grad_batch(&model, &w, &public.sample(i)).unwrap();
        let s = fgc_with_multipliers(&g, &spec).unwrap();
        for (acc, n) in scaled.iter_mut().zip(s.layer_norms()) {
            *acc += n / public.len() as f64;
        }
    }
    for n in scaled {
        assert!((n - big_m).abs() <= 0.1 * big_m, "{n} vs {big_m}");
    }
}
