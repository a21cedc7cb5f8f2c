use std::collections::HashSet;

use dpsgd_core::rng::{stream, Purpose};
use dpsgd_core::sampling::{
    epoch_plan, shuffle_partition, split_public, subsample, SamplingMode, SplitSpec,
};
use proptest::prelude::*;

#[test]
fn first_batch_membership_is_uniform() {
    // χ² over N = 10 cells, 9 degrees of freedom, critical value at 0.001
    const CRITICAL: f64 = 27.877;
    let (n, s, m, seeds) = (10usize, 1usize, 3usize, 10_000u64);
    let mut counts = vec![0u64; n];
    for seed in 0..seeds {
        let plan = epoch_plan(SamplingMode::Shuffle, n, s, m, None, seed, 0).unwrap();
        for i in plan.batch_indices(0) {
            counts[i] += 1;
        }
    }
    let expected = seeds as f64 * (s * m) as f64 / n as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < CRITICAL, "chi2 = {chi2}, counts = {counts:?}");
}

#[test]
fn subsampled_batches_overlap_as_expected() {
    let (n, sm, seeds) = (1000usize, 100usize, 10_000u64);
    let mut total = 0usize;
    for seed in 0..seeds {
        let plan = subsample(n, sm, 1, 2, &mut stream(seed, Purpose::Sampling, 0)).unwrap();
        let first: HashSet<usize> = plan.batch_indices(0).into_iter().collect();
        total += plan
            .batch_indices(1)
            .iter()
            .filter(|i| first.contains(i))
            .count();
    }
    let mean = total as f64 / seeds as f64;
    assert!((mean - 10.0).abs() <= 1.0, "mean intersection {mean}");
}

#[test]
fn structural_examples() {
    let mut rng = stream(0, Purpose::Sampling, 0);
    let p = shuffle_partition(4, 1, 4, &mut rng).unwrap();
    assert_eq!(p.num_rounds(), 1);
    let mut all = p.batch_indices(0);
    all.sort();
    assert_eq!(all, vec![0, 1, 2, 3]);

    let p = shuffle_partition(10, 2, 2, &mut rng).unwrap();
    assert_eq!(p.num_rounds(), 2);
    let seen: HashSet<usize> = p.rounds.iter().flatten().flatten().copied().collect();
    assert_eq!(seen.len(), 8);

    let p = shuffle_partition(6, 3, 1, &mut rng).unwrap();
    assert_eq!(p.num_rounds(), 2);
    assert!(p.rounds.iter().all(|b| b.len() == 1 && b[0].len() == 3));

    let p = subsample(1, 3, 2, 4, &mut rng).unwrap();
    assert!(p.rounds.iter().flatten().flatten().all(|&i| i == 0));
    assert_eq!(subsample(5, 1, 1, 0, &mut rng).unwrap().num_rounds(), 0);
}

#[test]
fn public_split_sizes() {
    let spec = SplitSpec {
        public_fraction: 0.1,
        seed: 4,
    };
    let (train, public) = split_public(10, &spec).unwrap();
    assert_eq!((train.len(), public.len()), (9, 1));
    let (train, public) = split_public(50_000, &spec).unwrap();
    assert_eq!((train.len(), public.len()), (45_000, 5_000));
    assert_eq!(split_public(50_000, &spec).unwrap(), (train, public));
}

proptest! {
    #[test]
    fn shuffle_batches_are_disjoint_and_full(n in 1usize..200, s in 1usize..6, m in 1usize..6, seed: u64) {
        prop_assume!(n >= s * m);
        let p = epoch_plan(SamplingMode::Shuffle, n, s, m, None, seed, 3).unwrap();
        prop_assert_eq!(p.num_rounds(), n / (s * m));
        let mut seen = HashSet::new();
        for batch in &p.rounds {
            prop_assert_eq!(batch.len(), m);
            for micro in batch {
                prop_assert_eq!(micro.len(), s);
                for &i in micro {
                    prop_assert!(i < n && seen.insert(i));
                }
            }
        }
    }

    #[test]
    fn plans_are_pure(n in 1usize..100, seed: u64, epoch in 0u64..5) {
        let a = epoch_plan(SamplingMode::Subsample, n, 1, 1, Some(7), seed, epoch).unwrap();
        let b = epoch_plan(SamplingMode::Subsample, n, 1, 1, Some(7), seed, epoch).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn oversubscribed_subsampling_repeats(n in 1usize..20, seed: u64) {
        // rounds * sm = 3n draws from n indices must repeat by pigeonhole
        let p = subsample(n, n, 1, 3, &mut stream(seed, Purpose::Sampling, 0)).unwrap();
        let draws: Vec<usize> = p.rounds.iter().flatten().flatten().copied().collect();
        let distinct: HashSet<_> = draws.iter().collect();
        prop_assert!(distinct.len() < draws.len());
    }
}
