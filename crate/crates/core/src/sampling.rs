//! Per-epoch batch plans: shuffling (disjoint permutation cuts) and
//! subsampling (with replacement), each batch split into `m` micro-batches
//! of `s` indices; plus the random public/train split.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// SH: a fresh permutation per epoch, cut into consecutive batches.
    Shuffle,
    /// SS: every batch drawn uniformly with replacement.
    Subsample,
}

/// Index assignment of one epoch. `rounds[b][h]` is micro-batch `S_{b,h}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub epoch: u64,
    pub micro_batch_size: usize,
    pub micro_batches: usize,
    pub rounds: Vec<Vec<Vec<usize>>>,
    /// The epoch's permutation under shuffling.
    pub permutation: Option<Vec<usize>>,
}

impl BatchPlan {
    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    /// All indices of batch `S_b`, micro-batches concatenated in order.
    pub fn batch_indices(&self, b: usize) -> Vec<usize> {
        self.rounds[b].concat()
    }
}

fn cut(indices: &[usize], s: usize, m: usize) -> Vec<Vec<Vec<usize>>> {
    indices
        .chunks_exact(s * m)
        .map(|batch| batch.chunks_exact(s).map(<[usize]>::to_vec).collect())
        .collect()
}

fn check_sizes(s: usize, m: usize) -> Result<()> {
    if s == 0 || m == 0 {
        return Err(Error::config(
            "micro-batch size s and count m must be at least 1",
        ));
    }
    Ok(())
}

/// Random permutation of `0..n` cut into `⌊n/(sm)⌋` batches; the trailing
/// `n mod sm` indices are dropped.
pub fn shuffle_partition<R: Rng + ?Sized>(
    n: usize,
    s: usize,
    m: usize,
    rng: &mut R,
) -> Result<BatchPlan> {
    check_sizes(s, m)?;
    if n < s * m {
        return Err(Error::config(format!(
            "dataset of {n} samples is smaller than one batch (s*m = {})",
            s * m
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Ok(BatchPlan {
        epoch: 0,
        micro_batch_size: s,
        micro_batches: m,
        rounds: cut(&perm, s, m),
        permutation: Some(perm),
    })
}

/// `rounds` batches of `sm` indices each, drawn uniformly with replacement.
pub fn subsample<R: Rng + ?Sized>(
    n: usize,
    s: usize,
    m: usize,
    rounds: usize,
    rng: &mut R,
) -> Result<BatchPlan> {
    check_sizes(s, m)?;
    if n == 0 {
        return Err(Error::config("cannot subsample an empty dataset"));
    }
    let draws: Vec<usize> = (0..rounds * s * m)
        .map(|_| rng.random_range(0..n))
        .collect();
    Ok(BatchPlan {
        epoch: 0,
        micro_batch_size: s,
        micro_batches: m,
        rounds: cut(&draws, s, m),
        permutation: None,
    })
}

/// Plan for one epoch drawn from the `(seed, Sampling, epoch)` stream.
/// `ss_rounds` defaults to `⌊n/(sm)⌋`.
pub fn epoch_plan(
    mode: SamplingMode,
    n: usize,
    s: usize,
    m: usize,
    ss_rounds: Option<usize>,
    seed: u64,
    epoch: u64,
) -> Result<BatchPlan> {
    let mut rng = stream(seed, Purpose::Sampling, epoch);
    let mut plan = match mode {
        SamplingMode::Shuffle => shuffle_partition(n, s, m, &mut rng)?,
        SamplingMode::Subsample => {
            check_sizes(s, m)?;
            let rounds = ss_rounds.unwrap_or(n / (s * m));
            subsample(n, s, m, rounds, &mut rng)?
        }
    };
    plan.epoch = epoch;
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub public_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            public_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Random disjoint `(train, public)` split with `|public| = round(n * fraction)`.
/// Both index lists are returned in ascending order.
pub fn split_public(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.public_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::config(format!(
            "public_fraction must lie in (0, 1), got {f}"
        )));
    }
    let n_pub = (n as f64 * f).round() as usize;
    if n_pub == 0 || n_pub >= n {
        return Err(Error::config(format!(
            "public_fraction {f} of {n} samples leaves an empty part"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(spec.seed, Purpose::Split, 0));
    let mut public = perm[..n_pub].to_vec();
    let mut train = perm[n_pub..].to_vec();
    public.sort_unstable();
    train.sort_unstable();
    Ok((train, public))
}
