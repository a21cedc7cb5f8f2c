//! Hypothesis-testing adversary: run a mechanism many times on two
//! neighboring inputs, project the outputs onto the line through the two
//! empirical means, and read off Type I/II error pairs for every threshold.

use std::io::Write;
use std::num::NonZeroUsize;

use serde::Serialize;

use crate::accountant::TradeoffCurve;
use crate::clipping::{aggregate_clipped, ClipRule, LayerGroups};
use crate::engine::{epoch_rule, noise_draw, noised_round, NoiseSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Batch, LayerSpec, LayeredVector, ModelSpec};
use crate::rng::{stream, Purpose, StreamRng};

pub const MIN_TRIALS: usize = 1000;
/// Failure probability of the default confidence band.
pub const DKW_GAMMA: f64 = 0.01;
/// Separation below this many standard errors of the mean difference is
/// reported as degenerate.
const SEPARATION_Z: f64 = 4.0;

/// A randomized procedure whose randomness comes only from `rng`.
pub trait Mechanism: Sync {
    type Input: Sync + ?Sized;

    /// Declared L2 sensitivity.
    fn sensitivity(&self) -> f64;

    fn run(&self, input: &Self::Input, rng: &mut StreamRng) -> Result<Vec<f64>>;
}

/// A mechanism given by a closure.
pub struct FnMechanism<I: ?Sized, F> {
    pub sensitivity: f64,
    pub f: F,
    _input: std::marker::PhantomData<fn(&I)>,
}

impl<I: ?Sized, F> FnMechanism<I, F>
where
    F: Fn(&I, &mut StreamRng) -> Result<Vec<f64>> + Sync,
{
    pub fn new(sensitivity: f64, f: F) -> Self {
        Self {
            sensitivity,
            f,
            _input: std::marker::PhantomData,
        }
    }
}

impl<I: Sync + ?Sized, F> Mechanism for FnMechanism<I, F>
where
    F: Fn(&I, &mut StreamRng) -> Result<Vec<f64>> + Sync,
{
    type Input = I;

    fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    fn run(&self, input: &I, rng: &mut StreamRng) -> Result<Vec<f64>> {
        (self.f)(input, rng)
    }
}

/// `Σ_i [x_i]_C + N(0, std²)` over a list of contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedSumMechanism {
    pub rule: ClipRule,
    pub noise: NoiseSpec,
}

impl ClippedSumMechanism {
    /// One coordinate clipped to `[-c, c]`, noise std `2cσ`.
    pub fn scalar(c: f64, sigma: f64) -> Self {
        Self {
            rule: ClipRule::Full { c },
            noise: NoiseSpec {
                groups: LayerGroups::single(1),
                stds: vec![2.0 * c * sigma],
            },
        }
    }

    /// One group per constant, each clipped to `C_h` with noise std `2C_hσ`.
    pub fn layerwise(constants: &[f64], sigma: f64) -> Self {
        let groups = LayerGroups::identity(constants.len());
        Self {
            rule: ClipRule::Layerwise {
                groups: groups.clone(),
                constants: constants.to_vec(),
            },
            noise: NoiseSpec {
                groups,
                stds: constants.iter().map(|c| 2.0 * c * sigma).collect(),
            },
        }
    }
}

impl Mechanism for ClippedSumMechanism {
    type Input = [LayeredVector];

    fn sensitivity(&self) -> f64 {
        2.0 * self
            .rule
            .constants()
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt()
    }

    fn run(&self, input: &[LayeredVector], rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut u = aggregate_clipped(input, &self.rule)?;
        u.add_assign(&noise_draw(&self.noise, &u.sizes(), rng)?)?;
        Ok(u.into_vec())
    }
}

/// One engine round (clip, sum, noise) over a round's micro-batches. The
/// output is the noised clipped sum `Ū`.
#[derive(Debug, Clone)]
pub struct RoundMechanism {
    pub model: ModelSpec,
    pub weights: LayeredVector,
    pub rule: ClipRule,
    pub noise: NoiseSpec,
    /// Micro-batch in which the neighboring rounds differ.
    pub position: usize,
}

impl RoundMechanism {
    /// `(round, round with micro-batch `position` replaced)`.
    pub fn neighbors(
        &self,
        round: &[Batch],
        replacement: Batch,
    ) -> Result<(Vec<Batch>, Vec<Batch>)> {
        neighboring_pair(round, self.position, replacement)
    }
}

impl Mechanism for RoundMechanism {
    type Input = [Batch];

    fn sensitivity(&self) -> f64 {
        2.0 * self
            .rule
            .constants()
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt()
    }

    fn run(&self, input: &[Batch], rng: &mut StreamRng) -> Result<Vec<f64>> {
        let out = noised_round(
            &self.model,
            &self.weights,
            input,
            &self.rule,
            &self.noise,
            rng,
            None,
        )?;
        Ok(out.update.into_vec())
    }
}

/// Wraps the first-epoch round of `config` at `weights` as a mechanism.
pub fn single_round_mech(
    config: &TrainConfig,
    model: &ModelSpec,
    weights: &LayeredVector,
    position: usize,
    estimates: Option<&[f64]>,
) -> Result<RoundMechanism> {
    if !(config.sigma > 0.0) {
        return Err(Error::config(
            "sigma = 0 adds no noise; there is no privacy to test",
        ));
    }
    let (_, m) = config.micro_batching();
    if position >= m {
        return Err(Error::invalid(format!(
            "micro-batch position {position} out of range for m = {m}"
        )));
    }
    model.check_weights(weights)?;
    let layers = model.num_param_layers();
    let rule = epoch_rule(&config.clip, layers, config.clip.master_c, estimates)?;
    let noise = NoiseSpec::for_rule(&rule, config.sigma, config.noise, layers);
    Ok(RoundMechanism {
        model: model.clone(),
        weights: weights.clone(),
        rule,
        noise,
        position,
    })
}

/// A worst-case round: a zero-initialized linear two-class model whose
/// micro-batches each hold one sample `x = magnitude`; the replacement flips
/// the label, which negates every layer of the gradient. Returns the model,
/// weights, round and replacement micro-batch.
pub fn opposite_gradient_round(
    m: usize,
    magnitude: f64,
) -> Result<(ModelSpec, LayeredVector, Vec<Batch>, Batch)> {
    let model = ModelSpec::new(
        1,
        vec![LayerSpec::Dense {
            inputs: 1,
            outputs: 2,
        }],
    )?;
    let weights = model.zeros();
    let round = (0..m)
        .map(|_| Batch::new(vec![magnitude], 1, vec![0]))
        .collect::<Result<Vec<_>>>()?;
    let replacement = Batch::new(vec![magnitude], 1, vec![1])?;
    Ok((model, weights, round, replacement))
}

/// `data` and a copy with `data[index]` replaced.
pub fn neighboring_pair<T: Clone>(
    data: &[T],
    index: usize,
    replacement: T,
) -> Result<(Vec<T>, Vec<T>)> {
    neighboring_group(data, vec![(index, replacement)])
}

/// `data` and a copy with each listed position replaced.
pub fn neighboring_group<T: Clone>(
    data: &[T],
    replacements: Vec<(usize, T)>,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut other = data.to_vec();
    for (index, value) in replacements {
        if index >= data.len() {
            return Err(Error::invalid(format!(
                "index {index} out of range for a dataset of {}",
                data.len()
            )));
        }
        other[index] = value;
    }
    Ok((data.to_vec(), other))
}

/// `√(ln(2/γ)/(2T))`: DKW half-width of an empirical CDF from `T` draws.
pub fn dkw_half_width(trials: usize, gamma: f64) -> f64 {
    ((2.0 / gamma).ln() / (2.0 * trials as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalCurve {
    /// Rejection thresholds, from `+∞` down to `-∞`.
    pub thresholds: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub trials: usize,
    /// DKW half-width at `γ = DKW_GAMMA`.
    pub half_width: f64,
    /// Distance between the two empirical mean outputs.
    pub separation: f64,
    /// The means are indistinguishable from sampling error.
    pub degenerate: bool,
}

impl EmpiricalCurve {
    /// `f̂(α) = min{β̂ : α̂ ≤ α}`, the best test observed at level `α`,
    /// on `α_i = i/K`.
    pub fn lower_envelope(&self, grid: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid + 1);
        let mut j = 0;
        let mut best = 1.0f64;
        for i in 0..=grid {
            let a = i as f64 / grid as f64;
            while j < self.alpha_hat.len() && self.alpha_hat[j] <= a + 1e-15 {
                best = best.min(self.beta_hat[j]);
                j += 1;
            }
            out.push(best);
        }
        out
    }

    /// `max_i |f̂(α_i) - f(α_i)|` on the grid of `theory`.
    pub fn sup_distance(&self, theory: &TradeoffCurve) -> f64 {
        self.lower_envelope(theory.grid())
            .iter()
            .zip(theory.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "alpha_hat", "beta_hat"])?;
        for i in 0..self.thresholds.len() {
            w.write_record([
                self.thresholds[i].to_string(),
                self.alpha_hat[i].to_string(),
                self.beta_hat[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn run_trials<M: Mechanism>(
    mech: &M,
    input: &M::Input,
    seed: u64,
    side: u64,
    trials: usize,
) -> Result<Vec<Vec<f64>>> {
    let run = |range: std::ops::Range<usize>| {
        range
            .map(|t| {
                mech.run(
                    input,
                    &mut stream(seed, Purpose::AttackTrial, 2 * t as u64 + side),
                )
            })
            .collect::<Result<Vec<_>>>()
    };
    let workers = std::thread::available_parallelism()
        .map(NonZeroUsize::get)
        .unwrap_or(1)
        .min(trials.max(1));
    if workers == 1 {
        return run(0..trials);
    }
    let chunk = trials.div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| scope.spawn(move || run(w * chunk..((w + 1) * chunk).min(trials))))
            .collect();
        let mut out = Vec::with_capacity(trials);
        for h in handles {
            out.extend(h.join().expect("attack worker panicked")?);
        }
        Ok(out)
    })
}

fn mean(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|x| *x /= rows.len() as f64);
    m
}

fn total_variance(rows: &[Vec<f64>], mean: &[f64]) -> f64 {
    let n = rows.len() as f64;
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Runs `mech` `trials` times on each input with independent noise streams
/// and sweeps a projection threshold over the pooled outputs. The test
/// rejects `D` when the projection exceeds the threshold.
pub fn empirical_tradeoff<M: Mechanism>(
    mech: &M,
    d: &M::Input,
    d_prime: &M::Input,
    trials: usize,
    seed: u64,
) -> Result<EmpiricalCurve> {
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!(
            "need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    let out0 = run_trials(mech, d, seed, 0, trials)?;
    let out1 = run_trials(mech, d_prime, seed, 1, trials)?;
    let dim = out0[0].len();
    if out0.iter().chain(&out1).any(|o| o.len() != dim) {
        return Err(Error::invalid("mechanism outputs differ in dimension"));
    }
    let m0 = mean(&out0, dim);
    let m1 = mean(&out1, dim);
    let mut dir: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
    let separation = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let spread = ((total_variance(&out0, &m0) + total_variance(&out1, &m1)) / trials as f64).sqrt();
    let degenerate = separation == 0.0 || separation <= SEPARATION_Z * spread;
    if separation > 0.0 {
        dir.iter_mut().for_each(|x| *x /= separation);
    } else {
        dir = vec![0.0; dim];
        if dim > 0 {
            dir[0] = 1.0;
        }
    }
    let project = |rows: &[Vec<f64>]| -> Vec<f64> {
        let mut p: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&dir).map(|(a, b)| a * b).sum())
            .collect();
        p.sort_by(f64::total_cmp);
        p
    };
    let p0 = project(&out0);
    let p1 = project(&out1);

    let mut pooled: Vec<f64> = p0.iter().chain(&p1).copied().collect();
    pooled.sort_by(|a, b| b.total_cmp(a));
    pooled.dedup();
    let t = trials as f64;
    let mut curve = EmpiricalCurve {
        thresholds: Vec::with_capacity(pooled.len() + 2),
        alpha_hat: Vec::with_capacity(pooled.len() + 2),
        beta_hat: Vec::with_capacity(pooled.len() + 2),
        trials,
        half_width: dkw_half_width(trials, DKW_GAMMA),
        separation,
        degenerate,
    };
    // counts of projections <= threshold, walked downwards
    let (mut le0, mut le1) = (p0.len(), p1.len());
    curve.thresholds.push(f64::INFINITY);
    curve.alpha_hat.push(0.0);
    curve.beta_hat.push(1.0);
    for &th in &pooled {
        while le0 > 0 && p0[le0 - 1] > th {
            le0 -= 1;
        }
        while le1 > 0 && p1[le1 - 1] > th {
            le1 -= 1;
        }
        curve.thresholds.push(th);
        curve.alpha_hat.push((t - le0 as f64) / t);
        curve.beta_hat.push(le1 as f64 / t);
    }
    curve.thresholds.push(f64::NEG_INFINITY);
    curve.alpha_hat.push(1.0);
    curve.beta_hat.push(0.0);
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationVerdict {
    pub passed: bool,
    pub slack: f64,
    /// Largest `f(α̂ + slack) - slack - β̂` over the recorded pairs.
    pub worst_violation: f64,
    pub worst_alpha: f64,
}

/// Checks `β̂ + slack ≥ f(min(1, α̂ + slack))` for every recorded pair, the
/// conclusion one can draw when both empirical CDFs are within `slack` of the
/// truth. `None` uses the DKW half-width.
pub fn verify_domination(
    empirical: &EmpiricalCurve,
    theory: &TradeoffCurve,
    slack: Option<f64>,
) -> DominationVerdict {
    let slack = slack.unwrap_or(empirical.half_width);
    let mut verdict = DominationVerdict {
        passed: true,
        slack,
        worst_violation: f64::NEG_INFINITY,
        worst_alpha: 0.0,
    };
    for (&a, &b) in empirical.alpha_hat.iter().zip(&empirical.beta_hat) {
        let v = theory.eval((a + slack).min(1.0)) - slack - b;
        if v > verdict.worst_violation {
            verdict.worst_violation = v;
            verdict.worst_alpha = a;
        }
    }
    verdict.passed = verdict.worst_violation <= 0.0;
    verdict
}
