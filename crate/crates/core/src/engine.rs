//! The generalized DP-SGD loop.
//!
//! Each epoch draws a batch plan, derives the clipping rule (adaptive
//! constants come from the public set), and runs `N/(sm)` rounds of
//!
//! ```text
//! a_h = ∇ over S_{b,h}            (h = 1..m)
//! U   = Σ_h [a_h]_C
//! Ū   = U + N(0, std²·I)          (std = 2Cσ, or 2C_hσ per clip group)
//! w   = w - η·Ū/m
//! ```
//!
//! Step size and master constant decay geometrically at epoch boundaries.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clipping::{
    aggregate_clipped, alc_from_estimates, estimate_group_norms, unscale, ClipRule, ClipScope,
    ClipSpec, ConstantStrategy, LayerGroups, MultiplierSpec,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Batch, LayeredVector, ModelSpec, RunningStats};
use crate::rng::{stream, Purpose};
use crate::sampling::{epoch_plan, SamplingMode};

/// Samples per forward pass when evaluating accuracy.
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseConvention {
    /// Standard deviation `2Cσ` (sensitivity `2C` of a clipped sum).
    General,
    /// Standard deviation `σC`, as in the original DP-SGD.
    Abadi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    GlorotUniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta0: f64,
    pub eta_decay: f64,
    pub sigma: f64,
    pub epochs: usize,
    /// Samples per batch for IC and BC; GBC takes `s·m` from the clip mode.
    pub batch_size: usize,
    pub clip: ClipSpec,
    pub sampling: SamplingMode,
    /// Rounds per epoch under subsampling; defaults to `N/(sm)`.
    pub ss_rounds: Option<usize>,
    pub noise: NoiseConvention,
    pub init: InitScheme,
    pub seed: u64,
}

impl TrainConfig {
    /// `(s, m)` of this run.
    pub fn micro_batching(&self) -> (usize, usize) {
        self.clip.mode.micro_batching(self.batch_size)
    }

    pub fn validate(&self, model: &ModelSpec, n_train: usize) -> Result<()> {
        if !(self.eta0 > 0.0) {
            return Err(Error::config("eta0 must be positive"));
        }
        if !(self.eta_decay > 0.0 && self.eta_decay <= 1.0) {
            return Err(Error::config("eta_decay must lie in (0, 1]"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        self.clip.validate()?;
        if self.sigma > 0.0 && !self.clip.master_c.is_finite() {
            return Err(Error::config(
                "noise needs a finite master clipping constant",
            ));
        }
        let (s, m) = self.micro_batching();
        if s == 0 || m == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if s * m > n_train {
            return Err(Error::config(format!(
                "batch of s*m = {} exceeds the {n_train} training samples",
                s * m
            )));
        }
        if s == 1 && model.has_batchnorm() {
            return Err(Error::BatchNormPerSample);
        }
        if let Some(groups) = &self.clip.groups {
            if groups.num_layers() != model.num_param_layers() {
                return Err(Error::config(format!(
                    "layer groups cover {} layers, model has {}",
                    groups.num_layers(),
                    model.num_param_layers()
                )));
            }
        }
        Ok(())
    }
}

/// Per-clip-group noise standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub groups: LayerGroups,
    pub stds: Vec<f64>,
}

impl NoiseSpec {
    /// Noise for `rule` at multiplier `sigma` under `convention`.
    pub fn for_rule(
        rule: &ClipRule,
        sigma: f64,
        convention: NoiseConvention,
        layers: usize,
    ) -> Self {
        let scale = match convention {
            NoiseConvention::General => 2.0 * sigma,
            NoiseConvention::Abadi => sigma,
        };
        // σ = 0 with clipping switched off (C = ∞) must not produce 0·∞
        let std = |c: &f64| if sigma == 0.0 { 0.0 } else { scale * c };
        match rule {
            ClipRule::Layerwise { groups, constants } => NoiseSpec {
                groups: groups.clone(),
                stds: constants.iter().map(std).collect(),
            },
            ClipRule::Full { c } => NoiseSpec {
                groups: LayerGroups::single(layers),
                stds: vec![std(c)],
            },
            ClipRule::Multiplier(spec) => NoiseSpec {
                groups: LayerGroups::single(layers),
                stds: vec![std(&spec.c)],
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        self.stds.iter().all(|s| *s == 0.0)
    }
}

/// Independent zero-mean Gaussian coordinates with each group's std.
pub fn noise_draw<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    sizes: &[usize],
    rng: &mut R,
) -> Result<LayeredVector> {
    if sizes.len() != spec.groups.num_layers() {
        return Err(Error::Dimension {
            context: "noise layers",
            expected: spec.groups.num_layers(),
            actual: sizes.len(),
        });
    }
    if let Some(bad) = spec.stds.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::invalid(format!("noise std must be >= 0, got {bad}")));
    }
    let mut out = LayeredVector::zeros(sizes);
    for h in 0..sizes.len() {
        let std = spec.stds[spec.groups.group_of(h)];
        for x in out.layer_mut(h) {
            let z: f64 = StandardNormal.sample(rng);
            *x = std * z;
        }
    }
    Ok(out)
}

/// `w - η·(U + noise)/m`.
pub fn round_update(
    weights: &LayeredVector,
    u: &LayeredVector,
    noise: Option<&LayeredVector>,
    eta: f64,
    m: usize,
) -> Result<LayeredVector> {
    weights.check_shape(u, "round_update")?;
    let mut ubar = u.clone();
    if let Some(n) = noise {
        ubar.add_assign(n)?;
    }
    let m = m as f64;
    let mut w = weights.clone();
    for (wi, ui) in w.as_mut_slice().iter_mut().zip(ubar.as_slice()) {
        *wi -= eta * (ui / m);
    }
    Ok(w)
}

/// Diagnostics of one micro-batch gradient pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    /// `Ū`: the noised (and, for multiplier clipping, unscaled) clipped sum.
    pub update: LayeredVector,
    pub loss: f64,
    pub pre_clip_norms: Vec<f64>,
    pub post_clip_norms: Vec<f64>,
}

/// One round's `Ū` from its micro-batches.
///
/// With `s = 1` the gradients are per-sample gradients of the whole batch.
pub fn noised_round<R: Rng + ?Sized>(
    model: &ModelSpec,
    weights: &LayeredVector,
    micro_batches: &[Batch],
    rule: &ClipRule,
    noise: &NoiseSpec,
    rng: &mut R,
    running: Option<&mut RunningStats>,
) -> Result<RoundOutput> {
    if micro_batches.is_empty() {
        return Err(Error::invalid("round without micro-batches"));
    }
    let per_sample = micro_batches.iter().all(|b| b.len() == 1);
    let outputs = if per_sample {
        if model.has_batchnorm() {
            return Err(Error::BatchNormPerSample);
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for b in micro_batches {
            inputs.extend_from_slice(b.inputs());
            labels.extend_from_slice(b.labels());
        }
        let whole = Batch::new(inputs, model.input_dim(), labels)?;
        nn::loss_and_grad_per_sample(model, weights, &whole)?
    } else {
        micro_batches
            .iter()
            .map(|b| nn::loss_and_grad(model, weights, b))
            .collect::<Result<Vec<_>>>()?
    };

    if let Some(rs) = running {
        for o in &outputs {
            rs.update(&o.batch_stats);
        }
    }

    let groups = noise.groups.clone();
    let m = outputs.len() as f64;
    let mut pre = vec![0.0; groups.count()];
    let mut post = vec![0.0; groups.count()];
    let grads: Vec<LayeredVector> = outputs.iter().map(|o| o.grad.clone()).collect();
    for g in &grads {
        for (p, n) in pre.iter_mut().zip(groups.norms(g)?) {
            *p += n / m;
        }
        for (p, n) in post.iter_mut().zip(groups.norms(&rule.clip(g)?)?) {
            *p += n / m;
        }
    }
    let mut update = aggregate_clipped(&grads, rule)?;
    if !noise.is_zero() {
        update.add_assign(&noise_draw(noise, &update.sizes(), rng)?)?;
    }
    if let ClipRule::Multiplier(spec) = rule {
        update = unscale(&update, spec)?;
    }
    Ok(RoundOutput {
        update,
        loss: outputs.iter().map(|o| o.loss).sum::<f64>() / m,
        pre_clip_norms: pre,
        post_clip_norms: post,
    })
}

/// The clipping rule of an epoch given the master constant and (when the
/// strategy is adaptive) the public-set estimates of each group.
pub fn epoch_rule(
    spec: &ClipSpec,
    layers: usize,
    master_c: f64,
    estimates: Option<&[f64]>,
) -> Result<ClipRule> {
    let groups = spec.resolved_groups(layers);
    let need = || {
        estimates.ok_or_else(|| Error::config("adaptive clipping constants need a public dataset"))
    };
    Ok(match spec.scope {
        ClipScope::Full => ClipRule::Full { c: master_c },
        ClipScope::Layerwise => {
            let constants = match spec.strategy {
                ConstantStrategy::Fixed => vec![master_c; groups.count()],
                ConstantStrategy::EnhancedAlc => alc_from_estimates(need()?, master_c)?,
                ConstantStrategy::ZhangAlc => need()?.to_vec(),
            };
            ClipRule::Layerwise { groups, constants }
        }
        ClipScope::Multiplier => {
            let group_factors = match spec.strategy {
                ConstantStrategy::Fixed => vec![1.0; groups.count()],
                _ => MultiplierSpec::from_estimates(need()?, master_c)?.factors,
            };
            let factors = (0..layers)
                .map(|h| group_factors[groups.group_of(h)])
                .collect();
            ClipRule::Multiplier(MultiplierSpec::new(factors, master_c)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub epoch: usize,
    pub round: usize,
    pub eta: f64,
    pub loss: f64,
    pub clip_constants: Vec<f64>,
    pub noise_std: Vec<f64>,
    /// Mean over micro-batches of each clip group's gradient norm.
    pub pre_clip_norms: Vec<f64>,
    pub post_clip_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eta: f64,
    pub master_c: f64,
    pub clip_constants: Vec<f64>,
    /// Public-set estimates `e_h` per clip group, when a public set exists.
    pub estimates: Option<Vec<f64>>,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
}

/// What the accountant needs to know about an executed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccountantInputs {
    pub g: usize,
    pub epochs: usize,
    pub clip_groups: usize,
    pub sigma: f64,
    pub layerwise: bool,
    pub n_train: usize,
    pub batch_size: usize,
    pub micro_batches: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub weights: LayeredVector,
    pub running_stats: RunningStats,
    pub rounds: Vec<RoundRecord>,
    pub epochs: Vec<EpochRecord>,
    pub accountant: AccountantInputs,
}

/// Data handed to a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub public: Option<&'a Dataset>,
    pub test: Option<&'a Dataset>,
    /// Evaluate on `test` every this many epochs (and after the last one).
    pub eval_every: usize,
}

impl<'a> TrainData<'a> {
    pub fn new(train: &'a Dataset) -> Self {
        Self {
            train,
            public: None,
            test: None,
            eval_every: 1,
        }
    }

    pub fn public(mut self, public: &'a Dataset) -> Self {
        self.public = Some(public);
        self
    }

    pub fn test(mut self, test: &'a Dataset) -> Self {
        self.test = Some(test);
        self
    }

    pub fn eval_every(mut self, every: usize) -> Self {
        self.eval_every = every;
        self
    }
}

/// Top-1 accuracy with batchnorm in evaluation mode.
pub fn evaluate(
    model: &ModelSpec,
    weights: &LayeredVector,
    running: &RunningStats,
    data: &Dataset,
) -> Result<f64> {
    let mut correct = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk)?;
        let logits = nn::forward_eval(model, weights, &batch, running)?;
        correct += nn::accuracy(&logits, batch.labels()) * chunk.len() as f64;
    }
    Ok(if data.is_empty() {
        0.0
    } else {
        correct / data.len() as f64
    })
}

/// Runs generalized DP-SGD from the configured initialization.
pub fn dpsgd_general(
    config: &TrainConfig,
    model: &ModelSpec,
    data: TrainData<'_>,
) -> Result<TrainOutput> {
    let weights = match config.init {
        InitScheme::GlorotUniform => model.init(config.seed),
        InitScheme::Zeros => model.zeros(),
    };
    dpsgd_from(config, model, data, weights, |_, _| Ok(()))
}

/// Runs generalized DP-SGD starting at `weights`, calling
/// `on_epoch(e, w)` with the weights at the start of every epoch.
pub fn dpsgd_from<F>(
    config: &TrainConfig,
    model: &ModelSpec,
    data: TrainData<'_>,
    mut weights: LayeredVector,
    mut on_epoch: F,
) -> Result<TrainOutput>
where
    F: FnMut(usize, &LayeredVector) -> Result<()>,
{
    let train = data.train;
    config.validate(model, train.len())?;
    model.check_weights(&weights)?;
    if train.feature_dim() != model.input_dim() {
        return Err(Error::Dimension {
            context: "training data features",
            expected: model.input_dim(),
            actual: train.feature_dim(),
        });
    }
    let adaptive = config.clip.strategy != ConstantStrategy::Fixed;
    if adaptive && data.public.is_none() {
        return Err(Error::config(
            "adaptive clipping constants need a public dataset",
        ));
    }
    let public_batch = data.public.map(Dataset::as_batch).transpose()?;

    let layers = model.num_param_layers();
    let groups = config.clip.resolved_groups(layers);
    let (s, m) = config.micro_batching();
    let mut running = RunningStats::new(model);
    let mut rounds = Vec::new();
    let mut epochs = Vec::new();

    for e in 0..config.epochs {
        on_epoch(e, &weights)?;
        let eta = config.eta0 * config.eta_decay.powi(e as i32);
        let master_c = config.clip.master_c * config.clip.c_decay.powi(e as i32);
        let estimates = public_batch
            .as_ref()
            .map(|p| estimate_group_norms(model, &weights, p, &groups))
            .transpose()?;
        let rule = epoch_rule(&config.clip, layers, master_c, estimates.as_deref())?;
        let noise = NoiseSpec::for_rule(&rule, config.sigma, config.noise, layers);
        let plan = epoch_plan(
            config.sampling,
            train.len(),
            s,
            m,
            config.ss_rounds,
            config.seed,
            e as u64,
        )?;
        let mut noise_rng = stream(config.seed, Purpose::Noise, e as u64);

        let mut loss_sum = 0.0;
        for (b, micro) in plan.rounds.iter().enumerate() {
            let batches = micro
                .iter()
                .map(|idx| train.batch(idx))
                .collect::<Result<Vec<_>>>()?;
            let out = noised_round(
                model,
                &weights,
                &batches,
                &rule,
                &noise,
                &mut noise_rng,
                Some(&mut running),
            )?;
            weights = round_update(&weights, &out.update, None, eta, m)?;
            loss_sum += out.loss;
            rounds.push(RoundRecord {
                epoch: e,
                round: b,
                eta,
                loss: out.loss,
                clip_constants: rule.constants(),
                noise_std: noise.stds.clone(),
                pre_clip_norms: out.pre_clip_norms,
                post_clip_norms: out.post_clip_norms,
            });
        }
        if !weights.is_finite() {
            return Err(Error::Overflow(format!("weights diverged in epoch {e}")));
        }
        let due = e + 1 == config.epochs || (data.eval_every > 0 && (e + 1) % data.eval_every == 0);
        let test_accuracy = match data.test {
            Some(t) if due => Some(evaluate(model, &weights, &running, t)?),
            _ => None,
        };
        epochs.push(EpochRecord {
            epoch: e,
            eta,
            master_c,
            clip_constants: rule.constants(),
            estimates,
            train_loss: if plan.rounds.is_empty() {
                f64::NAN
            } else {
                loss_sum / plan.rounds.len() as f64
            },
            test_accuracy,
        });
    }

    let layerwise = config.clip.scope == ClipScope::Layerwise;
    Ok(TrainOutput {
        weights,
        running_stats: running,
        rounds,
        epochs,
        accountant: AccountantInputs {
            g: 1,
            epochs: config.epochs,
            clip_groups: if layerwise { groups.count() } else { 1 },
            sigma: config.sigma,
            layerwise,
            n_train: train.len(),
            batch_size: s * m,
            micro_batches: m,
        },
    })
}
