//! Clipping operators and clipping-constant derivation.
//!
//! `[x]_C = x / max(1, ‖x‖/C)` is applied either to the whole vector or to
//! each clip group separately. Layerwise constants come from public-data
//! estimates `e_h` of the expected per-sample layer gradient norm: enhanced
//! ALC uses `C_h = C·e_h/max_k e_k`, Zhang's variant uses `C_h = e_h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Batch, LayeredVector, ModelSpec};

/// Relative slack under which a vector counts as already inside the ball.
/// Keeps `clip(clip(v)) == clip(v)` exact despite rounding of the norm.
pub const CLIP_SLACK: f64 = 8.0 * f64::EPSILON;

/// Micro-batch size used as a per-sample proxy when the model has batchnorm.
pub const BN_PROXY_MICRO_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// IC: every micro-batch holds one sample (`s = 1`, `m = batch`).
    Individual,
    /// BC: one micro-batch per batch (`s = batch`, `m = 1`).
    Batch,
    /// GBC: `m` micro-batches of `s` samples.
    General { s: usize, m: usize },
}

impl ClipMode {
    /// `(s, m)` for a batch of `batch_size` samples. GBC ignores `batch_size`.
    pub fn micro_batching(self, batch_size: usize) -> (usize, usize) {
        match self {
            ClipMode::Individual => (1, batch_size),
            ClipMode::Batch => (batch_size, 1),
            ClipMode::General { s, m } => (s, m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipScope {
    /// Clip the full gradient at the master constant.
    Full,
    /// Clip each clip group at its own constant.
    Layerwise,
    /// Scale each layer by a factor `m_h ≥ 1`, clip the full vector, and
    /// divide the noised update by the factors again.
    Multiplier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantStrategy {
    Fixed,
    EnhancedAlc,
    ZhangAlc,
}

/// Assignment of parameter layers to clip groups. Group ids must be
/// `0..count` with every group used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGroups {
    assignment: Vec<usize>,
    count: usize,
}

impl LayerGroups {
    pub fn identity(layers: usize) -> Self {
        Self {
            assignment: (0..layers).collect(),
            count: layers,
        }
    }

    /// A single group holding every layer.
    pub fn single(layers: usize) -> Self {
        Self {
            assignment: vec![0; layers],
            count: 1,
        }
    }

    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let count = assignment.iter().max().map_or(0, |&g| g + 1);
        for g in 0..count {
            if !assignment.contains(&g) {
                return Err(Error::config(format!("layer group {g} is empty")));
            }
        }
        Ok(Self { assignment, count })
    }

    pub fn num_layers(&self) -> usize {
        self.assignment.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn group_of(&self, layer: usize) -> usize {
        self.assignment[layer]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    fn check(&self, v: &LayeredVector) -> Result<()> {
        if v.num_layers() != self.assignment.len() {
            return Err(Error::Dimension {
                context: "layer groups",
                expected: self.assignment.len(),
                actual: v.num_layers(),
            });
        }
        Ok(())
    }

    /// Euclidean norm of each group of `v`.
    pub fn norms(&self, v: &LayeredVector) -> Result<Vec<f64>> {
        self.check(v)?;
        let mut sq = vec![0.0; self.count];
        for (h, n) in v.layer_norms().into_iter().enumerate() {
            sq[self.assignment[h]] += n * n;
        }
        Ok(sq.into_iter().map(f64::sqrt).collect())
    }
}

/// Master clipping configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub mode: ClipMode,
    pub scope: ClipScope,
    pub master_c: f64,
    pub c_decay: f64,
    pub strategy: ConstantStrategy,
    /// `None` means one group per parameter layer.
    pub groups: Option<LayerGroups>,
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.master_c > 0.0) {
            return Err(Error::config("master clipping constant must be positive"));
        }
        if !(self.c_decay > 0.0 && self.c_decay <= 1.0) {
            return Err(Error::config("clip decay must lie in (0, 1]"));
        }
        if let ClipMode::General { s, m } = self.mode {
            if s == 0 || m == 0 {
                return Err(Error::config("GBC needs s >= 1 and m >= 1"));
            }
        }
        if self.scope == ClipScope::Full && self.strategy != ConstantStrategy::Fixed {
            return Err(Error::config(
                "adaptive clipping constants need layerwise or multiplier scope",
            ));
        }
        if self.scope == ClipScope::Full && self.groups.is_some() {
            return Err(Error::config(
                "layer groups need layerwise or multiplier scope",
            ));
        }
        Ok(())
    }

    pub fn resolved_groups(&self, layers: usize) -> LayerGroups {
        self.groups
            .clone()
            .unwrap_or_else(|| LayerGroups::identity(layers))
    }
}

/// Factors `m_h ≥ 1` per parameter layer and the overall constant for
/// multiplier-scaled full clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSpec {
    pub factors: Vec<f64>,
    pub c: f64,
}

impl MultiplierSpec {
    pub fn new(factors: Vec<f64>, c: f64) -> Result<Self> {
        if let Some(bad) = factors.iter().find(|f| !(**f >= 1.0 && f.is_finite())) {
            return Err(Error::invalid(format!(
                "multiplication factors must be finite and >= 1, got {bad}"
            )));
        }
        check_c(c)?;
        Ok(Self { factors, c })
    }

    /// `m_h = M/e_h` from layer-norm estimates; layers with `e_h = 0` keep 1.
    pub fn from_estimates(estimates: &[f64], c: f64) -> Result<Self> {
        let max = estimates.iter().copied().fold(0.0, f64::max);
        let factors = estimates
            .iter()
            .map(|&e| if e > 0.0 { (max / e).max(1.0) } else { 1.0 })
            .collect();
        Self::new(factors, c)
    }
}

/// The clipping operator of one epoch, with its constants resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipRule {
    Full {
        c: f64,
    },
    Layerwise {
        groups: LayerGroups,
        constants: Vec<f64>,
    },
    Multiplier(MultiplierSpec),
}

impl ClipRule {
    /// Per-group clipping constants (one entry for full-vector rules).
    pub fn constants(&self) -> Vec<f64> {
        match self {
            ClipRule::Full { c } => vec![*c],
            ClipRule::Layerwise { constants, .. } => constants.clone(),
            ClipRule::Multiplier(spec) => vec![spec.c],
        }
    }

    pub fn clip(&self, v: &LayeredVector) -> Result<LayeredVector> {
        match self {
            ClipRule::Full { c } => clip_full(v, *c),
            ClipRule::Layerwise { groups, constants } => clip_groups(v, groups, constants),
            ClipRule::Multiplier(spec) => fgc_with_multipliers(v, spec),
        }
    }
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::config(format!(
            "clipping constant must be positive, got {c}"
        )));
    }
    Ok(())
}

/// `min(1, C/‖x‖)`, with the zero vector left unchanged.
fn clip_factor(norm: f64, c: f64) -> f64 {
    if norm <= c * (1.0 + CLIP_SLACK) {
        1.0
    } else {
        c / norm
    }
}

/// `[v]_C = v / max(1, ‖v‖/C)`.
pub fn clip_full(v: &LayeredVector, c: f64) -> Result<LayeredVector> {
    check_c(c)?;
    let mut out = v.clone();
    let f = clip_factor(v.norm(), c);
    if f != 1.0 {
        out.scale(f);
    }
    Ok(out)
}

/// Clips each layer part at its own constant.
pub fn clip_layerwise(v: &LayeredVector, constants: &[f64]) -> Result<LayeredVector> {
    clip_groups(v, &LayerGroups::identity(v.num_layers()), constants)
}

/// Clips each clip group at its own constant. A zero constant zeroes the group.
pub fn clip_groups(
    v: &LayeredVector,
    groups: &LayerGroups,
    constants: &[f64],
) -> Result<LayeredVector> {
    if constants.len() != groups.count() {
        return Err(Error::Dimension {
            context: "layerwise clipping constants",
            expected: groups.count(),
            actual: constants.len(),
        });
    }
    if let Some(bad) = constants.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::invalid(format!(
            "layerwise clipping constants must be >= 0, got {bad}"
        )));
    }
    let norms = groups.norms(v)?;
    let factors: Vec<f64> = norms
        .iter()
        .zip(constants)
        .map(|(&n, &c)| clip_factor(n, c))
        .collect();
    let mut out = v.clone();
    for h in 0..v.num_layers() {
        let f = factors[groups.group_of(h)];
        if f != 1.0 {
            out.layer_mut(h).iter_mut().for_each(|x| *x *= f);
        }
    }
    Ok(out)
}

/// `U = Σ_h clip(a_h)` in the given order.
pub fn aggregate_clipped(
    per_unit_grads: &[LayeredVector],
    rule: &ClipRule,
) -> Result<LayeredVector> {
    let first = per_unit_grads
        .first()
        .ok_or_else(|| Error::invalid("aggregate over zero micro-batches"))?;
    let mut total = first.zeros_like();
    for a in per_unit_grads {
        total.add_assign(&rule.clip(a)?)?;
    }
    Ok(total)
}

/// Scales layer `h` by `m_h` and clips the full result at `C`.
pub fn fgc_with_multipliers(g: &LayeredVector, spec: &MultiplierSpec) -> Result<LayeredVector> {
    let mut scaled = g.clone();
    apply_factors(&mut scaled, &spec.factors, false)?;
    clip_full(&scaled, spec.c)
}

/// Divides layer `h` of `u` by `m_h`.
pub fn unscale(u: &LayeredVector, spec: &MultiplierSpec) -> Result<LayeredVector> {
    let mut out = u.clone();
    apply_factors(&mut out, &spec.factors, true)?;
    Ok(out)
}

fn apply_factors(v: &mut LayeredVector, factors: &[f64], divide: bool) -> Result<()> {
    if factors.len() != v.num_layers() {
        return Err(Error::Dimension {
            context: "multiplication factors",
            expected: v.num_layers(),
            actual: factors.len(),
        });
    }
    for (h, &f) in factors.iter().enumerate() {
        let f = if divide { 1.0 / f } else { f };
        v.layer_mut(h).iter_mut().for_each(|x| *x *= f);
    }
    Ok(())
}

/// Mean over `public` of per-sample group gradient norms, `e_h`.
///
/// Models with batchnorm have no per-sample gradients; consecutive
/// micro-batches of [`BN_PROXY_MICRO_BATCH`] samples stand in for samples.
pub fn estimate_group_norms(
    model: &ModelSpec,
    weights: &LayeredVector,
    public: &Batch,
    groups: &LayerGroups,
) -> Result<Vec<f64>> {
    if public.is_empty() {
        return Err(Error::invalid("public dataset is empty"));
    }
    let mut sums = vec![0.0; groups.count()];
    let mut units = 0usize;
    let mut add = |g: &LayeredVector| -> Result<()> {
        for (s, n) in sums.iter_mut().zip(groups.norms(g)?) {
            *s += n;
        }
        units += 1;
        Ok(())
    };
    if model.has_batchnorm() {
        let s = BN_PROXY_MICRO_BATCH.min(public.len());
        let idx: Vec<usize> = (0..public.len()).collect();
        for chunk in idx.chunks_exact(s) {
            add(&nn::grad_batch(model, weights, &public.select(chunk)?)?)?;
        }
    } else {
        for i in 0..public.len() {
            add(&nn::grad_batch(model, weights, &public.sample(i))?)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / units as f64).collect())
}

/// `C_h = C·e_h/M` with `M = max_h e_h`; all `C_h = C` when `M = 0`.
pub fn alc_from_estimates(estimates: &[f64], master_c: f64) -> Result<Vec<f64>> {
    check_c(master_c)?;
    let max = estimates.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        Ok(estimates.iter().map(|e| master_c * e / max).collect())
    } else {
        Ok(vec![master_c; estimates.len()])
    }
}

/// Per-layer enhanced ALC constants estimated on `public`.
pub fn alc_constants(
    model: &ModelSpec,
    weights: &LayeredVector,
    public: &Batch,
    master_c: f64,
) -> Result<Vec<f64>> {
    check_c(master_c)?;
    let groups = LayerGroups::identity(model.num_param_layers());
    alc_from_estimates(
        &estimate_group_norms(model, weights, public, &groups)?,
        master_c,
    )
}

/// Zhang et al.'s ALC: the estimates themselves are the constants.
pub fn zhang_constants(
    model: &ModelSpec,
    weights: &LayeredVector,
    public: &Batch,
) -> Result<Vec<f64>> {
    let groups = LayerGroups::identity(model.num_param_layers());
    estimate_group_norms(model, weights, public, &groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn v(layers: &[&[f64]]) -> LayeredVector {
        LayeredVector::from_layers(layers.iter().copied())
    }

    #[test]
    fn short_vector_is_unchanged() {
        let x = v(&[&[0.3], &[0.4]]);
        assert_eq!(clip_full(&x, 1.0).unwrap(), x);
    }

    #[test]
    fn three_four_five() {
        let out = clip_full(&v(&[&[3.0, 4.0]]), 1.0).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((out.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_stays_zero() {
        let z = LayeredVector::zeros(&[3, 2]);
        assert_eq!(clip_full(&z, 0.5).unwrap(), z);
        assert_eq!(clip_layerwise(&z, &[0.0, 0.0]).unwrap(), z);
    }

    #[test]
    fn nonpositive_constant_is_a_config_error() {
        let x = v(&[&[1.0]]);
        assert!(matches!(clip_full(&x, 0.0), Err(Error::Config(_))));
        assert!(matches!(clip_full(&x, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn layerwise_examples() {
        let x = v(&[&[3.0, 4.0], &[1.0]]);
        assert_eq!(clip_layerwise(&x, &[1e300, 1e300]).unwrap(), x);
        let out = clip_layerwise(&x, &[1.0, 2.0]).unwrap();
        let norms = out.layer_norms();
        assert!((norms[0] - 1.0).abs() < 1e-15 && (norms[1] - 1.0).abs() < 1e-15);
        assert!(matches!(
            clip_layerwise(&x, &[1.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(clip_layerwise(&x, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn layerwise_matches_per_layer_full_clip() {
        let x = v(&[&[3.0, -4.0, 1.0], &[0.1, 0.2], &[7.0]]);
        let cs = [2.0, 1.0, 0.5];
        let out = clip_layerwise(&x, &cs).unwrap();
        for (h, &c) in cs.iter().enumerate() {
            let alone = clip_full(&v(&[x.layer(h)]), c).unwrap();
            assert_eq!(out.layer(h), alone.as_slice());
        }
    }

    #[test]
    fn grouped_clip_uses_group_norm() {
        let x = v(&[&[3.0], &[4.0], &[10.0]]);
        let groups = LayerGroups::new(vec![0, 0, 1]).unwrap();
        let out = clip_groups(&x, &groups, &[1.0, 20.0]).unwrap();
        assert!((out.layer(0)[0] - 0.6).abs() < 1e-15);
        assert!((out.layer(1)[0] - 0.8).abs() < 1e-15);
        assert_eq!(out.layer(2), &[10.0]);
        assert!(LayerGroups::new(vec![0, 2]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let rule = ClipRule::Full { c: 1.0 };
        let a = v(&[&[2.0, 1.0]]);
        assert_eq!(
            aggregate_clipped(&[a.clone()], &rule).unwrap(),
            clip_full(&a, 1.0).unwrap()
        );
        let mut neg = a.clone();
        neg.scale(-1.0);
        let u = aggregate_clipped(&[a, neg], &rule).unwrap();
        assert!(u.as_slice().iter().all(|x| *x == 0.0));
        let scalars: Vec<_> = [2.0, -2.0, 0.5].iter().map(|&s| v(&[&[s]])).collect();
        let u = aggregate_clipped(&scalars, &rule).unwrap();
        assert!((u.as_slice()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn alc_ratio_arithmetic() {
        let cs = alc_from_estimates(&[1.0, 2.0, 4.0], 0.8).unwrap();
        for (a, b) in cs.iter().zip([0.2, 0.4, 0.8]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            alc_from_estimates(&[3.0, 3.0], 0.5).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            alc_from_estimates(&[0.0, 0.0], 0.5).unwrap(),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn multipliers() {
        let g = v(&[&[3.0, 4.0], &[0.5]]);
        let ones = MultiplierSpec::new(vec![1.0, 1.0], 2.0).unwrap();
        assert_eq!(
            fgc_with_multipliers(&g, &ones).unwrap(),
            clip_full(&g, 2.0).unwrap()
        );
        let spec = MultiplierSpec::new(vec![1.0, 8.0], 1e12).unwrap();
        let back = unscale(&fgc_with_multipliers(&g, &spec).unwrap(), &spec).unwrap();
        assert_eq!(back, g);
        assert!(MultiplierSpec::new(vec![0.5], 1.0).is_err());
        let from = MultiplierSpec::from_estimates(&[1.0, 4.0, 0.0], 1.0).unwrap();
        assert_eq!(from.factors, vec![4.0, 1.0, 1.0]);
    }

    #[test]
    fn invalid_master_constant_is_rejected() {
        let model = ModelSpec::mlp(2, &[], 2, Activation::Relu, false).unwrap();
        let w = model.zeros();
        let b = Batch::new(vec![0.0, 0.0], 2, vec![0]).unwrap();
        assert!(alc_constants(&model, &w, &b, 0.0).is_err());
    }

    #[test]
    fn zero_constants_zero_the_gradient() {
        let x = v(&[&[1.0, 2.0], &[3.0]]);
        let out = clip_layerwise(&x, &[0.0, 0.0]).unwrap();
        assert!(out.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_init_linear_estimates_have_closed_form() {
        // p - y has squared norm (k-1)/k at uniform predictions
        let model = ModelSpec::mlp(2, &[], 3, Activation::Relu, false).unwrap();
        let w = model.zeros();
        let public = Batch::new(vec![3.0, 4.0, 0.0, 1.0], 2, vec![0, 2]).unwrap();
        let e = zhang_constants(&model, &w, &public).unwrap();
        let r = (2.0f64 / 3.0).sqrt();
        assert!((e[0] - r * (5.0 + 1.0) / 2.0).abs() < 1e-14);
        assert!((e[1] - r).abs() < 1e-14);
    }
}
