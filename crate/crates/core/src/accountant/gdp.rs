//! Gaussian differential privacy: composition, group privacy, the
//! `√(gE)/σ` guarantee of the generalized framework, and the CLT estimate
//! `μ = √2·√(Em/N)·h(σ)` for individually clipped DP-SGD.

use serde::Serialize;

use super::epsdelta::EpsDelta;
use super::normal::phi;
use crate::error::{Error, Result};

/// `√(μ_1² + … + μ_n²)`.
pub fn compose_gaussian(mus: &[f64]) -> Result<f64> {
    if let Some(bad) = mus.iter().find(|m| !(**m >= 0.0)) {
        return Err(Error::invalid(format!(
            "GDP parameters must be >= 0, got {bad}"
        )));
    }
    Ok(mus.iter().map(|m| m * m).sum::<f64>().sqrt())
}

/// `σ/√L`: the noise multiplier a full-clipping run needs to match the
/// guarantee of layerwise clipping over `L` groups at `σ`.
pub fn layerwise_effective_sigma(sigma: f64, layers: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if layers == 0 {
        return Err(Error::invalid("layer count must be at least 1"));
    }
    Ok(sigma / (layers as f64).sqrt())
}

/// `G_μ`-DP for neighbors implies `G_{gμ}`-DP for groups of `g`.
pub fn group_privacy_gdp(mu: f64, g: usize) -> Result<f64> {
    if g == 0 {
        return Err(Error::invalid("group size must be at least 1"));
    }
    if !(mu >= 0.0) {
        return Err(Error::invalid("GDP parameter must be >= 0"));
    }
    Ok(g as f64 * mu)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuaranteeInputs {
    pub g: usize,
    pub epochs: usize,
    pub layers: usize,
    pub sigma: f64,
    pub layerwise: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuaranteeReport {
    /// GDP parameter; infinite (serialized as `null`) when no noise is added.
    pub mu: f64,
    pub formula: String,
    pub inputs: GuaranteeInputs,
    pub no_privacy: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eps_delta: Vec<EpsDelta>,
}

/// `G_{√(gE)/σ}` for full clipping, `G_{√(gEL)/σ}` for layerwise clipping
/// over `L` clip groups. `σ = 0` yields an infinite, flagged report.
pub fn framework_guarantee(
    g: usize,
    epochs: usize,
    sigma: f64,
    layers: usize,
    layerwise: bool,
) -> Result<GuaranteeReport> {
    if g == 0 || epochs == 0 || layers == 0 {
        return Err(Error::invalid("g, E and L must all be at least 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma must be >= 0"));
    }
    let l = if layerwise { layers } else { 1 };
    let numer = ((g * epochs * l) as f64).sqrt();
    let mu = if sigma == 0.0 {
        f64::INFINITY
    } else {
        numer / sigma
    };
    Ok(GuaranteeReport {
        mu,
        formula: if layerwise {
            "sqrt(g*E*L)/sigma".into()
        } else {
            "sqrt(g*E)/sigma".into()
        },
        inputs: GuaranteeInputs {
            g,
            epochs,
            layers,
            sigma,
            layerwise,
            n: None,
            m: None,
        },
        no_privacy: sigma == 0.0,
        eps_delta: Vec::new(),
    })
}

/// `h(σ) = √(e^{σ⁻²}·Φ(3σ⁻¹/2) + 3Φ(-σ⁻¹/2) - 2)`.
pub fn clt_h(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let inv = 1.0 / sigma;
    let growth = (inv * inv).exp();
    if !growth.is_finite() {
        return Err(Error::Overflow(format!(
            "exp(sigma^-2) overflows for sigma = {sigma}"
        )));
    }
    let sq = growth * phi(1.5 * inv) + 3.0 * phi(-0.5 * inv) - 2.0;
    Ok(sq.max(0.0).sqrt())
}

/// `μ = √2·√(Em/N)·h(σ)`. Pass `σ/√L` for layerwise clipping.
pub fn clt_mu(n: usize, m: usize, epochs: usize, sigma: f64) -> Result<f64> {
    if n == 0 || m == 0 || epochs == 0 {
        return Err(Error::invalid("N, m and E must be positive"));
    }
    let c = ((epochs * m) as f64 / n as f64).sqrt();
    Ok(std::f64::consts::SQRT_2 * c * clt_h(sigma)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_examples() {
        assert_eq!(compose_gaussian(&[0.7]).unwrap(), 0.7);
        assert_eq!(compose_gaussian(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(compose_gaussian(&[]).unwrap(), 0.0);
        assert!(compose_gaussian(&[1.0, -1.0]).is_err());
        let sigma = 1.7;
        let l = 62;
        let mu = compose_gaussian(&vec![1.0 / sigma; l]).unwrap();
        assert!((mu - (l as f64).sqrt() / sigma).abs() < 1e-12);
    }

    #[test]
    fn effective_sigma() {
        assert_eq!(layerwise_effective_sigma(2.0, 4).unwrap(), 1.0);
        assert_eq!(layerwise_effective_sigma(1.3, 1).unwrap(), 1.3);
        let s = layerwise_effective_sigma(2.0, 62).unwrap();
        assert!((s - 2.0 / 62f64.sqrt()).abs() < 1e-15);
        assert!(layerwise_effective_sigma(0.0, 2).is_err());
    }

    #[test]
    fn group_scaling() {
        assert_eq!(group_privacy_gdp(0.4, 1).unwrap(), 0.4);
        assert_eq!(group_privacy_gdp(0.5, 2).unwrap(), 1.0);
        assert!(group_privacy_gdp(0.5, 0).is_err());
    }

    #[test]
    fn framework_examples() {
        assert_eq!(framework_guarantee(1, 1, 1.0, 1, false).unwrap().mu, 1.0);
        let r = framework_guarantee(1, 50, 2.0, 1, false).unwrap();
        assert!((r.mu - 50f64.sqrt() / 2.0).abs() < 1e-15);
        let r = framework_guarantee(1, 50, 2.0, 62, true).unwrap();
        assert!((r.mu - (50.0f64 * 62.0).sqrt() / 2.0).abs() < 1e-13);
        // L is ignored without layerwise clipping
        assert_eq!(
            framework_guarantee(1, 50, 2.0, 62, false).unwrap().mu,
            50f64.sqrt() / 2.0
        );
        let none = framework_guarantee(1, 5, 0.0, 3, true).unwrap();
        assert!(none.no_privacy && none.mu.is_infinite());
    }

    #[test]
    fn group_and_epochs_cross_check() {
        // E compositions of the group-scaled per-epoch guarantee g/σ give g√E/σ,
        // which the framework bound improves to √(gE)/σ for g > 1.
        let (g, e, sigma) = (3usize, 20usize, 1.5);
        let per_epoch = group_privacy_gdp(1.0 / sigma, g).unwrap();
        let composed = compose_gaussian(&vec![per_epoch; e]).unwrap();
        let framework = framework_guarantee(g, e, sigma, 1, false).unwrap().mu;
        assert!((composed - g as f64 * (e as f64).sqrt() / sigma).abs() < 1e-12);
        assert!((framework * (g as f64).sqrt() - composed).abs() < 1e-12);
    }

    #[test]
    fn h_is_decreasing() {
        let mut prev = f64::INFINITY;
        let mut s = 0.5;
        while s <= 10.0 {
            let h = clt_h(s).unwrap();
            assert!(h < prev, "h not decreasing at {s}");
            prev = h;
            s += 0.05;
        }
    }

    #[test]
    fn h_is_asymptotically_inverse_linear() {
        let ratio = clt_h(100.0).unwrap() / clt_h(50.0).unwrap();
        assert!((ratio - 0.5).abs() < 0.5 * 0.05);
    }

    #[test]
    fn tiny_sigma_overflows_explicitly() {
        assert!(matches!(clt_h(0.01), Err(Error::Overflow(_))));
        assert!(matches!(clt_mu(100, 10, 1, 0.01), Err(Error::Overflow(_))));
    }
}
