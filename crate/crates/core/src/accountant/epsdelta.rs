//! Classical `(ε, δ)` calculus.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsDelta {
    pub epsilon: f64,
    pub delta: f64,
}

impl EpsDelta {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::invalid(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }
}

/// `(Σ ε_i, Σ δ_i)`. The summed δ is not capped at 1.
pub fn basic_composition(parts: &[EpsDelta]) -> EpsDelta {
    EpsDelta {
        epsilon: parts.iter().map(|p| p.epsilon).sum(),
        delta: parts.iter().map(|p| p.delta).sum(),
    }
}

/// k-fold adaptive composition of an `(ε, δ)` mechanism:
/// `ε' = ε√(2k ln(1/δ')) + kε(e^ε - 1)` with total `δ = kδ + δ'`.
pub fn advanced_composition(
    epsilon: f64,
    delta: f64,
    k: usize,
    delta_prime: f64,
) -> Result<EpsDelta> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::invalid("delta' must lie in (0, 1)"));
    }
    EpsDelta::new(epsilon, delta)?;
    let k_f = k as f64;
    let eps =
        epsilon * (2.0 * k_f * (1.0 / delta_prime).ln()).sqrt() + k_f * epsilon * epsilon.exp_m1();
    Ok(EpsDelta {
        epsilon: eps,
        delta: k_f * delta + delta_prime,
    })
}

/// `(kε, k·e^{k-1}·δ)` for groups of size `k`.
pub fn group_privacy_epsdelta(epsilon: f64, delta: f64, k: usize) -> Result<EpsDelta> {
    if k == 0 {
        return Err(Error::invalid("group size must be at least 1"));
    }
    EpsDelta::new(epsilon, delta)?;
    let k_f = k as f64;
    Ok(EpsDelta {
        epsilon: k_f * epsilon,
        delta: k_f * (k_f - 1.0).exp() * delta,
    })
}

/// `ln(p_num / p_den)`.
pub fn privacy_loss(p_num: f64, p_den: f64) -> Result<f64> {
    if !(p_num > 0.0 && p_den > 0.0) {
        return Err(Error::invalid(
            "privacy loss needs strictly positive probabilities",
        ));
    }
    Ok(p_num.ln() - p_den.ln())
}

/// Smallest admissible noise scale `c·Δ₂/ε` with `c = √(2 ln(1.25/δ))`.
pub fn gaussian_mechanism_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "the Gaussian mechanism bound needs epsilon in (0, 1), got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(sensitivity >= 0.0) {
        return Err(Error::invalid("sensitivity must be >= 0"));
    }
    let c = (2.0 * (1.25 / delta).ln()).sqrt();
    Ok(c * sensitivity / epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic() {
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
        let p = EpsDelta::new(0.3, 1e-6).unwrap();
        let r = basic_composition(&[p; 7]);
        assert!((r.epsilon - 2.1).abs() < 1e-14 && (r.delta - 7e-6).abs() < 1e-20);
    }

    #[test]
    fn advanced() {
        let r = advanced_composition(0.2, 0.0, 1, 1e-5).unwrap();
        let want = 0.2 * (2.0 * 1e5f64.ln()).sqrt() + 0.2 * (0.2f64.exp() - 1.0);
        assert!((r.epsilon - want).abs() < 1e-14);
        assert_eq!(
            advanced_composition(0.0, 0.0, 10, 1e-5).unwrap().epsilon,
            0.0
        );
        let r = advanced_composition(0.1, 1e-7, 100, 1e-5).unwrap();
        assert!((r.delta - (100.0 * 1e-7 + 1e-5)).abs() < 1e-18);
        assert!(advanced_composition(0.1, 0.0, 0, 1e-5).is_err());
        assert!(advanced_composition(0.1, 0.0, 3, 1.0).is_err());
    }

    #[test]
    fn groups() {
        assert_eq!(
            group_privacy_epsdelta(0.4, 1e-5, 1).unwrap(),
            EpsDelta {
                epsilon: 0.4,
                delta: 1e-5
            }
        );
        assert_eq!(
            group_privacy_epsdelta(0.4, 0.0, 5).unwrap(),
            EpsDelta {
                epsilon: 2.0,
                delta: 0.0
            }
        );
        let r = group_privacy_epsdelta(0.5, 1e-6, 3).unwrap();
        assert_eq!(r.epsilon, 1.5);
        assert!((r.delta - 3.0 * 2f64.exp() * 1e-6).abs() < 1e-20);
    }

    #[test]
    fn loss() {
        assert_eq!(privacy_loss(0.2, 0.2).unwrap(), 0.0);
        let p = 0.01;
        assert!((privacy_loss(std::f64::consts::E * p, p).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            privacy_loss(0.3, 0.1).unwrap(),
            -privacy_loss(0.1, 0.3).unwrap()
        );
        assert!(privacy_loss(0.0, 0.1).is_err());
        assert!(privacy_loss(0.1, -0.1).is_err());
    }

    #[test]
    fn gaussian_mechanism() {
        let s = gaussian_mechanism_sigma(0.5, 0.05, 1.0).unwrap();
        assert!((s - (2.0 * 25f64.ln()).sqrt() / 0.5).abs() < 1e-14);
        assert_eq!(gaussian_mechanism_sigma(0.5, 0.05, 0.0).unwrap(), 0.0);
        let a = gaussian_mechanism_sigma(0.3, 1e-5, 1.5).unwrap();
        let b = gaussian_mechanism_sigma(0.3, 1e-5, 3.0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14);
        assert!(gaussian_mechanism_sigma(1.0, 0.05, 1.0).is_err());
        assert!(gaussian_mechanism_sigma(0.0, 0.05, 1.0).is_err());
    }
}
