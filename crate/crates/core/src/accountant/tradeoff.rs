use serde::Serialize;

use super::normal::{phi, phi_inv};
use crate::error::{Error, Result};

pub const DEFAULT_GRID: usize = 1000;

/// Tolerance of the discrete convexity check.
const CONVEXITY_TOL: f64 = 1e-9;
/// Tolerance of the `f(α) ≤ 1 - α` check.
const DIAGONAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CurveKind {
    Gaussian { mu: f64 },
    Perfect,
    Sampled,
}

/// A trade-off function sampled at `α_i = i/K`, `i = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffCurve {
    values: Vec<f64>,
    kind: CurveKind,
}

impl TradeoffCurve {
    /// Wraps sampled values and checks the trade-off function invariants.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let curve = Self {
            values,
            kind: CurveKind::Sampled,
        };
        curve.check_invariants()?;
        Ok(curve)
    }

    /// `f(α) = 1 - α`: the two hypotheses cannot be told apart.
    pub fn perfect(grid: usize) -> Result<Self> {
        check_grid(grid)?;
        Ok(Self {
            values: (0..=grid).map(|i| 1.0 - i as f64 / grid as f64).collect(),
            kind: CurveKind::Perfect,
        })
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    /// Number of grid intervals `K`.
    pub fn grid(&self) -> usize {
        self.values.len() - 1
    }

    pub fn alpha(&self, i: usize) -> f64 {
        i as f64 / self.grid() as f64
    }

    pub fn alphas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| self.alpha(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `f(α)`: exact for closed-form curves, linear interpolation otherwise.
    pub fn eval(&self, alpha: f64) -> f64 {
        let a = alpha.clamp(0.0, 1.0);
        match self.kind {
            CurveKind::Gaussian { mu } => gaussian_value(mu, a),
            CurveKind::Perfect => 1.0 - a,
            CurveKind::Sampled => {
                let k = self.grid() as f64;
                let pos = a * k;
                let i = (pos.floor() as usize).min(self.grid() - 1);
                let t = pos - i as f64;
                self.values[i] * (1.0 - t) + self.values[i + 1] * t
            }
        }
    }

    /// Non-increasing, convex, within `[0, 1]` and below the diagonal `1 - α`.
    pub fn check_invariants(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::invalid(
                "trade-off curve needs at least two grid points",
            ));
        }
        for (i, &f) in self.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("f(α_{i}) = {f} outside [0, 1]")));
            }
            if f > 1.0 - self.alpha(i) + DIAGONAL_TOL {
                return Err(Error::invalid(format!(
                    "f(α_{i}) = {f} exceeds 1 - α = {}",
                    1.0 - self.alpha(i)
                )));
            }
        }
        for (i, w) in self.values.windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(Error::invalid(format!("curve increases at α_{}", i + 1)));
            }
        }
        for (i, w) in self.values.windows(3).enumerate() {
            if w[0] - 2.0 * w[1] + w[2] < -CONVEXITY_TOL {
                return Err(Error::invalid(format!(
                    "curve is not convex at α_{}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

fn check_grid(grid: usize) -> Result<()> {
    if grid == 0 {
        return Err(Error::invalid("grid must have at least one interval"));
    }
    Ok(())
}

fn gaussian_value(mu: f64, alpha: f64) -> f64 {
    // limits at the endpoints: Φ(+∞) = 1, Φ(-∞) = 0
    if alpha <= 0.0 {
        1.0
    } else if alpha >= 1.0 {
        0.0
    } else {
        phi(phi_inv(1.0 - alpha) - mu)
    }
}

/// `G_μ(α) = Φ(Φ⁻¹(1-α) - μ)` on the default grid.
pub fn gaussian_tradeoff(mu: f64) -> Result<TradeoffCurve> {
    gaussian_tradeoff_on(mu, DEFAULT_GRID)
}

pub fn gaussian_tradeoff_on(mu: f64, grid: usize) -> Result<TradeoffCurve> {
    check_grid(grid)?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!(
            "GDP parameter must be finite and >= 0, got {mu}"
        )));
    }
    Ok(TradeoffCurve {
        values: (0..=grid)
            .map(|i| gaussian_value(mu, i as f64 / grid as f64))
            .collect(),
        kind: CurveKind::Gaussian { mu },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveComparison {
    /// `max_α |f(α) - g(α)|` over the grid.
    pub sup_distance: f64,
    pub argmax_alpha: f64,
    /// `f(α) ≥ g(α) - tol` at every grid point.
    pub dominates: bool,
}

/// Compares `f` against `g` on their shared grid.
pub fn curve_compare(f: &TradeoffCurve, g: &TradeoffCurve, tol: f64) -> Result<CurveComparison> {
    if f.grid() != g.grid() {
        return Err(Error::Dimension {
            context: "trade-off curve grid",
            expected: f.grid(),
            actual: g.grid(),
        });
    }
    let mut out = CurveComparison {
        sup_distance: 0.0,
        argmax_alpha: 0.0,
        dominates: true,
    };
    for (i, (a, b)) in f.values.iter().zip(&g.values).enumerate() {
        let d = (a - b).abs();
        if d > out.sup_distance {
            out.sup_distance = d;
            out.argmax_alpha = f.alpha(i);
        }
        if *a < b - tol {
            out.dominates = false;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mu_is_the_diagonal() {
        let g0 = gaussian_tradeoff(0.0).unwrap();
        for (a, f) in g0.alphas().zip(g0.values()) {
            assert!((f - (1.0 - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetry_point() {
        for mu in [0.3, 1.0, 2.5] {
            let g = gaussian_tradeoff(mu).unwrap();
            assert!((g.values()[500] - phi(-mu)).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_value_at_five_percent() {
        // mpmath: ncdf(probit(0.95) - 1) = 0.740488977158555975752...
        let g = gaussian_tradeoff(1.0).unwrap();
        assert!((g.values()[50] - 0.740_488_977_158_556).abs() < 1e-10);
        assert!((g.eval(0.05) - 0.740_488_977_158_556).abs() < 1e-10);
    }

    #[test]
    fn negative_mu_rejected() {
        assert!(gaussian_tradeoff(-0.1).is_err());
    }

    #[test]
    fn gaussian_curves_satisfy_invariants() {
        for mu in [0.0, 0.1, 1.0, 3.0, 8.0] {
            gaussian_tradeoff(mu).unwrap().check_invariants().unwrap();
        }
        TradeoffCurve::perfect(10)
            .unwrap()
            .check_invariants()
            .unwrap();
    }

    #[test]
    fn invariant_violations_are_reported() {
        assert!(TradeoffCurve::from_values(vec![1.0, 0.2, 0.5]).is_err());
        assert!(TradeoffCurve::from_values(vec![1.0, 0.9, 0.0]).is_err());
        assert!(TradeoffCurve::from_values(vec![1.0, 0.4, 0.0]).is_ok());
        assert!(TradeoffCurve::from_values(vec![0.9, 0.4, 0.0]).is_ok());
        assert!(TradeoffCurve::from_values(vec![1.0, 0.45, 0.3, 0.0]).is_err());
    }

    #[test]
    fn compare_examples() {
        let g1 = gaussian_tradeoff(1.0).unwrap();
        let same = curve_compare(&g1, &g1, 0.0).unwrap();
        assert_eq!(same.sup_distance, 0.0);
        assert!(same.dominates);

        let perfect = TradeoffCurve::perfect(DEFAULT_GRID).unwrap();
        for mu in [0.01, 1.0, 4.0] {
            let c = curve_compare(&perfect, &gaussian_tradeoff(mu).unwrap(), 0.0).unwrap();
            assert!(c.dominates);
        }
        assert!(!curve_compare(&g1, &perfect, 0.0).unwrap().dominates);

        // brute-force grid scan of Φ(Φ⁻¹(1-α)) - Φ(Φ⁻¹(1-α) - 1)
        let (mut best, mut at) = (0.0, 0.0);
        for i in 0..=1000 {
            let a = i as f64 / 1000.0;
            let d = (1.0 - a) - gaussian_value(1.0, a);
            if d > best {
                best = d;
                at = a;
            }
        }
        let c = curve_compare(&gaussian_tradeoff(0.0).unwrap(), &g1, 0.0).unwrap();
        assert!((c.sup_distance - best).abs() < 1e-12);
        assert!((c.argmax_alpha - at).abs() < 1e-12);
        assert!(at > 0.2 && at < 0.8);
        assert!(curve_compare(&g1, &gaussian_tradeoff_on(1.0, 10).unwrap(), 0.0).is_err());
    }
}
