//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string; failures come back as `{"error": ...}`.

use dpsgd_core::accountant::{
    clt_mu, framework_guarantee, gaussian_tradeoff_on, layerwise_effective_sigma,
};
use dpsgd_core::attack::{empirical_tradeoff, verify_domination, ClippedSumMechanism, MIN_TRIALS};
use dpsgd_core::clipping::{clip_full, clip_layerwise};
use dpsgd_core::nn::LayeredVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const GRID: usize = 200;
const MAX_TRIALS: usize = 200_000;

fn respond<T: Serialize>(r: dpsgd_core::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[derive(Serialize)]
struct CurveComparison {
    alpha: Vec<f64>,
    theory: Vec<f64>,
    empirical: Vec<f64>,
    mu: f64,
    sup_distance: f64,
    dominated: bool,
    slack: f64,
}

/// Attacks a clipped scalar sum (`C = 1`, noise std `2σ`) on neighbors whose
/// differentiating contributions saturate at `±C`, and compares the observed
/// trade-off curve with `G_{1/σ}`.
#[wasm_bindgen]
pub fn tradeoff_demo(sigma: f64, trials: usize, seed: u64) -> String {
    respond((|| {
        let trials = trials.clamp(MIN_TRIALS, MAX_TRIALS);
        let mech = ClippedSumMechanism::scalar(1.0, sigma);
        let one = |x: f64| LayeredVector::from_layers([vec![x]]);
        let emp = empirical_tradeoff(
            &mech,
            &[one(0.3), one(-5.0)],
            &[one(0.3), one(5.0)],
            trials,
            seed,
        )?;
        let mu = if sigma > 0.0 {
            1.0 / sigma
        } else {
            f64::INFINITY
        };
        let theory = gaussian_tradeoff_on(mu, GRID)?;
        let verdict = verify_domination(&emp, &theory, None);
        Ok(CurveComparison {
            alpha: theory.alphas().collect(),
            theory: theory.values().to_vec(),
            empirical: emp.lower_envelope(GRID),
            mu,
            sup_distance: emp.sup_distance(&theory),
            dominated: verdict.passed,
            slack: verdict.slack,
        })
    })())
}

#[derive(Serialize)]
struct Clipped {
    full: Vec<f64>,
    layerwise: Vec<f64>,
    norm: f64,
    full_norm: f64,
}

/// Clips the 2-D gradient `(x, y)` as one vector at `c` and as two
/// one-coordinate layers at `(cx, cy)`.
#[wasm_bindgen]
pub fn clip_demo(x: f64, y: f64, c: f64, cx: f64, cy: f64) -> String {
    respond((|| {
        let whole = LayeredVector::from_layers([vec![x, y]]);
        let split = LayeredVector::from_layers([vec![x], vec![y]]);
        let full = clip_full(&whole, c)?;
        Ok(Clipped {
            full_norm: full.norm(),
            full: full.into_vec(),
            layerwise: clip_layerwise(&split, &[cx, cy])?.into_vec(),
            norm: whole.norm(),
        })
    })())
}

#[derive(Serialize)]
struct Guarantees {
    clt_mu: f64,
    framework_mu: f64,
    sigma_effective: f64,
}

/// CLT estimate for individual clipping next to the framework bound, with
/// `layers > 1` meaning layerwise clipping over that many groups.
#[wasm_bindgen]
pub fn clt_explorer(n: usize, m: usize, epochs: usize, sigma: f64, layers: usize) -> String {
    respond((|| {
        let layers = layers.max(1);
        let effective = layerwise_effective_sigma(sigma, layers)?;
        Ok(Guarantees {
            clt_mu: clt_mu(n, m, epochs, effective)?,
            framework_mu: framework_guarantee(1, epochs, sigma, layers, layers > 1)?.mu,
            sigma_effective: effective,
        })
    })())
}
