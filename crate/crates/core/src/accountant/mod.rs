//! f-DP and `(ε, δ)`-DP privacy calculus.

mod epsdelta;
mod gdp;
pub mod normal;
mod tradeoff;

pub use epsdelta::{
    advanced_composition, basic_composition, gaussian_mechanism_sigma, group_privacy_epsdelta,
    privacy_loss, EpsDelta,
};
pub use gdp::{
    clt_h, clt_mu, compose_gaussian, framework_guarantee, group_privacy_gdp,
    layerwise_effective_sigma, GuaranteeInputs, GuaranteeReport,
};
pub use tradeoff::{
    curve_compare, gaussian_tradeoff, gaussian_tradeoff_on, CurveComparison, CurveKind,
    TradeoffCurve, DEFAULT_GRID,
};
