//! Bundled three-zone, six-player synthetic market.
//!
//! Orders are the truthful asks `m = c0`, `a = 2 b0`; the true cost
//! parameters and the strategy-sweep coefficients are exposed separately.

use crate::market::MarketInstance;

/// Raw JSON of the bundled instance (`synth3z6p.json`).
pub const SYNTH3Z6P_JSON: &str = include_str!("../fixtures/synth3z6p.json");

/// Marginal-cost slopes `c0`.
pub const COST_SLOPE: [f64; 6] = [0.50, 0.50, 0.40, 0.40, 0.50, 0.50];
/// Marginal-cost intercepts `b0`.
pub const COST_INTERCEPT: [f64; 6] = [1.50, 1.30, 0.80, 0.63, 0.20, 0.40];
/// Capacities `Q0`.
pub const CAPACITY: [f64; 6] = [4.00, 5.50, 4.00, 4.00, 3.00, 4.00];
/// Intercept rule `a_i = nu_i - mu_i m_i` used by the strategy sweeps.
pub const SWEEP_NU: [f64; 6] = [3.4, 3.4, 1.815, 1.815, 1.55, 1.55];
pub const SWEEP_MU: [f64; 6] = [1.89, 2.1, 1.27, 1.38, 1.35, 1.15];

/// Global cost-minimising objective of the bundled instance.
pub const CM_OPTIMUM: f64 = 77.463;

pub fn fixture_instance() -> MarketInstance {
    MarketInstance::from_json(SYNTH3Z6P_JSON).expect("bundled fixture parses")
}
