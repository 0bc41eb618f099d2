use serde::{Deserialize, Serialize};

/// Numerical tolerances shared by every solver. Override per call by
/// constructing a modified copy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Primal feasibility slack for balance, capacity and network rows.
    pub feasibility: f64,
    /// Slack used when comparing marginal prices to zonal prices.
    pub price: f64,
    /// A player counts as dispatched when `x_i > activity * Q_i`.
    pub activity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            price: 1e-8,
            activity: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn is_active(&self, x: f64, capacity: f64) -> bool {
        x > self.activity * capacity
    }
}
