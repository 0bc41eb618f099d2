use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bench::{run_algorithm, Algorithm, BenchSettings};
use crate::error::{ClearError, Result};
use crate::fixtures::{COST_INTERCEPT, COST_SLOPE, SWEEP_MU, SWEEP_NU};
use crate::market::MarketInstance;

/// Bids of every player other than the swept one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpponentProfile {
    /// Orders as they stand in the instance.
    AsGiven,
    /// `m_j = m_factor c_j`, `a_j = a_factor b_j` from the true costs.
    Scaled { m_factor: f64, a_factor: f64 },
}

impl OpponentProfile {
    pub const PROFILE_I: OpponentProfile = OpponentProfile::Scaled {
        m_factor: 1.35,
        a_factor: 1.02,
    };
    pub const PROFILE_II: OpponentProfile = OpponentProfile::Scaled {
        m_factor: 2.0,
        a_factor: 1.0,
    };
}

/// Grid of slopes for one player; the intercept follows `a = nu - mu m`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    pub player: usize,
    pub m_lo: f64,
    pub m_hi: f64,
    pub n_pts: usize,
    pub nu: f64,
    pub mu: f64,
    pub opponents: OpponentProfile,
    /// True marginal-cost slopes of every player.
    pub cost_slope: Vec<f64>,
    /// True marginal-cost intercepts of every player.
    pub cost_intercept: Vec<f64>,
}

impl SweepSpec {
    /// Sweep of `player` of the bundled instance over `[0.5 c_i, c_i]` with
    /// 20 points.
    pub fn fixture(player: usize, opponents: OpponentProfile) -> Self {
        Self {
            player,
            m_lo: 0.5 * COST_SLOPE[player],
            m_hi: COST_SLOPE[player],
            n_pts: 20,
            nu: SWEEP_NU[player],
            mu: SWEEP_MU[player],
            opponents,
            cost_slope: COST_SLOPE.to_vec(),
            cost_intercept: COST_INTERCEPT.to_vec(),
        }
    }

    pub fn validate(&self, inst: &MarketInstance) -> Result<()> {
        let n = inst.num_players();
        if self.player >= n {
            return Err(ClearError::Invalid(format!("player {} out of range", self.player)));
        }
        if !(self.m_lo > 0.0) || self.m_hi < self.m_lo {
            return Err(ClearError::Invalid(format!("bad slope range [{}, {}]", self.m_lo, self.m_hi)));
        }
        if self.n_pts < 2 {
            return Err(ClearError::Invalid("a sweep needs at least two points".into()));
        }
        if self.cost_slope.len() != n || self.cost_intercept.len() != n {
            return Err(ClearError::Dimension("true costs need one entry per player".into()));
        }
        Ok(())
    }

    /// Inclusive, equally spaced slopes.
    pub fn grid(&self) -> Vec<f64> {
        let step = (self.m_hi - self.m_lo) / (self.n_pts - 1) as f64;
        (0..self.n_pts).map(|k| self.m_lo + step * k as f64).collect()
    }

    /// Instance with the opponents' profile applied and the swept player
    /// bidding slope `m`.
    pub fn instance_at(&self, inst: &MarketInstance, m: f64) -> MarketInstance {
        let mut out = inst.clone();
        for (j, p) in out.players.iter_mut().enumerate() {
            if j == self.player {
                p.m = m;
                p.a = self.nu - self.mu * m;
            } else if let OpponentProfile::Scaled { m_factor, a_factor } = self.opponents {
                p.m = m_factor * self.cost_slope[j];
                p.a = a_factor * self.cost_intercept[j];
            }
        }
        out
    }
}

/// Revenue at the zone price minus the true production cost
/// `c x^2 / 2 + b x`.
pub fn true_profit(v: f64, x: f64, c: f64, b: f64) -> f64 {
    v * x - (0.5 * c * x * x + b * x)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: f64,
    pub a: f64,
    pub profit: f64,
    pub x: f64,
    pub v: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCurve {
    pub player: usize,
    pub algo: Algorithm,
    pub rows: Vec<SweepRow>,
    /// Wall time of the whole sweep.
    pub time_ms: f64,
}

/// Clears the instance at every grid slope and records the swept
/// player's profit. Points run concurrently; a failed point is flagged and
/// the sweep continues.
pub fn profit_sweep(inst: &MarketInstance, spec: &SweepSpec, algo: Algorithm, settings: &BenchSettings) -> Result<SweepCurve> {
    spec.validate(inst)?;
    let i = spec.player;
    let zone = inst.players[i].zone;
    let start = Instant::now();
    let rows = spec
        .grid()
        .into_par_iter()
        .map(|m| {
            let a = spec.nu - spec.mu * m;
            let point = spec.instance_at(inst, m);
            match run_algorithm(&point, algo, settings) {
                Ok(out) => SweepRow {
                    m,
                    a,
                    profit: true_profit(out.v[zone], out.x[i], spec.cost_slope[i], spec.cost_intercept[i]),
                    x: out.x[i],
                    v: out.v[zone],
                    error: None,
                },
                Err(e) => SweepRow {
                    m,
                    a,
                    profit: f64::NAN,
                    x: f64::NAN,
                    v: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepCurve {
        player: i,
        algo,
        rows,
        time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
