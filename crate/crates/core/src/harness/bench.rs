use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cm::{
    estimate_active_set, run_bbtree, run_ibcqp, run_ieqlp, run_ieqp_wr, ActiveEstimate, BbSettings, EstimateRule,
    IbCqpSettings, IeQpSettings, IeqLpSettings,
};
use crate::error::{ClearError, Result};
use crate::market::{check_outcome, ClearingOutcome, MarketInstance, SolveStatus};
use crate::settings::Tolerances;
use crate::swm::{clear_swm, SwmSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Swm,
    IeqLpMa,
    IeQpWr,
    IbCqp,
    BbTree,
}

impl Algorithm {
    pub const CM: [Algorithm; 4] = [Algorithm::IeqLpMa, Algorithm::IeQpWr, Algorithm::IbCqp, Algorithm::BbTree];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Swm => "swm",
            Algorithm::IeqLpMa => "ieqlp-ma",
            Algorithm::IeQpWr => "ieqp-wr",
            Algorithm::IbCqp => "ibcqp",
            Algorithm::BbTree => "bbtree",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ClearError;

    fn from_str(s: &str) -> Result<Self> {
        [Algorithm::Swm, Algorithm::IeqLpMa, Algorithm::IeQpWr, Algorithm::IbCqp, Algorithm::BbTree]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ClearError::Invalid(format!("unknown algorithm '{s}'")))
    }
}

/// Which players the bilinear formulations treat as possibly dispatched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateChoice {
    All,
    Dispatched,
    Augmented,
}

impl EstimateChoice {
    pub fn build(self, inst: &MarketInstance) -> Result<ActiveEstimate> {
        match self {
            EstimateChoice::All => Ok(ActiveEstimate::all(inst)),
            EstimateChoice::Dispatched => estimate_active_set(inst, EstimateRule::Dispatched),
            EstimateChoice::Augmented => estimate_active_set(inst, EstimateRule::Augmented),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchSettings {
    pub swm: SwmSettings,
    pub ieqlp: IeqLpSettings,
    pub ieqp: IeQpSettings,
    pub ibcqp: IbCqpSettings,
    pub bbtree: BbSettings,
    pub estimate: EstimateChoice,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            swm: SwmSettings::default(),
            ieqlp: IeqLpSettings::default(),
            ieqp: IeQpSettings::default(),
            ibcqp: IbCqpSettings::default(),
            bbtree: BbSettings::default(),
            estimate: EstimateChoice::Dispatched,
        }
    }
}

/// Runs one algorithm with the given settings.
pub fn run_algorithm(inst: &MarketInstance, algo: Algorithm, settings: &BenchSettings) -> Result<ClearingOutcome> {
    let est = || settings.estimate.build(inst);
    match algo {
        Algorithm::Swm => clear_swm(inst, &settings.swm),
        Algorithm::IeqLpMa => run_ieqlp(inst, &est()?, &settings.ieqlp),
        Algorithm::IeQpWr => run_ieqp_wr(inst, &est()?, &settings.ieqp),
        Algorithm::IbCqp => run_ibcqp(inst, &settings.ibcqp),
        Algorithm::BbTree => Ok(run_bbtree(inst, &est()?, &settings.bbtree)?.outcome),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub algo: Algorithm,
    pub objective: f64,
    pub total_cost: f64,
    pub time_ms: f64,
    pub indicator: f64,
    pub iterations: usize,
    pub status: Option<SolveStatus>,
    pub error: Option<String>,
    /// Outcome invariants that failed to hold.
    pub violations: Vec<String>,
}

impl BenchRow {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.violations.is_empty()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
    /// Tree-search total cost over SWM total cost.
    pub cost_ratio: Option<f64>,
}

impl BenchmarkReport {
    pub fn row(&self, algo: Algorithm) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.algo == algo)
    }

    /// `true` when the tree search clears no dearer than SWM, up to a
    /// relative slack.
    pub fn cm_dominates(&self, slack: f64) -> Option<bool> {
        let swm = self.row(Algorithm::Swm).filter(|r| r.ok())?;
        let bb = self.row(Algorithm::BbTree).filter(|r| r.ok())?;
        Some(bb.total_cost <= swm.total_cost + slack * swm.total_cost.abs().max(1.0))
    }
}

/// Runs SWM and the requested algorithms in order. Failures are recorded
/// in the row and do not stop the run.
pub fn run_benchmark(inst: &MarketInstance, algorithms: &[Algorithm], settings: &BenchSettings) -> BenchmarkReport {
    let mut list = vec![Algorithm::Swm];
    list.extend(algorithms.iter().copied().filter(|a| *a != Algorithm::Swm));
    let tol = Tolerances {
        feasibility: 1e-6,
        ..Tolerances::default()
    };
    let rows: Vec<BenchRow> = list
        .into_iter()
        .map(|algo| {
            let start = Instant::now();
            let res = run_algorithm(inst, algo, settings);
            let time_ms = start.elapsed().as_secs_f64() * 1e3;
            match res {
                Ok(out) => BenchRow {
                    algo,
                    objective: out.objective,
                    total_cost: out.total_cost,
                    time_ms,
                    indicator: out.diagnostics.indicator,
                    iterations: out.diagnostics.iterations,
                    status: Some(out.diagnostics.status),
                    error: None,
                    violations: check_outcome(inst, &out, &tol),
                },
                Err(e) => BenchRow {
                    algo,
                    objective: f64::NAN,
                    total_cost: f64::NAN,
                    time_ms,
                    indicator: f64::NAN,
                    iterations: 0,
                    status: None,
                    error: Some(e.to_string()),
                    violations: Vec::new(),
                },
            }
        })
        .collect();
    let mut report = BenchmarkReport { rows, cost_ratio: None };
    if let (Some(s), Some(b)) = (report.row(Algorithm::Swm), report.row(Algorithm::BbTree)) {
        if s.ok() && b.ok() && s.total_cost != 0.0 {
            report.cost_ratio = Some(b.total_cost / s.total_cost);
        }
    }
    report
}
