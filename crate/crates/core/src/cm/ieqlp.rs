//! Iterative enhanced quasi-LP heuristic: solve the quasi-LP for weights
//! `y_hat`, move `y_hat` towards the resulting `E x` (optionally through an
//! exponential moving average) and keep the best dispatch seen.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::common::{clean_allocation, mc_value, zonal_constraints, ActiveEstimate, McConstraints};
use crate::error::{ClearError, Result};
use crate::kernel::{chebyshev_center_affine, solve_lp, LpStatus};
use crate::market::{ClearingOutcome, Diagnostics, MarketInstance, Polytope, SolveStatus};
use crate::settings::Tolerances;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum YStart {
    /// Zonal demand.
    Demand,
    /// Chebyshev centre of the feasible zonal slice.
    Chebyshev,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IeqLpSettings {
    pub max_iters: usize,
    /// Stop once `||x_i - x_{i-1}||^2 / ||x_i|| < delta`.
    pub delta: f64,
    /// Moving-average weight on the previous `y_hat`; 0 gives the plain method.
    pub alpha_y: f64,
    pub y0: YStart,
    pub lp_tol: f64,
}

impl Default for IeqLpSettings {
    fn default() -> Self {
        Self {
            max_iters: 200,
            delta: 1e-6,
            alpha_y: 0.5,
            y0: YStart::Chebyshev,
            lp_tol: 1e-9,
        }
    }
}

/// Raw result of the heuristic on a given polytope.
#[derive(Clone, Debug)]
pub struct IeqLpResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Best objective with tight prices.
    pub f_best: f64,
    /// `f_best` after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub indicator: f64,
    pub status: SolveStatus,
}

/// Runs the heuristic on the instance polytope and packages the outcome.
pub fn run_ieqlp(inst: &MarketInstance, est: &ActiveEstimate, settings: &IeqLpSettings) -> Result<ClearingOutcome> {
    let start = Instant::now();
    let y0 = match settings.y0 {
        YStart::Demand => inst.demand.clone(),
        YStart::Chebyshev => slice_center(inst, est, &inst.polytope)?.0,
    };
    let res = run_ieqlp_on(inst, est, &inst.polytope, &y0, settings)?;
    let name = if settings.alpha_y > 0.0 { "ieqlp-ma" } else { "ieqlp" };
    let mut diag = Diagnostics::new(name);
    diag.iterations = res.iterations;
    diag.indicator = res.indicator;
    diag.status = res.status;
    diag.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(ClearingOutcome::from_allocation(inst, res.x, res.f_best, diag, &Tolerances::default()))
}

/// Chebyshev centre and radius of `{y : M y <= b, 1'y = d, 0 <= y <= cap}`.
pub fn slice_center(inst: &MarketInstance, est: &ActiveEstimate, polytope: &Polytope) -> Result<(Vec<f64>, f64)> {
    let (a, b, a_eq, b_eq) = zonal_constraints(inst, est, polytope);
    let ball = chebyshev_center_affine(&a, &b, &a_eq, &b_eq)?;
    Ok((ball.center.iter().copied().collect(), ball.radius))
}

/// The heuristic restricted to `polytope`, started from `y0`.
pub fn run_ieqlp_on(
    inst: &MarketInstance,
    est: &ActiveEstimate,
    polytope: &Polytope,
    y0: &[f64],
    settings: &IeqLpSettings,
) -> Result<IeqLpResult> {
    if !(0.0..1.0).contains(&settings.alpha_y) {
        return Err(ClearError::Invalid("alpha_y must lie in [0, 1)".into()));
    }
    let cons = McConstraints::new(inst, est, polytope);
    let mut y_hat = y0.to_vec();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut prev: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut status = SolveStatus::IterationCap;
    let mut indicator = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..settings.max_iters.max(1) {
        iterations = it + 1;
        let lp = cons.lp(cons.qlp_objective(&y_hat))?;
        let sol = solve_lp(&lp, settings.lp_tol)?;
        if sol.status != LpStatus::Optimal {
            if best.is_none() {
                return Err(match sol.status {
                    LpStatus::Infeasible => ClearError::Infeasible("quasi-LP has no feasible point".into()),
                    s => ClearError::Stalled(format!("quasi-LP ended with {s:?}")),
                });
            }
            status = SolveStatus::Stalled;
            break;
        }
        let (mut x, _) = cons.layout.split(inst, &sol.x);
        clean_allocation(inst, &mut x);
        let f = mc_value(inst, est, &x);
        if best.as_ref().map_or(true, |(fb, _)| f < *fb) {
            best = Some((f, x.clone()));
        }
        trace.push(best.as_ref().unwrap().0);
        let ex = inst.aggregate(&x);
        for (yh, e) in y_hat.iter_mut().zip(&ex) {
            *yh = settings.alpha_y * *yh + (1.0 - settings.alpha_y) * e;
        }
        if let Some(p) = &prev {
            let diff2: f64 = x.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
            let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            indicator = diff2 / norm.max(1e-300);
            if indicator < settings.delta {
                status = SolveStatus::Converged;
                break;
            }
        }
        prev = Some(x);
    }
    let (f_best, x) = best.expect("at least one iteration");
    Ok(IeqLpResult {
        y: inst.aggregate(&x),
        x,
        f_best,
        trace,
        iterations,
        indicator,
        status,
    })
}
