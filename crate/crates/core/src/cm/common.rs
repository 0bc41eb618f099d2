//! Shared cost-minimisation machinery: active-set estimates and the
//! bilinear program with prices as explicit variables,
//!
//! ```text
//!     minimize    sum_z v_z y_z
//!     subject to  v_z >= m_i x_i + a_i   (i in J_z)
//!                 y = E x,  1'x = d,  M y <= b,  0 <= x <= Q
//! ```
//!
//! linearised either by fixing the weights `y` in the objective (quasi-LP)
//! or by pinning `y` entirely (fixed-y LP).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ClearError, Result};
use crate::kernel::{solve_lp, LinearProgram, LpStatus};
use crate::market::{zonal_region, MarketInstance, Polytope};
use crate::swm::{clear_swm, SwmSettings};

/// Per-zone sets of players assumed dispatched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveEstimate {
    pub sets: Vec<Vec<usize>>,
}

impl ActiveEstimate {
    /// Every player of every zone.
    pub fn all(inst: &MarketInstance) -> Self {
        Self {
            sets: (0..inst.num_zones()).map(|z| inst.zone_members(z)).collect(),
        }
    }

    pub fn contains(&self, player: usize, zone: usize) -> bool {
        self.sets[zone].contains(&player)
    }

    /// Capacity of the estimated players of each zone.
    pub fn capacities(&self, inst: &MarketInstance) -> Vec<f64> {
        self.sets
            .iter()
            .map(|s| s.iter().map(|&i| inst.players[i].q).sum())
            .collect()
    }

    /// Highest price any estimated player can ask, per zone.
    pub fn price_caps(&self, inst: &MarketInstance) -> Vec<f64> {
        self.sets
            .iter()
            .map(|s| s.iter().map(|&i| inst.players[i].max_price()).fold(0.0, f64::max))
            .collect()
    }
}

/// How the SWM dispatch is turned into an active-set estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateRule {
    /// Players with positive SWM dispatch only.
    Dispatched,
    /// Also players whose intercept lies below the SWM zonal price.
    Augmented,
}

/// Active-set estimate from the SWM dispatch.
pub fn estimate_active_set(inst: &MarketInstance, rule: EstimateRule) -> Result<ActiveEstimate> {
    let settings = SwmSettings::default();
    let out = clear_swm(inst, &settings)?;
    let mut sets = vec![Vec::new(); inst.num_zones()];
    for (i, p) in inst.players.iter().enumerate() {
        let dispatched = settings.tolerances.is_active(out.x[i], p.q);
        let cheap = rule == EstimateRule::Augmented && !out.active[p.zone].empty && p.a < out.v[p.zone];
        if dispatched || cheap {
            sets[p.zone].push(i);
        }
    }
    Ok(ActiveEstimate { sets })
}

/// Column layout of the bilinear program restricted to an estimate:
/// one `x` column per estimated player followed by one `v` column per zone
/// with a nonempty estimate.
#[derive(Clone, Debug)]
pub struct McLayout {
    pub players: Vec<usize>,
    pub zones: Vec<usize>,
    x_col: Vec<Option<usize>>,
    v_col: Vec<Option<usize>>,
}

impl McLayout {
    pub fn new(inst: &MarketInstance, est: &ActiveEstimate) -> Self {
        let mut players: Vec<usize> = est.sets.iter().flatten().copied().collect();
        players.sort_unstable();
        let zones: Vec<usize> = (0..inst.num_zones()).filter(|&z| !est.sets[z].is_empty()).collect();
        let mut x_col = vec![None; inst.num_players()];
        for (c, &i) in players.iter().enumerate() {
            x_col[i] = Some(c);
        }
        let mut v_col = vec![None; inst.num_zones()];
        for (c, &z) in zones.iter().enumerate() {
            v_col[z] = Some(players.len() + c);
        }
        Self {
            players,
            zones,
            x_col,
            v_col,
        }
    }

    pub fn nx(&self) -> usize {
        self.players.len()
    }

    pub fn nvars(&self) -> usize {
        self.players.len() + self.zones.len()
    }

    pub fn x_col(&self, player: usize) -> Option<usize> {
        self.x_col[player]
    }

    pub fn v_col(&self, zone: usize) -> Option<usize> {
        self.v_col[zone]
    }

    /// Expands a solution vector into full-length `x` and `v`.
    pub fn split(&self, inst: &MarketInstance, sol: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; inst.num_players()];
        for (c, &i) in self.players.iter().enumerate() {
            x[i] = sol[c];
        }
        let mut v = vec![0.0; inst.num_zones()];
        for (c, &z) in self.zones.iter().enumerate() {
            v[z] = sol[self.players.len() + c];
        }
        (x, v)
    }
}

/// Constraint blocks of the bilinear program over `(x, v)`, for a given
/// network polytope (the instance polytope or a branch-and-bound node).
#[derive(Clone, Debug)]
pub struct McConstraints {
    pub layout: McLayout,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl McConstraints {
    /// Price rows, capacity box, network rows over `E x`, balance, and an
    /// upper cap on each `v_z` at the highest ask of its zone (never binding
    /// at an optimum, but it keeps every LP bounded).
    pub fn new(inst: &MarketInstance, est: &ActiveEstimate, polytope: &Polytope) -> Self {
        let layout = McLayout::new(inst, est);
        let nx = layout.nx();
        let n = layout.nvars();
        let caps = est.price_caps(inst);
        let k = polytope.rows();
        let rows = nx + 2 * nx + k + layout.zones.len();
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        let mut r = 0;
        for (c, &i) in layout.players.iter().enumerate() {
            let p = &inst.players[i];
            a[(r, c)] = p.m;
            a[(r, layout.v_col(p.zone).expect("zone of an estimated player"))] = -1.0;
            b[r] = -p.a;
            r += 1;
        }
        for (c, &i) in layout.players.iter().enumerate() {
            a[(r, c)] = -1.0;
            r += 1;
            a[(r, c)] = 1.0;
            b[r] = inst.players[i].q;
            r += 1;
        }
        for row in 0..k {
            for (c, &i) in layout.players.iter().enumerate() {
                a[(r, c)] = polytope.m[(row, inst.players[i].zone)];
            }
            b[r] = polytope.b[row];
            r += 1;
        }
        for &z in &layout.zones {
            a[(r, layout.v_col(z).unwrap())] = 1.0;
            b[r] = caps[z];
            r += 1;
        }
        let mut a_eq = DMatrix::zeros(1, n);
        for c in 0..nx {
            a_eq[(0, c)] = 1.0;
        }
        let b_eq = DVector::from_element(1, inst.total_demand());
        Self {
            layout,
            a_in: a,
            b_in: b,
            a_eq,
            b_eq,
        }
    }

    pub fn lp(&self, c: DVector<f64>) -> Result<LinearProgram> {
        LinearProgram::new(c, self.a_in.clone(), self.b_in.clone(), self.a_eq.clone(), self.b_eq.clone())
    }

    /// Quasi-LP objective `sum_z v_z y_hat_z`.
    pub fn qlp_objective(&self, y_hat: &[f64]) -> DVector<f64> {
        let mut c = DVector::zeros(self.layout.nvars());
        for &z in &self.layout.zones {
            c[self.layout.v_col(z).unwrap()] = y_hat[z];
        }
        c
    }
}

/// Quasi-LP for the weights `y_hat`; the coupling `y = E x` is dropped.
pub fn build_mc_qlp(inst: &MarketInstance, est: &ActiveEstimate, y_hat: &[f64]) -> Result<(LinearProgram, McLayout)> {
    if y_hat.len() != inst.num_zones() {
        return Err(ClearError::Dimension("y_hat length differs from zone count".into()));
    }
    let cons = McConstraints::new(inst, est, &inst.polytope);
    let lp = cons.lp(cons.qlp_objective(y_hat))?;
    Ok((lp, cons.layout))
}

/// Smallest prices compatible with `x` under the estimate:
/// `v_z = max_{i in J_z} (m_i x_i + a_i)`, or 0 for zones without estimate.
pub fn tight_prices(inst: &MarketInstance, est: &ActiveEstimate, x: &[f64]) -> Vec<f64> {
    est.sets
        .iter()
        .map(|s| {
            s.iter()
                .map(|&i| inst.players[i].marginal_price(x[i]))
                .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
                .unwrap_or(0.0)
        })
        .collect()
}

/// Objective of the bilinear program at `x` with tight prices.
pub fn mc_value(inst: &MarketInstance, est: &ActiveEstimate, x: &[f64]) -> f64 {
    let v = tight_prices(inst, est, x);
    let y = inst.aggregate(x);
    v.iter().zip(&y).map(|(a, b)| a * b).sum()
}

/// Result of the fixed-`y` LP.
#[derive(Clone, Debug)]
pub struct FixedYSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Solves the bilinear program with `y` pinned, which makes it an LP.
pub fn cm_objective_given_y(inst: &MarketInstance, est: &ActiveEstimate, y: &[f64]) -> Result<FixedYSolution> {
    let nz = inst.num_zones();
    if y.len() != nz {
        return Err(ClearError::Dimension("y length differs from zone count".into()));
    }
    let d = inst.total_demand();
    let sum: f64 = y.iter().sum();
    if (sum - d).abs() > 1e-8 * d.max(1.0) {
        return Err(ClearError::Infeasible(format!("1'y = {sum} differs from demand {d}")));
    }
    if !inst.polytope.contains(y, 1e-9) {
        return Err(ClearError::Infeasible("y violates the network polytope".into()));
    }
    let caps = est.capacities(inst);
    for z in 0..nz {
        if y[z] < -1e-9 || y[z] > caps[z] + 1e-9 * caps[z].max(1.0) {
            return Err(ClearError::Infeasible(format!("y_{z} outside [0, capacity]")));
        }
    }
    // network rows are constant once y is pinned
    let cons = McConstraints::new(inst, est, &Polytope::empty_rows(nz));
    let layout = &cons.layout;
    let n = layout.nvars();
    let mut a_eq = DMatrix::zeros(layout.zones.len(), n);
    let mut b_eq = DVector::zeros(layout.zones.len());
    for (r, &z) in layout.zones.iter().enumerate() {
        for &i in &est.sets[z] {
            a_eq[(r, layout.x_col(i).unwrap())] = 1.0;
        }
        b_eq[r] = y[z];
    }
    let c = cons.qlp_objective(y);
    let lp = LinearProgram::new(c, cons.a_in.clone(), cons.b_in.clone(), a_eq, b_eq)?;
    let sol = solve_lp(&lp, 1e-11)?;
    match sol.status {
        LpStatus::Optimal | LpStatus::Stalled if sol.kkt.primal_eq < 1e-7 => {
            let (x, _) = layout.split(inst, &sol.x);
            // prices from the dispatch: exact where y_z > 0
            let v = tight_prices(inst, est, &x);
            let objective = v.iter().zip(y).map(|(a, b)| a * b).sum();
            Ok(FixedYSolution { objective, x, v })
        }
        LpStatus::Infeasible => Err(ClearError::Infeasible("fixed-y program".into())),
        s => Err(ClearError::Stalled(format!("fixed-y program ended with {s:?}"))),
    }
}

/// Zonal feasible region for `y` under the estimate's capacities:
/// `(A_in, b_in, A_eq, b_eq)` with balance as the single equality.
pub fn zonal_constraints(
    inst: &MarketInstance,
    est: &ActiveEstimate,
    polytope: &Polytope,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    zonal_region(inst, polytope, &est.capacities(inst))
}

/// Snaps near-bound dispatch onto `[0, Q]` and restores exact balance by
/// moving only players strictly inside their bounds.
pub fn clean_allocation(inst: &MarketInstance, x: &mut [f64]) {
    let snap = 1e-9;
    for (xi, p) in x.iter_mut().zip(&inst.players) {
        if *xi <= snap * p.q {
            *xi = 0.0;
        } else if *xi >= p.q * (1.0 - snap) {
            *xi = p.q;
        }
    }
    let d = inst.total_demand();
    let gap = d - x.iter().sum::<f64>();
    if gap == 0.0 {
        return;
    }
    let room: Vec<f64> = x
        .iter()
        .zip(&inst.players)
        .map(|(&xi, p)| {
            if xi > 0.0 && xi < p.q {
                if gap > 0.0 {
                    p.q - xi
                } else {
                    xi
                }
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = room.iter().sum();
    if total >= gap.abs() {
        for (xi, r) in x.iter_mut().zip(&room) {
            *xi += gap * r / total;
        }
    } else {
        crate::market::repair_allocation(inst, x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_instance;
    use crate::market::PlayerOrder;

    fn one_zone(d: f64, players: &[(f64, f64, f64)]) -> MarketInstance {
        MarketInstance {
            zones: vec!["Z".into()],
            demand: vec![d],
            players: players
                .iter()
                .enumerate()
                .map(|(i, &(m, a, q))| PlayerOrder::new(format!("p{i}"), 0, m, a, q).unwrap())
                .collect(),
            polytope: Polytope::empty_rows(1),
        }
    }

    #[test]
    fn fixture_estimate_is_everyone() {
        let inst = fixture_instance();
        let est = estimate_active_set(&inst, EstimateRule::Dispatched).unwrap();
        assert_eq!(est, ActiveEstimate::all(&inst));
    }

    #[test]
    fn merit_order_estimate() {
        let inst = one_zone(1.0, &[(1.0, 0.0, 5.0), (1.0, 10.0, 5.0)]);
        let est = estimate_active_set(&inst, EstimateRule::Augmented).unwrap();
        assert_eq!(est.sets, vec![vec![0]]);
    }

    #[test]
    fn full_dispatch_estimate() {
        let inst = one_zone(10.0, &[(1.0, 0.0, 5.0), (1.0, 10.0, 5.0)]);
        let est = estimate_active_set(&inst, EstimateRule::Dispatched).unwrap();
        assert_eq!(est.sets, vec![vec![0, 1]]);
    }

    #[test]
    fn fixture_qlp_dimensions() {
        let inst = fixture_instance();
        let est = ActiveEstimate::all(&inst);
        let (lp, layout) = build_mc_qlp(&inst, &est, &inst.demand).unwrap();
        assert_eq!(layout.nvars(), 9);
        assert_eq!(lp.c.len(), 9);
        let sol = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
    }

    #[test]
    fn single_player_price_row_binds() {
        let inst = one_zone(2.0, &[(0.5, 1.0, 4.0)]);
        let est = ActiveEstimate::all(&inst);
        let (lp, layout) = build_mc_qlp(&inst, &est, &[2.0]).unwrap();
        let sol = solve_lp(&lp, 1e-10).unwrap();
        let (x, v) = layout.split(&inst, &sol.x);
        assert!((x[0] - 2.0).abs() < 1e-7);
        assert!((v[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn fixed_y_single_zone_is_stack_price() {
        // two marginal players: 0.5 x1 + 0.4 = 0.5 x2 + 0.8, x1 + x2 = 4
        let inst = one_zone(4.0, &[(0.5, 0.4, 3.0), (0.5, 0.8, 4.0)]);
        let est = ActiveEstimate::all(&inst);
        let s = cm_objective_given_y(&inst, &est, &[4.0]).unwrap();
        assert!((s.v[0] - 1.6).abs() < 1e-8);
        assert!((s.objective - 6.4).abs() < 1e-7);
    }

    #[test]
    fn fixed_y_outside_polytope() {
        let inst = fixture_instance();
        let est = ActiveEstimate::all(&inst);
        let r = cm_objective_given_y(&inst, &est, &[14.0, 4.0, 4.0]);
        assert!(matches!(r, Err(ClearError::Infeasible(_))));
    }

    #[test]
    fn fixture_optimum_value() {
        let inst = fixture_instance();
        let est = ActiveEstimate::all(&inst);
        let y = [8.0, 7.0 + 7.0 / 18.0, 6.0 + 11.0 / 18.0];
        let s = cm_objective_given_y(&inst, &est, &y).unwrap();
        assert!((s.objective - 77.463).abs() < 0.01);
    }

    #[test]
    fn qlp_at_optimal_weights_matches_value() {
        let inst = fixture_instance();
        let est = ActiveEstimate::all(&inst);
        let y = [8.0, 7.0 + 7.0 / 18.0, 6.0 + 11.0 / 18.0];
        let fixed = cm_objective_given_y(&inst, &est, &y).unwrap();
        assert!((mc_value(&inst, &est, &fixed.x) - fixed.objective).abs() < 1e-7);
    }
}
