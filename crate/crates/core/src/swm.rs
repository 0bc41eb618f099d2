//! Social welfare maximisation: the strictly convex dispatch QP
//!
//! ```text
//!     minimize    1/2 x' diag(m) x + a' x
//!     subject to  M E x <= b,  0 <= x <= Q,  1'x = d
//! ```
//!
//! with zonal prices read off the dispatch as the highest accepted marginal
//! ask of each zone.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kernel::{nullspace, solve_cqp, QuadraticProgram};
use crate::market::{repair_allocation, ClearingOutcome, Diagnostics, MarketInstance, SolveStatus};
use crate::settings::Tolerances;

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SwmSettings {
    /// Interior-point optimality tolerance.
    pub qp_tol: f64,
    pub tolerances: Tolerances,
}

impl Default for SwmSettings {
    fn default() -> Self {
        Self {
            qp_tol: 1e-10,
            tolerances: Tolerances::default(),
        }
    }
}

/// `M E` restricted to the network rows.
pub(crate) fn network_rows_on_x(inst: &MarketInstance) -> DMatrix<f64> {
    let e = inst.aggregation_matrix();
    if inst.polytope.rows() == 0 {
        DMatrix::zeros(0, inst.num_players())
    } else {
        &inst.polytope.m * e
    }
}

/// Social welfare objective `1/2 x' D_m x + a' x`.
pub fn swm_objective(inst: &MarketInstance, x: &[f64]) -> f64 {
    inst.players
        .iter()
        .zip(x)
        .map(|(p, &xi)| 0.5 * p.m * xi * xi + p.a * xi)
        .sum()
}

pub fn build_swm_qp(inst: &MarketInstance) -> Result<QuadraticProgram> {
    let n = inst.num_players();
    let me = network_rows_on_x(inst);
    let k = me.nrows();
    let mut a_in = DMatrix::zeros(k + 2 * n, n);
    let mut b_in = DVector::zeros(k + 2 * n);
    if k > 0 {
        a_in.view_mut((0, 0), (k, n)).copy_from(&me);
        b_in.rows_mut(0, k).copy_from(&inst.polytope.b);
    }
    for (i, p) in inst.players.iter().enumerate() {
        a_in[(k + i, i)] = -1.0;
        a_in[(k + n + i, i)] = 1.0;
        b_in[k + n + i] = p.q;
    }
    let h = DMatrix::from_diagonal(&DVector::from_iterator(n, inst.players.iter().map(|p| p.m)));
    let g = DVector::from_iterator(n, inst.players.iter().map(|p| p.a));
    QuadraticProgram::new(
        h,
        g,
        a_in,
        b_in,
        DMatrix::from_element(1, n, 1.0),
        DVector::from_element(1, inst.total_demand()),
    )
}

/// Clears the instance under social welfare maximisation.
pub fn clear_swm(inst: &MarketInstance, settings: &SwmSettings) -> Result<ClearingOutcome> {
    let start = Instant::now();
    let n = inst.num_players();
    let mut diag = Diagnostics::new("swm");
    if inst.total_demand() <= 0.0 {
        let x = vec![0.0; n];
        diag.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
        diag.indicator = 0.0;
        return Ok(ClearingOutcome::from_allocation(inst, x, 0.0, diag, &settings.tolerances));
    }
    let qp = build_swm_qp(inst)?;
    let sol = solve_cqp(&qp, settings.qp_tol)?;
    let raw: Vec<f64> = sol.x.iter().copied().collect();
    let x = polish_dispatch(inst, &raw).unwrap_or_else(|| {
        let mut x = raw.clone();
        repair_allocation(inst, &mut x);
        x
    });
    diag.iterations = sol.iterations;
    diag.indicator = sol.kkt.max();
    diag.status = match sol.status {
        crate::kernel::LpStatus::Optimal => SolveStatus::Converged,
        _ => SolveStatus::Stalled,
    };
    diag.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let obj = swm_objective(inst, &x);
    Ok(ClearingOutcome::from_allocation(inst, x, obj, diag, &settings.tolerances))
}

/// Snaps near-bound dispatch values onto their bounds and re-solves the
/// equality-constrained QP on the identified active set, widening the snap
/// threshold until the polished point satisfies the KKT conditions. Returns
/// `None` when no threshold yields an acceptable replacement.
fn polish_dispatch(inst: &MarketInstance, x: &[f64]) -> Option<Vec<f64>> {
    let me = network_rows_on_x(inst);
    [1e-7, 1e-6, 1e-5, 1e-4, 1e-3]
        .into_iter()
        .find_map(|snap| polish_with(inst, &me, x, snap))
}

fn polish_with(inst: &MarketInstance, me: &DMatrix<f64>, x: &[f64], snap: f64) -> Option<Vec<f64>> {
    let n = x.len();
    let mut fixed = vec![None; n];
    for (i, p) in inst.players.iter().enumerate() {
        if x[i] <= snap * p.q {
            fixed[i] = Some(0.0);
        } else if x[i] >= p.q * (1.0 - snap) {
            fixed[i] = Some(p.q);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let mut out: Vec<f64> = (0..n).map(|i| fixed[i].unwrap_or(x[i])).collect();
    let y = inst.aggregate(x);
    let slack = &inst.polytope.b - &inst.polytope.m * DVector::from_column_slice(&y);
    let active_rows: Vec<usize> = (0..inst.polytope.rows())
        .filter(|&k| slack[k] <= snap.max(1e-7) * (1.0 + inst.polytope.b[k].abs()))
        .collect();
    // rows: balance, then the active network rows, over all players
    let rows = 1 + active_rows.len();
    let mut c = DMatrix::zeros(rows, n);
    for i in 0..n {
        c[(0, i)] = 1.0;
        for (row, &k) in active_rows.iter().enumerate() {
            c[(row + 1, i)] = me[(k, i)];
        }
    }
    let mut r = DVector::zeros(rows);
    r[0] = inst.total_demand();
    for (row, &k) in active_rows.iter().enumerate() {
        r[row + 1] = inst.polytope.b[k];
    }
    let nf = free.len();
    if nf > 0 {
        let cf = c.select_columns(&free);
        let mut rf = r.clone();
        for i in 0..n {
            if let Some(val) = fixed[i] {
                rf -= c.column(i) * val;
            }
        }
        let xp = cf.clone().svd(true, true).solve(&rf, 1e-12).ok()?;
        if (&cf * &xp - &rf).amax() > 1e-9 * (1.0 + rf.amax()) {
            return None;
        }
        let basis = nullspace(&cf, nf);
        let dm = DVector::from_iterator(nf, free.iter().map(|&i| inst.players[i].m));
        let av = DVector::from_iterator(nf, free.iter().map(|&i| inst.players[i].a));
        let xf = if basis.ncols() > 0 {
            let dn = DMatrix::from_diagonal(&dm) * &basis;
            let k = basis.tr_mul(&dn);
            let rhs = -basis.tr_mul(&(dm.component_mul(&xp) + av));
            let w = k.cholesky()?.solve(&rhs);
            xp + basis * w
        } else {
            xp
        };
        for (j, &i) in free.iter().enumerate() {
            out[i] = xf[j];
        }
    }
    for (i, p) in inst.players.iter().enumerate() {
        if out[i] < -1e-12 * p.q || out[i] > p.q * (1.0 + 1e-12) {
            return None;
        }
        out[i] = out[i].clamp(0.0, p.q);
    }
    let yp = inst.aggregate(&out);
    if !inst.polytope.contains(&yp, 1e-10) {
        return None;
    }
    if !kkt_signs_hold(inst, &c, &out, &free, &fixed) {
        return None;
    }
    let scale = inst.total_demand().max(1.0);
    if swm_objective(inst, &out) > swm_objective(inst, x) + 1e-9 * scale {
        return None;
    }
    Some(out)
}

/// Multipliers of the equality-constrained solve have the signs required
/// at a minimiser: network rows push down, idle players would not lower
/// the cost by producing and full players would not by producing less.
fn kkt_signs_hold(inst: &MarketInstance, c: &DMatrix<f64>, x: &[f64], free: &[usize], fixed: &[Option<f64>]) -> bool {
    let grad: Vec<f64> = inst.players.iter().zip(x).map(|(p, &xi)| p.marginal_price(xi)).collect();
    let gmax = grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    let tol = 1e-9 * gmax;
    let mu = if free.is_empty() {
        // pick multipliers from the fixed players by least squares; only
        // sign conditions are tested below
        let g = DVector::from_iterator(grad.len(), grad.iter().map(|g| -g));
        match c.transpose().svd(true, true).solve(&g, 1e-12) {
            Ok(mu) => mu,
            Err(_) => return false,
        }
    } else {
        let cf = c.select_columns(free).transpose();
        let g = DVector::from_iterator(free.len(), free.iter().map(|&i| -grad[i]));
        let Ok(mu) = cf.clone().svd(true, true).solve(&g, 1e-12) else {
            return false;
        };
        if (&cf * &mu - &g).amax() > 1e-7 * gmax {
            return false;
        }
        mu
    };
    if mu.iter().skip(1).any(|&m| m < -tol) {
        return false;
    }
    let reduced = c.tr_mul(&mu);
    (0..x.len()).all(|i| match fixed[i] {
        Some(v) if v == 0.0 => grad[i] + reduced[i] >= -tol,
        Some(_) => grad[i] + reduced[i] <= tol,
        None => true,
    })
}

/// Fails with `ClearError::Infeasible` when no zonal quantities satisfy
/// network, balance and capacity together.
pub fn ensure_feasible(inst: &MarketInstance) -> Result<()> {
    crate::market::feasible_zonal_point(inst, &inst.polytope).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_instance;
    use crate::market::{check_outcome, check_paradoxical_orders, PlayerOrder, Polytope};

    fn single_zone() -> MarketInstance {
        MarketInstance {
            zones: vec!["Z".into()],
            demand: vec![3.0],
            players: vec![
                PlayerOrder::new("p0", 0, 1.0, 0.0, 10.0).unwrap(),
                PlayerOrder::new("p1", 0, 1.0, 1.0, 10.0).unwrap(),
            ],
            polytope: Polytope::empty_rows(1),
        }
    }

    #[test]
    fn closed_form_single_zone() {
        let out = clear_swm(&single_zone(), &SwmSettings::default()).unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-9 && (out.x[1] - 1.0).abs() < 1e-9);
        assert!((out.v[0] - 2.0).abs() < 1e-9);
        assert!((out.total_cost - 6.0).abs() < 1e-8);
    }

    #[test]
    fn fixture_outcome() {
        let inst = fixture_instance();
        let tol = Tolerances::default();
        let out = clear_swm(&inst, &SwmSettings::default()).unwrap();
        assert!(check_outcome(&inst, &out, &tol).is_empty());
        assert!(check_paradoxical_orders(&inst, &out, &tol).is_empty());
        assert!(out.total_cost >= 77.463 - 0.01);
        for (z, act) in out.active.iter().enumerate() {
            let members = inst.zone_members(z);
            let vmax = members
                .iter()
                .filter(|&&i| tol.is_active(out.x[i], inst.players[i].q))
                .map(|&i| inst.players[i].marginal_price(out.x[i]))
                .fold(f64::MIN, f64::max);
            assert!((out.v[z] - vmax).abs() < 1e-12);
            assert!(!act.empty);
        }
    }

    #[test]
    fn permutation_invariant_objective() {
        let inst = fixture_instance();
        let mut perm = inst.clone();
        perm.players.reverse();
        let a = clear_swm(&inst, &SwmSettings::default()).unwrap();
        let b = clear_swm(&perm, &SwmSettings::default()).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-9 * a.objective.abs());
    }

    #[test]
    fn zero_demand() {
        let mut inst = single_zone();
        inst.demand = vec![0.0];
        inst.polytope = Polytope::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_column_slice(&[0.0, 0.0]),
        )
        .unwrap();
        let out = clear_swm(&inst, &SwmSettings::default()).unwrap();
        assert_eq!(out.x, vec![0.0, 0.0]);
        assert_eq!(out.total_cost, 0.0);
    }

    #[test]
    fn inactive_player_is_exactly_zero() {
        let inst = MarketInstance {
            zones: vec!["Z".into()],
            demand: vec![2.0],
            players: vec![
                PlayerOrder::new("cheap", 0, 1.0, 0.0, 10.0).unwrap(),
                PlayerOrder::new("dear", 0, 1.0, 5.0, 10.0).unwrap(),
            ],
            polytope: Polytope::empty_rows(1),
        };
        let out = clear_swm(&inst, &SwmSettings::default()).unwrap();
        assert_eq!(out.x[1], 0.0);
        assert!((out.v[0] - 2.0).abs() < 1e-12);
    }
}
