//! Iterated Dikin-ellipsoid trust-region method with boundary
//! reconditioning on the bilinear program over `z = (x, v)`:
//!
//! ```text
//!     minimize    z' G z               (= v' E x)
//!     subject to  A_I z <= b_I,  1'x = d
//! ```
//!
//! Each step minimises the objective over the Dikin ellipsoid at the current
//! centre. Inequalities whose slack drops below `delta_b` become equalities;
//! once the equalities pin `z` the least-squares point is returned.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::common::{clean_allocation, mc_value, ActiveEstimate, McLayout};
use crate::error::{ClearError, Result};
use crate::kernel::{chebyshev_center_affine, dikin_ellipsoid, trust_region_solve, Ellipsoid, TrStatus};
use crate::market::{ClearingOutcome, Diagnostics, MarketInstance, SolveStatus};
use crate::settings::Tolerances;

/// Data of the bilinear program over `z = (x, v)`.
#[derive(Clone, Debug)]
pub struct McQpForm {
    pub layout: McLayout,
    pub g: DMatrix<f64>,
    /// `G + diag(eta)`.
    pub g_hat: DMatrix<f64>,
    /// Rows: price `[D_m, -E']`, `-x <= 0`, `x <= Q`, network `[M_p E, 0]`.
    pub a_i: DMatrix<f64>,
    pub b_i: DVector<f64>,
    /// Balance row, ones on the `x` block.
    pub e_bar: DVector<f64>,
    pub d: f64,
}

impl McQpForm {
    pub fn nvars(&self) -> usize {
        self.g.nrows()
    }

    /// `z' G z`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.g * z))
    }
}

/// Assembles the bilinear program for an estimate. `eta` may be empty
/// (no regularisation) or hold one entry per variable.
pub fn build_mcqp(inst: &MarketInstance, est: &ActiveEstimate, eta: &[f64]) -> Result<McQpForm> {
    if est.sets.iter().zip(0..inst.num_zones()).any(|(s, z)| s.is_empty() && !inst.zone_members(z).is_empty()) {
        return Err(ClearError::Invalid("estimate leaves a zone without players".into()));
    }
    let layout = McLayout::new(inst, est);
    let nx = layout.nx();
    let n = layout.nvars();
    if !eta.is_empty() && eta.len() != n {
        return Err(ClearError::Dimension(format!("eta has {} entries, expected {n}", eta.len())));
    }
    let mut g = DMatrix::zeros(n, n);
    for (c, &i) in layout.players.iter().enumerate() {
        let vc = layout.v_col(inst.players[i].zone).expect("zone of an estimated player");
        g[(c, vc)] = 0.5;
        g[(vc, c)] = 0.5;
    }
    let mut g_hat = g.clone();
    for (k, e) in eta.iter().enumerate() {
        g_hat[(k, k)] += e;
    }
    let k = inst.polytope.rows();
    let rows = 3 * nx + k;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    for (c, &i) in layout.players.iter().enumerate() {
        let p = &inst.players[i];
        a[(c, c)] = p.m;
        a[(c, layout.v_col(p.zone).unwrap())] = -1.0;
        b[c] = -p.a;
        a[(nx + c, c)] = -1.0;
        a[(2 * nx + c, c)] = 1.0;
        b[2 * nx + c] = p.q;
    }
    for row in 0..k {
        for (c, &i) in layout.players.iter().enumerate() {
            a[(3 * nx + row, c)] = inst.polytope.m[(row, inst.players[i].zone)];
        }
        b[3 * nx + row] = inst.polytope.b[row];
    }
    let mut e_bar = DVector::zeros(n);
    e_bar.rows_mut(0, nx).fill(1.0);
    Ok(McQpForm {
        layout,
        g,
        g_hat,
        a_i: a,
        b_i: b,
        e_bar,
        d: inst.total_demand(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IeQpSettings {
    pub max_iters: usize,
    /// Stop once `||z_i - z_c|| < delta ||z_c||`.
    pub delta: f64,
    /// Rows with slack below `delta_b (1 + |b_l|)` become equalities.
    pub delta_b: f64,
    /// Diagonal regularisation; empty means none.
    pub eta: Vec<f64>,
    pub tr_tol: f64,
}

impl Default for IeQpSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            delta: 2e-3,
            delta_b: 1e-6,
            eta: Vec::new(),
            tr_tol: 1e-10,
        }
    }
}

/// Raw iterate history of a run.
#[derive(Clone, Debug)]
pub struct IeQpResult {
    pub z: DVector<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// `z' G z` after each step.
    pub trace: Vec<f64>,
    /// Inequality rows turned into equalities, in order.
    pub converted: Vec<usize>,
    pub iterations: usize,
    /// Last `||z_i - z_c|| / ||z_c||`.
    pub indicator: f64,
    pub status: SolveStatus,
    /// Largest violation of the original inequalities at the returned point.
    pub max_violation: f64,
    pub pinned: bool,
    /// Dikin ellipsoid of every iteration with the inequality rows it was
    /// built from.
    pub ellipsoids: Vec<(Ellipsoid, Vec<usize>)>,
}

/// Runs the method and packages the outcome.
pub fn run_ieqp_wr(inst: &MarketInstance, est: &ActiveEstimate, settings: &IeQpSettings) -> Result<ClearingOutcome> {
    let start = Instant::now();
    let form = build_mcqp(inst, est, &settings.eta)?;
    let res = run_ieqp_on(&form, inst, None, settings)?;
    let mut x = res.x.clone();
    clean_allocation(inst, &mut x);
    let objective = mc_value(inst, est, &x);
    let mut diag = Diagnostics::new("ieqp-wr");
    diag.iterations = res.iterations;
    diag.indicator = res.indicator;
    diag.status = res.status;
    diag.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(ClearingOutcome::from_allocation(inst, x, objective, diag, &Tolerances::default()))
}

/// Chebyshev centre of `{A_I z <= b_I, e_bar' z = d}`.
pub fn mcqp_center(form: &McQpForm) -> Result<(DVector<f64>, f64)> {
    let eq = DMatrix::from_row_slice(1, form.nvars(), form.e_bar.as_slice());
    let ball = chebyshev_center_affine(&form.a_i, &form.b_i, &eq, &DVector::from_element(1, form.d))?;
    Ok((ball.center, ball.radius))
}

fn stack_row(m: &DMatrix<f64>, row: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows() + 1, row.len());
    if m.nrows() > 0 {
        out.view_mut((0, 0), (m.nrows(), row.len())).copy_from(m);
    }
    for (j, &v) in row.iter().enumerate() {
        out[(m.nrows(), j)] = v;
    }
    out
}

fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let cut = 1e-10 * sv.max().max(1e-300);
    sv.iter().filter(|&&s| s > cut).count()
}

/// Minimum-norm correction of `z` onto `{M_e z = b_e}`.
fn project(z: &DVector<f64>, m_e: &DMatrix<f64>, b_e: &DVector<f64>) -> Result<DVector<f64>> {
    let r = b_e - m_e * z;
    let dz = m_e
        .clone()
        .svd(true, true)
        .solve(&r, 1e-12)
        .map_err(|e| ClearError::Stalled(e.to_string()))?;
    Ok(z + dz)
}

/// The method on an assembled form. `z0` overrides the Chebyshev start and
/// must be strictly feasible for the inequalities.
pub fn run_ieqp_on(
    form: &McQpForm,
    inst: &MarketInstance,
    z0: Option<&DVector<f64>>,
    settings: &IeQpSettings,
) -> Result<IeQpResult> {
    let n = form.nvars();
    let mut z_c = match z0 {
        Some(z) => z.clone(),
        None => {
            let (c, r) = mcqp_center(form)?;
            if r <= 1e-12 {
                return Err(ClearError::Invalid("feasible set has empty interior".into()));
            }
            c
        }
    };
    let mut m_e = DMatrix::from_row_slice(1, n, form.e_bar.as_slice());
    let mut b_e = DVector::from_element(1, form.d);
    let mut remaining: Vec<usize> = (0..form.b_i.len()).collect();
    let mut converted = Vec::new();
    let mut trace = Vec::new();
    let mut status = SolveStatus::IterationCap;
    let mut indicator = f64::INFINITY;
    let mut iterations = 0;
    let mut pinned = false;
    let mut z_out = z_c.clone();
    let mut ellipsoids = Vec::new();
    for it in 0..settings.max_iters.max(1) {
        iterations = it + 1;
        let a_r = form.a_i.select_rows(remaining.iter());
        let b_r = DVector::from_iterator(remaining.len(), remaining.iter().map(|&l| form.b_i[l]));
        let ell = match dikin_ellipsoid(&z_c, &a_r, &b_r) {
            Ok(e) => e,
            Err(_) => {
                status = SolveStatus::Stalled;
                break;
            }
        };
        let tr = trust_region_solve(&form.g_hat, None, &m_e, &b_e, &ell, settings.tr_tol);
        ellipsoids.push((ell, remaining.clone()));
        let tr = match tr {
            Ok(t) => t,
            Err(_) => {
                status = SolveStatus::Stalled;
                break;
            }
        };
        let z = tr.z;
        let dz = (&z - &z_c).norm();
        indicator = dz / z_c.norm().max(1e-300);
        trace.push(form.objective(&z));
        z_out = z.clone();
        if indicator < settings.delta || tr.status == TrStatus::Interior {
            status = SolveStatus::Converged;
            break;
        }
        z_c = z;

        // reconditioning
        let mut changed = true;
        while changed {
            changed = false;
            let mut keep = Vec::with_capacity(remaining.len());
            for &l in &remaining {
                let slack = form.b_i[l] - (form.a_i.row(l) * &z_c)[0];
                if slack < settings.delta_b * (1.0 + form.b_i[l].abs()) {
                    let row: Vec<f64> = form.a_i.row(l).iter().copied().collect();
                    let cand = stack_row(&m_e, &row);
                    if rank(&cand) > rank(&m_e) {
                        m_e = cand;
                        b_e = DVector::from_iterator(b_e.len() + 1, b_e.iter().copied().chain([form.b_i[l]]));
                    }
                    converted.push(l);
                    changed = true;
                } else {
                    keep.push(l);
                }
            }
            remaining = keep;
            if changed {
                z_c = project(&z_c, &m_e, &b_e)?;
            }
        }
        if rank(&m_e) == n {
            let ls = m_e
                .clone()
                .svd(true, true)
                .solve(&b_e, 1e-14)
                .map_err(|e| ClearError::Stalled(e.to_string()))?;
            indicator = (&ls - &z_c).norm() / z_c.norm().max(1e-300);
            trace.push(form.objective(&ls));
            z_out = ls;
            pinned = true;
            status = SolveStatus::Converged;
            break;
        }
        z_out = z_c.clone();
    }
    let max_violation = (&form.a_i * &z_out - &form.b_i).max().max(0.0);
    let (x, v) = form.layout.split(inst, &z_out);
    Ok(IeQpResult {
        z: z_out,
        x,
        v,
        trace,
        converted,
        iterations,
        indicator,
        status,
        max_violation,
        pinned,
        ellipsoids,
    })
}
