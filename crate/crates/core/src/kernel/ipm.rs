//! Dense primal-dual interior-point method for convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x' H x + c' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//! ```
//!
//! with Mehrotra predictor-corrector steps. Linear programs are the special
//! case `H = 0`. Every system is small and dense, so each Newton step
//! factors the reduced bordered KKT matrix with a full-pivot LU.

use nalgebra::{DMatrix, DVector};

use crate::error::{ClearError, Result};

/// Termination status of an LP or QP solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration cap reached without meeting the tolerances.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
    }
}

/// Solution of an LP or QP.
#[derive(Clone, Debug)]
pub struct Solution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    /// Residuals relative to `1 + |data|`.
    pub kkt: KktResiduals,
    /// Largest ratio of a residual to its target; at most 1 when converged.
    pub merit: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct IpmSettings {
    /// Target for stationarity and the complementarity gap.
    pub tol: f64,
    /// Target for primal feasibility.
    pub feas_tol: f64,
    pub max_iters: usize,
}

impl IpmSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            feas_tol: tol.min(1e-9),
            max_iters: 200,
        }
    }
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self::with_tol(1e-9)
    }
}

pub(crate) struct Problem<'a> {
    pub h: Option<&'a DMatrix<f64>>,
    pub c: &'a DVector<f64>,
    pub a_in: &'a DMatrix<f64>,
    pub b_in: &'a DVector<f64>,
    pub a_eq: &'a DMatrix<f64>,
    pub b_eq: &'a DVector<f64>,
}

impl Problem<'_> {
    pub fn check_dims(&self) -> Result<()> {
        let n = self.c.len();
        let bad = |what: &str| Err(ClearError::Dimension(what.to_string()));
        if let Some(h) = self.h {
            if h.nrows() != n || h.ncols() != n {
                return bad("Hessian must be n x n");
            }
        }
        if self.a_in.ncols() != n && self.a_in.nrows() > 0 {
            return bad("inequality matrix column count differs from objective length");
        }
        if self.a_in.nrows() != self.b_in.len() {
            return bad("inequality rows differ from right-hand side length");
        }
        if self.a_eq.ncols() != n && self.a_eq.nrows() > 0 {
            return bad("equality matrix column count differs from objective length");
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return bad("equality rows differ from right-hand side length");
        }
        Ok(())
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let lin = self.c.dot(x);
        match self.h {
            Some(h) => lin + 0.5 * x.dot(&(h * x)),
            None => lin,
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Mul-by-transpose that tolerates zero-row matrices built with any width.
fn tr_mul(a: &DMatrix<f64>, v: &DVector<f64>, n: usize) -> DVector<f64> {
    if a.nrows() == 0 {
        DVector::zeros(n)
    } else {
        a.tr_mul(v)
    }
}

fn mul(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        DVector::zeros(0)
    } else {
        a * x
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0_f64;
    for (a, d) in v.iter().zip(dv.iter()) {
        if *d < 0.0 {
            alpha = alpha.min(-a / d);
        }
    }
    alpha
}

/// Core Mehrotra iteration; never classifies infeasibility itself.
pub(crate) fn mehrotra(p: &Problem<'_>, settings: &IpmSettings) -> Solution {
    mehrotra_from(p, settings, 1.0)
}

/// `start` scales the initial slacks and multipliers.
fn mehrotra_from(p: &Problem<'_>, settings: &IpmSettings, start: f64) -> Solution {
    let n = p.c.len();
    let m = p.b_in.len();
    let q = p.b_eq.len();
    let scale_c = 1.0 + inf_norm(p.c);
    let scale_in = 1.0 + inf_norm(p.b_in);
    let scale_eq = 1.0 + inf_norm(p.b_eq);

    let mut x = DVector::zeros(n);
    if q > 0 {
        if let Ok(x0) = p.a_eq.clone().svd(true, true).solve(p.b_eq, 1e-12) {
            x = x0;
        }
    }
    let mut s = if m > 0 { p.b_in - mul(p.a_in, &x) } else { DVector::zeros(0) };
    let s_floor = start * 1.0_f64.max(0.1 * inf_norm(&s));
    for si in s.iter_mut() {
        *si = si.max(s_floor);
    }
    let mut z = DVector::from_element(m, start);
    let mut y = DVector::zeros(q);

    let reg = 1e-11;
    let mut iterations = 0;
    let mut status = LpStatus::Stalled;

    let residuals = |x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, s: &DVector<f64>| {
        let mut rd = p.c + tr_mul(p.a_eq, y, n) + tr_mul(p.a_in, z, n);
        if let Some(h) = p.h {
            rd += h * x;
        }
        let req = mul(p.a_eq, x) - p.b_eq;
        let rin = if m > 0 { mul(p.a_in, x) + s - p.b_in } else { DVector::zeros(0) };
        (rd, req, rin)
    };

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> = None;
    let mut best_it = 0;
    for it in 0..=settings.max_iters {
        iterations = it;
        let (rd, req, rin) = residuals(&x, &y, &z, &s);
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        let obj_scale = 1.0 + p.objective(&x).abs();
        let merit = (inf_norm(&rd) / (settings.tol * scale_c))
            .max(inf_norm(&req) / (settings.feas_tol * scale_eq))
            .max(inf_norm(&rin) / (settings.feas_tol * scale_in))
            .max(mu / (settings.tol * obj_scale));
        if !merit.is_finite() {
            break;
        }
        if merit <= 1.0 {
            status = LpStatus::Optimal;
            best = None;
            break;
        }
        if best.as_ref().map_or(true, |b| merit < b.0) {
            best = Some((merit, x.clone(), y.clone(), z.clone(), s.clone()));
            best_it = it;
        } else if it > best_it + 15 {
            break;
        }
        if it == settings.max_iters {
            break;
        }
        if inf_norm(&x) > 1e12 || inf_norm(&z) > 1e14 || !mu.is_finite() {
            break;
        }

        // reduced Hessian K = H + A_in' W A_in
        let w = z.component_div(&s);
        let mut k = match p.h {
            Some(h) => h.clone(),
            None => DMatrix::zeros(n, n),
        };
        if m > 0 {
            let mut wa = p.a_in.clone();
            for (i, mut row) in wa.row_iter_mut().enumerate() {
                row *= w[i];
            }
            k += p.a_in.tr_mul(&wa);
        }
        let hscale = match p.h {
            Some(h) => 1.0 + h.amax(),
            None => 1.0,
        };
        let dim = n + q;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&k);
        if q > 0 {
            kkt.view_mut((n, 0), (q, n)).copy_from(p.a_eq);
            kkt.view_mut((0, n), (n, q)).copy_from(&p.a_eq.transpose());
        }
        let exact = kkt.clone();
        for i in 0..n {
            kkt[(i, i)] += reg * hscale;
        }
        for i in 0..q {
            kkt[(n + i, n + i)] = -reg;
        }
        let lu = kkt.lu();

        let solve = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // dz = W (A_in dx + r_in) - S^-1 r_c
            let s_inv_rc = rc.component_div(&s);
            let t = w.component_mul(&rin) - &s_inv_rc;
            let top = -&rd - tr_mul(p.a_in, &t, n);
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&top);
            if q > 0 {
                rhs.rows_mut(n, q).copy_from(&(-&req));
            }
            let mut sol = lu.solve(&rhs)?;
            for _ in 0..2 {
                let r = &rhs - &exact * &sol;
                sol += lu.solve(&r)?;
            }
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, q).into_owned();
            let adx = mul(p.a_in, &dx);
            let dz = w.component_mul(&(&adx + &rin)) - s_inv_rc;
            let ds = -&rin - adx;
            Some((dx, dy, dz, ds))
        };

        let rc_aff = s.component_mul(&z);
        let Some((dx_a, _dy_a, dz_a, ds_a)) = solve(&rc_aff) else {
            break;
        };
        let (dx, dy, dz, ds) = if m > 0 {
            let a_p = max_step(&s, &ds_a);
            let a_d = max_step(&z, &dz_a);
            let mu_aff = (&s + a_p * &ds_a).dot(&(&z + a_d * &dz_a)) / m as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rc = rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
            match solve(&rc) {
                Some(d) => d,
                None => break,
            }
        } else {
            let _ = dx_a;
            match solve(&rc_aff) {
                Some(d) => d,
                None => break,
            }
        };
        if [&dx, &dy, &dz, &ds].iter().any(|v| v.iter().any(|a| !a.is_finite())) {
            break;
        }
        // separate primal and dual steps are only valid without a Hessian
        let (alpha_p, alpha_d) = if m == 0 {
            (1.0, 1.0)
        } else {
            let ap = (0.995 * max_step(&s, &ds)).min(1.0);
            let ad = (0.995 * max_step(&z, &dz)).min(1.0);
            if p.h.is_some() {
                (ap.min(ad), ap.min(ad))
            } else {
                (ap, ad)
            }
        };
        x += alpha_p * dx;
        y += alpha_d * dy;
        if m > 0 {
            z += alpha_d * dz;
            s += alpha_p * ds;
            for v in s.iter_mut().chain(z.iter_mut()) {
                *v = v.max(1e-200);
            }
        }
    }
    let mut best_merit = if status == LpStatus::Optimal { 1.0 } else { f64::INFINITY };
    if let Some((merit, bx, by, bz, bs)) = best {
        best_merit = merit;
        x = bx;
        y = by;
        z = bz;
        s = bs;
    }

    let (rd, req, _) = residuals(&x, &y, &z, &s);
    let obj = p.objective(&x);
    let kkt = KktResiduals {
        stationarity: inf_norm(&rd) / scale_c,
        primal_eq: inf_norm(&req) / scale_eq,
        primal_ineq: if m > 0 {
            let viol = mul(p.a_in, &x) - p.b_in;
            viol.iter().fold(0.0_f64, |a, v| a.max(*v)) / scale_in
        } else {
            0.0
        },
        complementarity: if m > 0 { s.dot(&z) / m as f64 / (1.0 + obj.abs()) } else { 0.0 },
    };
    Solution {
        x,
        objective: obj,
        status,
        iterations,
        eq_duals: y,
        ineq_duals: z,
        kkt,
        merit: best_merit,
    }
}

/// Runs the Mehrotra iteration and, when it fails, classifies the problem
/// with a phase-one feasibility LP.
pub(crate) fn solve_classified(p: &Problem<'_>, settings: &IpmSettings) -> Result<Solution> {
    p.check_dims()?;
    let mut sol = mehrotra(p, settings);
    if sol.status == LpStatus::Optimal {
        return Ok(sol);
    }
    for start in [100.0, 0.01] {
        let retry = mehrotra_from(p, settings, start);
        if retry.status == LpStatus::Optimal {
            return Ok(retry);
        }
        if retry.merit < sol.merit {
            sol = retry;
        }
    }
    // slightly short of the targets: accept rather than misclassify
    if sol.merit <= 1e3 {
        sol.status = LpStatus::Optimal;
        return Ok(sol);
    }
    let feasible = phase_one(p, settings)?;
    sol.status = if !feasible {
        LpStatus::Infeasible
    } else if inf_norm(&sol.x) > 1e9 {
        LpStatus::Unbounded
    } else {
        LpStatus::Stalled
    };
    Ok(sol)
}

/// `min t` s.t. `A_in x - t <= b_in`, `A_eq x = b_eq`, `t >= -1`; the
/// problem is feasible iff the optimum `t*` is (numerically) nonpositive.
fn phase_one(p: &Problem<'_>, settings: &IpmSettings) -> Result<bool> {
    let n = p.c.len();
    let m = p.b_in.len();
    let q = p.b_eq.len();
    if q > 0 {
        let svd = p.a_eq.clone().svd(true, true);
        let x0 = svd
            .solve(p.b_eq, 1e-12)
            .map_err(|e| ClearError::Stalled(e.to_string()))?;
        let res = inf_norm(&(p.a_eq * &x0 - p.b_eq));
        if res > 1e-7 * (1.0 + inf_norm(p.b_eq)) {
            return Ok(false);
        }
    }
    if m == 0 {
        return Ok(true);
    }
    let mut a = DMatrix::zeros(m + 1, n + 1);
    a.view_mut((0, 0), (m, n)).copy_from(p.a_in);
    for i in 0..m {
        a[(i, n)] = -1.0;
    }
    a[(m, n)] = -1.0;
    let mut b = DVector::zeros(m + 1);
    b.rows_mut(0, m).copy_from(p.b_in);
    b[m] = 1.0;
    let mut a_eq = DMatrix::zeros(q, n + 1);
    if q > 0 {
        a_eq.view_mut((0, 0), (q, n)).copy_from(p.a_eq);
    }
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let sub = Problem {
        h: None,
        c: &c,
        a_in: &a,
        b_in: &b,
        a_eq: &a_eq,
        b_eq: p.b_eq,
    };
    let mut s = *settings;
    s.max_iters = s.max_iters.max(100);
    let sol = mehrotra(&sub, &s);
    let t = sol.x[n];
    Ok(t <= 1e-7 * (1.0 + inf_norm(p.b_in)))
}
