//! Ellipsoidal trust-region subproblem with equality rows
//!
//! ```text
//!     minimize    z' G z + g' z
//!     subject to  M_e z = b_e,  ||A_s z - p_s|| <= r
//! ```
//!
//! `G` may be indefinite. The problem is reduced to the nullspace of `M_e`
//! and rotated so that the ellipsoid slice becomes a ball of radius `rho`;
//! the multiplier then solves the secular equation
//! `1/||s(mu)||^2 - 1/rho^2 = 0` by safeguarded Newton iteration.

use nalgebra::{DMatrix, DVector};

use super::dikin::Ellipsoid;
use crate::error::{ClearError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrStatus {
    /// Stationary point strictly inside the ellipsoid.
    Interior,
    Boundary,
    /// Multiplier sits at the smallest reduced eigenvalue.
    HardCase,
    /// Secular iteration hit its cap; the best iterate is returned.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct TrustRegionSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    /// Multiplier `mu >= 0` of `||A_s z - p_s||^2 <= r^2`.
    pub multiplier: f64,
    pub eq_multipliers: DVector<f64>,
    pub status: TrStatus,
    pub iterations: usize,
    /// Relative stationarity residual of the Lagrangian.
    pub stationarity: f64,
    /// `|mu (||A_s z - p_s||^2 - r^2)|`.
    pub complementarity: f64,
}

/// Orthonormal basis (columns) of the nullspace of `a` in `R^n`.
pub fn nullspace(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max();
    let cut = 1e-10 * smax.max(1e-300);
    let cols: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= cut).collect();
    let mut out = DMatrix::zeros(n, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        out.set_column(j, &vt.row(i).transpose());
    }
    out
}

/// Solves `[G, M_e'; M_e, 0] (z, gamma) = rhs`.
pub fn bordered_kkt_solve(g: &DMatrix<f64>, m_e: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = g.nrows();
    let q = m_e.nrows();
    if g.ncols() != n || (q > 0 && m_e.ncols() != n) || rhs.len() != n + q {
        return Err(ClearError::Dimension("bordered KKT system".into()));
    }
    let mut k = DMatrix::zeros(n + q, n + q);
    k.view_mut((0, 0), (n, n)).copy_from(g);
    if q > 0 {
        k.view_mut((n, 0), (q, n)).copy_from(m_e);
        k.view_mut((0, n), (n, q)).copy_from(&m_e.transpose());
    }
    let sv = k.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond < 1e14) {
        return Err(ClearError::Singular { cond });
    }
    let lu = k.clone().full_piv_lu();
    let mut x = lu.solve(rhs).ok_or(ClearError::Singular { cond })?;
    // one step of iterative refinement
    let r = rhs - &k * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x)
}

fn reduced_norm2(beta: &DVector<f64>, lam: &DVector<f64>, mu: f64) -> (f64, f64) {
    let mut n2 = 0.0;
    let mut d = 0.0;
    for (b, l) in beta.iter().zip(lam.iter()) {
        let den = l + mu;
        n2 += b * b / (den * den);
        d += -2.0 * b * b / (den * den * den);
    }
    (n2, d)
}

/// Solves the equality-constrained ellipsoidal trust-region problem.
/// `lin` is an optional linear term `g`.
pub fn trust_region_solve(
    g_hat: &DMatrix<f64>,
    lin: Option<&DVector<f64>>,
    m_e: &DMatrix<f64>,
    b_e: &DVector<f64>,
    ell: &Ellipsoid,
    tol: f64,
) -> Result<TrustRegionSolution> {
    let n = g_hat.nrows();
    if g_hat.ncols() != n
        || ell.a_s.nrows() != n
        || ell.a_s.ncols() != n
        || m_e.nrows() != b_e.len()
        || (m_e.nrows() > 0 && m_e.ncols() != n)
    {
        return Err(ClearError::Dimension("trust-region data".into()));
    }
    let g = (g_hat + g_hat.transpose()) * 0.5;
    let lin = lin.cloned().unwrap_or_else(|| DVector::zeros(n));

    let z0 = if m_e.nrows() > 0 {
        let z0 = m_e
            .clone()
            .svd(true, true)
            .solve(b_e, 1e-12)
            .map_err(|e| ClearError::Stalled(e.to_string()))?;
        let res = (m_e * &z0 - b_e).amax();
        if res > 1e-8 * (1.0 + b_e.amax()) {
            return Err(ClearError::Infeasible("equality rows are inconsistent".into()));
        }
        z0
    } else {
        DVector::zeros(n)
    };
    let basis = nullspace(m_e, n);
    let k = basis.ncols();

    let c = &ell.a_s * &z0 - &ell.p_s;
    let (t, zhat, rho) = if k > 0 {
        let qr = (&ell.a_s * &basis).qr();
        let q = qr.q();
        let r = qr.r();
        let qc = q.tr_mul(&c);
        let perp2 = (c.norm_squared() - qc.norm_squared()).max(0.0);
        let rho2 = ell.r * ell.r - perp2;
        if rho2 < -tol.max(1e-12) * (1.0 + ell.r * ell.r) {
            return Err(ClearError::Infeasible("ellipsoid misses the equality set".into()));
        }
        let rinv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or(ClearError::Singular { cond: f64::INFINITY })?;
        let t = &basis * rinv;
        let zhat = &z0 - &t * &qc;
        (t, zhat, rho2.max(0.0).sqrt())
    } else {
        if c.norm() > ell.r + tol {
            return Err(ClearError::Infeasible("ellipsoid misses the equality set".into()));
        }
        (DMatrix::zeros(n, 0), z0.clone(), 0.0)
    };

    // reduced problem: 1/2 s'Ss + h's, ||s|| <= rho
    let s_mat = (t.transpose() * &g * &t) * 2.0;
    let h = t.tr_mul(&(&g * &zhat * 2.0 + &lin));
    let (s, mu_red, status, iterations) = if k == 0 || rho == 0.0 {
        (DVector::zeros(k), 0.0, TrStatus::Boundary, 0)
    } else {
        solve_reduced(&s_mat, &h, rho, tol)
    };

    let z = &zhat + &t * &s;
    let mu = 0.5 * mu_red;
    let u = &ell.a_s * &z - &ell.p_s;
    let grad = &g * &z * 2.0 + &lin;
    let lag = &grad + ell.a_s.tr_mul(&u) * (2.0 * mu);
    let gamma = if m_e.nrows() > 0 {
        m_e.transpose()
            .svd(true, true)
            .solve(&(-&lag), 1e-12)
            .map_err(|e| ClearError::Stalled(e.to_string()))?
    } else {
        DVector::zeros(0)
    };
    let resid = if m_e.nrows() > 0 { &lag + m_e.tr_mul(&gamma) } else { lag };
    let objective = z.dot(&(&g * &z)) + lin.dot(&z);
    Ok(TrustRegionSolution {
        objective,
        multiplier: mu,
        eq_multipliers: gamma,
        status,
        iterations,
        stationarity: resid.amax() / (1.0 + grad.amax()),
        complementarity: (mu * (u.norm_squared() - ell.r * ell.r)).abs(),
        z,
    })
}

fn solve_reduced(s_mat: &DMatrix<f64>, h: &DVector<f64>, rho: f64, tol: f64) -> (DVector<f64>, f64, TrStatus, usize) {
    let k = h.len();
    let eig = s_mat.clone().symmetric_eigen();
    let lam = eig.eigenvalues.clone();
    let v = eig.eigenvectors.clone();
    let beta = v.tr_mul(h);
    let lmin = lam.min();
    let scale = lam.amax().max(h.amax()).max(1e-300);
    let s_of = |mu: f64| -> DVector<f64> {
        let coef = DVector::from_fn(k, |i, _| -beta[i] / (lam[i] + mu));
        &v * coef
    };

    if lmin > 1e-14 * scale {
        let (n2, _) = reduced_norm2(&beta, &lam, 0.0);
        if n2.sqrt() <= rho {
            return (s_of(0.0), 0.0, TrStatus::Interior, 0);
        }
    }

    let lo = (-lmin).max(0.0);
    // hard case: components along the bottom eigenspace vanish
    let near: Vec<usize> = (0..k).filter(|&i| lam[i] - lmin <= 1e-10 * scale).collect();
    let bottom_weight: f64 = near.iter().map(|&i| beta[i] * beta[i]).sum();
    if lmin <= 1e-14 * scale && bottom_weight <= (1e-12 * scale).powi(2) {
        let mut coef = DVector::zeros(k);
        let mut n2 = 0.0;
        for i in 0..k {
            if !near.contains(&i) {
                coef[i] = -beta[i] / (lam[i] + lo);
                n2 += coef[i] * coef[i];
            }
        }
        if n2.sqrt() <= rho {
            coef[near[0]] = (rho * rho - n2).max(0.0).sqrt();
            return (&v * coef, lo, TrStatus::HardCase, 0);
        }
    }

    let target = 1.0 / (rho * rho);
    let f = |mu: f64| {
        let (n2, d) = reduced_norm2(&beta, &lam, mu);
        (1.0 / n2 - target, -d / (n2 * n2))
    };
    let mut a = lo;
    let mut b = lo + h.norm() / rho + 1e-12 * (1.0 + lo);
    while f(b).0 < 0.0 {
        b = lo + 2.0 * (b - lo) + 1.0;
        if !b.is_finite() {
            return (s_of(a), a, TrStatus::Stalled, 0);
        }
    }
    let mut mu = b;
    let mut status = TrStatus::Stalled;
    let mut iters = 0;
    for it in 0..100 {
        iters = it + 1;
        let (fv, dv) = f(mu);
        if fv.abs() <= 1e-14 * target || (b - a) <= 1e-15 * (1.0 + mu) {
            status = TrStatus::Boundary;
            break;
        }
        let norm = reduced_norm2(&beta, &lam, mu).0.sqrt();
        if (norm - rho).abs() <= tol.min(1e-12) * rho {
            status = TrStatus::Boundary;
            break;
        }
        if fv > 0.0 {
            b = mu;
        } else {
            a = mu;
        }
        let newton = mu - fv / dv;
        mu = if dv > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    if status == TrStatus::Stalled {
        let norm = reduced_norm2(&beta, &lam, mu).0.sqrt();
        if (norm - rho).abs() <= tol * rho {
            status = TrStatus::Boundary;
        }
    }
    (s_of(mu), mu, status, iters)
}
