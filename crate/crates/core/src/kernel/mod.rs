//! Dense convex kernel: LP/CQP interior-point solves, Chebyshev centres,
//! Dikin ellipsoids and the ellipsoidal trust-region subproblem.

mod chebyshev;
mod dikin;
mod ipm;
mod trust_region;

pub use chebyshev::{chebyshev_center, chebyshev_center_affine, ChebyshevBall};
pub use dikin::{dikin_ellipsoid, Ellipsoid};
pub use ipm::{IpmSettings, KktResiduals, LpStatus, Solution};
pub use trust_region::{
    bordered_kkt_solve, nullspace, trust_region_solve, TrStatus, TrustRegionSolution,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{ClearError, Result};
use ipm::{solve_classified, Problem};

/// `min c'x` s.t. `A_ineq x <= b_ineq`, `A_eq x = b_eq`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl LinearProgram {
    pub fn new(
        c: DVector<f64>,
        a_ineq: DMatrix<f64>,
        b_ineq: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
    ) -> Result<Self> {
        let lp = Self {
            c,
            a_ineq,
            b_ineq,
            a_eq,
            b_eq,
        };
        lp.problem().check_dims()?;
        Ok(lp)
    }

    fn problem(&self) -> Problem<'_> {
        Problem {
            h: None,
            c: &self.c,
            a_in: &self.a_ineq,
            b_in: &self.b_ineq,
            a_eq: &self.a_eq,
            b_eq: &self.b_eq,
        }
    }
}

/// `min 1/2 x'Hx + g'x` over the same constraint blocks as [`LinearProgram`].
#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_ineq: DMatrix<f64>,
        b_ineq: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
    ) -> Result<Self> {
        let qp = Self {
            h,
            g,
            a_ineq,
            b_ineq,
            a_eq,
            b_eq,
        };
        qp.problem().check_dims()?;
        Ok(qp)
    }

    fn problem(&self) -> Problem<'_> {
        Problem {
            h: Some(&self.h),
            c: &self.g,
            a_in: &self.a_ineq,
            b_in: &self.b_ineq,
            a_eq: &self.a_eq,
            b_eq: &self.b_eq,
        }
    }
}

/// Solves an LP. Infeasibility and unboundedness are reported through
/// [`Solution::status`]; only malformed input is an error.
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<Solution> {
    solve_classified(&lp.problem(), &IpmSettings::with_tol(tol))
}

/// Like [`solve_lp`] with full control over the interior-point settings.
pub fn solve_lp_with(lp: &LinearProgram, settings: &IpmSettings) -> Result<Solution> {
    solve_classified(&lp.problem(), settings)
}

/// Solves a convex QP. `H` must be positive semidefinite.
pub fn solve_cqp(qp: &QuadraticProgram, tol: f64) -> Result<Solution> {
    solve_cqp_with(qp, &IpmSettings::with_tol(tol))
}

pub fn solve_cqp_with(qp: &QuadraticProgram, settings: &IpmSettings) -> Result<Solution> {
    check_psd(&qp.h)?;
    let sol = solve_classified(&qp.problem(), settings)?;
    match sol.status {
        LpStatus::Infeasible => Err(ClearError::Infeasible("quadratic program has no feasible point".into())),
        LpStatus::Unbounded => Err(ClearError::Unbounded("quadratic program".into())),
        _ => Ok(sol),
    }
}

fn check_psd(h: &DMatrix<f64>) -> Result<()> {
    let n = h.nrows();
    if n == 0 {
        return Ok(());
    }
    let asym = (h - h.transpose()).abs().max();
    let scale = h.abs().max().max(1.0);
    if asym > 1e-10 * scale {
        return Err(ClearError::NotPositiveDefinite("Hessian is not symmetric".into()));
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * scale {
        return Err(ClearError::NotPositiveDefinite(format!(
            "smallest Hessian eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn one_dimensional_lp() {
        let lp = LinearProgram::new(
            dv(&[-1.0]),
            dm(2, 1, &[1.0, -1.0]),
            dv(&[1.0, 0.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
        )
        .unwrap();
        let s = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-7);
        assert!((s.objective + 1.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_optimal_face() {
        let lp = LinearProgram::new(
            dv(&[1.0, 1.0]),
            dm(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            dv(&[0.0, 0.0]),
            dm(1, 2, &[1.0, 1.0]),
            dv(&[1.0]),
        )
        .unwrap();
        let s = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-8);
        assert!(s.kkt.max() < 1e-8);
    }

    #[test]
    fn infeasible_lp_is_classified() {
        // x <= -1 and x >= 0
        let lp = LinearProgram::new(
            dv(&[1.0]),
            dm(2, 1, &[1.0, -1.0]),
            dv(&[-1.0, 0.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
        )
        .unwrap();
        assert_eq!(solve_lp(&lp, 1e-9).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_lp_is_classified() {
        let lp = LinearProgram::new(
            dv(&[-1.0]),
            dm(1, 1, &[-1.0]),
            dv(&[0.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
        )
        .unwrap();
        assert_eq!(solve_lp(&lp, 1e-9).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let r = LinearProgram::new(
            dv(&[1.0, 2.0]),
            dm(1, 1, &[1.0]),
            dv(&[1.0]),
            DMatrix::zeros(0, 2),
            dv(&[]),
        );
        assert!(matches!(r, Err(ClearError::Dimension(_))));
    }

    #[test]
    fn one_dimensional_cqp() {
        // min 1/2 x^2 s.t. x >= 1
        let qp = QuadraticProgram::new(
            dm(1, 1, &[1.0]),
            dv(&[0.0]),
            dm(1, 1, &[-1.0]),
            dv(&[-1.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
        )
        .unwrap();
        let s = solve_cqp(&qp, 1e-10).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn two_player_dispatch_cqp() {
        // min 1/2 x1^2 + 1/2 x2^2 + x2, x1 + x2 = 3, x >= 0  ->  (2, 1)
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            dv(&[0.0, 1.0]),
            dm(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            dv(&[0.0, 0.0]),
            dm(1, 2, &[1.0, 1.0]),
            dv(&[3.0]),
        )
        .unwrap();
        let s = solve_cqp(&qp, 1e-10).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-8 && (s.x[1] - 1.0).abs() < 1e-8);
        // balance multiplier is minus the common marginal price
        assert!((s.eq_duals[0] + 2.0).abs() < 1e-7);
    }

    #[test]
    fn indefinite_hessian_rejected() {
        let qp = QuadraticProgram::new(
            dm(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            dv(&[0.0, 0.0]),
            DMatrix::zeros(0, 2),
            dv(&[]),
            DMatrix::zeros(0, 2),
            dv(&[]),
        )
        .unwrap();
        assert!(matches!(solve_cqp(&qp, 1e-9), Err(ClearError::NotPositiveDefinite(_))));
    }

    #[test]
    fn infeasible_cqp_is_error() {
        let qp = QuadraticProgram::new(
            dm(1, 1, &[1.0]),
            dv(&[0.0]),
            dm(2, 1, &[1.0, -1.0]),
            dv(&[-1.0, 0.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
        )
        .unwrap();
        assert!(matches!(solve_cqp(&qp, 1e-9), Err(ClearError::Infeasible(_))));
    }
}
