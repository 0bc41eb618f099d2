use nalgebra::{DMatrix, DVector};

use super::trust_region::nullspace;
use super::{solve_lp, LinearProgram, LpStatus};
use crate::error::{ClearError, Result};
use crate::market::Polytope;

/// Largest inscribed ball of a polytope.
#[derive(Clone, Debug)]
pub struct ChebyshevBall {
    pub center: DVector<f64>,
    pub radius: f64,
}

/// Chebyshev centre of `{y : M y <= b}` with Euclidean row norms as weights.
pub fn chebyshev_center(p: &Polytope) -> Result<ChebyshevBall> {
    let n = p.dim();
    chebyshev_center_affine(&p.m, &p.b, &DMatrix::zeros(0, n), &DVector::zeros(0))
}

/// Chebyshev centre of `{y : M y <= b, A y = c}` measured inside the affine
/// hull: each row norm is taken after projecting the row onto the nullspace
/// of `A`.
pub fn chebyshev_center_affine(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<ChebyshevBall> {
    let n = m.ncols().max(a_eq.ncols());
    let rows = m.nrows();
    if b.len() != rows || a_eq.nrows() != b_eq.len() {
        return Err(ClearError::Dimension("Chebyshev centre data".into()));
    }
    let proj = if a_eq.nrows() > 0 {
        let z = nullspace(a_eq, n);
        if z.ncols() == 0 {
            return point_slice(m, b, a_eq, b_eq);
        }
        Some(&z * z.transpose())
    } else {
        None
    };
    let mut a_in = DMatrix::zeros(rows + 1, n + 1);
    let mut b_in = DVector::zeros(rows + 1);
    for k in 0..rows {
        let row = m.row(k).transpose();
        let w = match &proj {
            Some(pm) => (pm * &row).norm(),
            None => row.norm(),
        };
        a_in.view_mut((k, 0), (1, n)).copy_from(&m.row(k));
        a_in[(k, n)] = w;
        b_in[k] = b[k];
    }
    // r >= 0
    a_in[(rows, n)] = -1.0;
    let mut eq = DMatrix::zeros(a_eq.nrows(), n + 1);
    if a_eq.nrows() > 0 {
        eq.view_mut((0, 0), (a_eq.nrows(), n)).copy_from(a_eq);
    }
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let lp = LinearProgram::new(c, a_in, b_in, eq, b_eq.clone())?;
    let sol = solve_lp(&lp, 1e-10)?;
    match sol.status {
        LpStatus::Optimal => Ok(ChebyshevBall {
            center: sol.x.rows(0, n).into_owned(),
            radius: sol.x[n].max(0.0),
        }),
        LpStatus::Infeasible => Err(ClearError::Infeasible("polytope is empty".into())),
        LpStatus::Unbounded => Err(ClearError::Unbounded("polytope is unbounded".into())),
        LpStatus::Stalled => Err(ClearError::Stalled("Chebyshev centre LP".into())),
    }
}

/// The equalities pin a single point; it is the centre if it satisfies the
/// inequalities.
fn point_slice(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<ChebyshevBall> {
    let y = a_eq
        .clone()
        .svd(true, true)
        .solve(b_eq, 1e-12)
        .map_err(|e| ClearError::Stalled(e.to_string()))?;
    let scale = 1.0 + b_eq.amax();
    if (a_eq * &y - b_eq).amax() > 1e-9 * scale {
        return Err(ClearError::Infeasible("equality rows are inconsistent".into()));
    }
    if m.nrows() > 0 && (0..m.nrows()).any(|k| (m.row(k) * &y)[0] > b[k] + 1e-9 * (1.0 + b[k].abs())) {
        return Err(ClearError::Infeasible("polytope is empty".into()));
    }
    Ok(ChebyshevBall { center: y, radius: 0.0 })
}
