use nalgebra::{DMatrix, DVector};

use crate::error::{ClearError, Result};

/// `{z : ||A_s z - p_s|| <= r}`.
#[derive(Clone, Debug)]
pub struct Ellipsoid {
    pub a_s: DMatrix<f64>,
    pub p_s: DVector<f64>,
    pub r: f64,
}

impl Ellipsoid {
    pub fn ball(center: DVector<f64>, r: f64) -> Self {
        let n = center.len();
        Self {
            a_s: DMatrix::identity(n, n),
            p_s: center,
            r,
        }
    }

    /// `||A_s z - p_s||`.
    pub fn norm_at(&self, z: &DVector<f64>) -> f64 {
        (&self.a_s * z - &self.p_s).norm()
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.norm_at(z) <= self.r + tol
    }

    /// Centre `A_s^{-1} p_s`.
    pub fn center(&self) -> Result<DVector<f64>> {
        self.a_s
            .clone()
            .lu()
            .solve(&self.p_s)
            .ok_or(ClearError::Singular { cond: f64::INFINITY })
    }

    /// Point on the boundary in direction `u` (any nonzero vector) of the
    /// image space.
    pub fn boundary_point(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let target = &self.p_s + u * (self.r / u.norm());
        self.a_s
            .clone()
            .lu()
            .solve(&target)
            .ok_or(ClearError::Singular { cond: f64::INFINITY })
    }
}

/// Dikin ellipsoid of the log barrier of `{z : M_I z <= b_I}` at the
/// strictly interior point `z_c`. The unit ellipsoid of the barrier Hessian
/// always lies inside the polytope.
pub fn dikin_ellipsoid(z_c: &DVector<f64>, m_i: &DMatrix<f64>, b_i: &DVector<f64>) -> Result<Ellipsoid> {
    let n = z_c.len();
    if m_i.ncols() != n || m_i.nrows() != b_i.len() {
        return Err(ClearError::Dimension("Dikin ellipsoid data".into()));
    }
    let slack = b_i - m_i * z_c;
    if let Some(k) = slack.iter().position(|s| *s <= 0.0) {
        return Err(ClearError::Invalid(format!(
            "centre is not strictly interior (row {k}, slack {:.3e})",
            slack[k]
        )));
    }
    let mut scaled = m_i.clone();
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        row /= slack[k];
    }
    let mut h = scaled.tr_mul(&scaled);
    let reg = 1e-12 * h.trace() / n.max(1) as f64;
    let chol = match h.clone().cholesky() {
        Some(c) => c,
        None => {
            for i in 0..n {
                h[(i, i)] += reg;
            }
            h.cholesky().ok_or_else(|| {
                ClearError::NotPositiveDefinite("barrier Hessian is singular".into())
            })?
        }
    };
    let a_s = chol.l().transpose();
    let p_s = &a_s * z_c;
    Ok(Ellipsoid { a_s, p_s, r: 1.0 })
}
