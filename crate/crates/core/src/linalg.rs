//! Small dense linear-algebra helpers.
//!
//! nalgebra holds every matrix in the crate. The N×N regularized solve is
//! handed to faer, whose blocked Cholesky is an order of magnitude faster than
//! the unblocked one in nalgebra at the ensemble sizes used here.

use faer::linalg::solvers::Solve;
use faer::{MatRef, Side};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Tolerance on `max |m_ij - m_ji|` for a matrix to count as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest entrywise asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix in nondecreasing order (lower triangle is read).
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let view = MatRef::from_column_major_slice(m.as_slice(), n, n);
    view.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigenvalue iteration failed: {e:?}")))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(m)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// Checks symmetry and strict positive definiteness.
pub fn validate_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} has non-finite entries")));
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidArgument(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let lo = min_eigenvalue(m)?;
    if lo <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{what} is not positive definite (min eigenvalue {lo:e})"
        )));
    }
    Ok(())
}

/// Returns `S` with `S Sᵀ = C` for a symmetric positive semi-definite `C`.
///
/// Eigenvalues that round-off pushed below zero are clipped.
pub fn psd_factor(c: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    let mut s = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt();
        s.column_mut(j).scale_mut(scale);
    }
    s
}

/// How a regularized system was factored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    Cholesky,
    /// Bunch-Kaufman `LBLᵀ`, used only when the Cholesky factorization breaks down.
    SymmetricIndefinite,
}

enum Factor {
    Llt(faer::linalg::solvers::Llt<f64>),
    Lblt(faer::linalg::solvers::Lblt<f64>),
}

/// Factorization of `G + shift·I` for symmetric `G`, reusable across right-hand sides.
pub struct ShiftedFactor {
    n: usize,
    factor: Factor,
}

impl ShiftedFactor {
    /// Factors `G + shift·I`, reading only the lower triangle of `G`.
    pub fn new(g: &DMatrix<f64>, shift: f64) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::InvalidArgument(format!(
                "expected a square matrix, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        let n = g.nrows();
        let a = faer::Mat::<f64>::from_fn(n, n, |i, j| {
            if i == j {
                g[(i, i)] + shift
            } else if i > j {
                g[(i, j)]
            } else {
                g[(j, i)]
            }
        });
        let factor = match a.llt(Side::Lower) {
            Ok(llt) => Factor::Llt(llt),
            Err(err) => {
                log::warn!("Cholesky factorization failed ({err:?}); falling back to LBL^T");
                Factor::Lblt(a.lblt(Side::Lower))
            }
        };
        Ok(ShiftedFactor { n, factor })
    }

    pub fn method(&self) -> SolveMethod {
        match self.factor {
            Factor::Llt(_) => SolveMethod::Cholesky,
            Factor::Lblt(_) => SolveMethod::SymmetricIndefinite,
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.n, rhs.len())?;
        let mut x = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        match &self.factor {
            Factor::Llt(f) => f.solve_in_place(x.as_mut()),
            Factor::Lblt(f) => f.solve_in_place(x.as_mut()),
        }
        let out = DVector::from_fn(self.n, |i, _| x[(i, 0)]);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "regularized solve produced non-finite values (n = {}, method = {:?})",
                self.n,
                self.method()
            )));
        }
        Ok(out)
    }
}

/// Solves `(G + shift·I) x = rhs` for symmetric `G`, reading only its lower triangle.
pub fn solve_shifted_symmetric(
    g: &DMatrix<f64>,
    shift: f64,
    rhs: &DVector<f64>,
) -> Result<(DVector<f64>, SolveMethod)> {
    let f = ShiftedFactor::new(g, shift)?;
    Ok((f.solve(rhs)?, f.method()))
}
