use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `N` particles in `R^d` (particle `i` is row `i`) at flow time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    positions: DMatrix<f64>,
    time: f64,
}

impl Ensemble {
    pub fn new(positions: DMatrix<f64>) -> Result<Self> {
        Self::at_time(positions, 0.0)
    }

    pub fn at_time(positions: DMatrix<f64>, time: f64) -> Result<Self> {
        if positions.nrows() == 0 || positions.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "ensemble needs at least one particle and one dimension, got {}x{}",
                positions.nrows(),
                positions.ncols()
            )));
        }
        if let Some(k) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite coordinate for particle {}",
                k % positions.nrows()
            )));
        }
        Ok(Ensemble { positions, time })
    }

    /// Builds an ensemble from per-particle rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, c| rows[i][c]))
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn positions(&self) -> &DMatrix<f64> {
        &self.positions
    }

    pub fn into_positions(self) -> DMatrix<f64> {
        self.positions
    }

    pub fn particle(&self, i: usize) -> Vec<f64> {
        self.positions.row(i).iter().copied().collect()
    }

    /// Positions as a `d × N` matrix, so each particle is a contiguous column.
    pub(crate) fn columns(&self) -> DMatrix<f64> {
        self.positions.transpose()
    }

    pub fn mean(&self) -> DVector<f64> {
        column_means(&self.positions)
    }

    pub(crate) fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    pub(crate) fn with_positions(&self, positions: DMatrix<f64>, time: f64) -> Ensemble {
        Ensemble { positions, time }
    }
}

pub(crate) fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_fn(x.ncols(), |c, _| x.column(c).iter().sum::<f64>() / n)
}

/// Scatter matrix `Σᵢ (xᵢ - x̄)(xᵢ - x̄)ᵀ`, exactly symmetric.
pub(crate) fn scatter(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let d = x.ncols();
    let centered = DMatrix::from_fn(x.nrows(), d, |i, c| x[(i, c)] - mean[c]);
    let mut s = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            let v = centered.column(a).dot(&centered.column(b));
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    s
}

/// Unbiased ensemble covariance `(1/(N-1)) Σᵢ (Xⁱ - X̄)(Xⁱ - X̄)ᵀ`.
pub fn ensemble_covariance(e: &Ensemble) -> Result<DMatrix<f64>> {
    let n = e.len();
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    Ok(scatter(&e.positions, &e.mean()) / (n as f64 - 1.0))
}
