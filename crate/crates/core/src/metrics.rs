//! Sample-based evaluation: MMD², 1D Wasserstein-2, moments and tracking RMSE.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{column_means, scatter};
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::kernels::KernelSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSummary {
    pub mean: DVector<f64>,
    /// Divisor `N - 1`.
    pub cov_unbiased: DMatrix<f64>,
    /// Divisor `N`.
    pub cov_biased: DMatrix<f64>,
}

impl MomentSummary {
    /// Diagonal of the unbiased covariance.
    pub fn variances(&self) -> Vec<f64> {
        self.cov_unbiased.diagonal().iter().copied().collect()
    }
}

/// Mean and both covariance normalizations of the rows of `xs`.
pub fn moments(xs: &DMatrix<f64>) -> Result<MomentSummary> {
    let n = xs.nrows();
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    let mean = column_means(xs);
    let s = scatter(xs, &mean);
    Ok(MomentSummary {
        cov_unbiased: &s / (n as f64 - 1.0),
        cov_biased: s / n as f64,
        mean,
    })
}

fn block_sum(k: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>, exec: &Exec) -> f64 {
    let (at, bt) = (a.transpose(), b.transpose());
    let d = a.ncols();
    let (xs, ys) = (at.as_slice(), bt.as_slice());
    let rows = exec.map(a.nrows(), |i| {
        let xi = &xs[i * d..(i + 1) * d];
        (0..b.nrows())
            .map(|j| k.value(xi, &ys[j * d..(j + 1) * d]))
            .sum::<f64>()
    });
    rows.into_iter().sum()
}

/// Biased (V-statistic) estimate of `MMD²_k` between the rows of `xs` and `ys`.
///
/// Round-off negatives are clipped to zero.
pub fn mmd2(k: &KernelSpec, xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<f64> {
    mmd2_with(k, xs, ys, &Exec::default())
}

pub fn mmd2_with(k: &KernelSpec, xs: &DMatrix<f64>, ys: &DMatrix<f64>, exec: &Exec) -> Result<f64> {
    k.validate()?;
    check_dim(xs.ncols(), ys.ncols())?;
    if xs.nrows() == 0 || ys.nrows() == 0 {
        return Err(Error::InvalidArgument("mmd2 needs non-empty samples".into()));
    }
    let (n, m) = (xs.nrows() as f64, ys.nrows() as f64);
    let xx = block_sum(k, xs, xs, exec) / (n * n);
    let yy = block_sum(k, ys, ys, exec) / (m * m);
    // Average the two cross orders so the estimate is exactly symmetric in (xs, ys).
    let xy = 0.5 * (block_sum(k, xs, ys, exec) + block_sum(k, ys, xs, exec)) / (n * m);
    Ok(((xx + yy) - 2.0 * xy).max(0.0))
}

/// Exact Wasserstein-2 distance between two equal-size empirical measures on the line.
pub fn w2_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "w2_1d needs equal sample counts, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::InvalidArgument("w2_1d needs at least one sample".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / xs.len() as f64).sqrt())
}

/// Per-coordinate RMSE over time, averaged over coordinates.
pub fn rmse_spacetime(estimates: &DMatrix<f64>, observations: &DMatrix<f64>) -> Result<f64> {
    if estimates.shape() != observations.shape() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {:?} vs {:?}",
            estimates.shape(),
            observations.shape()
        )));
    }
    let (j, d) = estimates.shape();
    if j == 0 || d == 0 {
        return Err(Error::InvalidArgument("rmse needs at least one row and column".into()));
    }
    let per_coord: f64 = (0..d)
        .map(|c| {
            let sq: f64 = (0..j)
                .map(|r| (estimates[(r, c)] - observations[(r, c)]).powi(2))
                .sum();
            (sq / j as f64).sqrt()
        })
        .sum();
    Ok(per_coord / d as f64)
}

/// Sample skewness `m₃ / m₂^{3/2}` with biased central moments.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn mmd_examples() {
        let x = DMatrix::from_fn(6, 2, |i, c| (i + c) as f64 * 0.3);
        assert_eq!(mmd2(&KernelSpec::Rbf { bandwidth: 1.0 }, &x, &x).unwrap(), 0.0);
        let v = mmd2(&KernelSpec::Rbf { bandwidth: 1.0 }, &col(&[0.0]), &col(&[1.0])).unwrap();
        assert_relative_eq!(v, 2.0 - 2.0 * (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn mmd_symmetric() {
        let x = DMatrix::from_fn(5, 2, |i, c| ((i * 3 + c) % 4) as f64 * 0.7);
        let y = DMatrix::from_fn(8, 2, |i, c| ((i + 2 * c) % 5) as f64 * 0.4 - 0.3);
        for k in [KernelSpec::Rbf { bandwidth: 0.8 }, KernelSpec::Quadratic] {
            assert_eq!(mmd2(&k, &x, &y).unwrap(), mmd2(&k, &y, &x).unwrap());
        }
    }

    #[test]
    fn w2_examples() {
        assert_eq!(w2_1d(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(w2_1d(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_relative_eq!(w2_1d(&[0.0, 1.0], &[2.0, 5.0]).unwrap(), 10f64.sqrt(), epsilon = 1e-15);
        assert!(w2_1d(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_examples() {
        let obs = DMatrix::from_fn(4, 3, |i, c| (i * 3 + c) as f64);
        assert_eq!(rmse_spacetime(&obs, &obs).unwrap(), 0.0);
        assert_eq!(rmse_spacetime(&obs.add_scalar(1.0), &obs).unwrap(), 1.0);
        let mut est = DMatrix::zeros(2, 3);
        est[(0, 0)] = 3.0;
        let want = (4.5f64).sqrt() / 3.0;
        assert_relative_eq!(rmse_spacetime(&est, &DMatrix::zeros(2, 3)).unwrap(), want, epsilon = 1e-15);
        assert!(rmse_spacetime(&est, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn moments_examples() {
        let m = moments(&col(&[-1.0, 1.0])).unwrap();
        assert_eq!(m.mean[0], 0.0);
        assert_eq!(m.cov_unbiased[(0, 0)], 2.0);
        assert_eq!(m.cov_biased[(0, 0)], 1.0);
        let z = moments(&col(&[2.5, 2.5, 2.5])).unwrap();
        assert_eq!(z.cov_unbiased[(0, 0)], 0.0);
        assert!(moments(&col(&[1.0])).is_err());
    }
}
