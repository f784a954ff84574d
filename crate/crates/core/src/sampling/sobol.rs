//! Sobol low-discrepancy sequence (Joe–Kuo direction numbers, Gray-code order).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::special::normal_inverse_cdf;

/// Identifier of the direction-number set, recorded in experiment metadata.
pub const DIRECTION_NUMBERS: &str = "new-joe-kuo-6.21201";

pub const MAX_DIMENSION: usize = 64;

const BITS: usize = 32;

/// `(s, a, m_1..m_s)` for dimensions 2..=64; dimension 1 is the van der Corput sequence.
const JOE_KUO: [(u32, u32, &[u32]); MAX_DIMENSION - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
    (7, 21, &[1, 1, 5, 11, 19, 41, 61]),
    (7, 28, &[1, 3, 5, 3, 3, 13, 69]),
    (7, 31, &[1, 1, 7, 13, 1, 19, 1]),
    (7, 32, &[1, 3, 7, 5, 13, 19, 59]),
    (7, 37, &[1, 1, 3, 9, 25, 29, 41]),
    (7, 41, &[1, 3, 5, 13, 23, 1, 55]),
    (7, 42, &[1, 3, 7, 3, 13, 59, 17]),
    (7, 50, &[1, 3, 1, 3, 5, 53, 69]),
    (7, 55, &[1, 1, 5, 5, 23, 33, 13]),
    (7, 56, &[1, 1, 7, 7, 1, 61, 123]),
    (7, 59, &[1, 1, 7, 9, 13, 61, 49]),
    (7, 62, &[1, 3, 3, 5, 3, 55, 33]),
    (8, 14, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (8, 21, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (8, 22, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (8, 38, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (8, 47, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (8, 49, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (8, 50, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (8, 52, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (8, 56, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (8, 67, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (8, 70, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (8, 84, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (8, 97, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (8, 103, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (8, 115, &[1, 3, 1, 5, 27, 63, 123, 213]),
    (8, 122, &[1, 1, 3, 5, 11, 43, 53, 133]),
    (9, 8, &[1, 3, 5, 5, 29, 17, 47, 173, 479]),
    (9, 13, &[1, 3, 3, 11, 3, 1, 109, 9, 69]),
    (9, 16, &[1, 1, 1, 5, 17, 39, 23, 5, 343]),
    (9, 22, &[1, 3, 1, 5, 25, 15, 31, 103, 499]),
    (9, 25, &[1, 1, 1, 11, 11, 17, 63, 105, 183]),
    (9, 44, &[1, 1, 5, 11, 9, 29, 97, 231, 363]),
    (9, 47, &[1, 1, 5, 15, 19, 45, 41, 7, 383]),
    (9, 52, &[1, 3, 7, 7, 31, 19, 83, 137, 221]),
    (9, 55, &[1, 1, 1, 3, 23, 15, 111, 223, 83]),
    (9, 59, &[1, 1, 5, 13, 31, 15, 55, 25, 161]),
    (9, 62, &[1, 1, 3, 13, 25, 47, 39, 87, 257]),
];

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = 1 << (BITS - 1 - i);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for i in 0..s.min(BITS) {
        v[i] = m[i] << (BITS - 1 - i);
    }
    for i in s..BITS {
        let mut x = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                x ^= v[i - k];
            }
        }
        v[i] = x;
    }
    v
}

/// Sequential Sobol generator.
///
/// With `skip_first` (the default) the all-zeros point is never emitted, so
/// every coordinate lies strictly inside (0, 1) and the first point is all 0.5.
#[derive(Clone, Debug)]
pub struct SobolSampler {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl SobolSampler {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_skip(dim, true)
    }

    pub fn with_skip(dim: usize, skip_first: bool) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::InvalidArgument(format!(
                "Sobol dimension must be in 1..={MAX_DIMENSION}, got {dim}"
            )));
        }
        let mut s = SobolSampler {
            directions: (0..dim).map(direction_numbers).collect(),
            state: vec![0; dim],
            index: 0,
        };
        if skip_first {
            s.advance();
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }

    /// Index of the next point to be emitted (0 is the all-zeros point).
    pub fn position(&self) -> u64 {
        self.index
    }

    /// Jumps so that the next emitted point is the one with the given index.
    pub fn seek(&mut self, index: u64) -> Result<()> {
        if index >= 1 << BITS {
            return Err(Error::InvalidArgument(format!(
                "Sobol index {index} beyond 2^{BITS}"
            )));
        }
        let gray = index ^ (index >> 1);
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x = (0..BITS)
                .filter(|&b| (gray >> b) & 1 == 1)
                .fold(0, |acc, b| acc ^ v[b]);
        }
        self.index = index;
        Ok(())
    }

    fn advance(&mut self) {
        let c = (!self.index).trailing_zeros() as usize;
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x ^= v[c];
        }
        self.index += 1;
    }

    /// Writes the next point into `out` and advances.
    pub fn next_into(&mut self, out: &mut [f64]) {
        const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;
        for (o, &x) in out.iter_mut().zip(&self.state) {
            *o = x as f64 * SCALE;
        }
        self.advance();
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.next_into(&mut p);
        p
    }
}

/// `n` Gaussian points `mean + L·Φ⁻¹(u_i)` from consecutive Sobol points.
///
/// `block` selects points `1 + block·n ..= (block + 1)·n`, giving disjoint
/// stretches of the sequence for independent replicates; block 0 starts right
/// after the skipped zero point.
pub fn sobol_gaussian(
    n: usize,
    mean: &DVector<f64>,
    cov_chol: &DMatrix<f64>,
    block: u64,
) -> Result<DMatrix<f64>> {
    let d = mean.len();
    if cov_chol.nrows() != d || cov_chol.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov_chol.nrows(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut sobol = SobolSampler::new(d)?;
    sobol.seek(1 + block * n as u64)?;
    let mut out = DMatrix::zeros(n, d);
    let mut u = vec![0.0; d];
    let mut z = DVector::zeros(d);
    for i in 0..n {
        sobol.next_into(&mut u);
        for c in 0..d {
            z[c] = normal_inverse_cdf(u[c])?;
        }
        for r in 0..d {
            let mut acc = mean[r];
            for c in 0..=r {
                acc += cov_chol[(r, c)] * z[c];
            }
            out[(i, r)] = acc;
        }
    }
    Ok(out)
}
