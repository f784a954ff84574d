//! Pairwise kernel tables shared by every quantity assembled in one flow step.

use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, Mat, MatRef, Par};
use nalgebra::{DMatrix, DVector};

use crate::ensemble::{column_means, Ensemble};
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::kernels::KernelSpec;
use crate::linalg::psd_factor;

/// Upper bound, in `f64` entries, on the gradient block materialized at once
/// while assembling the Gram matrix.
const GRAM_CHUNK_ENTRIES: usize = 1 << 23;

/// Kernel values and gradient coefficients for all particle pairs.
///
/// Entry `(l, i)` of `value` and `b` holds `k(Xˡ, Xⁱ)` and the coefficient `b`
/// in `∇ₓk(Xˡ, Xⁱ) = a·Xˡ + b·Xⁱ`. For the RBF kernel `a = -b`, for the
/// quadratic kernel `a = 0`. Both tables are symmetric, which lets every
/// consumer read columns (contiguous in memory) instead of rows.
///
/// For translation-invariant kernels positions are stored relative to the
/// ensemble mean; since `a = -b` the gradients are unchanged and the products
/// below avoid cancellation between large coordinates.
pub struct KernelTables {
    n: usize,
    d: usize,
    /// `d × N`, column `i` is particle `i` (shifted when the kernel allows it).
    x: DMatrix<f64>,
    value: DMatrix<f64>,
    b: DMatrix<f64>,
    /// `a = -b` when set, `a = 0` otherwise.
    a_is_neg_b: bool,
    exec: Exec,
}

impl KernelTables {
    pub fn new(e: &Ensemble, kernel: &KernelSpec, exec: &Exec) -> Result<Self> {
        kernel.validate()?;
        let n = e.len();
        let d = e.dim();
        let mut x = e.columns();
        let a_is_neg_b = matches!(kernel, KernelSpec::Rbf { .. });
        if a_is_neg_b {
            let shift = column_means(e.positions());
            for mut col in x.column_iter_mut() {
                col -= &shift;
            }
        }
        // Interleaved (value, b) pairs, lower triangle only: column i holds l >= i.
        let mut pairs = vec![0.0; 2 * n * n];
        {
            let xs = x.as_slice();
            exec.for_each_chunk(&mut pairs, 2 * n, |start, col| {
                let i = start / (2 * n);
                let xi = &xs[i * d..(i + 1) * d];
                for l in i..n {
                    let t = kernel.terms(&xs[l * d..(l + 1) * d], xi);
                    col[2 * l] = t.value;
                    col[2 * l + 1] = t.b;
                }
            });
        }
        let mut value = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for l in i..n {
                let (v, bv) = (pairs[2 * (i * n + l)], pairs[2 * (i * n + l) + 1]);
                value[(l, i)] = v;
                value[(i, l)] = v;
                b[(l, i)] = bv;
                b[(i, l)] = bv;
            }
        }
        Ok(KernelTables {
            n,
            d,
            x,
            value,
            b,
            a_is_neg_b,
            exec: *exec,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Kernel matrix `[k(Xⁱ, Xʲ)]`.
    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.value
    }

    /// `G_ij = (1/N) Σ_l ∇_{Xˡ}k(Xⁱ, Xˡ) · C ∇_{Xˡ}k(Xˡ, Xʲ)`.
    ///
    /// With `C = S Sᵀ` and `E[i, (l, c)] = (Sᵀ ∇_{Xˡ}k(Xⁱ, Xˡ))_c` this is
    /// `E Eᵀ / N`. Only the lower triangle is computed, in row blocks, and then
    /// mirrored, so the result is exactly symmetric.
    pub fn gram(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, d) = (self.n, self.d);
        check_dim(d, c.nrows())?;
        check_dim(d, c.ncols())?;
        let s = psd_factor(c);
        // Column i of y is Sᵀ Xⁱ.
        let y = s.transpose() * &self.x;
        let per_particle = d * n;
        let l_chunk = (GRAM_CHUNK_ENTRIES / per_particle.max(1)).clamp(1, n.max(1));
        let block = self.exec.block_len(n);
        let mut g = DMatrix::<f64>::zeros(n, n);
        let mut l0 = 0;
        while l0 < n {
            let l1 = (l0 + l_chunk).min(n);
            let rows = (l1 - l0) * d;
            // Transposed gradient block: column i holds E[i, (l, c)] for l in l0..l1.
            let mut et = DMatrix::<f64>::zeros(rows, n);
            self.exec
                .for_each_chunk(et.as_mut_slice(), rows, |start, col| {
                    let i = start / rows;
                    let yi = y.column(i);
                    for l in l0..l1 {
                        let bl = self.b[(l, i)];
                        let al = if self.a_is_neg_b { -bl } else { 0.0 };
                        let yl = y.column(l);
                        let base = (l - l0) * d;
                        for k in 0..d {
                            col[base + k] = al * yl[k] + bl * yi[k];
                        }
                    }
                });
            let etf = MatRef::from_column_major_slice(et.as_slice(), rows, n);
            let starts: Vec<usize> = (0..n).step_by(block).collect();
            let parts = self.exec.map(starts.len(), |bi| {
                let r0 = starts[bi];
                let len = (r0 + block).min(n) - r0;
                lower_row_block(etf, r0, len)
            });
            for (bi, part) in parts.into_iter().enumerate() {
                let r0 = starts[bi];
                for j in 0..part.ncols() {
                    for i in r0.max(j)..r0 + part.nrows() {
                        g[(i, j)] += part[(i - r0, j)];
                    }
                }
            }
            l0 = l1;
        }
        let inv_n = 1.0 / n as f64;
        // Only the lower triangle was accumulated.
        for j in 0..n {
            for i in j..n {
                let v = g[(i, j)] * inv_n;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: 0,
                max_alpha: f64::NAN,
                reason: format!("non-finite Gram entry ({}, {})", k % n, k / n),
            });
        }
        Ok(g)
    }

    /// `(hᵏ)_i = (1/N) Σ_j k(Xⁱ, Xʲ) (h_j - h̄)`.
    ///
    /// Values are first shifted by `h_0`, so a constant `h` gives exactly zero.
    pub fn h_vector(&self, h: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.n, h.len())?;
        if let Some(index) = h.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLikelihood {
                index,
                value: h[index],
            });
        }
        let n = self.n as f64;
        let h0 = h[0];
        let shifted: Vec<f64> = h.iter().map(|v| v - h0).collect();
        let mean = shifted.iter().sum::<f64>() / n;
        let centered: Vec<f64> = shifted.iter().map(|v| v - mean).collect();
        let out = self.exec.map(self.n, |i| {
            let col = self.value.column(i);
            col.iter().zip(&centered).map(|(k, c)| k * c).sum::<f64>() / n
        });
        Ok(DVector::from_vec(out))
    }

    /// `(v^{0,k})_i = (1/N) Σ_j ∇_{Xʲ}k(Xⁱ, Xʲ) · v⁰(Xʲ)`, with `v0` given as `N × d`.
    pub fn correction_vector(&self, v0: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim(self.n, v0.nrows())?;
        check_dim(self.d, v0.ncols())?;
        if v0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite baseline velocity".into()));
        }
        let n = self.n as f64;
        // ∇_{Xʲ}k(Xⁱ, Xʲ) = a(Xʲ, Xⁱ)·Xʲ + b(Xʲ, Xⁱ)·Xⁱ, so with w = V⁰ᵀB the
        // b part is Xⁱ·wⁱ and the a part is -(B (Xʲ·v⁰ʲ))_i for the RBF kernel.
        let w = v0.transpose() * &self.b;
        let a_part = if self.a_is_neg_b {
            let xv = DVector::from_fn(self.n, |j, _| self.x.column(j).dot(&v0.row(j).transpose()));
            -(&self.b * xv)
        } else {
            DVector::zeros(self.n)
        };
        Ok(DVector::from_fn(self.n, |i, _| {
            (a_part[i] + self.x.column(i).dot(&w.column(i))) / n
        }))
    }

    /// Kernel drift `-(1/N) C Σ_j α_j ∇_{Xⁱ}k(Xⁱ, Xʲ)` of every particle, as `N × d`.
    pub fn drift(&self, alpha: &DVector<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n, alpha.len())?;
        check_dim(self.d, c.nrows())?;
        let n = self.n as f64;
        // ∇_{Xⁱ}k(Xⁱ, Xʲ) = a(Xⁱ, Xʲ)·Xⁱ + b(Xⁱ, Xʲ)·Xʲ, and a, b are symmetric.
        let scaled = DMatrix::from_fn(self.d, self.n, |k, j| self.x[(k, j)] * alpha[j]);
        let mut w = scaled * &self.b;
        if self.a_is_neg_b {
            let sa = &self.b * alpha;
            for i in 0..self.n {
                w.column_mut(i).axpy(-sa[i], &self.x.column(i), 1.0);
            }
        }
        Ok((c * w).transpose() * (-1.0 / n))
    }
}

/// Rows `r0..r0+len` of the lower triangle of `EᵀE`, columns `0..r0+len`.
fn lower_row_block(et: MatRef<'_, f64>, r0: usize, len: usize) -> Mat<f64> {
    let lhs = et.subcols(r0, len).transpose();
    let mut part = Mat::<f64>::zeros(len, r0 + len);
    matmul(
        part.as_mut().subcols_mut(0, r0),
        Accum::Replace,
        lhs,
        et.subcols(0, r0),
        1.0,
        Par::Seq,
    );
    triangular::matmul(
        part.as_mut().subcols_mut(r0, len),
        BlockStructure::TriangularLower,
        Accum::Replace,
        lhs,
        BlockStructure::Rectangular,
        et.subcols(r0, len),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    part
}
