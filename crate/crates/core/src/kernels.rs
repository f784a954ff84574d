//! Positive-definite kernels and their gradients in the first argument.
//!
//! Both kernels have a gradient of the form `∇ₓk(x, y) = a(x, y)·x + b(x, y)·y`
//! with scalar coefficients. The flow engine relies on this to assemble the
//! Gram operator with dense matrix products instead of per-pair loops.

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    /// `exp(-‖x - y‖² / (2σ²))`.
    Rbf { bandwidth: f64 },
    /// `(x·y + 1)²`.
    Quadratic,
}

/// Kernel value together with the gradient coefficients `(a, b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct KernelTerms {
    pub value: f64,
    pub a: f64,
    pub b: f64,
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        let k = KernelSpec::Rbf { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "RBF bandwidth must be positive and finite, got {bandwidth}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Short name used in config files and CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Quadratic => "quadratic",
        }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match *self {
            KernelSpec::Rbf { bandwidth } => Some(bandwidth),
            KernelSpec::Quadratic => None,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        self.validate()?;
        Ok(self.terms(x, y).value)
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), y.len())?;
        self.validate()?;
        let t = self.terms(x, y);
        Ok(x.iter().zip(y).map(|(xi, yi)| t.a * xi + t.b * yi).collect())
    }

    /// Unchecked kernel value; callers guarantee equal lengths and a valid spec.
    #[inline]
    pub(crate) fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { bandwidth } => {
                (-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Quadratic => {
                let s = dot(x, y) + 1.0;
                s * s
            }
        }
    }

    #[inline]
    pub(crate) fn terms(&self, x: &[f64], y: &[f64]) -> KernelTerms {
        match *self {
            KernelSpec::Rbf { bandwidth } => {
                let inv = 1.0 / (bandwidth * bandwidth);
                let value = (-0.5 * sq_dist(x, y) * inv).exp();
                KernelTerms {
                    value,
                    a: -value * inv,
                    b: value * inv,
                }
            }
            KernelSpec::Quadratic => {
                let s = dot(x, y) + 1.0;
                KernelTerms {
                    value: s * s,
                    a: 0.0,
                    b: 2.0 * s,
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
