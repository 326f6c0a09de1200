use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{gemm, Matrix, Op};

/// Bias-free square linear map `z ↦ A z`, the latent transition operator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearOperator {
    pub a: Matrix,
}

impl LinearOperator {
    pub fn new(a: Matrix) -> Result<Self> {
        ensure_dim("linear operator", a.rows(), a.cols())?;
        if !a.is_finite() {
            return Err(Error::NonFinite("linear operator"));
        }
        Ok(Self { a })
    }

    /// `0.99 · I`, strictly inside the unit spectral-norm ball.
    pub fn init(n: usize) -> Self {
        Self {
            a: Matrix::identity(n).scaled(0.99),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn apply(&self, z: &[f64]) -> Result<alloc::vec::Vec<f64>> {
        self.a.matvec(z)
    }

    /// Row-wise `Z Aᵀ`.
    pub fn apply_batch(&self, z: &Matrix) -> Result<Matrix> {
        z.mul(Op::N, &self.a, Op::T)
    }

    /// Accumulates `∂L/∂A += Gᵀ Z` and returns `∂L/∂Z = G A`.
    pub fn backward(&self, z: &Matrix, grad_out: &Matrix, grad_a: &mut Matrix) -> Result<Matrix> {
        gemm(1.0, grad_out, Op::T, z, Op::N, 1.0, grad_a)?;
        grad_out.mul(Op::N, &self.a, Op::N)
    }
}
