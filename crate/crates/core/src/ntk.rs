//! Empirical tangent kernel of the attention model.
//!
//! `H_ij = (1/m) x_{i,d} x_{j,d} Σ_r v_ir v_jr` where `v_ir` is the softmax
//! variance of sample `i` under neuron `r`. We build it as `Ψ Ψᵀ` with
//! `Ψ_ir = x_{i,d} v_ir / √m`, the per-sample gradient of the output, so it
//! is PSD up to rounding.

use serde::{Deserialize, Serialize};

use crate::attention::{evaluate, AttentionParams, Batch};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::ssm_data::Dataset;

/// Asymmetry beyond this is rejected by [`min_eigenvalue`].
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub n: usize,
    pub h: Matrix,
    /// `n × m` feature map, when built through the factorization.
    pub psi: Option<Matrix>,
}

impl KernelMatrix {
    pub fn from_matrix(h: Matrix) -> Result<Self> {
        Error::check_len("kernel (square)", h.rows(), h.cols())?;
        Ok(Self { n: h.rows(), h, psi: None })
    }
}

/// Kernel JSON: `{n, lambda_min, H}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub n: usize,
    pub lambda_min: f64,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
}

impl KernelRecord {
    pub fn from_kernel(k: &KernelMatrix) -> Result<Self> {
        Ok(Self {
            n: k.n,
            lambda_min: min_eigenvalue(k)?,
            h: k.h.to_rows(),
        })
    }

    pub fn into_kernel(self) -> Result<KernelMatrix> {
        let h = Matrix::from_rows(&self.h)?;
        Error::check_len("kernel n", self.n, h.rows())?;
        KernelMatrix::from_matrix(h)
    }
}

/// `Ψ` with rows indexed by sample and columns by neuron.
pub fn feature_map(params: &AttentionParams, dataset: &Dataset) -> Result<Matrix> {
    params.validate()?;
    let batch = Batch::new(dataset)?;
    let eval = evaluate(params, &batch);
    let (n, m, d) = (batch.n, params.m, batch.d);
    let scale = params.scale();
    Ok(Matrix::from_fn(n, m, |i, r| scale * batch.xs[i * d + d - 1] * eval.var[r * n + i]))
}

pub fn kernel(params: &AttentionParams, dataset: &Dataset) -> Result<KernelMatrix> {
    let psi = feature_map(params, dataset)?;
    let n = psi.rows();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = crate::linalg::dot(psi.row(i), psi.row(j));
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(KernelMatrix { n, h, psi: Some(psi) })
}

/// Smallest eigenvalue by cyclic Jacobi.
pub fn min_eigenvalue(k: &KernelMatrix) -> Result<f64> {
    if k.n == 0 {
        return Err(Error::invalid("empty kernel"));
    }
    let eig = symmetric_eigen(&k.h, SYMMETRY_TOL)?;
    Ok(eig.values[0])
}

/// `‖H(t) − H(0)‖_F`.
pub fn kernel_drift(kt: &KernelMatrix, k0: &KernelMatrix) -> Result<f64> {
    Error::check_len("kernel drift n", k0.n, kt.n)?;
    Ok(kt.h.sub(&k0.h)?.frobenius())
}
