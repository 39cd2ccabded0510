//! Matrix-valued attention layer `Attn(X, W) = S X W_V` with
//! `S = softmax_rows(X W Xᵀ)`, its gradient with respect to the combined
//! query–key matrix `W`, and the local-entry sign diagnostic.
//!
//! For an upstream gradient `G` the weight gradient is
//!
//! ```text
//! ∂/∂W Σ (Attn ⊙ G) = Xᵀ (S ⊙ (G W_Vᵀ Xᵀ − c 1ᵀ)) X,   c_i = Σ_c Attn_ic G_ic
//! ```
//!
//! i.e. the row-broadcast term subtracts one scalar per row.

use serde::{Deserialize, Serialize};

use crate::attention::softmax_into;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Values with magnitude at or below this are labelled [`LocalCase::Boundary`].
pub const BOUNDARY_TOL: f64 = 1e-12;

fn check_shapes(x: &Matrix, w: &Matrix, wv: &Matrix) -> Result<()> {
    let d = x.cols();
    if x.rows() == 0 || d == 0 {
        return Err(Error::invalid("X must be non-empty"));
    }
    Error::check_len("W rows", d, w.rows())?;
    Error::check_len("W cols", d, w.cols())?;
    Error::check_len("W_V rows", d, wv.rows())?;
    Error::check_len("W_V cols", d, wv.cols())?;
    if !(x.is_finite() && w.is_finite() && wv.is_finite()) {
        return Err(Error::NonFinite("attention inputs".into()));
    }
    Ok(())
}

/// Row-wise softmax of `X W Xᵀ` (`L × L`).
pub fn attention_matrix(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    let scores = x.matmul(w)?.matmul(&x.transpose())?;
    let l = x.rows();
    let mut s = Matrix::zeros(l, l);
    for i in 0..l {
        softmax_into(scores.row(i), s.row_mut(i));
    }
    Ok(s)
}

pub fn attn_forward(x: &Matrix, w: &Matrix, wv: &Matrix) -> Result<Matrix> {
    check_shapes(x, w, wv)?;
    attention_matrix(x, w)?.matmul(x)?.matmul(wv)
}

pub fn attn_grad_w(x: &Matrix, w: &Matrix, wv: &Matrix, g: &Matrix) -> Result<Matrix> {
    check_shapes(x, w, wv)?;
    Error::check_len("G rows", x.rows(), g.rows())?;
    Error::check_len("G cols", x.cols(), g.cols())?;
    let s = attention_matrix(x, w)?;
    let attn = s.matmul(x)?.matmul(wv)?;
    // (G W_Vᵀ Xᵀ)_ij = ⟨G_i, V_j⟩ with V = X W_V
    let v = x.matmul(wv)?;
    let gv = g.matmul(&v.transpose())?;
    let l = x.rows();
    let mut inner = Matrix::zeros(l, l);
    for i in 0..l {
        let row_term = dot(attn.row(i), g.row(i));
        for j in 0..l {
            inner[(i, j)] = s[(i, j)] * (gv[(i, j)] - row_term);
        }
    }
    x.transpose().matmul(&inner)?.matmul(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalCase {
    /// `⟨G_i, W_Vᵀ X_i⟩ > 0`: the update moves attention away from the
    /// diagonal entry.
    Case1,
    /// `⟨G_i, W_Vᵀ X_i⟩ < 0`: the update moves attention toward it.
    Case2,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalEntry {
    pub value: f64,
    pub case: LocalCase,
}

/// Sign of `⟨G_i, W_Vᵀ X_i⟩` for row `i` (0-based).
pub fn local_entry_case(x: &Matrix, wv: &Matrix, g: &Matrix, i: usize) -> Result<LocalEntry> {
    if i >= x.rows() {
        return Err(Error::invalid(format!("row {i} out of range for L = {}", x.rows())));
    }
    Error::check_len("G rows", x.rows(), g.rows())?;
    Error::check_len("G cols", x.cols(), g.cols())?;
    // W_Vᵀ X_i = (X_i W_V)ᵀ
    let projected = wv.transpose().matvec(x.row(i))?;
    let value = dot(g.row(i), &projected);
    let case = if value.abs() <= BOUNDARY_TOL {
        LocalCase::Boundary
    } else if value > 0.0 {
        LocalCase::Case1
    } else {
        LocalCase::Case2
    };
    Ok(LocalEntry { value, case })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_token_is_projection() {
        let x = m(&[&[1.0, -2.0]]);
        let w = m(&[&[0.3, 1.0], &[2.0, -1.0]]);
        let wv = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = attn_forward(&x, &w, &wv).unwrap();
        assert_eq!(out, x.matmul(&wv).unwrap());
        let g = m(&[&[0.5, 0.25]]);
        assert!(attn_grad_w(&x, &w, &wv, &g).unwrap().as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_w_mean_pools() {
        let x = m(&[&[1.0, 0.0], &[0.0, 2.0], &[3.0, 1.0]]);
        let wv = Matrix::identity(2);
        let out = attn_forward(&x, &Matrix::zeros(2, 2), &wv).unwrap();
        for i in 0..3 {
            assert!((out[(i, 0)] - 4.0 / 3.0).abs() < 1e-15);
            assert!((out[(i, 1)] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_are_probability_vectors() {
        let x = m(&[&[0.4, -1.1], &[1.3, 0.2], &[-0.7, 0.9]]);
        let w = m(&[&[0.5, -0.2], &[1.1, 0.3]]);
        let s = attention_matrix(&x, &w).unwrap();
        for i in 0..3 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(s.row(i).iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let x = m(&[&[0.4, -1.1], &[1.3, 0.2]]);
        let w = m(&[&[0.5, -0.2], &[1.1, 0.3]]);
        let g = attn_grad_w(&x, &w, &Matrix::identity(2), &Matrix::zeros(2, 2)).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn local_entry_cases() {
        let x = m(&[&[1.0, 2.0], &[-0.5, 0.3]]);
        let id = Matrix::identity(2);
        let e = local_entry_case(&x, &id, &Matrix::zeros(2, 2), 0).unwrap();
        assert_eq!(e.case, LocalCase::Boundary);
        assert_eq!(e.value, 0.0);
        let e = local_entry_case(&x, &id, &x, 0).unwrap();
        assert_eq!(e.case, LocalCase::Case1);
        assert!((e.value - 5.0).abs() < 1e-15);
        let neg = Matrix::from_fn(2, 2, |i, j| -x[(i, j)]);
        assert_eq!(local_entry_case(&x, &id, &neg, 1).unwrap().case, LocalCase::Case2);
        assert!(local_entry_case(&x, &id, &x, 2).is_err());
    }

    #[test]
    fn shape_errors() {
        let x = m(&[&[1.0, 2.0]]);
        assert!(attn_forward(&x, &Matrix::identity(3), &Matrix::identity(2)).is_err());
        assert!(attn_grad_w(&x, &Matrix::identity(2), &Matrix::identity(2), &Matrix::zeros(2, 2)).is_err());
    }
}
