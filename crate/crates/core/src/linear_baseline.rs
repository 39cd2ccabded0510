//! Residual linear forecaster `f_lin(x) = ⟨w_lin, x − x_d·1⟩ + x_d`.
//!
//! The residual design always has a zero last column (`x_d − x_d`), so its
//! Gram matrix is singular; both fits return the minimum-norm solution and
//! pin the last coordinate to exactly 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares_min_norm, norm2, Matrix};
use crate::ssm_data::{Dataset, FeatureBank};

/// Span residuals above this make the population problem infeasible.
pub const SPAN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSource {
    Empirical,
    Population,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub d: usize,
    pub w_lin: Vec<f64>,
    pub source: LinearSource,
    /// `‖Z w − t‖₂` of the fit that produced `w_lin`.
    pub residual: f64,
}

impl LinearParams {
    pub fn new(w_lin: Vec<f64>) -> Result<Self> {
        if !w_lin.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("w_lin".into()));
        }
        Ok(Self {
            d: w_lin.len(),
            w_lin,
            source: LinearSource::Manual,
            residual: 0.0,
        })
    }
}

pub fn predict_linear(p: &LinearParams, x: &[f64]) -> Result<f64> {
    Error::check_len("linear input", p.w_lin.len(), x.len())?;
    let xd = x[x.len() - 1];
    Ok(p.w_lin.iter().zip(x).map(|(w, v)| w * (v - xd)).sum::<f64>() + xd)
}

fn finish(d: usize, mut w: Vec<f64>, design: &Matrix, target: &[f64], source: LinearSource) -> Result<LinearParams> {
    w[d - 1] = 0.0;
    let fitted = design.matvec(&w)?;
    let residual = norm2(&fitted.iter().zip(target).map(|(f, t)| f - t).collect::<Vec<_>>());
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("linear fit".into()));
    }
    Ok(LinearParams {
        d,
        w_lin: w,
        source,
        residual,
    })
}

/// Ridge least squares on `z_i = x_i − x_{i,d}·1` against `y_i − x_{i,d}`.
pub fn fit_linear_empirical(dataset: &Dataset, ridge: f64) -> Result<LinearParams> {
    dataset.ensure_nonempty()?;
    let d = dataset.d;
    let design = Matrix::from_fn(dataset.len(), d, |i, k| {
        let x = &dataset.samples[i].x;
        x[k] - x[d - 1]
    });
    let target: Vec<f64> = dataset.samples.iter().map(|s| s.y - s.last()).collect();
    let w = least_squares_min_norm(&design, &target, ridge)?;
    finish(d, w, &design, &target, LinearSource::Empirical)
}

/// Minimum-norm `w*` with `Σ_k w*_k (P_k − P_d) = P_{d+1} − P_d`.
pub fn solve_linear_population(bank: &FeatureBank) -> Result<LinearParams> {
    let (design, target) = bank.residual_design();
    let w = least_squares_min_norm(&design, &target, 0.0)?;
    let p = finish(bank.d, w, &design, &target, LinearSource::Population)?;
    if p.residual > SPAN_TOL {
        return Err(Error::Infeasible {
            reason: format!(
                "target residual P_(d+1) − P_d is outside the span of the {:?} bank's residual features",
                bank.mode
            ),
            residual: p.residual,
        });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm_data::{build_feature_bank, build_feature_bank_in, generate_id, generate_ood_sign_inconsistent, FeatureMode};

    #[test]
    fn prediction_examples() {
        let zero = LinearParams::new(vec![0.0; 3]).unwrap();
        assert_eq!(predict_linear(&zero, &[4.0, 5.0, 6.0]).unwrap(), 6.0);
        let any = LinearParams::new(vec![0.3, -2.0, 7.0]).unwrap();
        assert_eq!(predict_linear(&any, &[1.5; 3]).unwrap(), 1.5);
        let e1 = LinearParams::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(predict_linear(&e1, &[2.0, 0.0, 1.0]).unwrap(), 2.0);
        assert!(predict_linear(&e1, &[1.0]).is_err());
    }

    #[test]
    fn population_recovers_construction_coefficients() {
        let bank = build_feature_bank(4, 0.5, FeatureMode::ExactNorm, 3).unwrap();
        let p = solve_linear_population(&bank).unwrap();
        let c = bank.bg_coefficients.clone().unwrap();
        for k in 0..3 {
            assert!((p.w_lin[k] - c[k]).abs() < 1e-10, "{:?} vs {c:?}", p.w_lin);
        }
        assert_eq!(p.w_lin[3], 0.0);
        assert!(p.residual <= 1e-10);
    }

    #[test]
    fn near_unit_gamma_has_vanishing_solution() {
        let bank = build_feature_bank(4, 1.0 - 1e-9, FeatureMode::ExactNorm, 1).unwrap();
        let p = solve_linear_population(&bank).unwrap();
        assert!(norm2(&p.w_lin) <= 1e-4);
    }

    #[test]
    fn residual_mean_bank_is_in_span() {
        // the averaged target is itself a combination of the features
        let bank = build_feature_bank(4, 0.0, FeatureMode::ResidualMean, 1).unwrap();
        let p = solve_linear_population(&bank).unwrap();
        for k in 0..3 {
            assert!((p.w_lin[k] - 1.0 / 12.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ssm_bank_is_infeasible() {
        let bank = build_feature_bank_in(4, 8, 0.0, FeatureMode::FromSsm, 2).unwrap();
        match solve_linear_population(&bank) {
            Err(Error::Infeasible { residual, .. }) => assert!(residual > SPAN_TOL),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_empirical_matches_population() {
        let bank = build_feature_bank(5, 0.3, FeatureMode::ExactNorm, 4).unwrap();
        let ds = generate_id(&bank, 10, 0.0, 4).unwrap();
        let emp = fit_linear_empirical(&ds, 0.0).unwrap();
        let pop = solve_linear_population(&bank).unwrap();
        for k in 0..5 {
            assert!((emp.w_lin[k] - pop.w_lin[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn persistence_labels_give_zero_and_ridge_shrinks() {
        let bank = build_feature_bank(4, 0.5, FeatureMode::ExactNorm, 5).unwrap();
        let mut ds = generate_id(&bank, 12, 0.1, 5).unwrap();
        let big = fit_linear_empirical(&ds, 1e9).unwrap();
        assert!(norm2(&big.w_lin) < 1e-6);
        for s in &mut ds.samples {
            s.y = s.last();
        }
        let w = fit_linear_empirical(&ds, 0.0).unwrap();
        assert!(norm2(&w.w_lin) < 1e-12);
    }

    #[test]
    fn noiseless_population_is_exact_on_ood() {
        let bank = build_feature_bank(6, 0.8, FeatureMode::ExactNorm, 6).unwrap();
        let ds = generate_ood_sign_inconsistent(&bank, 200, 0.0, 6, 100_000).unwrap();
        let p = solve_linear_population(&bank).unwrap();
        for s in &ds.samples {
            let e = predict_linear(&p, &s.x).unwrap() - s.y;
            assert!(e * e <= 1e-16);
        }
    }
}
