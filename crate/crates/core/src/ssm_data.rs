//! Residual state-space data: the SSM recurrence, its feature bank
//! `P_1..P_{d+1}` with `u_k = ⟨P_k, h_1⟩`, and the in-distribution and
//! sign-inconsistent out-of-distribution generators.
//!
//! Indices are 0-based in code: feature `k` here is `P_{k+1}`, the core
//! (last observed) feature sits at `d - 1` and the target at `d`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, orthonormal_columns, Matrix};
use crate::rng::{self, Domain};

pub const DEFAULT_MAX_REJECTS: u64 = 1_000_000;

// ── SSM ──────────────────────────────────────────────────────────────────────

/// `h_{k+1} = A h_k + B u_k`, `u_{k+1} = Cᵀ h_{k+1}`, `u_1 = Cᵀ h_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmSystem {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl SsmSystem {
    pub fn new(a: Matrix, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let sys = Self { a, b, c };
        sys.validate()?;
        Ok(sys)
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    fn validate(&self) -> Result<()> {
        let n = self.a.rows();
        if n == 0 {
            return Err(Error::invalid("SSM state dimension must be positive"));
        }
        Error::check_len("SSM A (square)", n, self.a.cols())?;
        Error::check_len("SSM B", n, self.b.len())?;
        Error::check_len("SSM C", n, self.c.len())?;
        if !self.a.is_finite() || !self.b.iter().chain(&self.c).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("SSM system entries".into()));
        }
        Ok(())
    }

    /// A random stable system: `A = ρ·Q` for a random orthogonal `Q`, with
    /// Gaussian `B`, `C` scaled by `1/√N`.
    pub fn random_stable(state_dim: usize, rho: f64, seed: u64) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::invalid("SSM state dimension must be positive"));
        }
        let mut rng = rng::substream(seed, Domain::System, 0);
        let g = Matrix::from_fn(state_dim, state_dim, |_, _| rng::normal(&mut rng));
        let q = orthonormal_columns(&g)?;
        let a = Matrix::from_fn(state_dim, state_dim, |i, j| rho * q[(i, j)]);
        let scale = 1.0 / (state_dim as f64).sqrt();
        let b = (0..state_dim).map(|_| scale * rng::normal(&mut rng)).collect();
        let c = (0..state_dim).map(|_| scale * rng::normal(&mut rng)).collect();
        Self::new(a, b, c)
    }
}

/// Features `P_1..P_{d+1}` from `P_k = G_k + Σ_{κ<k} K_{k−κ} P_κ` with
/// `K_j = Cᵀ A^{j−1} B` and `G_k = Cᵀ A^{k−1}`.
pub fn ssm_features(sys: &SsmSystem, d: usize) -> Result<Vec<Vec<f64>>> {
    sys.validate()?;
    if d == 0 {
        return Err(Error::invalid("sequence length d must be ≥ 1"));
    }
    let count = d + 1;
    let at = sys.a.transpose();
    // g[k] = (Aᵀ)^k C, i.e. G_{k+1} as a column vector
    let mut g = Vec::with_capacity(count);
    g.push(sys.c.clone());
    for k in 1..count {
        let next = at.matvec(&g[k - 1])?;
        g.push(next);
    }
    let kernel: Vec<f64> = g.iter().map(|gk| dot(gk, &sys.b)).collect();

    let mut p: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut pk = g[k].clone();
        for kappa in 0..k {
            let coef = kernel[k - kappa - 1];
            for (dst, src) in pk.iter_mut().zip(&p[kappa]) {
                *dst += coef * src;
            }
        }
        p.push(pk);
    }
    Ok(p)
}

/// Direct recurrence, returning `u_1..u_{d+1}`.
pub fn run_ssm(sys: &SsmSystem, h1: &[f64], d: usize) -> Result<Vec<f64>> {
    sys.validate()?;
    Error::check_len("run_ssm h1", sys.state_dim(), h1.len())?;
    if !h1.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("run_ssm h1".into()));
    }
    let mut h = h1.to_vec();
    let mut u = Vec::with_capacity(d + 1);
    u.push(dot(&sys.c, &h));
    for k in 0..d {
        let mut next = sys.a.matvec(&h)?;
        for (dst, b) in next.iter_mut().zip(&sys.b) {
            *dst += b * u[k];
        }
        h = next;
        u.push(dot(&sys.c, &h));
    }
    Ok(u)
}

// ── feature bank ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Unit-norm features with `⟨P_d, P_{d+1}⟩ = γ` and the target inside the
    /// affine span of the observed features.
    ExactNorm,
    /// `P_{d+1} = ((d−1)/d)·P_d + (1/d)·mean(backgrounds)`; the target norm is
    /// not 1.
    ResidualMean,
    /// Features of a random stable SSM, no structural guarantees.
    FromSsm,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-norm" => Ok(Self::ExactNorm),
            "residual-mean" => Ok(Self::ResidualMean),
            "from-ssm" => Ok(Self::FromSsm),
            other => Err(Error::invalid(format!("unknown feature mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank {
    pub d: usize,
    #[serde(rename = "N")]
    pub state_dim: usize,
    /// `⟨P_d, P_{d+1}⟩` as realized by the construction.
    pub gamma: f64,
    pub mode: FeatureMode,
    pub seed: u64,
    /// `d + 1` vectors of length `N`.
    pub features: Vec<Vec<f64>>,
    pub core_idx: Vec<usize>,
    pub bg_idx: Vec<usize>,
    /// Background coefficients of the target (exact-norm and residual-mean).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg_coefficients: Option<Vec<f64>>,
}

/// Two-level background coefficients: `c_1 = s`, `c_2.. = t` with
/// `Σc = 1−γ` and `Σc² = 1−γ²`.
pub fn exact_norm_coefficients(d: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    match d {
        0 | 1 => Err(Error::invalid(format!("exact-norm mode needs d ≥ 2, got {d}"))),
        2 => {
            // a single background must carry 1−γ with squared weight 1−γ²
            if gamma == 0.0 {
                Ok(vec![1.0])
            } else {
                let c = 1.0 - gamma;
                Err(Error::Infeasible {
                    reason: format!("exact-norm bank with d = 2 requires gamma = 0, got {gamma}"),
                    residual: (c * c - (1.0 - gamma * gamma)).abs(),
                })
            }
        }
        _ => {
            let df = d as f64;
            let a = 1.0 - gamma;
            let q = 1.0 - gamma * gamma;
            let disc = (df - 2.0) * ((df - 1.0) * q - a * a);
            let s = (a + disc.max(0.0).sqrt()) / (df - 1.0);
            let t = (a - s) / (df - 2.0);
            let mut c = vec![t; d - 1];
            c[0] = s;
            Ok(c)
        }
    }
}

impl FeatureBank {
    #[inline]
    pub fn feature(&self, k: usize) -> &[f64] {
        &self.features[k]
    }

    /// `P_d`.
    pub fn core(&self) -> &[f64] {
        &self.features[self.d - 1]
    }

    /// `P_{d+1}`.
    pub fn target(&self) -> &[f64] {
        &self.features[self.d]
    }

    /// Bank built directly from an SSM. Core is `{d}`, backgrounds `[d−1]`.
    pub fn from_system(sys: &SsmSystem, d: usize, seed: u64) -> Result<Self> {
        let features = ssm_features(sys, d)?;
        let gamma = dot(&features[d - 1], &features[d]);
        Ok(Self {
            d,
            state_dim: sys.state_dim(),
            gamma,
            mode: FeatureMode::FromSsm,
            seed,
            features,
            core_idx: vec![d - 1],
            bg_idx: (0..d - 1).collect(),
            bg_coefficients: None,
        })
    }

    /// `u_k = ⟨P_k, h⟩` for all `d + 1` features.
    pub fn latent_series(&self, h1: &[f64]) -> Vec<f64> {
        self.features.iter().map(|p| dot(p, h1)).collect()
    }

    /// Columns `P_k − P_d` for `k ∈ [d]` (the last column is zero) and the
    /// target `P_{d+1} − P_d`.
    pub fn residual_design(&self) -> (Matrix, Vec<f64>) {
        let core = self.core();
        let design = Matrix::from_fn(self.state_dim, self.d, |i, k| self.features[k][i] - core[i]);
        let target = self.target().iter().zip(core).map(|(p, c)| p - c).collect();
        (design, target)
    }
}

pub fn build_feature_bank(d: usize, gamma: f64, mode: FeatureMode, seed: u64) -> Result<FeatureBank> {
    build_feature_bank_in(d, d, gamma, mode, seed)
}

/// Deterministic in `(d, N, gamma, mode, seed)`. `gamma` is ignored by
/// `ResidualMean` (it implies `(d−1)/d`) and `FromSsm`.
pub fn build_feature_bank_in(d: usize, state_dim: usize, gamma: f64, mode: FeatureMode, seed: u64) -> Result<FeatureBank> {
    if !gamma.is_finite() {
        return Err(Error::NonFinite("gamma".into()));
    }
    match mode {
        FeatureMode::FromSsm => {
            if d == 0 {
                return Err(Error::invalid("d must be ≥ 1"));
            }
            let sys = SsmSystem::random_stable(state_dim, 0.9, seed)?;
            FeatureBank::from_system(&sys, d, seed)
        }
        FeatureMode::ExactNorm | FeatureMode::ResidualMean => {
            if mode == FeatureMode::ResidualMean && d < 2 {
                return Err(Error::invalid(format!("residual-mean mode needs d ≥ 2, got {d}")));
            }
            let coeffs = match mode {
                FeatureMode::ExactNorm => exact_norm_coefficients(d, gamma)?,
                _ => vec![1.0 / (d as f64 * (d as f64 - 1.0)); d - 1],
            };
            if state_dim < d {
                return Err(Error::invalid(format!(
                    "ambient dimension N = {state_dim} cannot hold {d} orthonormal features"
                )));
            }
            let mut rng = rng::substream(seed, Domain::Bank, 0);
            let g = Matrix::from_fn(state_dim, d, |_, _| rng::normal(&mut rng));
            let q = orthonormal_columns(&g)?;
            let mut features: Vec<Vec<f64>> = (0..d).map(|k| q.col(k)).collect();

            let core_weight = match mode {
                FeatureMode::ExactNorm => gamma,
                _ => (d as f64 - 1.0) / d as f64,
            };
            let mut target: Vec<f64> = features[d - 1].iter().map(|v| core_weight * v).collect();
            for (k, c) in coeffs.iter().enumerate() {
                for (t, p) in target.iter_mut().zip(&features[k]) {
                    *t += c * p;
                }
            }
            features.push(target);
            let realized = match mode {
                FeatureMode::ExactNorm => gamma,
                _ => dot(&features[d - 1], &features[d]),
            };
            Ok(FeatureBank {
                d,
                state_dim,
                gamma: realized,
                mode,
                seed,
                features,
                core_idx: vec![d - 1],
                bg_idx: (0..d - 1).collect(),
                bg_coefficients: Some(coeffs),
            })
        }
    }
}

// ── samples ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
}

impl Sample {
    /// Plain `(x, y)` pair with no latent provenance.
    pub fn observed(x: Vec<f64>, y: f64) -> Self {
        Self {
            x,
            y,
            u: None,
            h1: None,
            xi: None,
        }
    }

    /// `x_d`.
    #[inline]
    pub fn last(&self) -> f64 {
        self.x[self.x.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Id,
    OodSignInconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub d: usize,
    #[serde(rename = "N")]
    pub state_dim: usize,
    pub sigma: f64,
    pub seed: u64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<FeatureMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_seed: Option<u64>,
    /// Accepted / attempted draws (OOD only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u64>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// In-distribution dataset from raw pairs (no provenance).
    pub fn from_pairs(pairs: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let d = pairs.first().map(|p| p.0.len()).ok_or_else(|| Error::invalid("empty dataset"))?;
        for (x, _) in &pairs {
            Error::check_len("sample length", d, x.len())?;
        }
        Ok(Self {
            kind: DatasetKind::Id,
            d,
            state_dim: d,
            sigma: 0.0,
            seed: 0,
            gamma: 0.0,
            mode: None,
            bank_seed: None,
            acceptance_rate: None,
            attempts: None,
            samples: pairs.into_iter().map(|(x, y)| Sample::observed(x, y)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub(crate) fn ensure_nonempty(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        for s in &self.samples {
            Error::check_len("sample length", self.d, s.x.len())?;
        }
        Ok(())
    }

    /// One row per sample: `x_1..x_d, y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.d).map(|k| format!("x_{k}")).chain(["y".to_string()]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for s in &self.samples {
            let row: Vec<String> =
                s.x.iter()
                    .chain(std::iter::once(&s.y))
                    .map(|v| crate::persist::fmt_f64(*v))
                    .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn draw_sample(bank: &FeatureBank, sigma: f64, h1: Vec<f64>, u: Vec<f64>, rng: &mut impl rand::Rng) -> Sample {
    let d = bank.d;
    let xi: Vec<f64> = (0..=d).map(|_| sigma * rng::normal(rng)).collect();
    let x = (0..d).map(|k| u[k] + xi[k]).collect();
    let y = u[d] + xi[d];
    Sample {
        x,
        y,
        u: Some(u),
        h1: Some(h1),
        xi: Some(xi),
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be finite and ≥ 0, got {sigma}")));
    }
    Ok(())
}

fn dataset_shell(bank: &FeatureBank, kind: DatasetKind, sigma: f64, seed: u64, samples: Vec<Sample>) -> Dataset {
    Dataset {
        kind,
        d: bank.d,
        state_dim: bank.state_dim,
        sigma,
        seed,
        gamma: bank.gamma,
        mode: Some(bank.mode),
        bank_seed: Some(bank.seed),
        acceptance_rate: None,
        attempts: None,
        samples,
    }
}

/// `h_1 ~ N(0, I_N)`, `ξ ~ N(0, σ² I_{d+1})`, `x = u_{1..d} + ξ_{1..d}`,
/// `y = u_{d+1} + ξ_{d+1}`. Sample `i` draws from its own substream.
pub fn generate_id(bank: &FeatureBank, n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be ≥ 1"));
    }
    check_sigma(sigma)?;
    let samples: Vec<Sample> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::substream(seed, Domain::SampleId, i as u64);
            let h1 = rng::normal_vec(&mut rng, bank.state_dim);
            let u = bank.latent_series(&h1);
            draw_sample(bank, sigma, h1, u, &mut rng)
        })
        .collect();
    Ok(dataset_shell(bank, DatasetKind::Id, sigma, seed, samples))
}

/// Rejection-samples latents until `u_d · u_{d+1} < 0`, then adds noise.
pub fn generate_ood_sign_inconsistent(bank: &FeatureBank, n_test: usize, sigma: f64, seed: u64, max_rejects: u64) -> Result<Dataset> {
    if n_test == 0 {
        return Err(Error::invalid("n_test must be ≥ 1"));
    }
    if max_rejects == 0 {
        return Err(Error::invalid("max_rejects must be ≥ 1"));
    }
    // u_d and u_(d+1) can only disagree in sign if P_d, P_(d+1) are not
    // positively parallel
    let cosine = dot(bank.core(), bank.target()) / (dot(bank.core(), bank.core()) * dot(bank.target(), bank.target())).sqrt();
    if cosine.is_nan() || cosine >= 1.0 {
        return Err(Error::invalid(format!(
            "core and target features are positively parallel (cosine {cosine})"
        )));
    }
    check_sigma(sigma)?;
    let d = bank.d;
    let drawn: Vec<(Sample, u64)> = (0..n_test)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::substream(seed, Domain::SampleOod, i as u64);
            let mut attempts = 0u64;
            loop {
                attempts += 1;
                let h1 = rng::normal_vec(&mut rng, bank.state_dim);
                let u = bank.latent_series(&h1);
                if u[d - 1] * u[d] < 0.0 {
                    return Ok((draw_sample(bank, sigma, h1, u, &mut rng), attempts));
                }
                if attempts >= max_rejects {
                    return Err(Error::RejectionLimit { sample: i, max_rejects });
                }
            }
        })
        .collect::<Result<_>>()?;
    let attempts: u64 = drawn.iter().map(|(_, a)| a).sum();
    let samples = drawn.into_iter().map(|(s, _)| s).collect();
    let mut ds = dataset_shell(bank, DatasetKind::OodSignInconsistent, sigma, seed, samples);
    ds.acceptance_rate = Some(n_test as f64 / attempts as f64);
    ds.attempts = Some(attempts);
    Ok(ds)
}

/// Fraction of `attempts` latent draws that pass the sign-inconsistency test.
pub fn ood_acceptance_rate(bank: &FeatureBank, attempts: usize, seed: u64) -> f64 {
    let d = bank.d;
    let accepted: usize = (0..attempts)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::substream(seed, Domain::SampleOod, i as u64);
            let h1 = rng::normal_vec(&mut rng, bank.state_dim);
            let u = bank.latent_series(&h1);
            usize::from(u[d - 1] * u[d] < 0.0)
        })
        .sum();
    accepted as f64 / attempts as f64
}
