//! Independent oracles: central finite differences, literal kernel loops and
//! randomized gradient checks.
//!
//! The oracles reimplement the model from scratch rather than calling into
//! `attention` or `ntk`. Loss evaluations used for differencing accumulate in
//! double-double arithmetic so that `L(w + h) − L(w − h)` is not swamped by
//! rounding in the terms that do not depend on the perturbed coordinate.

use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::multidim_attn::attn_grad_w;
use crate::ntk::KernelMatrix;
use crate::rng::{self, Domain};
use crate::ssm_data::Dataset;

pub const DEFAULT_H: f64 = 1e-5;
/// Denominator floor of [`rel_err`].
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

// ── double-double ────────────────────────────────────────────────────────────

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    #[inline]
    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    #[inline]
    fn renorm(hi: f64, lo: f64) -> Self {
        let (h, l) = two_sum(hi, lo);
        Dd { hi: h, lo: l }
    }

    #[inline]
    pub fn scale(self, s: f64) -> Dd {
        self * Dd::new(s)
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

impl Add for Dd {
    type Output = Dd;

    #[inline]
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = {
            let e = e + t;
            let (s2, e2) = two_sum(s, e);
            (s2, e2 + f)
        };
        Dd::renorm(s, e)
    }
}

impl Neg for Dd {
    type Output = Dd;

    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;

    #[inline]
    fn sub(self, o: Dd) -> Dd {
        self + -o
    }
}

impl Mul for Dd {
    type Output = Dd;

    #[inline]
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        Dd::renorm(p, e)
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd::new(v)
    }
}

// ── finite differences ───────────────────────────────────────────────────────

/// Central differences `(f(w + h e_r) − f(w − h e_r)) / (2h)`, with the
/// difference taken in double-double when `f` returns [`Dd`].
pub fn finite_diff_grad<V, F>(f: F, at: &[f64], h: f64) -> Result<Vec<f64>>
where
    V: Into<Dd>,
    F: Fn(&[f64]) -> V,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let mut point = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for r in 0..at.len() {
        let base = at[r];
        point[r] = base + h;
        let plus: Dd = f(&point).into();
        let step_up = point[r];
        point[r] = base - h;
        let minus: Dd = f(&point).into();
        let step = step_up - point[r];
        point[r] = base;
        if !(plus.hi.is_finite() && minus.hi.is_finite()) {
            return Err(Error::NonFinite(format!("objective at coordinate {r}")));
        }
        grad.push((plus - minus).to_f64() / step);
    }
    Ok(grad)
}

// ── reference model ──────────────────────────────────────────────────────────

/// `⟨softmax(x_d w x), x⟩` split as `x_j* + Σ_k S_k (x_k − x_j*)` around the
/// highest-scoring position, returned unrounded.
fn ref_neuron_output(x: &[f64], w: f64) -> Dd {
    let xd = x[x.len() - 1];
    let mut best = 0;
    for k in 1..x.len() {
        if xd * w * x[k] > xd * w * x[best] {
            best = k;
        }
    }
    let top = xd * w * x[best];
    let mut denom = 0.0;
    let mut num = 0.0;
    for k in 0..x.len() {
        let e = (xd * w * x[k] - top).exp();
        denom += e;
        if k != best {
            num += e * (x[k] - x[best]);
        }
    }
    Dd::new(x[best]) + Dd::new(num / denom)
}

/// `½ Σ_i (F_i − y_i)²` evaluated independently of the `attention` module.
pub fn reference_loss(w: &[f64], a: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> Dd {
    let scale = 1.0 / (w.len() as f64).sqrt();
    let mut total = Dd::ZERO;
    for (x, y) in xs.iter().zip(ys) {
        let mut f = Dd::ZERO;
        for (wr, ar) in w.iter().zip(a) {
            let g = ref_neuron_output(x, *wr);
            f = if *ar > 0.0 { f + g } else { f - g };
        }
        let resid = f.scale(scale) - Dd::new(*y);
        total = total + resid * resid;
    }
    total.scale(0.5)
}

/// Literal `(1/m) x_{i,d} x_{j,d} Σ_r v_ir v_jr`, recomputing every softmax
/// inside the loop.
pub fn kernel_bruteforce(params: &AttentionParams, dataset: &Dataset) -> Result<KernelMatrix> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    let variance = |x: &[f64], w: f64| -> f64 {
        let xd = x[x.len() - 1];
        let scores: Vec<f64> = x.iter().map(|v| xd * w * v).collect();
        let top = scores.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = e.iter().sum();
        let m1: f64 = e.iter().zip(x).map(|(p, v)| p * v).sum::<f64>() / z;
        e.iter().zip(x).map(|(p, v)| p * (v - m1).powi(2)).sum::<f64>() / z
    };
    let m = params.m as f64;
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let xi = &dataset.samples[i].x;
            let xj = &dataset.samples[j].x;
            let mut acc = 0.0;
            for &w in &params.w {
                acc += variance(xi, w) * variance(xj, w);
            }
            h[(i, j)] = xi[xi.len() - 1] * xj[xj.len() - 1] * acc / m;
        }
    }
    KernelMatrix::from_matrix(h)
}

/// `Σ (S X W_V ⊙ G)` with a compensated outer sum.
fn reference_multidim_objective(x: &Matrix, w: &Matrix, wv: &Matrix, g: &Matrix) -> Dd {
    let (l, d) = (x.rows(), x.cols());
    let mut total = Dd::ZERO;
    for i in 0..l {
        let scores: Vec<f64> = (0..l)
            .map(|j| {
                let mut s = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        s += x[(i, a)] * w[(a, b)] * x[(j, b)];
                    }
                }
                s
            })
            .collect();
        let top = scores.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = e.iter().sum();
        for c in 0..d {
            let mut out = 0.0;
            for j in 0..l {
                let v: f64 = (0..d).map(|b| x[(j, b)] * wv[(b, c)]).sum();
                out += e[j] / z * v;
            }
            let (p, err) = two_prod(out, g[(i, c)]);
            total = total + Dd { hi: p, lo: 0.0 } + Dd::new(err);
        }
    }
    total
}

// ── randomized gradient checks ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgMax {
    pub trial: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub argmax: ArgMax,
    pub h: f64,
    pub trials: usize,
    pub seed: u64,
}

impl GradCheckResult {
    fn empty(h: f64, trials: usize, seed: u64) -> Self {
        Self {
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            argmax: ArgMax { trial: 0, index: 0 },
            h,
            trials,
            seed,
        }
    }

    fn absorb(&mut self, trial: usize, analytic: &[f64], numeric: &[f64]) {
        for (index, (a, b)) in analytic.iter().zip(numeric).enumerate() {
            self.max_abs_err = self.max_abs_err.max((a - b).abs());
            let rel = rel_err(*a, *b);
            if rel > self.max_rel_err {
                self.max_rel_err = rel;
                self.argmax = ArgMax { trial, index };
            }
        }
    }
}

/// Upper bounds on the random instance sizes of [`gradcheck_attention`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnDims {
    pub n_max: usize,
    pub d_max: usize,
    pub m_max: usize,
}

impl Default for AttnDims {
    fn default() -> Self {
        Self {
            n_max: 8,
            d_max: 6,
            m_max: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiDims {
    pub l_max: usize,
    pub d_max: usize,
}

impl Default for MultiDims {
    fn default() -> Self {
        Self { l_max: 5, d_max: 4 }
    }
}

pub const INPUT_BOUND: f64 = 5.0;
pub const WEIGHT_BOUND: f64 = 3.0;

/// One random attention instance: `(w, a, xs, ys)`.
pub fn random_attention_instance(dims: AttnDims, seed: u64, trial: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = rng::substream(seed, Domain::Trial, trial as u64);
    let n = rng.random_range(1..=dims.n_max.max(1));
    let d = rng.random_range(2.min(dims.d_max)..=dims.d_max.max(1));
    let m = rng.random_range(1..=dims.m_max.max(1));
    let w = (0..m).map(|_| rng::symmetric_uniform(&mut rng, WEIGHT_BOUND)).collect();
    let a = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let xs = (0..n)
        .map(|_| (0..d).map(|_| rng::symmetric_uniform(&mut rng, INPUT_BOUND)).collect())
        .collect();
    let ys = (0..n).map(|_| rng::symmetric_uniform(&mut rng, INPUT_BOUND)).collect();
    (w, a, xs, ys)
}

/// Analytic `grad_w` against central differences of the reference loss.
pub fn gradcheck_attention(trials: usize, dims: AttnDims, seed: u64) -> Result<GradCheckResult> {
    if trials == 0 {
        return Err(Error::invalid("trials must be ≥ 1"));
    }
    let mut out = GradCheckResult::empty(DEFAULT_H, trials, seed);
    for t in 0..trials {
        let (w, a, xs, ys) = random_attention_instance(dims, seed, t);
        let params = AttentionParams::new(w.clone(), a.clone())?;
        let ds = Dataset::from_pairs(xs.iter().cloned().zip(ys.iter().copied()).collect())?;
        let analytic = crate::attention::grad_w(&params, &ds)?;
        let numeric = finite_diff_grad(|v| reference_loss(v, &a, &xs, &ys), &w, DEFAULT_H)?;
        out.absorb(t, &analytic, &numeric);
    }
    Ok(out)
}

/// One random multi-dim instance `(X, W, W_V, G)`, entries in `[-1, 1]`.
pub fn random_multidim_instance(dims: MultiDims, seed: u64, trial: usize) -> (Matrix, Matrix, Matrix, Matrix) {
    let mut rng = rng::substream(seed, Domain::Trial, (1 << 32) + trial as u64);
    let l = rng.random_range(1..=dims.l_max.max(1));
    let d = rng.random_range(1..=dims.d_max.max(1));
    let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng::symmetric_uniform(&mut rng, 1.0));
    let x = draw(l, d);
    let w = draw(d, d);
    let wv = draw(d, d);
    let g = draw(l, d);
    (x, w, wv, g)
}

/// Analytic `attn_grad_W` against central differences of `Σ (Attn ⊙ G)`.
pub fn gradcheck_multidim(trials: usize, dims: MultiDims, seed: u64) -> Result<GradCheckResult> {
    if trials == 0 {
        return Err(Error::invalid("trials must be ≥ 1"));
    }
    let mut out = GradCheckResult::empty(DEFAULT_H, trials, seed);
    for t in 0..trials {
        let (x, w, wv, g) = random_multidim_instance(dims, seed, t);
        let d = x.cols();
        let analytic = attn_grad_w(&x, &w, &wv, &g)?;
        let numeric = finite_diff_grad(
            |flat| {
                let wp = Matrix::from_vec(d, d, flat.to_vec()).expect("square");
                reference_multidim_objective(&x, &wp, &wv, &g)
            },
            w.as_slice(),
            DEFAULT_H,
        )?;
        out.absorb(t, analytic.as_slice(), &numeric);
    }
    Ok(out)
}
