//! Two-layer scalar softmax attention
//!
//! ```text
//! f(x, w, a) = (1/√m) Σ_r a_r · ⟨softmax(x_d · w_r · x), x⟩
//! ```
//!
//! with trainable hidden weights `w ∈ R^m` and fixed output signs
//! `a ∈ {±1}^m`, plus the per-(sample, neuron) operator quantities
//! `u = exp(x_d w_r x)`, `α = ⟨u, 1⟩`, `S = u/α` and the closed-form loss
//! gradient
//!
//! ```text
//! ∂L/∂w_r = (1/√m) a_r Σ_i (F_i − y_i) · x_{i,d} · (⟨S_ir, x_i∘x_i⟩ − ⟨S_ir, x_i⟩²).
//! ```
//!
//! Reductions run in a fixed order (neurons ascending, then samples
//! ascending) so parallel evaluation is bitwise reproducible.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::ssm_data::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub m: usize,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    #[serde(default)]
    pub zero_init: bool,
    #[serde(default)]
    pub seed: u64,
}

impl AttentionParams {
    pub fn new(w: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        let p = Self {
            m: w.len(),
            w,
            a,
            zero_init: false,
            seed: 0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("m must be ≥ 1"));
        }
        Error::check_len("hidden weights w", self.m, self.w.len())?;
        Error::check_len("output weights a", self.m, self.a.len())?;
        if let Some(bad) = self.a.iter().find(|v| **v != 1.0 && **v != -1.0) {
            return Err(Error::invalid(format!("output weights must be ±1, found {bad}")));
        }
        if !self.w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("hidden weights".into()));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn scale(&self) -> f64 {
        1.0 / (self.m as f64).sqrt()
    }
}

/// `w_r(0) ~ N(0, 1)`, `a_r ~ Uniform{±1}`; with `zero_init`, neurons come in
/// pairs `(w, +1), (w, −1)` so the network output is identically zero.
pub fn init_params(m: usize, seed: u64, zero_init: bool) -> Result<AttentionParams> {
    if m == 0 {
        return Err(Error::invalid("m must be ≥ 1"));
    }
    if zero_init && !m.is_multiple_of(2) {
        return Err(Error::invalid(format!("zero-init pairing needs an even neuron count, got {m}")));
    }
    let mut rng = rng::substream(seed, Domain::Init, 0);
    let (w, a) = if zero_init {
        let mut w = Vec::with_capacity(m);
        let mut a = Vec::with_capacity(m);
        for _ in 0..m / 2 {
            let v = rng::normal(&mut rng);
            w.extend([v, v]);
            a.extend([1.0, -1.0]);
        }
        (w, a)
    } else {
        let w = rng::normal_vec(&mut rng, m);
        let a = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        (w, a)
    };
    Ok(AttentionParams { m, w, a, zero_init, seed })
}

// ── softmax ──────────────────────────────────────────────────────────────────

/// Max-shifted softmax written into `out`; returns the normalizer of the
/// shifted exponentials.
#[inline]
pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum
}

pub fn softmax_weights(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input {bad}")));
    }
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    Ok(out)
}

/// `⟨s, x∘x⟩ − ⟨s, x⟩²`, evaluated as `Σ s_k (x_k − ⟨s, x⟩)²` so it never
/// goes negative.
pub fn softmax_variance(s: &[f64], x: &[f64]) -> f64 {
    let Some(&pivot) = x.last() else { return 0.0 };
    let offset: f64 = s.iter().zip(x).map(|(p, v)| p * (v - pivot)).sum();
    s.iter()
        .zip(x)
        .map(|(p, v)| {
            let c = (v - pivot) - offset;
            p * c * c
        })
        .sum()
}

/// Mean and variance of `x` under `softmax(x_d · w · x)`. Moments are taken
/// about `x_d` so a constant sample has variance exactly 0.
#[inline]
pub(crate) fn neuron_moments(x: &[f64], w: f64, scratch: &mut [f64]) -> (f64, f64) {
    let xd = x[x.len() - 1];
    let coef = xd * w;
    let mut max = f64::NEG_INFINITY;
    for (s, v) in scratch.iter_mut().zip(x) {
        *s = coef * v;
        max = max.max(*s);
    }
    let mut sum = 0.0;
    let mut first = 0.0;
    for (s, v) in scratch.iter_mut().zip(x) {
        *s = (*s - max).exp();
        sum += *s;
        first += *s * (v - xd);
    }
    let offset = first / sum;
    let mut var = 0.0;
    for (s, v) in scratch.iter().zip(x) {
        let c = (v - xd) - offset;
        var += s * c * c;
    }
    (xd + offset, var / sum)
}

// ── model evaluation ─────────────────────────────────────────────────────────

pub fn forward(params: &AttentionParams, x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut scratch = vec![0.0; x.len()];
    let mut acc = 0.0;
    for (w, a) in params.w.iter().zip(&params.a) {
        let (mean, _) = neuron_moments(x, *w, &mut scratch);
        acc += a * mean;
    }
    params.scale() * acc
}

/// Per-(sample, neuron) operator quantities.
///
/// `u` is stored max-shifted: the stored block for `(i, r)` equals
/// `exp(x_d w_r x_i − shift_ir)`, so `α_ir = exp(shift_ir)·Σ u_stored`.
/// `S` and `F` are unaffected by the shift.
#[derive(Debug, Clone)]
pub struct ForwardStats {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    u: Vec<f64>,
    shift: Vec<f64>,
    s: Vec<f64>,
    pub f: Vec<f64>,
}

impl ForwardStats {
    #[inline]
    fn slot(&self, i: usize, r: usize) -> usize {
        i * self.m + r
    }

    pub fn u_shifted(&self, i: usize, r: usize) -> &[f64] {
        let o = self.slot(i, r) * self.d;
        &self.u[o..o + self.d]
    }

    pub fn shift(&self, i: usize, r: usize) -> f64 {
        self.shift[self.slot(i, r)]
    }

    /// `⟨u_ir, 1⟩` divided by `exp(shift_ir)`.
    pub fn alpha_shifted(&self, i: usize, r: usize) -> f64 {
        self.u_shifted(i, r).iter().sum()
    }

    /// `α_ir` without shift; may overflow to infinity for large scores.
    pub fn alpha(&self, i: usize, r: usize) -> f64 {
        self.alpha_shifted(i, r) * self.shift(i, r).exp()
    }

    pub fn s(&self, i: usize, r: usize) -> &[f64] {
        let o = self.slot(i, r) * self.d;
        &self.s[o..o + self.d]
    }
}

pub fn forward_stats(params: &AttentionParams, dataset: &Dataset) -> Result<ForwardStats> {
    params.validate()?;
    dataset.ensure_nonempty()?;
    let (n, m, d) = (dataset.len(), params.m, dataset.d);
    let mut u = vec![0.0; n * m * d];
    let mut shift = vec![0.0; n * m];
    let mut s = vec![0.0; n * m * d];
    let mut f = vec![0.0; n];
    for (i, sample) in dataset.samples.iter().enumerate() {
        let x = &sample.x;
        let xd = x[d - 1];
        let mut acc = 0.0;
        for r in 0..m {
            let slot = i * m + r;
            let scores: Vec<f64> = x.iter().map(|v| xd * params.w[r] * v).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ub = &mut u[slot * d..(slot + 1) * d];
            for (o, z) in ub.iter_mut().zip(&scores) {
                *o = (z - max).exp();
            }
            let alpha: f64 = ub.iter().sum();
            let sb = &mut s[slot * d..(slot + 1) * d];
            for (o, v) in sb.iter_mut().zip(ub.iter()) {
                *o = v / alpha;
            }
            shift[slot] = max;
            acc += params.a[r] * sb.iter().zip(x).map(|(p, v)| p * v).sum::<f64>();
        }
        f[i] = params.scale() * acc;
    }
    Ok(ForwardStats { n, m, d, u, shift, s, f })
}

/// Flattened view of a dataset for the hot loops.
#[derive(Debug, Clone)]
pub(crate) struct Batch {
    pub n: usize,
    pub d: usize,
    pub xs: Vec<f64>,
    pub y: Vec<f64>,
}

impl Batch {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        dataset.ensure_nonempty()?;
        let d = dataset.d;
        let mut xs = Vec::with_capacity(dataset.len() * d);
        for s in &dataset.samples {
            xs.extend_from_slice(&s.x);
        }
        Ok(Self {
            n: dataset.len(),
            d,
            xs,
            y: dataset.labels(),
        })
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.d..(i + 1) * self.d]
    }
}

/// Loss, predictions, per-(neuron, sample) variances and the gradient at one
/// parameter point.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub f: Vec<f64>,
    /// Neuron-major: `var[r * n + i]`.
    pub var: Vec<f64>,
    pub loss: f64,
}

pub(crate) fn evaluate(params: &AttentionParams, batch: &Batch) -> Evaluation {
    let (n, m, d) = (batch.n, params.m, batch.d);
    // neuron-major blocks of (mean, var) so each neuron is one parallel task
    let moments: Vec<(Vec<f64>, Vec<f64>)> = params
        .w
        .par_iter()
        .map(|&w| {
            let mut scratch = vec![0.0; d];
            let mut means = Vec::with_capacity(n);
            let mut vars = Vec::with_capacity(n);
            for i in 0..n {
                let (mu, v) = neuron_moments(batch.x(i), w, &mut scratch);
                means.push(mu);
                vars.push(v);
            }
            (means, vars)
        })
        .collect();
    let scale = params.scale();
    let mut f = vec![0.0; n];
    for (r, (means, _)) in moments.iter().enumerate() {
        let a = params.a[r];
        for (fi, mu) in f.iter_mut().zip(means) {
            *fi += a * mu;
        }
    }
    for fi in f.iter_mut() {
        *fi *= scale;
    }
    let loss = 0.5 * f.iter().zip(&batch.y).map(|(fi, yi)| (fi - yi) * (fi - yi)).sum::<f64>();
    let mut var = Vec::with_capacity(n * m);
    for (_, v) in moments {
        var.extend(v);
    }
    Evaluation { f, var, loss }
}

pub(crate) fn gradient_from(params: &AttentionParams, batch: &Batch, eval: &Evaluation) -> Vec<f64> {
    let n = batch.n;
    let d = batch.d;
    let scale = params.scale();
    let weights: Vec<f64> = (0..n).map(|i| (eval.f[i] - batch.y[i]) * batch.xs[i * d + d - 1]).collect();
    (0..params.m)
        .into_par_iter()
        .map(|r| {
            let vr = &eval.var[r * n..(r + 1) * n];
            let mut acc = 0.0;
            for (wi, v) in weights.iter().zip(vr) {
                acc += wi * v;
            }
            scale * params.a[r] * acc
        })
        .collect()
}

pub fn loss(params: &AttentionParams, dataset: &Dataset) -> Result<f64> {
    params.validate()?;
    let batch = Batch::new(dataset)?;
    Ok(evaluate(params, &batch).loss)
}

pub fn predictions(params: &AttentionParams, dataset: &Dataset) -> Result<Vec<f64>> {
    params.validate()?;
    let batch = Batch::new(dataset)?;
    Ok(evaluate(params, &batch).f)
}

pub fn grad_w(params: &AttentionParams, dataset: &Dataset) -> Result<Vec<f64>> {
    params.validate()?;
    let batch = Batch::new(dataset)?;
    let eval = evaluate(params, &batch);
    Ok(gradient_from(params, &batch, &eval))
}

// ── per-sample derivative pieces ─────────────────────────────────────────────
//
// Unshifted quantities for one sample and one neuron, exposed for derivative
// checks; the training path uses the max-shifted forms above.

/// `u = exp(x_d w x)`.
pub fn op_u(x: &[f64], w: f64) -> Vec<f64> {
    let xd = x[x.len() - 1];
    x.iter().map(|v| (xd * w * v).exp()).collect()
}

/// `α = ⟨u, 1⟩`.
pub fn op_alpha(x: &[f64], w: f64) -> f64 {
    op_u(x, w).iter().sum()
}

/// `S = u / α`.
pub fn op_s(x: &[f64], w: f64) -> Vec<f64> {
    let u = op_u(x, w);
    let alpha: f64 = u.iter().sum();
    u.iter().map(|v| v / alpha).collect()
}

/// `du/dw = x_d · u ∘ x`.
pub fn du_dw(x: &[f64], w: f64) -> Vec<f64> {
    let xd = x[x.len() - 1];
    op_u(x, w).iter().zip(x).map(|(u, v)| xd * u * v).collect()
}

/// `dα/dw = x_d ⟨u ∘ x, 1⟩`.
pub fn dalpha_dw(x: &[f64], w: f64) -> f64 {
    let xd = x[x.len() - 1];
    xd * op_u(x, w).iter().zip(x).map(|(u, v)| u * v).sum::<f64>()
}

/// `dα⁻¹/dw = −x_d α⁻¹ ⟨S ∘ x, 1⟩`.
pub fn dalpha_inv_dw(x: &[f64], w: f64) -> f64 {
    let xd = x[x.len() - 1];
    let s = op_s(x, w);
    -xd / op_alpha(x, w) * s.iter().zip(x).map(|(p, v)| p * v).sum::<f64>()
}

/// `dS/dw = x_d (x − ⟨S, x⟩ 1) ∘ S`.
pub fn ds_dw(x: &[f64], w: f64) -> Vec<f64> {
    let xd = x[x.len() - 1];
    let s = op_s(x, w);
    let mean: f64 = s.iter().zip(x).map(|(p, v)| p * v).sum();
    s.iter().zip(x).map(|(p, v)| xd * (v - mean) * p).collect()
}

/// `dF/dw_r = (1/√m) a_r x_d (⟨S, x∘x⟩ − ⟨S, x⟩²)`.
pub fn df_dw(params: &AttentionParams, x: &[f64], r: usize) -> f64 {
    let xd = x[x.len() - 1];
    let s = op_s(x, params.w[r]);
    params.scale() * params.a[r] * xd * softmax_variance(&s, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{finite_diff_grad, rel_err, DEFAULT_H};

    fn single(x: Vec<f64>, y: f64) -> Dataset {
        Dataset::from_pairs(vec![(x, y)]).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_weights(&[0.0, 0.0, 0.0]).unwrap();
        assert!(s.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let s = softmax_weights(&[3f64.ln(), 0.0]).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-15 && (s[1] - 0.25).abs() < 1e-15);
        let s = softmax_weights(&[1000.0, 0.0]).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] < 1e-300);
        assert!(softmax_weights(&[f64::NAN, 1.0]).is_err());
        let s = softmax_weights(&[1e6, -1e6, 0.0]).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_variance_examples() {
        assert!((softmax_variance(&[0.5, 0.5], &[1.0, -1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(softmax_variance(&[0.2, 0.3, 0.5], &[4.0, 4.0, 4.0]), 0.0);
        assert!((softmax_variance(&[0.75, 0.25], &[1.0, -1.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn init_pairing() {
        let p = init_params(4, 9, true).unwrap();
        assert_eq!(p.a.iter().filter(|v| **v == 1.0).count(), 2);
        assert_eq!(p.a.iter().filter(|v| **v == -1.0).count(), 2);
        assert_eq!(p.w[0], p.w[1]);
        assert_eq!(p.w[2], p.w[3]);
        assert!(init_params(3, 9, true).is_err());
        assert!(init_params(0, 9, false).is_err());
    }

    #[test]
    fn unpaired_signs_are_balanced() {
        let p = init_params(1000, 5, false).unwrap();
        let mean = p.a.iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() <= 0.1, "mean of a = {mean}");
    }

    #[test]
    fn zero_init_forward_vanishes() {
        let p = init_params(2, 3, true).unwrap();
        for x in [vec![1.0, 2.0, 3.0], vec![-4.0, 0.5], vec![0.3, -0.1, 7.0, 2.0]] {
            assert_eq!(forward(&p, &x), 0.0);
        }
    }

    #[test]
    fn forward_examples() {
        let p = AttentionParams::new(vec![0.0], vec![1.0]).unwrap();
        assert!((forward(&p, &[1.0, 2.0, 3.0]) - 2.0).abs() < 1e-15);

        let p = AttentionParams::new(vec![1.0], vec![1.0]).unwrap();
        let e = std::f64::consts::E;
        let expect = (1.0 / e - e) / (1.0 / e + e);
        assert!((forward(&p, &[1.0, -1.0]) - expect).abs() < 1e-15);
        assert!((expect + 0.76159).abs() < 1e-5);
    }

    #[test]
    fn forward_stats_consistency() {
        let p = AttentionParams::new(vec![0.0, 0.7, -1.3], vec![1.0, -1.0, 1.0]).unwrap();
        let ds = Dataset::from_pairs(vec![(vec![0.5, -1.0, 2.0], 1.0), (vec![3.0, 0.1, -0.4], 0.0)]).unwrap();
        let st = forward_stats(&p, &ds).unwrap();
        for i in 0..2 {
            let s0 = st.s(i, 0);
            assert!(s0.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
            for r in 0..3 {
                let s = st.s(i, r);
                assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0));
                let alpha = st.alpha(i, r);
                let raw = op_u(&ds.samples[i].x, p.w[r]);
                assert!(rel_err(alpha, raw.iter().sum()) < 1e-14);
            }
            let refit: f64 = (0..3)
                .map(|r| p.a[r] * st.s(i, r).iter().zip(&ds.samples[i].x).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
                / 3f64.sqrt();
            assert!((refit - forward(&p, &ds.samples[i].x)).abs() <= 1e-12);
            assert!((st.f[i] - forward(&p, &ds.samples[i].x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let p = AttentionParams::new(vec![0.0], vec![1.0]).unwrap();
        // F = mean(x) = 1
        assert!((loss(&p, &single(vec![0.0, 2.0], 3.0)).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(loss(&p, &single(vec![0.0, 2.0], 1.0)).unwrap(), 0.0);
        let z = init_params(6, 1, true).unwrap();
        let ds = Dataset::from_pairs(vec![(vec![1.0, 2.0], 3.0), (vec![-1.0, 0.5], -2.0)]).unwrap();
        assert_eq!(loss(&z, &ds).unwrap(), 0.5 * (9.0 + 4.0));
    }

    #[test]
    fn gradient_hand_case() {
        let p = AttentionParams::new(vec![0.0], vec![1.0]).unwrap();
        let ds = single(vec![1.0, -1.0], 1.0);
        let g = grad_w(&p, &ds).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15);
        let fd = finite_diff_grad(
            |w| loss(&AttentionParams::new(w.to_vec(), vec![1.0]).unwrap(), &ds).unwrap(),
            &[0.0],
            DEFAULT_H,
        )
        .unwrap();
        assert!((fd[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_vanishes_at_zero_residual() {
        let p = AttentionParams::new(vec![0.4, -0.9], vec![1.0, -1.0]).unwrap();
        let xs = [vec![0.3, 1.0, -2.0], vec![1.5, -0.5, 0.8]];
        let ds = Dataset::from_pairs(xs.iter().map(|x| (x.clone(), forward(&p, x))).collect()).unwrap();
        assert!(grad_w(&p, &ds).unwrap().iter().all(|g| *g == 0.0));
    }

    fn moderate_instance(seed: u64) -> (Vec<f64>, f64) {
        let mut rng = rng::substream(seed, Domain::Trial, 99);
        let d = 2 + (seed as usize % 5);
        let x = (0..d).map(|_| rng::symmetric_uniform(&mut rng, 2.0)).collect();
        (x, rng::symmetric_uniform(&mut rng, 1.0))
    }

    #[test]
    fn derivative_pieces_match_finite_differences() {
        for seed in 0..40 {
            let (x, w) = moderate_instance(seed);
            let d = x.len();
            let fd_u: Vec<f64> = (0..d)
                .map(|k| finite_diff_grad(|v| op_u(&x, v[0])[k], &[w], DEFAULT_H).unwrap()[0])
                .collect();
            for (a, b) in du_dw(&x, w).iter().zip(&fd_u) {
                assert!(rel_err(*a, *b) <= 1e-6, "du/dw {a} vs {b}");
            }
            let fd_alpha = finite_diff_grad(|v| op_alpha(&x, v[0]), &[w], DEFAULT_H).unwrap()[0];
            assert!(rel_err(dalpha_dw(&x, w), fd_alpha) <= 1e-6);
            let fd_inv = finite_diff_grad(|v| 1.0 / op_alpha(&x, v[0]), &[w], DEFAULT_H).unwrap()[0];
            assert!(rel_err(dalpha_inv_dw(&x, w), fd_inv) <= 1e-6);
            let ds = ds_dw(&x, w);
            for (k, dsk) in ds.iter().enumerate() {
                let fd = finite_diff_grad(|v| op_s(&x, v[0])[k], &[w], DEFAULT_H).unwrap()[0];
                assert!(rel_err(*dsk, fd) <= 1e-6, "dS_{k}/dw {dsk} vs {fd}");
            }
            let params = AttentionParams::new(vec![w, 0.3, -w], vec![-1.0, 1.0, 1.0]).unwrap();
            for r in 0..3 {
                let fd = finite_diff_grad(
                    |v| {
                        let mut q = params.clone();
                        q.w[r] = v[0];
                        forward(&q, &x)
                    },
                    &[params.w[r]],
                    DEFAULT_H,
                )
                .unwrap()[0];
                assert!(rel_err(df_dw(&params, &x, r), fd) <= 1e-6, "dF/dw_{r}");
            }
        }
    }

    #[test]
    fn evaluation_is_schedule_independent() {
        let p = init_params(64, 4, false).unwrap();
        let ds = Dataset::from_pairs((0..10).map(|i| (vec![i as f64 * 0.1, -0.3, 1.0 - i as f64 * 0.05], 0.5)).collect()).unwrap();
        let g1 = grad_w(&p, &ds).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let g2 = pool.install(|| grad_w(&p, &ds).unwrap());
        assert_eq!(g1, g2);
    }
}
