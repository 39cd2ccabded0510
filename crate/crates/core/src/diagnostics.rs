//! Post-training diagnostics: sign alignment of hidden weights with their
//! output signs, Monte Carlo attention gaps between background positions and
//! the last position, OOD risk, and the bound constants `B`, `D`, `v_min`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{softmax_into, AttentionParams};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::ssm_data::Dataset;

pub const DEFAULT_DELTA: f64 = 0.05;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
pub const MIN_MC_DRAWS: usize = 100;

// ── sign alignment ───────────────────────────────────────────────────────────

/// Neuron counts by `(sign a_r, sign w_r)`; `w_r = 0` is misaligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuadrantCounts {
    pub pos_aligned: usize,
    pub pos_misaligned: usize,
    pub neg_aligned: usize,
    pub neg_misaligned: usize,
}

impl QuadrantCounts {
    #[inline]
    pub fn push(&mut self, w: f64, a: f64) {
        match (a > 0.0, w > 0.0, w < 0.0) {
            (true, true, _) => self.pos_aligned += 1,
            (true, false, _) => self.pos_misaligned += 1,
            (false, _, true) => self.neg_aligned += 1,
            (false, _, false) => self.neg_misaligned += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.pos_aligned + self.pos_misaligned + self.neg_aligned + self.neg_misaligned
    }

    pub fn report(self) -> AlignmentReport {
        // an empty sign class reports 0
        let frac = |hit: usize, miss: usize| if hit + miss == 0 { 0.0 } else { hit as f64 / (hit + miss) as f64 };
        AlignmentReport {
            frac_pos: frac(self.pos_aligned, self.pos_misaligned),
            frac_neg: frac(self.neg_aligned, self.neg_misaligned),
            counts: self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub frac_pos: f64,
    pub frac_neg: f64,
    pub counts: QuadrantCounts,
}

/// Fractions of `a_r = +1` neurons with `w_r > 0` and of `a_r = −1` neurons
/// with `w_r < 0`.
pub fn sign_alignment(params: &AttentionParams) -> AlignmentReport {
    let pos = params.a.iter().filter(|a| **a > 0.0).count();
    let pos_aligned = params.w.iter().zip(&params.a).filter(|(w, a)| **a > 0.0 && **w > 0.0).count();
    let neg_aligned = params.w.iter().zip(&params.a).filter(|(w, a)| **a < 0.0 && **w < 0.0).count();
    QuadrantCounts {
        pos_aligned,
        pos_misaligned: pos - pos_aligned,
        neg_aligned,
        neg_misaligned: params.a.len() - pos - neg_aligned,
    }
    .report()
}

// ── attention gap ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub d: usize,
    pub sigma_prime: f64,
    pub n_mc: usize,
    pub seed: u64,
    /// Also report `a_r = +1` neurons.
    #[serde(default)]
    pub include_all: bool,
}

/// `E[softmax_k] − E[softmax_d]` for one background position `k` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionGap {
    pub k: usize,
    pub gap: f64,
    pub se: f64,
}

impl PositionGap {
    /// Lower end of the two-sided 95% interval.
    pub fn lower95(&self) -> f64 {
        self.gap - Z95 * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronGap {
    pub r: usize,
    pub w: f64,
    pub a: f64,
    pub softmax_d_mean: f64,
    pub softmax_d_se: f64,
    pub gaps: Vec<PositionGap>,
    pub min_gap: f64,
    /// Every gap's 95% lower bound is ≥ 0.
    pub nonneg_95: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionGapReport {
    pub d: usize,
    pub sigma_prime: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub neurons: Vec<NeuronGap>,
    /// Share of reported neurons with `nonneg_95`.
    pub pass_fraction: f64,
    pub min_gap: f64,
}

/// Mean and standard error accumulator (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (v - self.mean);
    }

    fn se(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Monte Carlo gaps for one weight with `x ~ N(0, σ′² I_d)`; draws are shared
/// across `k`.
pub fn neuron_gap(w: f64, d: usize, sigma_prime: f64, n_mc: usize, stream: u64, seed: u64) -> (Vec<PositionGap>, f64, f64) {
    let mut rng = rng::substream(seed, Domain::MonteCarlo, stream);
    let mut x = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut s = vec![0.0; d];
    let mut diffs = vec![Moments::default(); d - 1];
    let mut last = Moments::default();
    for _ in 0..n_mc {
        for v in x.iter_mut() {
            *v = sigma_prime * rng::normal(&mut rng);
        }
        let xd = x[d - 1];
        for (zk, xk) in z.iter_mut().zip(&x) {
            *zk = xd * w * xk;
        }
        softmax_into(&z, &mut s);
        let sd = s[d - 1];
        last.push(sd);
        for (acc, sk) in diffs.iter_mut().zip(&s) {
            acc.push(sk - sd);
        }
    }
    let gaps = diffs
        .iter()
        .enumerate()
        .map(|(k, m)| PositionGap {
            k: k + 1,
            gap: m.mean,
            se: m.se(),
        })
        .collect();
    (gaps, last.mean, last.se())
}

/// Gap estimates for every `a_r = −1` neuron (all neurons with
/// `include_all`). Neuron `r` draws from its own substream.
pub fn residual_attention_gap(params: &AttentionParams, cfg: &GapConfig) -> Result<AttentionGapReport> {
    params.validate()?;
    if cfg.d < 2 {
        return Err(Error::invalid(format!("gap needs d ≥ 2, got {}", cfg.d)));
    }
    if cfg.n_mc < MIN_MC_DRAWS {
        return Err(Error::invalid(format!("n_mc must be ≥ {MIN_MC_DRAWS}, got {}", cfg.n_mc)));
    }
    if !(cfg.sigma_prime.is_finite() && cfg.sigma_prime > 0.0) {
        return Err(Error::invalid(format!(
            "sigma_prime must be finite and > 0, got {}",
            cfg.sigma_prime
        )));
    }
    let selected: Vec<usize> = (0..params.m).filter(|&r| cfg.include_all || params.a[r] < 0.0).collect();
    let neurons: Vec<NeuronGap> = selected
        .par_iter()
        .map(|&r| {
            let w = params.w[r];
            let (gaps, sd_mean, sd_se) = neuron_gap(w, cfg.d, cfg.sigma_prime, cfg.n_mc, r as u64, cfg.seed);
            let min_gap = gaps.iter().map(|g| g.gap).fold(f64::INFINITY, f64::min);
            let nonneg_95 = gaps.iter().all(|g| g.lower95() >= 0.0);
            NeuronGap {
                r,
                w,
                a: params.a[r],
                softmax_d_mean: sd_mean,
                softmax_d_se: sd_se,
                gaps,
                min_gap,
                nonneg_95,
            }
        })
        .collect();
    let pass = neurons.iter().filter(|n| n.nonneg_95).count();
    let pass_fraction = if neurons.is_empty() {
        0.0
    } else {
        pass as f64 / neurons.len() as f64
    };
    let min_gap = neurons.iter().map(|n| n.min_gap).fold(f64::INFINITY, f64::min);
    Ok(AttentionGapReport {
        d: cfg.d,
        sigma_prime: cfg.sigma_prime,
        n_mc: cfg.n_mc,
        seed: cfg.seed,
        neurons,
        pass_fraction,
        min_gap: if min_gap.is_finite() { min_gap } else { 0.0 },
    })
}

// ── risks and constants ──────────────────────────────────────────────────────

/// Mean squared error of `predictor` over the test set.
pub fn ood_risk(predictor: impl Fn(&[f64]) -> f64, testset: &Dataset) -> Result<f64> {
    testset.ensure_nonempty()?;
    let mut acc = 0.0;
    for s in &testset.samples {
        let e = predictor(&s.x) - s.y;
        acc += e * e;
    }
    let risk = acc / testset.len() as f64;
    if !risk.is_finite() {
        return Err(Error::NonFinite("ood risk".into()));
    }
    Ok(risk)
}

/// `min_i (1/d) Σ_k (x_{i,k} − x̄_i)²`.
pub fn v_min(dataset: &Dataset) -> Result<f64> {
    dataset.ensure_nonempty()?;
    let d = dataset.d as f64;
    Ok(dataset
        .samples
        .iter()
        .map(|s| {
            let mean = s.x.iter().sum::<f64>() / d;
            s.x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d
        })
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub delta: f64,
    pub v_min: Option<f64>,
    pub lambda: Option<f64>,
}

/// `max{√((1+σ²) ln(ratio)), 1}` with `ratio = nN/δ`.
pub fn bound_b(ratio: f64, sigma: f64) -> f64 {
    ((1.0 + sigma * sigma) * ratio.ln()).max(0.0).sqrt().max(1.0)
}

/// `max{√(ln(ratio)), 1}` with `ratio = m/δ`.
pub fn bound_d(ratio: f64) -> f64 {
    ratio.ln().max(0.0).sqrt().max(1.0)
}

/// `B = max{√((1+σ²) ln(nN/δ)), 1}`, `D = max{√(ln(m/δ)), 1}`.
pub fn theory_constants(n: usize, state_dim: usize, m: usize, sigma: f64, delta: f64) -> Result<TheoryConstants> {
    if !(delta > 0.0 && delta < 0.1) {
        return Err(Error::invalid(format!("delta must lie in (0, 0.1), got {delta}")));
    }
    if n == 0 || state_dim == 0 || m == 0 {
        return Err(Error::invalid("n, N and m must be ≥ 1"));
    }
    if !sigma.is_finite() {
        return Err(Error::NonFinite("sigma".into()));
    }
    Ok(TheoryConstants {
        b: bound_b((n * state_dim) as f64 / delta, sigma),
        d: bound_d(m as f64 / delta),
        delta,
        v_min: None,
        lambda: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: Vec<f64>, a: Vec<f64>) -> AttentionParams {
        AttentionParams::new(w, a).unwrap()
    }

    #[test]
    fn alignment_examples() {
        let r = sign_alignment(&params(vec![1.0, -1.0], vec![1.0, -1.0]));
        assert_eq!((r.frac_pos, r.frac_neg), (1.0, 1.0));
        let r = sign_alignment(&params(vec![-1.0], vec![1.0]));
        assert_eq!(r.frac_pos, 0.0);
        let r = sign_alignment(&params(vec![0.0, 0.0], vec![1.0, -1.0]));
        assert_eq!((r.frac_pos, r.frac_neg), (0.0, 0.0));
        assert_eq!(r.counts.total(), 2);
    }

    #[test]
    fn streaming_alignment_matches_batch() {
        let p = crate::attention::init_params(1000, 3, false).unwrap();
        let mut q = QuadrantCounts::default();
        for (w, a) in p.w.iter().zip(&p.a) {
            q.push(*w, *a);
        }
        assert_eq!(q.report(), sign_alignment(&p));
    }

    #[test]
    fn zero_weight_gap_is_exactly_zero() {
        let cfg = GapConfig {
            d: 4,
            sigma_prime: 1.0,
            n_mc: 200,
            seed: 1,
            include_all: true,
        };
        let rep = residual_attention_gap(&params(vec![0.0], vec![1.0]), &cfg).unwrap();
        for g in &rep.neurons[0].gaps {
            assert_eq!(g.gap, 0.0);
            assert_eq!(g.se, 0.0);
        }
        assert_eq!(rep.neurons[0].softmax_d_mean, 0.25);
    }

    #[test]
    fn gap_sign_follows_weight_sign() {
        let cfg = GapConfig {
            d: 4,
            sigma_prime: 1.0,
            n_mc: 20_000,
            seed: 2,
            include_all: true,
        };
        let rep = residual_attention_gap(&params(vec![-5.0, 5.0], vec![-1.0, 1.0]), &cfg).unwrap();
        assert!(rep.neurons[0].gaps.iter().all(|g| g.lower95() > 0.0));
        assert!(rep.neurons[1].gaps.iter().all(|g| g.gap + Z95 * g.se < 0.0));
    }

    #[test]
    fn gap_default_selects_negative_outputs() {
        let cfg = GapConfig {
            d: 3,
            sigma_prime: 1.0,
            n_mc: 100,
            seed: 2,
            include_all: false,
        };
        let rep = residual_attention_gap(&params(vec![1.0, 2.0, 3.0], vec![1.0, -1.0, 1.0]), &cfg).unwrap();
        assert_eq!(rep.neurons.len(), 1);
        assert_eq!(rep.neurons[0].r, 1);
        let bad = GapConfig { n_mc: 99, ..cfg };
        assert!(residual_attention_gap(&params(vec![1.0], vec![1.0]), &bad).is_err());
    }

    #[test]
    fn risk_and_vmin_examples() {
        let ds = Dataset::from_pairs(vec![(vec![1.0, -1.0], 2.0), (vec![3.0, 3.0], -1.0)]).unwrap();
        assert_eq!(ood_risk(|_| 0.0, &ds).unwrap(), 2.5);
        assert_eq!(v_min(&ds).unwrap(), 0.0);
        let one = Dataset::from_pairs(vec![(vec![1.0, -1.0], 0.0)]).unwrap();
        assert_eq!(v_min(&one).unwrap(), 1.0);
    }

    #[test]
    fn constants_examples() {
        let e = std::f64::consts::E;
        assert_eq!(bound_b(e, 0.0), 1.0);
        assert_eq!(bound_d(e), 1.0);
        assert_eq!(bound_b(0.5, 0.0), 1.0);
        let c = theory_constants(32, 8, 512, 0.01, 0.05).unwrap();
        // ln(5120) = ln(2^10 · 5), ln(10240) = ln(2^11 · 5)
        let ln2 = std::f64::consts::LN_2;
        let ln5 = 5.0_f64.ln();
        assert!((c.b - (1.0001 * (10.0 * ln2 + ln5)).sqrt()).abs() < 1e-14);
        assert!((c.d - (11.0 * ln2 + ln5).sqrt()).abs() < 1e-14);
        assert!(theory_constants(1, 1, 1, 0.0, 0.1).is_err());
        assert!(theory_constants(1, 1, 1, 0.0, 0.0).is_err());
    }
}
