//! Full-batch gradient descent `w(t+1) = w(t) − η ∇_w L(w(t))` on the hidden
//! weights, with the output signs held fixed.

use serde::{Deserialize, Serialize};

use crate::attention::{evaluate, gradient_from, AttentionParams, Batch};
use crate::diagnostics::sign_alignment;
use crate::error::{Error, Result};
use crate::ntk::{self, KernelMatrix};
use crate::ssm_data::Dataset;

pub const DEFAULT_ETA: f64 = 0.05;
/// Losses above this count as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e12;
/// Kernel statistics are logged every `log_every · KERNEL_LOG_FACTOR` steps.
pub const KERNEL_LOG_FACTOR: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub epsilon_target: Option<f64>,
    #[serde(default)]
    pub track_kernel: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_log_every() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            steps: 5000,
            log_every: 50,
            epsilon_target: None,
            track_kernel: false,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // η = 0 is accepted as an explicit no-op run
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid(format!("eta must be finite and ≥ 0, got {}", self.eta)));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be ≥ 1"));
        }
        if let Some(eps) = self.epsilon_target {
            if !eps.is_finite() || eps < 0.0 {
                return Err(Error::invalid(format!("epsilon_target must be finite and ≥ 0, got {eps}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub loss: f64,
    pub weight_drift: f64,
    pub sign_agree_pos: f64,
    pub sign_agree_neg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainTrace {
    pub steps: Vec<TraceRecord>,
    /// GD updates actually applied.
    pub steps_taken: usize,
    /// Updates after which the loss did not increase.
    pub nonincreasing_steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    #[serde(default)]
    pub early_stopped: bool,
}

impl TrainTrace {
    /// Share of applied updates with `L(t+1) ≤ L(t)`; 1 for an empty run.
    pub fn nonincreasing_fraction(&self) -> f64 {
        if self.steps_taken == 0 {
            1.0
        } else {
            self.nonincreasing_steps as f64 / self.steps_taken as f64
        }
    }

    /// Final logged `R`.
    pub fn final_drift(&self) -> f64 {
        self.steps.last().map_or(0.0, |r| r.weight_drift)
    }

    /// Last logged kernel drift, if the kernel was tracked.
    pub fn final_kernel_drift(&self) -> Option<f64> {
        self.steps.iter().rev().find_map(|r| r.kernel_drift)
    }

    pub const CSV_HEADER: &'static str = "step,loss,weight_drift,sign_agree_pos,sign_agree_neg,kernel_drift,lambda_min";

    pub fn to_csv(&self) -> String {
        use crate::persist::fmt_f64;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t,
                fmt_f64(r.loss),
                fmt_f64(r.weight_drift),
                fmt_f64(r.sign_agree_pos),
                fmt_f64(r.sign_agree_neg),
                opt(r.kernel_drift),
                opt(r.lambda_min),
            ));
        }
        out
    }
}

/// `max_r |w_r − w_r(0)|`.
pub fn weight_drift(current: &AttentionParams, initial: &AttentionParams) -> Result<f64> {
    Error::check_len("weight drift m", initial.w.len(), current.w.len())?;
    Ok(current.w.iter().zip(&initial.w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

struct KernelTracker {
    k0: KernelMatrix,
    every: usize,
}

impl KernelTracker {
    fn sample(&self, params: &AttentionParams, dataset: &Dataset) -> Result<(f64, f64)> {
        let kt = ntk::kernel(params, dataset)?;
        Ok((ntk::kernel_drift(&kt, &self.k0)?, ntk::min_eigenvalue(&kt)?))
    }
}

/// Runs `config.steps` updates (fewer on early stop). Step 0, every
/// `log_every`-th step and the final step are logged.
pub fn train(params: &AttentionParams, dataset: &Dataset, config: &TrainConfig) -> Result<(AttentionParams, TrainTrace)> {
    params.validate()?;
    config.validate()?;
    let batch = Batch::new(dataset)?;
    let initial = params.clone();
    let mut cur = params.clone();
    let tracker = if config.track_kernel {
        Some(KernelTracker {
            k0: ntk::kernel(params, dataset)?,
            every: config.log_every * KERNEL_LOG_FACTOR,
        })
    } else {
        None
    };

    let mut trace = TrainTrace::default();
    let mut drift = 0.0_f64;
    let mut prev_loss = f64::NAN;

    for t in 0..=config.steps {
        let eval = evaluate(&cur, &batch);
        let loss = eval.loss;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged {
                step: t,
                loss,
                trace: Box::new(trace),
            });
        }
        if t == 0 {
            trace.initial_loss = loss;
        } else if loss <= prev_loss {
            trace.nonincreasing_steps += 1;
        }
        prev_loss = loss;

        let hit_target = config.epsilon_target.is_some_and(|eps| loss <= eps);
        let last = t == config.steps || hit_target;
        if t % config.log_every == 0 || last {
            let align = sign_alignment(&cur);
            let (kernel_drift, lambda_min) = match &tracker {
                Some(k) if t % k.every == 0 || last => {
                    let (dr, lm) = k.sample(&cur, dataset)?;
                    (Some(dr), Some(lm))
                }
                _ => (None, None),
            };
            trace.steps.push(TraceRecord {
                t,
                loss,
                weight_drift: drift,
                sign_agree_pos: align.frac_pos,
                sign_agree_neg: align.frac_neg,
                kernel_drift,
                lambda_min,
            });
        }
        if last {
            trace.final_loss = loss;
            trace.early_stopped = hit_target && t < config.steps;
            break;
        }

        let grad = gradient_from(&cur, &batch, &eval);
        for (w, g) in cur.w.iter_mut().zip(&grad) {
            *w -= config.eta * g;
        }
        trace.steps_taken += 1;
        drift = drift.max(weight_drift(&cur, &initial)?);
    }
    debug_assert_eq!(cur.a, initial.a);
    Ok((cur, trace))
}
