//! End-to-end experiment: bank → data → init → train → kernel, alignment,
//! attention-gap, OOD and constant summaries, all from one config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{self, init_params};
use crate::diagnostics::{
    self, ood_risk, residual_attention_gap, sign_alignment, theory_constants, AlignmentReport, GapConfig, TheoryConstants,
};
use crate::error::{Error, Result};
use crate::linear_baseline::{fit_linear_empirical, predict_linear, solve_linear_population};
use crate::ntk;
use crate::persist;
use crate::ssm_data::{build_feature_bank_in, generate_id, generate_ood_sign_inconsistent, FeatureMode, DEFAULT_MAX_REJECTS};
use crate::trainer::{train, TraceRecord, TrainConfig, TrainTrace};

// ── config ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankConfig {
    pub d: usize,
    #[serde(rename = "N")]
    pub state_dim: usize,
    pub gamma: f64,
    pub mode: FeatureMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub n_test: usize,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    pub zero_init: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub delta: f64,
    pub sigma_prime: f64,
    pub n_mc: usize,
    pub seed: u64,
    #[serde(default)]
    pub include_all: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bank: BankConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// The canonical desk-scale run.
    pub fn desk(seed: u64) -> Self {
        Self {
            bank: BankConfig {
                d: 8,
                state_dim: 8,
                gamma: 0.8,
                mode: FeatureMode::ExactNorm,
                seed,
            },
            data: DataConfig {
                n: 32,
                n_test: 2000,
                sigma: 0.01,
                seed,
            },
            model: ModelConfig {
                m: 512,
                zero_init: true,
                seed,
            },
            train: TrainConfig {
                eta: crate::trainer::DEFAULT_ETA,
                steps: 5000,
                log_every: 50,
                epsilon_target: None,
                track_kernel: true,
                seed,
            },
            diagnostics: DiagnosticsConfig {
                delta: diagnostics::DEFAULT_DELTA,
                sigma_prime: 1.0,
                n_mc: 10_000,
                seed,
                include_all: false,
            },
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.n == 0 || self.data.n_test == 0 {
            return Err(Error::invalid("data.n and data.n_test must be ≥ 1"));
        }
        if self.model.m == 0 {
            return Err(Error::invalid("model.m must be ≥ 1"));
        }
        if !(self.diagnostics.delta > 0.0 && self.diagnostics.delta < 0.1) {
            return Err(Error::invalid(format!(
                "diagnostics.delta must lie in (0, 0.1), got {}",
                self.diagnostics.delta
            )));
        }
        Ok(())
    }

    /// Creates output directories and confirms every configured path can be
    /// opened for writing.
    pub fn check_outputs(&self) -> Result<()> {
        for path in [&self.output.report, &self.output.trace_csv].into_iter().flatten() {
            check_writable(path)?;
        }
        Ok(())
    }
}

pub fn check_writable(path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    std::fs::OpenOptions::new().append(true).create(true).open(path).map_err(io_err)?;
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = persist::load_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

// ── report ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_ratio: f64,
    pub steps_taken: usize,
    pub nonincreasing_fraction: f64,
    pub final_weight_drift: f64,
    pub early_stopped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub r: usize,
    pub k: usize,
    pub gap: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub sigma_prime: f64,
    pub n_mc: usize,
    pub neurons: usize,
    pub pass_fraction: f64,
    pub min_gap: f64,
    pub entries: Vec<GapEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub n_test: usize,
    pub acceptance_rate: f64,
    pub risk_attn: f64,
    /// Absent when the bank admits no exact population solution.
    pub risk_lin: Option<f64>,
    pub risk_lin_emp: f64,
    pub w_lin: Option<Vec<f64>>,
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_population_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub lambda_min_0: f64,
    pub lambda_min_final: f64,
    pub final_drift: f64,
    /// Smallest `λ_min` over logged steps ≥ half of `λ_min(0)`.
    pub lambda_half_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub trace: TraceSummary,
    pub alignment: AlignmentReport,
    pub gaps: GapSummary,
    pub ood: OodSummary,
    pub kernel: KernelSummary,
    pub constants: TheoryConstants,
    pub trace_records: Vec<TraceRecord>,
}

/// Pure function of the config: identical configs give identical reports.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let b = &cfg.bank;
    let bank = build_feature_bank_in(b.d, b.state_dim, b.gamma, b.mode, b.seed)?;
    let train_set = generate_id(&bank, cfg.data.n, cfg.data.sigma, cfg.data.seed)?;
    let test_set = generate_ood_sign_inconsistent(&bank, cfg.data.n_test, cfg.data.sigma, cfg.data.seed, DEFAULT_MAX_REJECTS)?;

    let params0 = init_params(cfg.model.m, cfg.model.seed, cfg.model.zero_init)?;
    let k0 = ntk::kernel(&params0, &train_set)?;
    let lambda0 = ntk::min_eigenvalue(&k0)?;

    let (params, trace) = train(&params0, &train_set, &cfg.train)?;
    let kt = ntk::kernel(&params, &train_set)?;
    let lambda_t = ntk::min_eigenvalue(&kt)?;
    let drift = ntk::kernel_drift(&kt, &k0)?;
    let min_logged = trace
        .steps
        .iter()
        .filter_map(|r| r.lambda_min)
        .chain([lambda_t])
        .fold(f64::INFINITY, f64::min);

    let gap = residual_attention_gap(
        &params,
        &GapConfig {
            d: b.d,
            sigma_prime: cfg.diagnostics.sigma_prime,
            n_mc: cfg.diagnostics.n_mc,
            seed: cfg.diagnostics.seed,
            include_all: cfg.diagnostics.include_all,
        },
    )?;
    let entries = gap
        .neurons
        .iter()
        .flat_map(|n| {
            n.gaps.iter().map(move |g| GapEntry {
                r: n.r,
                k: g.k,
                gap: g.gap,
                se: g.se,
            })
        })
        .collect();

    let risk_attn = ood_risk(|x| attention::forward(&params, x), &test_set)?;
    let emp = fit_linear_empirical(&train_set, 0.0)?;
    let risk_lin_emp = ood_risk(|x| predict_linear(&emp, x).unwrap_or(f64::NAN), &test_set)?;
    let (risk_lin, w_lin, lin_err) = match solve_linear_population(&bank) {
        Ok(p) => (
            Some(ood_risk(|x| predict_linear(&p, x).unwrap_or(f64::NAN), &test_set)?),
            Some(p.w_lin),
            None,
        ),
        Err(e @ Error::Infeasible { .. }) => (None, None, Some(e.to_string())),
        Err(e) => return Err(e),
    };

    let mut constants = theory_constants(cfg.data.n, b.state_dim, cfg.model.m, cfg.data.sigma, cfg.diagnostics.delta)?;
    constants.v_min = Some(diagnostics::v_min(&train_set)?);
    constants.lambda = Some(lambda0);

    Ok(ExperimentReport {
        config: cfg.clone(),
        trace: summarize(&trace),
        alignment: sign_alignment(&params),
        gaps: GapSummary {
            sigma_prime: gap.sigma_prime,
            n_mc: gap.n_mc,
            neurons: gap.neurons.len(),
            pass_fraction: gap.pass_fraction,
            min_gap: gap.min_gap,
            entries,
        },
        ood: OodSummary {
            n_test: test_set.len(),
            acceptance_rate: test_set.acceptance_rate.unwrap_or(f64::NAN),
            risk_attn,
            risk_lin,
            risk_lin_emp,
            w_lin,
            ratio: risk_lin.map(|r| risk_attn / r),
            linear_population_error: lin_err,
        },
        kernel: KernelSummary {
            lambda_min_0: lambda0,
            lambda_min_final: lambda_t,
            final_drift: drift,
            lambda_half_holds: min_logged >= lambda0 / 2.0,
        },
        constants,
        trace_records: trace.steps,
    })
}

pub fn summarize(trace: &TrainTrace) -> TraceSummary {
    TraceSummary {
        initial_loss: trace.initial_loss,
        final_loss: trace.final_loss,
        loss_ratio: trace.final_loss / trace.initial_loss,
        steps_taken: trace.steps_taken,
        nonincreasing_fraction: trace.nonincreasing_fraction(),
        final_weight_drift: trace.final_drift(),
        early_stopped: trace.early_stopped,
    }
}

// ── plot tables ──────────────────────────────────────────────────────────────

pub const GAPS_CSV_HEADER: &str = "r,k,gap,se";

/// `(file name, contents)` of every CSV plot table derived from a report.
pub fn render_tables(report: &ExperimentReport) -> Vec<(&'static str, String)> {
    let trace = TrainTrace {
        steps: report.trace_records.clone(),
        ..Default::default()
    };
    let mut gaps = String::from(GAPS_CSV_HEADER);
    gaps.push('\n');
    for e in &report.gaps.entries {
        gaps.push_str(&format!("{},{},{},{}\n", e.r, e.k, persist::fmt_f64(e.gap), persist::fmt_f64(e.se)));
    }
    vec![("trace.csv", trace.to_csv()), ("gaps.csv", gaps)]
}

pub fn write_tables(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (name, body) in render_tables(report) {
        let path = dir.join(name);
        persist::write_text(&path, &body)?;
        out.push(path);
    }
    Ok(out)
}
