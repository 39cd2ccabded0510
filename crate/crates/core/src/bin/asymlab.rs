//! `asymlab` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use asymlab::attention::{self, init_params, AttentionParams};
use asymlab::diagnostics::{self, residual_attention_gap, sign_alignment, GapConfig};
use asymlab::harness::{self, ExperimentConfig, ExperimentReport};
use asymlab::linear_baseline::{fit_linear_empirical, predict_linear, solve_linear_population};
use asymlab::ssm_data::{
    build_feature_bank_in, generate_id, generate_ood_sign_inconsistent, Dataset, FeatureBank, FeatureMode, DEFAULT_MAX_REJECTS,
};
use asymlab::trainer::{train, TrainConfig, DEFAULT_ETA};
use asymlab::verify::{gradcheck_attention, gradcheck_multidim, AttnDims, MultiDims};
use asymlab::{ntk, persist, Error, Result};

/// Gradient checks fail above this relative error.
const GRADCHECK_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "asymlab", version, about = "Softmax attention vs residual features on SSM sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset (and optionally its feature bank).
    Gen(GenArgs),
    /// Train attention weights by full-batch gradient descent.
    Train(TrainArgs),
    /// Tangent kernel and its minimum eigenvalue.
    Ntk(NtkArgs),
    /// Sign alignment and attention-gap diagnostics.
    Diagnose(DiagnoseArgs),
    /// OOD risks of attention and the residual linear baseline.
    Ood(OodArgs),
    /// Analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Full pipeline from one config.
    Experiment(ExperimentArgs),
    /// Render a report's CSV plot tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct BankArgs {
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Ambient state dimension (defaults to d).
    #[arg(long = "N")]
    state_dim: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
    #[arg(long, default_value = "exact-norm")]
    mode: FeatureMode,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    bank: BankArgs,
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long)]
    seed: u64,
    /// Bank seed (defaults to --seed).
    #[arg(long)]
    bank_seed: Option<u64>,
    /// Draw the sign-inconsistent test distribution instead.
    #[arg(long)]
    ood: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write `x_1..x_d, y` rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    bank_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Start from these parameters instead of a fresh init.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    m: usize,
    /// Independent (unpaired) initialization.
    #[arg(long)]
    no_zero_init: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 50)]
    log_every: usize,
    #[arg(long)]
    track_kernel: bool,
    #[arg(long)]
    epsilon_target: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct NtkArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    params: PathBuf,
    /// Dataset supplying `d` and `v_min`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    sigma_prime: f64,
    #[arg(long, default_value_t = 10_000)]
    n_mc: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    include_all: bool,
    #[arg(long, default_value_t = diagnostics::DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OodArgs {
    /// Sign-inconsistent test set.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    params: Option<PathBuf>,
    /// Training set for the empirical linear fit.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    multidim: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Directory for the CSV plot tables.
    #[arg(long)]
    tables: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => persist::save_json(p, value),
        None => {
            print!("{}", persist::to_json_string(value)?);
            Ok(())
        }
    }
}

fn bank_of(ds: &Dataset) -> Result<FeatureBank> {
    let mode = ds
        .mode
        .ok_or_else(|| Error::InvalidArgument("dataset carries no bank provenance".into()))?;
    let seed = ds
        .bank_seed
        .ok_or_else(|| Error::InvalidArgument("dataset carries no bank seed".into()))?;
    build_feature_bank_in(ds.d, ds.state_dim, ds.gamma, mode, seed)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => {
            let n_state = a.bank.state_dim.unwrap_or(a.bank.d);
            let bank = build_feature_bank_in(a.bank.d, n_state, a.bank.gamma, a.bank.mode, a.bank_seed.unwrap_or(a.seed))?;
            let ds = if a.ood {
                generate_ood_sign_inconsistent(&bank, a.n, a.sigma, a.seed, DEFAULT_MAX_REJECTS)?
            } else {
                generate_id(&bank, a.n, a.sigma, a.seed)?
            };
            if let Some(p) = &a.csv {
                persist::write_text(p, &ds.to_csv())?;
            }
            if let Some(p) = &a.bank_out {
                persist::save_json(p, &bank)?;
            }
            emit(&ds, a.out.as_deref())
        }
        Command::Train(a) => {
            let ds: Dataset = persist::load_json(&a.data)?;
            let params = match &a.params {
                Some(p) => persist::load_json::<AttentionParams>(p)?,
                None => init_params(a.m, a.seed, !a.no_zero_init)?,
            };
            let cfg = TrainConfig {
                eta: a.eta,
                steps: a.steps,
                log_every: a.log_every,
                epsilon_target: a.epsilon_target,
                track_kernel: a.track_kernel,
                seed: a.seed,
            };
            let (trained, trace) = match train(&params, &ds, &cfg) {
                Err(Error::Diverged { step, loss, trace }) => {
                    if let Some(p) = &a.trace {
                        persist::write_text(p, &trace.to_csv())?;
                    }
                    return Err(Error::Diverged { step, loss, trace });
                }
                other => other?,
            };
            if let Some(p) = &a.trace {
                persist::write_text(p, &trace.to_csv())?;
            }
            eprintln!(
                "loss {:.6e} -> {:.6e} over {} steps",
                trace.initial_loss, trace.final_loss, trace.steps_taken
            );
            emit(&trained, a.out.as_deref())
        }
        Command::Ntk(a) => {
            let params: AttentionParams = persist::load_json(&a.params)?;
            let ds: Dataset = persist::load_json(&a.data)?;
            let k = ntk::kernel(&params, &ds)?;
            emit(&ntk::KernelRecord::from_kernel(&k)?, a.out.as_deref())
        }
        Command::Diagnose(a) => {
            let params: AttentionParams = persist::load_json(&a.params)?;
            let ds: Dataset = persist::load_json(&a.data)?;
            let gaps = residual_attention_gap(
                &params,
                &GapConfig {
                    d: ds.d,
                    sigma_prime: a.sigma_prime,
                    n_mc: a.n_mc,
                    seed: a.seed,
                    include_all: a.include_all,
                },
            )?;
            let mut constants = diagnostics::theory_constants(ds.len(), ds.state_dim, params.m, ds.sigma, a.delta)?;
            constants.v_min = Some(diagnostics::v_min(&ds)?);
            constants.lambda = Some(ntk::min_eigenvalue(&ntk::kernel(&params, &ds)?)?);
            #[derive(Serialize)]
            struct Diagnosis {
                alignment: diagnostics::AlignmentReport,
                gaps: diagnostics::AttentionGapReport,
                constants: diagnostics::TheoryConstants,
            }
            emit(
                &Diagnosis {
                    alignment: sign_alignment(&params),
                    gaps,
                    constants,
                },
                a.out.as_deref(),
            )
        }
        Command::Ood(a) => {
            let test: Dataset = persist::load_json(&a.test)?;
            let risk_attn = match &a.params {
                Some(p) => {
                    let params: AttentionParams = persist::load_json(p)?;
                    params.validate()?;
                    Some(diagnostics::ood_risk(|x| attention::forward(&params, x), &test)?)
                }
                None => None,
            };
            let risk_lin = match solve_linear_population(&bank_of(&test)?) {
                Ok(w) => Some(diagnostics::ood_risk(|x| predict_linear(&w, x).unwrap_or(f64::NAN), &test)?),
                Err(Error::Infeasible { residual, .. }) => {
                    eprintln!("no exact population solution (span residual {residual:e})");
                    None
                }
                Err(e) => return Err(e),
            };
            let risk_lin_emp = match &a.train {
                Some(p) => {
                    let w = fit_linear_empirical(&persist::load_json(p)?, 0.0)?;
                    Some(diagnostics::ood_risk(|x| predict_linear(&w, x).unwrap_or(f64::NAN), &test)?)
                }
                None => None,
            };
            #[derive(Serialize)]
            struct Risks {
                n_test: usize,
                risk_attn: Option<f64>,
                risk_lin: Option<f64>,
                risk_lin_emp: Option<f64>,
            }
            emit(
                &Risks {
                    n_test: test.len(),
                    risk_attn,
                    risk_lin,
                    risk_lin_emp,
                },
                a.out.as_deref(),
            )
        }
        Command::Gradcheck(a) => {
            let r = if a.multidim {
                gradcheck_multidim(a.trials, MultiDims::default(), a.seed)?
            } else {
                gradcheck_attention(a.trials, AttnDims::default(), a.seed)?
            };
            emit(&r, a.out.as_deref())?;
            eprintln!("max_rel_err {:.3e} (tolerance {GRADCHECK_TOL:e})", r.max_rel_err);
            if r.max_rel_err > GRADCHECK_TOL {
                return Err(Error::InvalidArgument(format!(
                    "gradient check failed: max_rel_err {:e} > {GRADCHECK_TOL:e}",
                    r.max_rel_err
                )));
            }
            Ok(())
        }
        Command::Experiment(a) => {
            let mut cfg = harness::load_config(&a.config)?;
            apply_overrides(&mut cfg, &a);
            cfg.validate()?;
            if let Some(p) = &a.out {
                cfg.output.report = Some(p.clone());
            }
            cfg.check_outputs()?;
            if let Some(dir) = &a.tables {
                harness::check_writable(&dir.join("trace.csv"))?;
            }
            let report = harness::run_experiment(&cfg)?;
            if let Some(p) = &cfg.output.trace_csv {
                persist::write_text(p, &harness::render_tables(&report)[0].1)?;
            }
            if let Some(dir) = &a.tables {
                harness::write_tables(&report, dir)?;
            }
            emit(&report, cfg.output.report.as_deref())
        }
        Command::Report(a) => {
            let report: ExperimentReport = persist::load_json(&a.input)?;
            for p in harness::write_tables(&report, &a.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &ExperimentArgs) {
    if let Some(s) = a.seed {
        cfg.bank.seed = s;
        cfg.data.seed = s;
        cfg.model.seed = s;
        cfg.train.seed = s;
        cfg.diagnostics.seed = s;
    }
    if let Some(d) = a.d {
        cfg.bank.d = d;
        cfg.bank.state_dim = cfg.bank.state_dim.max(d);
    }
    if let Some(n) = a.n {
        cfg.data.n = n;
    }
    if let Some(m) = a.m {
        cfg.model.m = m;
    }
    if let Some(g) = a.gamma {
        cfg.bank.gamma = g;
    }
    if let Some(s) = a.sigma {
        cfg.data.sigma = s;
    }
    if let Some(e) = a.eta {
        cfg.train.eta = e;
    }
    if let Some(t) = a.steps {
        cfg.train.steps = t;
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ASYMLAB_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("ASYMLAB_THREADS must be a non-negative integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
