//! C ABI over the asymlab core.
//!
//! Objects cross the boundary as opaque handles created by the `*_generate`,
//! `*_init` and `*_from_arrays` functions and released with the matching
//! `*_free`. Every fallible
//! call returns an [`AsymStatus`]; on failure a message is available from
//! [`asym_last_error`] on the same thread. Arrays are row-major `double`
//! buffers whose lengths the caller passes explicitly.
//!
//! # Safety
//!
//! Shared by every exported function: handle arguments are null or were
//! returned by this library and not yet freed; array pointers are null or
//! valid for the stated length; out-pointers are null or writable. Nulls are
//! reported as [`AsymStatus::NullPointer`] (the `*_free` functions ignore them).
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use asymlab::attention::{self, init_params, AttentionParams};
use asymlab::linalg::Matrix;
use asymlab::multidim_attn::attn_grad_w;
use asymlab::ssm_data::{build_feature_bank_in, generate_id, generate_ood_sign_inconsistent, Dataset, FeatureMode, DEFAULT_MAX_REJECTS};
use asymlab::trainer::{train, TrainConfig};
use asymlab::{ntk, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsymStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Infeasible = 4,
    RejectionLimit = 5,
    NonFinite = 6,
    Diverged = 7,
    NotSymmetric = 8,
    Schema = 9,
    Io = 10,
    Panic = 11,
}

/// Bank construction mode for [`asym_dataset_generate`]'s `mode` argument.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsymFeatureMode {
    ExactNorm = 0,
    ResidualMean = 1,
    FromSsm = 2,
}

/// Opaque dataset handle.
pub struct AsymDataset(Dataset);

/// Opaque attention-parameter handle.
pub struct AsymParams(AttentionParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AsymStatus {
    match err {
        Error::Dimension { .. } => AsymStatus::Dimension,
        Error::InvalidArgument(_) => AsymStatus::InvalidArgument,
        Error::Infeasible { .. } => AsymStatus::Infeasible,
        Error::RejectionLimit { .. } => AsymStatus::RejectionLimit,
        Error::NonFinite(_) => AsymStatus::NonFinite,
        Error::Diverged { .. } => AsymStatus::Diverged,
        Error::NotSymmetric { .. } => AsymStatus::NotSymmetric,
        Error::Schema { .. } => AsymStatus::Schema,
        Error::Io { .. } => AsymStatus::Io,
    }
}

struct Fail(AsymStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AsymStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AsymStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AsymStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AsymStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<(), Fail> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { context, expected, found }.into())
    }
}

// ── errors ───────────────────────────────────────────────────────────────────

/// Copies the calling thread's last error message (NUL-terminated, truncated
/// to `cap`) into `buf` and returns the full message length excluding the
/// terminator. Returns 0 when no error has been recorded.
#[no_mangle]
pub unsafe extern "C" fn asym_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn asym_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ── datasets ─────────────────────────────────────────────────────────────────

/// Builds a feature bank (`mode` is an [`AsymFeatureMode`] value) and draws
/// `n` samples: in-distribution, or from the sign-inconsistent test
/// distribution when `ood` is true.
#[no_mangle]
pub unsafe extern "C" fn asym_dataset_generate(
    d: usize,
    state_dim: usize,
    gamma: f64,
    mode: u32,
    n: usize,
    sigma: f64,
    seed: u64,
    ood: bool,
    out: *mut *mut AsymDataset,
) -> AsymStatus {
    guard(|| {
        let mode = match mode {
            m if m == AsymFeatureMode::ExactNorm as u32 => FeatureMode::ExactNorm,
            m if m == AsymFeatureMode::ResidualMean as u32 => FeatureMode::ResidualMean,
            m if m == AsymFeatureMode::FromSsm as u32 => FeatureMode::FromSsm,
            other => return Err(Error::InvalidArgument(format!("unknown feature mode {other}")).into()),
        };
        let bank = build_feature_bank_in(d, state_dim, gamma, mode, seed)?;
        let ds = if ood {
            generate_ood_sign_inconsistent(&bank, n, sigma, seed, DEFAULT_MAX_REJECTS)?
        } else {
            generate_id(&bank, n, sigma, seed)?
        };
        put(out, Box::into_raw(Box::new(AsymDataset(ds))), "out")
    })
}

/// Dataset from `n` row-major inputs of length `d` and `n` labels.
#[no_mangle]
pub unsafe extern "C" fn asym_dataset_from_arrays(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut AsymDataset,
) -> AsymStatus {
    guard(|| {
        let xs = input(xs, n * d, "xs")?;
        let ys = input(ys, n, "ys")?;
        if d == 0 {
            return Err(Error::InvalidArgument("d must be ≥ 1".into()).into());
        }
        let pairs = xs.chunks(d).zip(ys).map(|(x, y)| (x.to_vec(), *y)).collect();
        put(out, Box::into_raw(Box::new(AsymDataset(Dataset::from_pairs(pairs)?))), "out")
    })
}

/// Sample count and input length.
#[no_mangle]
pub unsafe extern "C" fn asym_dataset_shape(ds: *const AsymDataset, n: *mut usize, d: *mut usize) -> AsymStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        put(n, ds.len(), "n")?;
        put(d, ds.d, "d")
    })
}

/// Copies inputs (`n·d`, row-major) and labels (`n`) into caller buffers.
#[no_mangle]
pub unsafe extern "C" fn asym_dataset_copy(ds: *const AsymDataset, xs: *mut f64, xs_len: usize, ys: *mut f64, ys_len: usize) -> AsymStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        check_len("xs buffer", ds.len() * ds.d, xs_len)?;
        check_len("ys buffer", ds.len(), ys_len)?;
        let xs = output(xs, xs_len, "xs")?;
        let ys = output(ys, ys_len, "ys")?;
        for (i, s) in ds.samples.iter().enumerate() {
            xs[i * ds.d..(i + 1) * ds.d].copy_from_slice(&s.x);
            ys[i] = s.y;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn asym_dataset_free(ds: *mut AsymDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

// ── parameters ───────────────────────────────────────────────────────────────

/// `m` neurons; `zero_init` pairs them so the initial output is zero.
#[no_mangle]
pub unsafe extern "C" fn asym_params_init(m: usize, seed: u64, zero_init: bool, out: *mut *mut AsymParams) -> AsymStatus {
    guard(|| put(out, Box::into_raw(Box::new(AsymParams(init_params(m, seed, zero_init)?))), "out"))
}

/// Parameters from hidden weights `w` and output signs `a` (each ±1).
#[no_mangle]
pub unsafe extern "C" fn asym_params_from_arrays(w: *const f64, a: *const f64, m: usize, out: *mut *mut AsymParams) -> AsymStatus {
    guard(|| {
        let w = input(w, m, "w")?.to_vec();
        let a = input(a, m, "a")?.to_vec();
        put(out, Box::into_raw(Box::new(AsymParams(AttentionParams::new(w, a)?))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn asym_params_m(p: *const AsymParams, m: *mut usize) -> AsymStatus {
    guard(|| put(m, handle(p, "params")?.0.m, "m"))
}

/// Copies hidden weights and output signs (each of length `m`).
#[no_mangle]
pub unsafe extern "C" fn asym_params_copy(p: *const AsymParams, w: *mut f64, a: *mut f64, m: usize) -> AsymStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        check_len("params buffer", p.m, m)?;
        output(w, m, "w")?.copy_from_slice(&p.w);
        output(a, m, "a")?.copy_from_slice(&p.a);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn asym_params_free(p: *mut AsymParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ── model ────────────────────────────────────────────────────────────────────

#[no_mangle]
pub unsafe extern "C" fn asym_forward(p: *const AsymParams, x: *const f64, d: usize, out: *mut f64) -> AsymStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        if d == 0 {
            return Err(Error::InvalidArgument("d must be ≥ 1".into()).into());
        }
        let x = input(x, d, "x")?;
        put(out, attention::forward(p, x), "out")
    })
}

/// `½ Σ_i (F_i − y_i)²`.
#[no_mangle]
pub unsafe extern "C" fn asym_loss(p: *const AsymParams, ds: *const AsymDataset, out: *mut f64) -> AsymStatus {
    guard(|| put(out, attention::loss(&handle(p, "params")?.0, &handle(ds, "dataset")?.0)?, "out"))
}

/// Gradient of the loss with respect to the `m` hidden weights.
#[no_mangle]
pub unsafe extern "C" fn asym_grad(p: *const AsymParams, ds: *const AsymDataset, grad: *mut f64, m: usize) -> AsymStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        check_len("grad buffer", p.m, m)?;
        let g = attention::grad_w(p, &handle(ds, "dataset")?.0)?;
        output(grad, m, "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Full-batch gradient descent; writes a new handle to `out` and the final
/// loss to `final_loss` (may be null). The input handle is unchanged.
#[no_mangle]
pub unsafe extern "C" fn asym_train(
    p: *const AsymParams,
    ds: *const AsymDataset,
    eta: f64,
    steps: usize,
    out: *mut *mut AsymParams,
    final_loss: *mut f64,
) -> AsymStatus {
    guard(|| {
        let cfg = TrainConfig {
            eta,
            steps,
            log_every: steps.max(1),
            ..TrainConfig::default()
        };
        let (trained, trace) = train(&handle(p, "params")?.0, &handle(ds, "dataset")?.0, &cfg)?;
        if !final_loss.is_null() {
            final_loss.write(trace.final_loss);
        }
        put(out, Box::into_raw(Box::new(AsymParams(trained))), "out")
    })
}

/// Smallest eigenvalue of the tangent kernel on `ds`.
#[no_mangle]
pub unsafe extern "C" fn asym_kernel_lambda_min(p: *const AsymParams, ds: *const AsymDataset, out: *mut f64) -> AsymStatus {
    guard(|| {
        let k = ntk::kernel(&handle(p, "params")?.0, &handle(ds, "dataset")?.0)?;
        put(out, ntk::min_eigenvalue(&k)?, "out")
    })
}

/// Gradient of `Σ (softmax(XWXᵀ) X W_V ⊙ G)` with respect to `W`. `x`, `g`
/// are `l × d`, `w`, `w_v` and `out` are `d × d`, all row-major.
#[no_mangle]
pub unsafe extern "C" fn asym_multidim_grad(
    x: *const f64,
    w: *const f64,
    w_v: *const f64,
    g: *const f64,
    l: usize,
    d: usize,
    out: *mut f64,
) -> AsymStatus {
    guard(|| {
        let mat = |p, r, c, what| -> Result<Matrix, Fail> { Ok(Matrix::from_vec(r, c, input(p, r * c, what)?.to_vec())?) };
        let grad = attn_grad_w(
            &mat(x, l, d, "x")?,
            &mat(w, d, d, "w")?,
            &mat(w_v, d, d, "w_v")?,
            &mat(g, l, d, "g")?,
        )?;
        output(out, d * d, "out")?.copy_from_slice(grad.as_slice());
        Ok(())
    })
}
