//! C ABI over the `toptwo` engine.
//!
//! Conventions:
//! * every fallible function returns a [`TtStatus`] and writes results
//!   through out-pointers, which are left untouched on failure;
//! * objects are opaque handles created by `tt_*_new`/`tt_solve_*` and
//!   released by the matching `tt_*_free`, which accept NULL;
//! * after a failure, `tt_last_error()` describes it until the next call on
//!   the same thread;
//! * strings returned by the library are freed with `tt_string_free`.
//!
//! Panics never cross the boundary; they surface as `TT_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toptwo::optprob::AlphaEngine;
use toptwo::rules::{psi_ttts_formula, Policy};
use toptwo::sim::BeliefSpec;
use toptwo::{exponent, BeliefState, Error, ExponentSolution, InstanceSpec, ObservationModel, RuleKind, RuleSpec};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtStatus {
    TtOk = 0,
    /// A required pointer argument was NULL.
    TtNullPointer = 1,
    /// A parameter lies outside the domain of the operation.
    TtDomain = 2,
    /// Malformed input: bad index, length, probability vector or observation.
    TtInput = 3,
    /// A numerical routine failed to converge.
    TtSolver = 4,
    /// An output buffer is too small.
    TtBufferTooSmall = 5,
    /// Internal failure, including a caught panic.
    TtPanic = 6,
}

/// Observation model. `sigma`, `lo` and `hi` are read only for Gaussian arms.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TtModel {
    pub kind: TtModelKind,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtModelKind {
    TtBernoulli = 0,
    TtGaussian = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtBeliefKind {
    /// Beta priors for Bernoulli arms, normal priors for Gaussian arms.
    TtConjugate = 0,
    /// Uniform prior on a bounded grid.
    TtGrid = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtRule {
    TtTs = 0,
    TtTtts = 1,
    TtTtps = 2,
    TtTtvs = 3,
    TtUniform = 4,
}

/// Problem instance: a model and the true arm means.
pub struct TtInstance(InstanceSpec);

/// Optimal allocation and exponent.
pub struct TtSolution(ExponentSolution);

/// Evolving belief state with its own random stream and cached tables.
pub struct TtBelief {
    state: BeliefState,
    engine: AlphaEngine,
    policy: Option<(TtRule, u64, Policy)>,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TtStatus, msg: impl Into<String>) -> TtStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> TtStatus {
    let status = match e {
        Error::Domain(_) => TtStatus::TtDomain,
        Error::Solver(_) => TtStatus::TtSolver,
        Error::Input(_) | Error::Config { .. } => TtStatus::TtInput,
        _ => TtStatus::TtPanic,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), TtStatus>) -> TtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TtStatus::TtOk,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(TtStatus::TtPanic, format!("panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, TtStatus>;
}

impl<T> OrStatus<T> for toptwo::Result<T> {
    fn or_status(self) -> Result<T, TtStatus> {
        self.map_err(from_error)
    }
}

fn nonnull<'a, T>(p: *const T, name: &str) -> Result<&'a T, TtStatus> {
    // SAFETY: the caller promises `p` is NULL or valid for reads.
    unsafe { p.as_ref() }.ok_or_else(|| fail(TtStatus::TtNullPointer, format!("`{name}` is NULL")))
}

fn nonnull_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, TtStatus> {
    // SAFETY: the caller promises `p` is NULL or valid and unaliased.
    unsafe { p.as_mut() }.ok_or_else(|| fail(TtStatus::TtNullPointer, format!("`{name}` is NULL")))
}

fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], TtStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(p, name)?;
    // SAFETY: non-null and the caller promises `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], TtStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    nonnull_mut(p, name)?;
    // SAFETY: non-null and the caller promises `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn copy_out(src: &[f64], out: *mut f64, len: usize, name: &str) -> Result<(), TtStatus> {
    if len < src.len() {
        return Err(fail(
            TtStatus::TtBufferTooSmall,
            format!("`{name}` holds {len} values, {} needed", src.len()),
        ));
    }
    slice_mut(out, src.len(), name)?.copy_from_slice(src);
    Ok(())
}

fn parse_model(m: *const TtModel) -> Result<ObservationModel, TtStatus> {
    let m = nonnull(m, "model")?;
    match m.kind {
        TtModelKind::TtBernoulli => Ok(ObservationModel::bernoulli()),
        TtModelKind::TtGaussian => ObservationModel::gaussian(m.sigma, m.lo, m.hi).or_status(),
    }
}

fn boxed<T>(value: T, out: *mut *mut T) -> Result<(), TtStatus> {
    let slot = nonnull_mut(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn tt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// KL divergence `d(p, q)` between two members of `model`.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tt_kl(model: *const TtModel, p: f64, q: f64, out: *mut f64) -> TtStatus {
    guard(|| {
        let m = parse_model(model)?;
        let v = m.kl(p, q).or_status()?;
        *nonnull_mut(out, "out")? = v;
        Ok(())
    })
}

/// Pairwise evidence rate `C(β, ψ)` of ruling out an arm with mean
/// `mean_alt` against one with mean `mean_top`.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tt_c_cost(
    model: *const TtModel,
    beta: f64,
    psi: f64,
    mean_top: f64,
    mean_alt: f64,
    out: *mut f64,
) -> TtStatus {
    guard(|| {
        let m = parse_model(model)?;
        let v = m.c_cost(beta, psi, mean_top, mean_alt).or_status()?;
        *nonnull_mut(out, "out")? = v;
        Ok(())
    })
}

/// TTTS selection probabilities for optimality probabilities `alpha`.
/// `out` receives `k` values.
///
/// # Safety
/// `alpha` must hold `k` readable values and `out` `k` writable ones.
#[no_mangle]
pub unsafe extern "C" fn tt_psi_ttts(alpha: *const f64, k: usize, beta: f64, out: *mut f64) -> TtStatus {
    guard(|| {
        let a = slice(alpha, k, "alpha")?;
        let psi = psi_ttts_formula(a, beta).or_status()?;
        copy_out(&psi, out, k, "out")
    })
}

/// Creates an instance from `k` distinct arm means.
///
/// # Safety
/// `model` must be valid, `means` must hold `k` values, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tt_instance_new(
    model: *const TtModel,
    means: *const f64,
    k: usize,
    out: *mut *mut TtInstance,
) -> TtStatus {
    guard(|| {
        let m = parse_model(model)?;
        let inst = InstanceSpec::new(m, slice(means, k, "means")?.to_vec()).or_status()?;
        boxed(TtInstance(inst), out)
    })
}

/// Number of arms, or 0 for NULL.
///
/// # Safety
/// `inst` must be NULL or a live instance.
#[no_mangle]
pub unsafe extern "C" fn tt_instance_k(inst: *const TtInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.k())
}

/// Index of the best arm, or `SIZE_MAX` for NULL.
///
/// # Safety
/// `inst` must be NULL or a live instance.
#[no_mangle]
pub unsafe extern "C" fn tt_instance_best(inst: *const TtInstance) -> usize {
    inst.as_ref().map_or(usize::MAX, |i| i.0.best())
}

/// # Safety
/// `inst` must be NULL or a live instance, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tt_instance_free(inst: *mut TtInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Solves for `Γ*_β` and its allocation.
///
/// # Safety
/// `inst` must be a live instance and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_solve_gamma_beta(
    inst: *const TtInstance,
    beta: f64,
    out: *mut *mut TtSolution,
) -> TtStatus {
    guard(|| {
        let inst = nonnull(inst, "instance")?;
        let sol = exponent::solve_gamma_beta(&inst.0, beta).or_status()?;
        boxed(TtSolution(sol), out)
    })
}

/// Solves for `Γ* = max_β Γ*_β`, its maximizer and allocation.
///
/// # Safety
/// `inst` must be a live instance and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_solve_gamma_star(inst: *const TtInstance, out: *mut *mut TtSolution) -> TtStatus {
    guard(|| {
        let inst = nonnull(inst, "instance")?;
        let sol = exponent::solve_gamma_star(&inst.0).or_status()?;
        boxed(TtSolution(sol), out)
    })
}

/// The exponent, or NaN for NULL.
///
/// # Safety
/// `sol` must be NULL or a live solution.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_gamma(sol: *const TtSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.0.gamma)
}

/// Effort on the best arm, or NaN for NULL.
///
/// # Safety
/// `sol` must be NULL or a live solution.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_beta(sol: *const TtSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.0.beta)
}

/// Copies the allocation into `out`, which holds `len` values.
///
/// # Safety
/// `sol` must be a live solution and `out` hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_psi(sol: *const TtSolution, out: *mut f64, len: usize) -> TtStatus {
    guard(|| copy_out(&nonnull(sol, "solution")?.0.psi, out, len, "out"))
}

/// # Safety
/// `sol` must be NULL or a live solution, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_free(sol: *mut TtSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Creates a prior over `k` arms. `points` is read for grid beliefs only.
/// `seed` fixes the stream used by `tt_belief_select` and Monte Carlo
/// fallbacks.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tt_belief_new(
    model: *const TtModel,
    k: usize,
    kind: TtBeliefKind,
    points: usize,
    seed: u64,
    out: *mut *mut TtBelief,
) -> TtStatus {
    guard(|| {
        let m = parse_model(model)?;
        let spec = match kind {
            TtBeliefKind::TtConjugate => BeliefSpec::Conjugate,
            TtBeliefKind::TtGrid => BeliefSpec::Grid { points },
        };
        let state = spec.prior(&m, k).or_status()?;
        let cfg = toptwo::RuleConfig::default();
        let engine = AlphaEngine::new(&state, cfg.quadrature_points, cfg.mc_samples).or_status()?;
        boxed(
            TtBelief {
                state,
                engine,
                policy: None,
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            out,
        )
    })
}

/// Absorbs observation `y` of arm `arm`.
///
/// # Safety
/// `belief` must be a live belief.
#[no_mangle]
pub unsafe extern "C" fn tt_belief_update(belief: *mut TtBelief, arm: usize, y: f64) -> TtStatus {
    guard(|| nonnull_mut(belief, "belief")?.state.update(arm, y).or_status())
}

/// Posterior probability that each arm is best; `out` holds `len` values.
///
/// # Safety
/// `belief` must be a live belief and `out` hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn tt_belief_alpha(belief: *mut TtBelief, out: *mut f64, len: usize) -> TtStatus {
    guard(|| {
        let b = nonnull_mut(belief, "belief")?;
        let est = b.engine.estimate(&b.state, &mut b.rng).or_status()?;
        copy_out(&est.alpha, out, len, "out")
    })
}

/// Chooses the next arm to measure under `rule` with leader probability
/// `beta` (ignored by `TT_TS` and `TT_UNIFORM`).
///
/// # Safety
/// `belief` and `out_arm` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tt_belief_select(
    belief: *mut TtBelief,
    rule: TtRule,
    beta: f64,
    out_arm: *mut usize,
) -> TtStatus {
    guard(|| {
        let b = nonnull_mut(belief, "belief")?;
        let out = nonnull_mut(out_arm, "out_arm")?;
        let reuse = matches!(&b.policy, Some((r, bits, _)) if *r == rule && *bits == beta.to_bits());
        if !reuse {
            let kind = match rule {
                TtRule::TtTs => RuleKind::Ts,
                TtRule::TtTtts => RuleKind::Ttts,
                TtRule::TtTtps => RuleKind::Ttps,
                TtRule::TtTtvs => RuleKind::Ttvs,
                TtRule::TtUniform => RuleKind::Uniform,
            };
            let mut spec = RuleSpec::new(kind);
            if kind.is_top_two() {
                spec = spec.with_beta(beta);
            }
            let policy = Policy::new(spec, &b.state, 0).or_status()?;
            b.policy = Some((rule, beta.to_bits(), policy));
        }
        let (_, _, policy) = b.policy.as_mut().unwrap();
        *out = policy.select(&b.state, None, &mut b.rng).or_status()?.chosen;
        Ok(())
    })
}

/// Serializes the belief state as JSON into a new string owned by the caller.
///
/// # Safety
/// `belief` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tt_belief_to_json(belief: *const TtBelief, out: *mut *mut c_char) -> TtStatus {
    guard(|| {
        let b = nonnull(belief, "belief")?;
        let json = b.state.to_json().or_status()?;
        let c = CString::new(json).map_err(|e| fail(TtStatus::TtPanic, e.to_string()))?;
        *nonnull_mut(out, "out")? = c.into_raw();
        Ok(())
    })
}

/// Observations absorbed so far, or 0 for NULL.
///
/// # Safety
/// `belief` must be NULL or a live belief.
#[no_mangle]
pub unsafe extern "C" fn tt_belief_n(belief: *const TtBelief) -> u64 {
    belief.as_ref().map_or(0, |b| b.state.n)
}

/// # Safety
/// `belief` must be NULL or a live belief, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tt_belief_free(belief: *mut TtBelief) {
    if !belief.is_null() {
        drop(Box::from_raw(belief));
    }
}
