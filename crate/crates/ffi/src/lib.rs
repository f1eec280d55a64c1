//! C ABI over `mfselfish`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free`. Every fallible call returns an `MfsStatus`;
//! on failure `mfs_last_error_message` holds a description for the calling
//! thread. Panics are caught and reported as `MFS_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mfselfish::ensemble::{
    average_block_norm, ensemble_cost, lemma_bound_hinf, make_alpha_dominant, selfish_q, Allocation, BlockQ,
    DominanceProfile, EnsembleModel, PopulationSettings, Projection,
};
use mfselfish::lti::StateSpace;
use mfselfish::matching::{solve_adaptive, MatchingProblem, MatchingSettings};
use mfselfish::norms::{hinf_norm_system, BlockKind, FrequencyGrid, NormKind};
use mfselfish::snapshot::Snapshot;
use mfselfish::youla::{factor_agent, RiccatiWeights};
use mfselfish::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    Infeasible = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfsNorm {
    Hinf = 0,
    H2 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfsBlock {
    One = 1,
    Two = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfsAllocation {
    Coherent = 0,
    Signed = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfsProjection {
    /// Deviation from the population average.
    Social = 0,
    Individual = 1,
}

/// Population maxima of the factor norms.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MfsConstants {
    pub gamma_h: f64,
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub gamma_h2: f64,
    pub gamma_v2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MfsMatchingResult {
    pub mu: f64,
    pub cost_at_zero: f64,
    pub certificate_gap: f64,
    pub iterations: usize,
    pub taps: usize,
    pub converged: c_int,
}

/// Opaque population handle.
pub struct MfsEnsemble(EnsembleModel);

/// Opaque block Youla parameter handle.
pub struct MfsBlockQ(BlockQ);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> MfsStatus {
    match err {
        Error::Dimension { .. } => MfsStatus::Dimension,
        Error::Infeasible { .. } | Error::Unstable { .. } | Error::IllPosedLoop => MfsStatus::Infeasible,
        Error::EvaluationAtPole { .. } | Error::Overflow { .. } | Error::TailEnergy { .. } => MfsStatus::Numerical,
        Error::Io(_) | Error::Csv(_) | Error::Snapshot(_) => MfsStatus::Io,
        Error::InvalidParameter(_) | Error::Config(_) => MfsStatus::InvalidArgument,
    }
}

struct Fail(MfsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MfsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MfsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MfsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MfsStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn norm_of(n: MfsNorm) -> NormKind {
    match n {
        MfsNorm::Hinf => NormKind::Hinf,
        MfsNorm::H2 => NormKind::H2,
    }
}

fn block_of(b: MfsBlock) -> BlockKind {
    match b {
        MfsBlock::One => BlockKind::One,
        MfsBlock::Two => BlockKind::Two,
    }
}

fn grid_of(points: usize) -> Result<FrequencyGrid, Fail> {
    Ok(FrequencyGrid::uniform(points)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mfs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// without the terminator.
#[no_mangle]
pub unsafe extern "C" fn mfs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let k = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}

/// Samples `n` agents with `a ~ U[0.5, 1.5]`, `b ~ U[0.8, 1.2]` and
/// default weights; `grid_points` sets the grid of the factor norms.
#[no_mangle]
pub unsafe extern "C" fn mfs_ensemble_sample(
    n: usize,
    seed: u64,
    grid_points: usize,
    out_ensemble: *mut *mut MfsEnsemble,
) -> MfsStatus {
    guard(|| {
        let slot = out(out_ensemble, "out_ensemble")?;
        let settings = PopulationSettings {
            grid_points,
            ..Default::default()
        };
        let model = EnsembleModel::sample(n, seed, settings)?;
        *slot = Box::into_raw(Box::new(MfsEnsemble(model)));
        Ok(())
    })
}

/// Builds a population from explicit `(a[i], b[i])` pairs.
#[no_mangle]
pub unsafe extern "C" fn mfs_ensemble_from_parameters(
    a: *const f64,
    b: *const f64,
    n: usize,
    grid_points: usize,
    out_ensemble: *mut *mut MfsEnsemble,
) -> MfsStatus {
    guard(|| {
        let slot = out(out_ensemble, "out_ensemble")?;
        if a.is_null() || b.is_null() {
            return Err(null("parameter array"));
        }
        let a = std::slice::from_raw_parts(a, n);
        let b = std::slice::from_raw_parts(b, n);
        let params: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
        let settings = PopulationSettings {
            grid_points,
            ..Default::default()
        };
        let model = EnsembleModel::from_parameters(&params, 0, settings)?;
        *slot = Box::into_raw(Box::new(MfsEnsemble(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mfs_ensemble_free(ensemble: *mut MfsEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Agent count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mfs_ensemble_len(ensemble: *const MfsEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.0.len())
}

/// Writes the agent parameters into caller arrays of length `len`, which
/// must be at least the agent count.
#[no_mangle]
pub unsafe extern "C" fn mfs_ensemble_parameters(
    ensemble: *const MfsEnsemble,
    a_out: *mut f64,
    b_out: *mut f64,
    len: usize,
) -> MfsStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        if a_out.is_null() || b_out.is_null() {
            return Err(null("output array"));
        }
        let params = e.0.parameters();
        if len < params.len() {
            return Err(Fail(
                MfsStatus::Dimension,
                format!("output arrays hold {len}, need {}", params.len()),
            ));
        }
        for (i, (a, b)) in params.into_iter().enumerate() {
            *a_out.add(i) = a;
            *b_out.add(i) = b;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mfs_ensemble_constants(
    ensemble: *const MfsEnsemble,
    out_constants: *mut MfsConstants,
) -> MfsStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let slot = out(out_constants, "out_constants")?;
        let k = e.0.constants();
        *slot = MfsConstants {
            gamma_h: k.gamma_h,
            gamma_u: k.gamma_u,
            gamma_v: k.gamma_v,
            gamma_h2: k.gamma_h2,
            gamma_v2: k.gamma_v2,
        };
        Ok(())
    })
}

/// Diagonal parameter of per-agent matching solutions (default settings).
#[no_mangle]
pub unsafe extern "C" fn mfs_selfish_q(
    ensemble: *const MfsEnsemble,
    norm: MfsNorm,
    block: MfsBlock,
    out_q: *mut *mut MfsBlockQ,
) -> MfsStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let slot = out(out_q, "out_q")?;
        let (q, _) = selfish_q(&e.0, norm_of(norm), block_of(block), &MatchingSettings::default())?;
        *slot = Box::into_raw(Box::new(MfsBlockQ(q)));
        Ok(())
    })
}

/// Off-diagonal redistribution with `alpha(n) = c n^p`; `fanout = 0` uses
/// all other rows.
#[no_mangle]
pub unsafe extern "C" fn mfs_make_alpha_dominant(
    q: *const MfsBlockQ,
    c: f64,
    p: f64,
    fanout: usize,
    allocation: MfsAllocation,
    seed: u64,
    out_q: *mut *mut MfsBlockQ,
) -> MfsStatus {
    guard(|| {
        let q = handle(q, "q")?;
        let slot = out(out_q, "out_q")?;
        let alloc = match allocation {
            MfsAllocation::Coherent => Allocation::Coherent,
            MfsAllocation::Signed => Allocation::Signed,
        };
        let fan = (fanout > 0).then_some(fanout);
        let res = make_alpha_dominant(&q.0, DominanceProfile::new(c, p)?, fan, alloc, seed)?;
        *slot = Box::into_raw(Box::new(MfsBlockQ(res)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mfs_block_q_free(q: *mut MfsBlockQ) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Smallest `alpha` for which `q` is column dominant.
#[no_mangle]
pub unsafe extern "C" fn mfs_block_q_alpha(q: *const MfsBlockQ, out_alpha: *mut f64) -> MfsStatus {
    guard(|| {
        let q = handle(q, "q")?;
        *out(out_alpha, "out_alpha")? = q.0.alpha_actual();
        Ok(())
    })
}

/// Social or individual cost of `q` on the population: H-infinity norm, or
/// H2 norm scaled by `1/sqrt(n)`.
#[no_mangle]
pub unsafe extern "C" fn mfs_ensemble_cost(
    ensemble: *const MfsEnsemble,
    q: *const MfsBlockQ,
    norm: MfsNorm,
    block: MfsBlock,
    projection: MfsProjection,
    grid_points: usize,
    out_value: *mut f64,
) -> MfsStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let q = handle(q, "q")?;
        let slot = out(out_value, "out_value")?;
        let proj = match projection {
            MfsProjection::Social => Projection::Social,
            MfsProjection::Individual => Projection::Individual,
        };
        *slot = ensemble_cost(&e.0, &q.0, norm_of(norm), block_of(block), proj, &grid_of(grid_points)?)?.value;
        Ok(())
    })
}

/// H-infinity norm of the `M`-row truncation of the average term.
#[no_mangle]
pub unsafe extern "C" fn mfs_average_block_norm(
    ensemble: *const MfsEnsemble,
    q: *const MfsBlockQ,
    m_rows: usize,
    grid_points: usize,
    out_value: *mut f64,
) -> MfsStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let q = handle(q, "q")?;
        let slot = out(out_value, "out_value")?;
        *slot = average_block_norm(&e.0, &q.0, m_rows, &grid_of(grid_points)?)?.value;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn mfs_lemma_bound_hinf(
    m_rows: usize,
    n: usize,
    gamma_h: f64,
    gamma_q: f64,
    gamma_u: f64,
    gamma_v: f64,
    alpha: f64,
) -> f64 {
    lemma_bound_hinf(m_rows, n, gamma_h, gamma_q, gamma_u, gamma_v, alpha)
}

/// Single-agent model matching for the case-study plant `(a, b)`.
#[no_mangle]
pub unsafe extern "C" fn mfs_matching_solve(
    a: f64,
    b: f64,
    norm: MfsNorm,
    block: MfsBlock,
    out_result: *mut MfsMatchingResult,
) -> MfsStatus {
    guard(|| {
        let slot = out(out_result, "out_result")?;
        let factors = factor_agent(a, b, mfselfish::youla::DEFAULT_RHO, RiccatiWeights::default())?;
        let problem =
            MatchingProblem::for_agent(&factors, norm_of(norm), block_of(block), MatchingSettings::default())?;
        let sol = solve_adaptive(&problem)?;
        *slot = MfsMatchingResult {
            mu: sol.cost,
            cost_at_zero: sol.cost_at_zero,
            certificate_gap: sol.certificate_gap,
            iterations: sol.iterations,
            taps: sol.z.len(),
            converged: sol.converged as c_int,
        };
        Ok(())
    })
}

/// H-infinity norm of `D + C lambda (I - lambda A)^{-1} B`. Matrices are
/// row-major; `nx = 0` gives a static gain and `a`, `b`, `c` may be null.
#[no_mangle]
pub unsafe extern "C" fn mfs_hinf_norm_state_space(
    a: *const f64,
    b: *const f64,
    c: *const f64,
    d: *const f64,
    nx: usize,
    nu: usize,
    ny: usize,
    grid_points: usize,
    out_value: *mut f64,
) -> MfsStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        let read = |p: *const f64, r: usize, k: usize, what: &str| -> Result<DMatrix<f64>, Fail> {
            if r * k == 0 {
                return Ok(DMatrix::zeros(r, k));
            }
            if p.is_null() {
                return Err(null(what));
            }
            Ok(DMatrix::from_row_slice(r, k, std::slice::from_raw_parts(p, r * k)))
        };
        let sys = StateSpace::new(
            read(a, nx, nx, "a")?,
            read(b, nx, nu, "b")?,
            read(c, ny, nx, "c")?,
            read(d, ny, nu, "d")?,
        )?;
        *slot = hinf_norm_system(&sys, &grid_of(grid_points)?)?.value;
        Ok(())
    })
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(MfsStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// Writes a snapshot (`.json` or `.cbor` by extension). Either handle may
/// be null.
#[no_mangle]
pub unsafe extern "C" fn mfs_snapshot_save(
    path: *const c_char,
    ensemble: *const MfsEnsemble,
    q: *const MfsBlockQ,
) -> MfsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let snap = Snapshot::new(ensemble.as_ref().map(|e| &e.0), q.as_ref().map(|q| &q.0));
        snap.save(path)?;
        Ok(())
    })
}

/// Loads a snapshot. Absent parts come back as null handles; either output
/// pointer may be null to skip that part.
#[no_mangle]
pub unsafe extern "C" fn mfs_snapshot_load(
    path: *const c_char,
    out_ensemble: *mut *mut MfsEnsemble,
    out_q: *mut *mut MfsBlockQ,
) -> MfsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let snap = Snapshot::load(path)?;
        if let Some(slot) = out_ensemble.as_mut() {
            *slot = snap
                .model()?
                .map_or(ptr::null_mut(), |m| Box::into_raw(Box::new(MfsEnsemble(m))));
        }
        if let Some(slot) = out_q.as_mut() {
            *slot = snap
                .block_q()?
                .map_or(ptr::null_mut(), |q| Box::into_raw(Box::new(MfsBlockQ(q))));
        }
        Ok(())
    })
}
