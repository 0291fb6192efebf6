//! C interface to the `gwsos` library.
//!
//! Every function returns a [`GwsosStatus`]; results come back through out
//! pointers. Spaces and solutions are opaque heap handles released with their
//! `_free` function. After a non-zero status, [`gwsos_last_error`] copies the
//! message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gwsos::certify::certify_problem;
use gwsos::metric::{distortion_distance, DistanceOptions};
use gwsos::oracle::best_upper_bound;
use gwsos::relax::{build, HierarchyKind, Limits};
use gwsos::sdpsolve::{solve_with, SolveOptions, SolveStatus};
use gwsos::spaces::{build_cost_tensor, MetricMeasureSpace};
use gwsos::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GwsosStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Capacity = 4,
    Solver = 5,
    Feasibility = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Io = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GwsosHierarchy {
    Schmudgen = 0,
    Putinar = 1,
    Combined = 2,
    FirstLevel = 3,
}

impl From<GwsosHierarchy> for HierarchyKind {
    fn from(h: GwsosHierarchy) -> Self {
        match h {
            GwsosHierarchy::Schmudgen => HierarchyKind::Schmudgen,
            GwsosHierarchy::Putinar => HierarchyKind::Putinar,
            GwsosHierarchy::Combined => HierarchyKind::Combined,
            GwsosHierarchy::FirstLevel => HierarchyKind::FirstLevelDnn,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GwsosSolveStatus {
    Optimal = 0,
    MaxIterations = 1,
    Infeasible = 2,
    NumericalFailure = 3,
}

impl From<SolveStatus> for GwsosSolveStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Optimal => GwsosSolveStatus::Optimal,
            SolveStatus::MaxIterations => GwsosSolveStatus::MaxIterations,
            SolveStatus::Infeasible => GwsosSolveStatus::Infeasible,
            SolveStatus::NumericalFailure => GwsosSolveStatus::NumericalFailure,
        }
    }
}

/// Opaque metric measure space.
pub struct GwsosSpace {
    inner: MetricMeasureSpace,
}

/// Opaque result of [`gwsos_solve`].
pub struct GwsosSolution {
    status: SolveStatus,
    iterations: usize,
    lower_bound: f64,
    upper_bound: f64,
    eig_ratio: f64,
    err_ratio: f64,
    solved: bool,
    m: usize,
    n: usize,
    coupling: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> GwsosStatus {
    match err {
        Error::Capacity { .. } | Error::Overflow(_) => GwsosStatus::Capacity,
        Error::Io { .. } | Error::Parse { .. } => GwsosStatus::Io,
        Error::Dimension(_) | Error::OutOfBasis(_) => GwsosStatus::Dimension,
        Error::Invalid(_) | Error::Level { .. } | Error::Precondition(_) => GwsosStatus::InvalidArgument,
        Error::Extraction { .. } | Error::Feasibility(_) | Error::Sandwich { .. } => GwsosStatus::Feasibility,
        Error::Solver(_) => GwsosStatus::Solver,
    }
}

struct Fail(GwsosStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GwsosStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GwsosStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            GwsosStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            GwsosStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn space<'a>(p: *const GwsosSpace, what: &str) -> Result<&'a MetricMeasureSpace, Fail> {
    p.as_ref().map(|s| &s.inner).ok_or_else(|| null(what))
}

unsafe fn weights(w: *const f64, m: usize) -> Result<Vec<f64>, Fail> {
    if w.is_null() {
        Ok(vec![1.0 / m as f64; m])
    } else {
        Ok(slice(w, m, "weights")?.to_vec())
    }
}

fn publish<T>(out: *mut *mut T, value: T) {
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gwsos_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `len > 0`) and stores the full message length,
/// excluding the terminator, in `needed` when it is non-null.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn gwsos_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> GwsosStatus {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !needed.is_null() {
            *needed = msg.len();
        }
        if len == 0 {
            return GwsosStatus::Ok;
        }
        if buf.is_null() {
            return GwsosStatus::NullPointer;
        }
        let n = msg.len().min(len - 1);
        ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        if n < msg.len() {
            GwsosStatus::BufferTooSmall
        } else {
            GwsosStatus::Ok
        }
    })
}

/// Space from a row-major `m x m` distance matrix. `weights` may be null for
/// uniform weights.
///
/// # Safety
/// `distances` must hold `m * m` doubles, `weights` (if non-null) `m`, and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gwsos_space_from_distances(
    distances: *const f64,
    weights_ptr: *const f64,
    m: usize,
    out: *mut *mut GwsosSpace,
) -> GwsosStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if m == 0 {
            return Err(Fail(GwsosStatus::InvalidArgument, "m must be positive".into()));
        }
        let d = slice(distances, m * m, "distances")?;
        let w = weights(weights_ptr, m)?;
        let inner = MetricMeasureSpace::new(DMatrix::from_row_slice(m, m, d), w)?;
        publish(out, GwsosSpace { inner });
        Ok(())
    })
}

/// Space from `m` points of dimension `dim`, stored row-major, with
/// Euclidean distances.
///
/// # Safety
/// `points` must hold `m * dim` doubles, `weights` (if non-null) `m`, and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gwsos_space_from_points(
    points: *const f64,
    weights_ptr: *const f64,
    m: usize,
    dim: usize,
    out: *mut *mut GwsosSpace,
) -> GwsosStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if m == 0 || dim == 0 {
            return Err(Fail(GwsosStatus::InvalidArgument, "m and dim must be positive".into()));
        }
        let flat = slice(points, m * dim, "points")?;
        let pts: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
        let w = if weights_ptr.is_null() { None } else { Some(weights(weights_ptr, m)?) };
        let inner = MetricMeasureSpace::from_points(&pts, w)?;
        publish(out, GwsosSpace { inner });
        Ok(())
    })
}

/// Number of atoms kept after loading (zero-mass atoms are dropped).
///
/// # Safety
/// `space` must come from a constructor in this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn gwsos_space_size(space: *const GwsosSpace) -> usize {
    space.as_ref().map_or(0, |s| s.inner.size())
}

/// # Safety
/// `space` must be null or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gwsos_space_free(space: *mut GwsosSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Builds, solves and certifies the level-`level` relaxation of the problem
/// with cost `|d_X^q - d_Y^q|^p`.
///
/// # Safety
/// `x` and `y` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gwsos_solve(
    x: *const GwsosSpace,
    y: *const GwsosSpace,
    p: f64,
    q: f64,
    hierarchy: GwsosHierarchy,
    level: usize,
    tol: f64,
    max_iter: usize,
    out: *mut *mut GwsosSolution,
) -> GwsosStatus {
    guard(|| {
        let (x, y) = (space(x, "x")?, space(y, "y")?);
        if out.is_null() {
            return Err(null("out"));
        }
        if !(tol > 0.0) || max_iter == 0 || level == 0 {
            return Err(Fail(
                GwsosStatus::InvalidArgument,
                "tol, max_iter and level must be positive".into(),
            ));
        }
        let l = build_cost_tensor(x, y, p, q)?;
        let problem = build(hierarchy.into(), &l, x.weights(), y.weights(), level, &Limits::default())?;
        let opts = SolveOptions {
            tol,
            max_iter,
            ..SolveOptions::default()
        };
        let res = solve_with(&problem, &opts)?;
        let mut sol = GwsosSolution {
            status: res.status,
            iterations: res.iterations,
            lower_bound: res.objective,
            upper_bound: f64::NAN,
            eig_ratio: f64::NAN,
            err_ratio: f64::NAN,
            solved: false,
            m: x.size(),
            n: y.size(),
            coupling: Vec::new(),
        };
        if matches!(res.status, SolveStatus::Optimal | SolveStatus::MaxIterations) {
            if let Ok(c) = certify_problem(&problem, &res, &l, x.weights(), y.weights(), &opts) {
                if let Some(polished) = &c.polished {
                    sol.status = polished.status;
                    sol.iterations = polished.iterations;
                }
                sol.lower_bound = c.certificate.lower_bound;
                sol.upper_bound = c.certificate.upper_bound;
                sol.eig_ratio = c.certificate.eigenvalue_ratio;
                sol.err_ratio = c.certificate.error_ratio.unwrap_or(f64::NAN);
                sol.solved = c.certificate.solved;
                sol.coupling = c.coupling.to_vec();
            }
        }
        publish(out, sol);
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gwsos_solution_free(sol: *mut GwsosSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Scalar fields of a solution. Ratios without a value are NaN; the error
/// ratio is NaN on exact-zero instances and the upper bound is NaN when no
/// coupling could be extracted. Any out pointer may be null.
///
/// # Safety
/// `sol` must be a live handle; non-null out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gwsos_solution_summary(
    sol: *const GwsosSolution,
    status: *mut GwsosSolveStatus,
    iterations: *mut usize,
    lower_bound: *mut f64,
    upper_bound: *mut f64,
    eig_ratio: *mut f64,
    err_ratio: *mut f64,
    solved: *mut bool,
) -> GwsosStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("solution"))?;
        if !status.is_null() {
            *status = s.status.into();
        }
        if !iterations.is_null() {
            *iterations = s.iterations;
        }
        for (p, v) in [
            (lower_bound, s.lower_bound),
            (upper_bound, s.upper_bound),
            (eig_ratio, s.eig_ratio),
            (err_ratio, s.err_ratio),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        if !solved.is_null() {
            *solved = s.solved;
        }
        Ok(())
    })
}

/// Copies the row-major `m x n` coupling into `buf`. Fails with
/// `BufferTooSmall` when `len < m * n`; `needed` receives `m * n` (0 when no
/// coupling was extracted) if non-null.
///
/// # Safety
/// `sol` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gwsos_solution_coupling(
    sol: *const GwsosSolution,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> GwsosStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("solution"))?;
        let want = if s.coupling.is_empty() { 0 } else { s.m * s.n };
        if !needed.is_null() {
            *needed = want;
        }
        if len < want {
            return Err(Fail(
                GwsosStatus::BufferTooSmall,
                format!("coupling needs {want} doubles, buffer has {len}"),
            ));
        }
        if want > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            ptr::copy_nonoverlapping(s.coupling.as_ptr(), buf, want);
        }
        Ok(())
    })
}

/// Best feasible objective found by the upper-bound oracle. `coupling` may
/// be null; otherwise it must hold `m * n` doubles and receives the plan.
///
/// # Safety
/// `x`, `y` must be live handles, `value` valid, and `coupling` null or
/// valid for `m * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn gwsos_oracle(
    x: *const GwsosSpace,
    y: *const GwsosSpace,
    p: f64,
    q: f64,
    starts: usize,
    seed: u64,
    value: *mut f64,
    coupling: *mut f64,
) -> GwsosStatus {
    guard(|| {
        let (x, y) = (space(x, "x")?, space(y, "y")?);
        if value.is_null() {
            return Err(null("value"));
        }
        let l = build_cost_tensor(x, y, p, q)?;
        let res = best_upper_bound(&l, x.weights(), y.weights(), starts, seed)?;
        *value = res.value;
        if !coupling.is_null() {
            let v = res.coupling.to_vec();
            ptr::copy_nonoverlapping(v.as_ptr(), coupling, v.len());
        }
        Ok(())
    })
}

/// Distortion distance `Delta_{p,level}(X, Y)` with `q = 1`.
///
/// # Safety
/// `x`, `y` must be live handles and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gwsos_distance(
    x: *const GwsosSpace,
    y: *const GwsosSpace,
    p: f64,
    level: usize,
    hierarchy: GwsosHierarchy,
    out: *mut f64,
) -> GwsosStatus {
    guard(|| {
        let (x, y) = (space(x, "x")?, space(y, "y")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = DistanceOptions {
            certify: false,
            ..DistanceOptions::default()
        };
        let d = distortion_distance(x, y, p, level, hierarchy.into(), &opts)?;
        *out = d.value;
        Ok(())
    })
}

/// Parses a hierarchy name (`schmudgen`, `putinar`, `combined`,
/// `first-level`).
///
/// # Safety
/// `name` must be a valid NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gwsos_hierarchy_from_name(name: *const c_char, out: *mut GwsosHierarchy) -> GwsosStatus {
    guard(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Fail(GwsosStatus::InvalidArgument, "name is not UTF-8".into()))?;
        let kind: HierarchyKind = s.parse()?;
        *out = match kind {
            HierarchyKind::Schmudgen => GwsosHierarchy::Schmudgen,
            HierarchyKind::Putinar => GwsosHierarchy::Putinar,
            HierarchyKind::Combined => GwsosHierarchy::Combined,
            HierarchyKind::FirstLevelDnn => GwsosHierarchy::FirstLevel,
        };
        Ok(())
    })
}
