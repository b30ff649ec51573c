//! C ABI over `streamkmeans`.
//!
//! Every fallible function returns an [`SkmStatus`]; on failure the message
//! is available from [`skm_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Center buffers
//! are row-major `k * d` arrays of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use streamkmeans::analysis::horizon;
use streamkmeans::engine::Trace;
use streamkmeans::moments::MomentOracle;
use streamkmeans::{objective, Centers, Distribution, DistributionSpec, Engine, Error, RunConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad shape, index, range or string encoding.
    Input = 2,
    /// Invalid configuration or unparsable TOML.
    Config = 3,
    /// The distribution cannot provide what was asked (for example exact moments).
    Capability = 4,
    /// Degenerate centers, empty cell or another runtime invariant.
    Contract = 5,
    Io = 6,
    /// The run handle was already finished.
    State = 7,
    /// The output buffer is too small.
    Buffer = 8,
    Panic = 9,
}

pub struct SkmDistribution {
    inner: Arc<dyn Distribution>,
}

pub struct SkmRun {
    engine: Option<Engine>,
    trace: Option<Trace>,
    k: usize,
    d: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

enum Fail {
    Core(Error),
    Status(SkmStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn status_of(e: &Error) -> SkmStatus {
    match e {
        Error::Input(_) => SkmStatus::Input,
        Error::Config(_) | Error::Toml(_) => SkmStatus::Config,
        Error::Capability(_) => SkmStatus::Capability,
        Error::NoPairs | Error::Degenerate(_) | Error::EmptyCell { .. } | Error::Contract(_) => SkmStatus::Contract,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => SkmStatus::Io,
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SkmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SkmStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SkmStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(SkmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(SkmStatus::Input, format!("{what} is not valid UTF-8")))
}

unsafe fn centers_arg(p: *const f64, k: usize, d: usize) -> Result<Centers, Fail> {
    if p.is_null() {
        return Err(null("centers"));
    }
    if k == 0 {
        return Err(Fail::Status(SkmStatus::Input, "k must be positive".into()));
    }
    let coords = std::slice::from_raw_parts(p, k * d).to_vec();
    Ok(Centers::from_flat(k, d, coords)?)
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null("output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message for the last failure on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn skm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn skm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a distribution from a TOML table, e.g.
/// `type = "piecewise1d"`, `breakpoints = [0, 1]`, `densities = [1]`.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skm_distribution_from_toml(toml: *const c_char, out: *mut *mut SkmDistribution) -> SkmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = DistributionSpec::from_toml_str(str_arg(toml, "toml")?)?;
        let inner = spec.build()?;
        *out = Box::into_raw(Box::new(SkmDistribution { inner }));
        Ok(())
    })
}

/// Dimension of the sample space, or 0 for a null handle.
///
/// # Safety
/// `dist` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skm_distribution_dimension(dist: *const SkmDistribution) -> usize {
    dist.as_ref().map_or(0, |d| d.inner.dimension())
}

/// # Safety
/// `dist` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skm_distribution_free(dist: *mut SkmDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

unsafe fn with_dist<'a>(dist: *const SkmDistribution) -> Result<&'a dyn Distribution, Fail> {
    dist.as_ref().map(|d| d.inner.as_ref()).ok_or_else(|| null("distribution"))
}

/// Exact Voronoi cell masses of `k` centers, written to `out_masses[0..k]`.
///
/// # Safety
/// `centers` must hold `k * d` doubles and `out_masses` room for `k`.
#[no_mangle]
pub unsafe extern "C" fn skm_masses(
    dist: *const SkmDistribution,
    centers: *const f64,
    k: usize,
    out_masses: *mut f64,
) -> SkmStatus {
    guard(|| {
        let dist = with_dist(dist)?;
        let w = centers_arg(centers, k, dist.dimension())?;
        let m = MomentOracle::exact().moments(dist, &w)?;
        out_slice(out_masses, k)?.copy_from_slice(&m.masses);
        Ok(())
    })
}

/// Exact quantization cost of `k` centers.
///
/// # Safety
/// `centers` must hold `k * d` doubles and `out_cost` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skm_cost(
    dist: *const SkmDistribution,
    centers: *const f64,
    k: usize,
    out_cost: *mut f64,
) -> SkmStatus {
    guard(|| {
        let dist = with_dist(dist)?;
        let w = centers_arg(centers, k, dist.dimension())?;
        let c = objective::cost(dist, &w, &MomentOracle::exact())?;
        out_slice(out_cost, 1)?[0] = c.value;
        Ok(())
    })
}

/// Exact gradient, written row-major to `out_gradient[0..k*d]`.
///
/// # Safety
/// `centers` and `out_gradient` must each hold `k * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn skm_gradient(
    dist: *const SkmDistribution,
    centers: *const f64,
    k: usize,
    out_gradient: *mut f64,
) -> SkmStatus {
    guard(|| {
        let dist = with_dist(dist)?;
        let d = dist.dimension();
        let w = centers_arg(centers, k, d)?;
        let g = objective::gradient(dist, &w, &MomentOracle::exact())?;
        let out = out_slice(out_gradient, k * d)?;
        for (row, v) in out.chunks_mut(d).zip(&g.per_center) {
            row.copy_from_slice(v);
        }
        Ok(())
    })
}

/// Start a run from a TOML run configuration. The seed comes from the
/// configuration text; the environment is not consulted.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skm_run_new(config_toml: *const c_char, out: *mut *mut SkmRun) -> SkmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::from_toml_str(str_arg(config_toml, "config")?)?;
        cfg.validate()?;
        let engine = Engine::new(&cfg)?;
        let (k, d) = (engine.centers().k(), engine.centers().d());
        *out = Box::into_raw(Box::new(SkmRun { engine: Some(engine), trace: None, k, d }));
        Ok(())
    })
}

unsafe fn run_mut<'a>(run: *mut SkmRun) -> Result<&'a mut SkmRun, Fail> {
    run.as_mut().ok_or_else(|| null("run"))
}

fn live(run: &mut SkmRun) -> Result<&mut Engine, Fail> {
    run.engine.as_mut().ok_or_else(|| Fail::Status(SkmStatus::State, "run already finished".into()))
}

/// Advance by up to `steps` iterations, stopping at the configured horizon.
/// The number actually taken goes to `out_taken` when it is not null.
///
/// # Safety
/// `run` must be a live handle; `out_taken` null or valid.
#[no_mangle]
pub unsafe extern "C" fn skm_run_step(run: *mut SkmRun, steps: u64, out_taken: *mut u64) -> SkmStatus {
    let mut taken = 0;
    let status = guard(|| {
        let engine = live(run_mut(run)?)?;
        while taken < steps && !engine.is_done() {
            engine.step()?;
            taken += 1;
        }
        Ok(())
    });
    if let Some(t) = out_taken.as_mut() {
        *t = taken;
    }
    status
}

/// Completed iterations, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skm_run_iteration(run: *const SkmRun) -> u64 {
    match run.as_ref() {
        Some(SkmRun { engine: Some(e), .. }) => e.iteration(),
        Some(SkmRun { trace: Some(t), .. }) => t.iterations,
        _ => 0,
    }
}

/// Number of centers and dimension.
///
/// # Safety
/// `run` must be a live handle; `out_k` and `out_d` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn skm_run_shape(run: *const SkmRun, out_k: *mut usize, out_d: *mut usize) -> SkmStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        if out_k.is_null() || out_d.is_null() {
            return Err(null("output pointer"));
        }
        *out_k = r.k;
        *out_d = r.d;
        Ok(())
    })
}

/// Copy the current centers into `out[0..k*d]`; `len` is the buffer length.
///
/// # Safety
/// `run` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn skm_run_centers(run: *const SkmRun, out: *mut f64, len: usize) -> SkmStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let w = match (&r.engine, &r.trace) {
            (Some(e), _) => e.centers(),
            (None, Some(t)) => &t.final_row().centers,
            (None, None) => unreachable!("a run holds an engine or a trace"),
        };
        let need = r.k * r.d;
        if len < need {
            return Err(Fail::Status(SkmStatus::Buffer, format!("buffer holds {len} doubles, {need} needed")));
        }
        out_slice(out, need)?.copy_from_slice(w.as_flat());
        Ok(())
    })
}

/// Close the run and write its trace CSV to `path`. Further steps fail with
/// [`SkmStatus::State`]; centers and iteration stay readable.
///
/// # Safety
/// `run` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn skm_run_finish(run: *mut SkmRun, path: *const c_char) -> SkmStatus {
    guard(|| {
        let r = run_mut(run)?;
        let path = str_arg(path, "path")?;
        let engine = r.engine.take().ok_or_else(|| Fail::Status(SkmStatus::State, "run already finished".into()))?;
        let trace = engine.finish();
        let written = trace.write_csv_file(Path::new(path));
        r.trace = Some(trace);
        Ok(written?)
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skm_run_free(run: *mut SkmRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// `T_r(m)`: the integer with `Σ_{m≤n<T} 1/n ≤ r < Σ_{m≤n≤T} 1/n`; needs `m ≥ 2`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skm_horizon(r: f64, m: u64, out: *mut u64) -> SkmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = horizon(r, m)?;
        Ok(())
    })
}
