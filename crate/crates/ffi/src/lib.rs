//! C interface to `ccdtwin`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`CcdStatus`]; the message of the last failure on the calling
//! thread is available from [`ccd_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ccdtwin::config::ExperimentConfig;
use ccdtwin::dynamics::DiscretePlant;
use ccdtwin::lifecycle::{run_lifecycle, Comparison, Registry, Scenario, REGISTRY_DIR};
use ccdtwin::report::write_report;
use ccdtwin::CcdError;

/// Result of a call. The numeric values of the first four match the
/// command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcdStatus {
    Ok = 0,
    ConfigError = 1,
    NumericError = 2,
    IncompleteInput = 3,
    /// Null pointer, bad UTF-8, index out of range or short buffer.
    InvalidArgument = 4,
    /// A Rust panic was caught at the boundary.
    InternalError = 5,
}

/// Experiment configuration.
pub struct CcdExperiment {
    config: ExperimentConfig,
}

/// Nominal discrete-time plant at a fixed design.
pub struct CcdPlant {
    plant: DiscretePlant,
}

/// Truth-plant comparison of the generations of a lifecycle.
pub struct CcdComparison {
    cmp: Comparison,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(CcdStatus, String);

impl From<CcdError> for Failure {
    fn from(e: CcdError) -> Self {
        let status = match e.exit_code() {
            1 => CcdStatus::ConfigError,
            2 => CcdStatus::NumericError,
            _ => CcdStatus::IncompleteInput,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CcdStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any failure or panic for [`ccd_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            CcdStatus::InternalError
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length plus one, or 0 when
/// there is no error.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ccd_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && cap > 0 {
                let n = bytes.len().min(cap);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ccd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Built-in defaults for `plant` ("illustrative" or "suspension").
///
/// # Safety
/// `plant` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccd_experiment_default(plant: *const c_char, out: *mut *mut CcdExperiment) -> CcdStatus {
    guard(|| {
        let config = match str_arg(plant, "plant")? {
            "illustrative" => ExperimentConfig::illustrative(),
            "suspension" => ExperimentConfig::suspension(),
            other => return Err(Failure(CcdStatus::ConfigError, format!("unknown plant {other:?}"))),
        };
        out_arg(out, CcdExperiment { config })
    })
}

/// Loads a TOML experiment file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccd_experiment_load(path: *const c_char, out: *mut *mut CcdExperiment) -> CcdStatus {
    guard(|| {
        let config = ExperimentConfig::load(Path::new(str_arg(path, "path")?))?;
        out_arg(out, CcdExperiment { config })
    })
}

/// Parses a TOML experiment document; relative paths resolve against the
/// working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccd_experiment_parse(text: *const c_char, out: *mut *mut CcdExperiment) -> CcdStatus {
    guard(|| {
        let config = ExperimentConfig::from_toml_str(str_arg(text, "text")?, Path::new("."))?;
        out_arg(out, CcdExperiment { config })
    })
}

/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccd_experiment_set_seed(exp: *mut CcdExperiment, seed: u64) -> CcdStatus {
    guard(|| {
        exp.as_mut().ok_or_else(|| invalid("experiment is null"))?.config.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccd_experiment_set_workers(exp: *mut CcdExperiment, workers: usize) -> CcdStatus {
    guard(|| {
        let e = exp.as_mut().ok_or_else(|| invalid("experiment is null"))?;
        if workers == 0 {
            return Err(Failure(CcdStatus::ConfigError, "workers must be at least 1".into()));
        }
        e.config.workers = workers;
        Ok(())
    })
}

/// Writes the effective configuration as TOML into `buf` (NUL-terminated).
/// `needed` receives the required size including the NUL; a short buffer
/// yields `INVALID_ARGUMENT` and leaves `buf` untouched.
///
/// # Safety
/// `exp` must be a live handle, `buf` null or `cap` writable bytes, `needed`
/// null or valid.
#[no_mangle]
pub unsafe extern "C" fn ccd_experiment_to_toml(
    exp: *const CcdExperiment,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> CcdStatus {
    guard(|| {
        let text = ref_arg(exp, "experiment")?.config.to_toml()?;
        let n = text.len() + 1;
        if let Some(needed) = needed.as_mut() {
            *needed = n;
        }
        if buf.is_null() || cap < n {
            return Err(invalid(format!("buffer needs {n} bytes")));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccd_experiment_free(exp: *mut CcdExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Nominal plant of the experiment at `design` (`n_design` values), or at
/// the initial design when `design` is null.
///
/// # Safety
/// `exp` must be a live handle, `design` null or `n_design` doubles, `out`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn ccd_plant_new(
    exp: *const CcdExperiment,
    design: *const f64,
    n_design: usize,
    out: *mut *mut CcdPlant,
) -> CcdStatus {
    guard(|| {
        let spec = &ref_arg(exp, "experiment")?.config.plant;
        let mut d = spec.initial_design()?;
        if !design.is_null() {
            if n_design != d.len() {
                return Err(CcdError::dim("design", d.len(), n_design).into());
            }
            d = d.with_values(slice_arg(design, n_design, "design")?);
        }
        out_arg(out, CcdPlant { plant: spec.nominal(&d)? })
    })
}

/// # Safety
/// `plant` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccd_plant_state_dim(plant: *const CcdPlant) -> usize {
    plant.as_ref().map_or(0, |p| p.plant.state_dim())
}

/// One nominal step `x' = A x + B u + w`. `w` may be null (zero).
///
/// # Safety
/// `x`, `out` and (if non-null) `w` must hold `n` doubles, `n` being the
/// plant's state dimension.
#[no_mangle]
pub unsafe extern "C" fn ccd_plant_step(
    plant: *const CcdPlant,
    x: *const f64,
    n: usize,
    u: f64,
    w: *const f64,
    out: *mut f64,
) -> CcdStatus {
    guard(|| {
        let p = &ref_arg(plant, "plant")?.plant;
        if n != p.state_dim() {
            return Err(CcdError::dim("state", p.state_dim(), n).into());
        }
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let x = slice_arg(x, n, "x")?;
        let zero = vec![0.0; n];
        let w = if w.is_null() { &zero[..] } else { slice_arg(w, n, "w")? };
        let next = p.step_nominal(x, &[u], w)?;
        ptr::copy_nonoverlapping(next.as_ptr(), out, n);
        Ok(())
    })
}

/// # Safety
/// `plant` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccd_plant_free(plant: *mut CcdPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Runs (or resumes) the lifecycle up to `generations` in the run directory
/// `out_dir`, writes the report there, and returns the comparison.
///
/// # Safety
/// `exp` must be a live handle, `out_dir` a NUL-terminated string, `out`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn ccd_lifecycle_run(
    exp: *const CcdExperiment,
    out_dir: *const c_char,
    generations: usize,
    out: *mut *mut CcdComparison,
) -> CcdStatus {
    guard(|| {
        let config = &ref_arg(exp, "experiment")?.config;
        let dir = Path::new(str_arg(out_dir, "out_dir")?);
        if out.is_null() {
            return Err(invalid("output handle pointer is null"));
        }
        let sc = Scenario::build(config)?;
        let mut reg = Registry::open_or_create(&dir.join(REGISTRY_DIR))?;
        let cmp = run_lifecycle(&sc, &mut reg, generations)?;
        write_report(&reg, dir)?;
        out_arg(out, CcdComparison { cmp })
    })
}

/// Number of generations in the comparison (generation 0 included).
///
/// # Safety
/// `cmp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccd_comparison_len(cmp: *const CcdComparison) -> usize {
    cmp.as_ref().map_or(0, |c| c.cmp.generations.len())
}

/// Truth-plant return statistics of generation `index`.
///
/// # Safety
/// `cmp` must be a live handle; `mean` and `std` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ccd_comparison_returns(
    cmp: *const CcdComparison,
    index: usize,
    mean: *mut f64,
    std: *mut f64,
) -> CcdStatus {
    guard(|| {
        let c = &ref_arg(cmp, "comparison")?.cmp;
        let g = c
            .generations
            .get(index)
            .ok_or_else(|| invalid(format!("generation index {index} out of range")))?;
        if mean.is_null() || std.is_null() {
            return Err(invalid("mean/std pointers must not be null"));
        }
        *mean = g.mean;
        *std = g.std;
        Ok(())
    })
}

/// Steady-state standard deviation of `metric` ("x1".., "u") under canonical
/// condition `condition` (1-based) for generation `index`.
///
/// # Safety
/// `cmp` must be a live handle, `metric` a NUL-terminated string, `value`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn ccd_comparison_sigma(
    cmp: *const CcdComparison,
    condition: usize,
    metric: *const c_char,
    index: usize,
    value: *mut f64,
) -> CcdStatus {
    guard(|| {
        let c = &ref_arg(cmp, "comparison")?.cmp;
        let metric = str_arg(metric, "metric")?;
        let name = &c
            .generations
            .get(index)
            .ok_or_else(|| invalid(format!("generation index {index} out of range")))?
            .name;
        let v = c
            .sigma(condition, metric, name)
            .ok_or_else(|| invalid(format!("no sigma_ss entry for condition {condition}, metric {metric:?}")))?;
        if value.is_null() {
            return Err(invalid("value is null"));
        }
        *value = v;
        Ok(())
    })
}

/// # Safety
/// `cmp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccd_comparison_free(cmp: *mut CcdComparison) {
    if !cmp.is_null() {
        drop(Box::from_raw(cmp));
    }
}
