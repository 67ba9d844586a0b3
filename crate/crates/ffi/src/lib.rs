//! C interface to the fusion workbench.
//!
//! Objects are opaque heap handles created by `mof_*_new`/`mof_*_load`
//! style functions and released with the matching `mof_*_free`. Every
//! fallible call returns a [`MofStatus`]; on failure the message is
//! available from [`mof_last_error`] on the same thread until the next
//! failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mofusion::fusenet::checkpoint::load_network;
use mofusion::fusenet::FusionNet;
use mofusion::harness::commands::{fuse_run, Method};
use mofusion::harness::{run_rng, simulate_run, ExperimentConfig, Run, Stream, TaskSpec};
use mofusion::linalg::State;
use mofusion::mb::FusionOutput;
use mofusion::metrics::{gospa, MetricReport};
use mofusion::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MofStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Diverged = 5,
    Version = 6,
    Format = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MofMetricReport {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_detection: f64,
}

impl From<MetricReport> for MofMetricReport {
    fn from(r: MetricReport) -> Self {
        MofMetricReport {
            total: r.total,
            localization: r.localization,
            missed: r.missed,
            false_detection: r.false_detection,
        }
    }
}

/// Experiment configuration with its resolved task.
pub struct MofConfig {
    cfg: ExperimentConfig,
    spec: TaskSpec,
}

/// One simulated run: ground truth and local filter outputs.
pub struct MofRun {
    run: Run,
}

pub struct MofNetwork {
    net: FusionNet,
}

/// Multi-Bernoulli density over current object states.
pub struct MofFusion {
    out: FusionOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MofStatus {
    match e.category() {
        "config" => MofStatus::Config,
        "argument" => MofStatus::InvalidArgument,
        "numerical" => MofStatus::Numerical,
        "diverged" => MofStatus::Diverged,
        "version" => MofStatus::Version,
        "format" => MofStatus::Format,
        "io" => MofStatus::Io,
        _ => MofStatus::InvalidArgument,
    }
}

enum Failure {
    Status(MofStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(MofStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MofStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MofStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MofStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(MofStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mof_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mof_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration for `scenario` (1-3) and `task` (1-2).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mof_config_new(scenario: u8, task: u8, out: *mut *mut MofConfig) -> MofStatus {
    guard(|| {
        let cfg = ExperimentConfig {
            scenario,
            task,
            ..ExperimentConfig::default()
        };
        let spec = cfg.task_spec()?;
        put(out, MofConfig { cfg, spec })
    })
}

/// Configuration read from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as in [`mof_config_new`].
#[no_mangle]
pub unsafe extern "C" fn mof_config_load(path: *const c_char, out: *mut *mut MofConfig) -> MofStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(&path_arg(path)?)?;
        let spec = cfg.task_spec()?;
        put(out, MofConfig { cfg, spec })
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mof_config_free(cfg: *mut MofConfig) {
    free(cfg)
}

/// Simulate test-stream run `index` under `seed` and run the local filters.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mof_run_simulate(
    cfg: *const MofConfig,
    seed: u64,
    index: u64,
    out: *mut *mut MofRun,
) -> MofStatus {
    guard(|| {
        let c = deref(cfg, "config")?;
        let run = simulate_run(&c.spec, &mut run_rng(seed, Stream::Test, index))?;
        put(out, MofRun { run })
    })
}

/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mof_run_free(run: *mut MofRun) {
    free(run)
}

/// Number of ground-truth objects at the final step.
///
/// # Safety
/// `run` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn mof_run_truth_count(run: *const MofRun, count: *mut usize) -> MofStatus {
    guard(|| {
        let r = deref(run, "run")?;
        *count.as_mut().ok_or_else(|| null("count"))? = r.run.truth.len();
        Ok(())
    })
}

/// State `[x, y, vx, vy]` of truth object `i`.
///
/// # Safety
/// `run` must be a live handle and `state` must point to four doubles.
#[no_mangle]
pub unsafe extern "C" fn mof_run_truth(run: *const MofRun, i: usize, state: *mut f64) -> MofStatus {
    guard(|| {
        let r = deref(run, "run")?;
        let s = r.run.truth.get(i).ok_or_else(|| {
            Failure::Status(
                MofStatus::OutOfRange,
                format!("truth index {i} of {}", r.run.truth.len()),
            )
        })?;
        if state.is_null() {
            return Err(null("state"));
        }
        std::slice::from_raw_parts_mut(state, 4).copy_from_slice(s.as_slice());
        Ok(())
    })
}

/// Load a trained network checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mof_network_load(path: *const c_char, out: *mut *mut MofNetwork) -> MofStatus {
    guard(|| {
        let net = load_network(&path_arg(path)?)?;
        put(out, MofNetwork { net })
    })
}

/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mof_network_free(net: *mut MofNetwork) {
    free(net)
}

/// Fuse the local densities of `run`. A null `net` selects the model-based
/// baseline; otherwise the network is used.
///
/// # Safety
/// `cfg` and `run` must be live handles, `net` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mof_fuse(
    cfg: *const MofConfig,
    run: *const MofRun,
    net: *const MofNetwork,
    out: *mut *mut MofFusion,
) -> MofStatus {
    guard(|| {
        let c = deref(cfg, "config")?;
        let r = deref(run, "run")?;
        let net = net.as_ref().map(|n| &n.net);
        let method = if net.is_some() {
            Method::Transformer
        } else {
            Method::Bayesian
        };
        let fused = fuse_run(&r.run, &c.spec, &c.cfg, net, method)?;
        let out_mb = match fused.transformer {
            Some((o, _)) => o,
            None => fused.bayesian.unwrap_or_default(),
        };
        put(out, MofFusion { out: out_mb })
    })
}

/// # Safety
/// `fusion` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mof_fusion_free(fusion: *mut MofFusion) {
    free(fusion)
}

/// Number of Bernoulli components.
///
/// # Safety
/// `fusion` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn mof_fusion_len(fusion: *const MofFusion, count: *mut usize) -> MofStatus {
    guard(|| {
        let f = deref(fusion, "fusion")?;
        *count.as_mut().ok_or_else(|| null("count"))? = f.out.len();
        Ok(())
    })
}

/// Component `i`: existence, mean `[x, y, vx, vy]` and row-major 4x4
/// covariance. `mean` and `cov` may be null when not wanted.
///
/// # Safety
/// `fusion` must be a live handle; non-null outputs must hold 1, 4 and 16
/// doubles respectively.
#[no_mangle]
pub unsafe extern "C" fn mof_fusion_component(
    fusion: *const MofFusion,
    i: usize,
    existence: *mut f64,
    mean: *mut f64,
    cov: *mut f64,
) -> MofStatus {
    guard(|| {
        let f = deref(fusion, "fusion")?;
        let c = f
            .out
            .components
            .get(i)
            .ok_or_else(|| Failure::Status(MofStatus::OutOfRange, format!("component {i} of {}", f.out.len())))?;
        if let Some(e) = existence.as_mut() {
            *e = c.existence;
        }
        if !mean.is_null() {
            std::slice::from_raw_parts_mut(mean, 4).copy_from_slice(c.mean.as_slice());
        }
        if !cov.is_null() {
            let dst = std::slice::from_raw_parts_mut(cov, 16);
            for r in 0..4 {
                for col in 0..4 {
                    dst[4 * r + col] = c.cov[(r, col)];
                }
            }
        }
        Ok(())
    })
}

/// GOSPA between the components of `fusion` with existence above
/// `threshold` and the ground truth of `run`, using the configured metric
/// parameters.
///
/// # Safety
/// All handles must be live and `report` writable.
#[no_mangle]
pub unsafe extern "C" fn mof_gospa(
    cfg: *const MofConfig,
    fusion: *const MofFusion,
    run: *const MofRun,
    threshold: f64,
    report: *mut MofMetricReport,
) -> MofStatus {
    guard(|| {
        let c = deref(cfg, "config")?;
        let f = deref(fusion, "fusion")?;
        let r = deref(run, "run")?;
        let est: Vec<State> = f.out.extract(threshold).into_iter().map(|e| e.state).collect();
        let g = gospa(&est, &r.run.truth, &c.cfg.gospa)?;
        *report.as_mut().ok_or_else(|| null("report"))? = g.into();
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_categories_map_to_statuses() {
        assert_eq!(status_of(&Error::Config("x".into())), MofStatus::Config);
        assert_eq!(
            status_of(&Error::InvalidArgument("x".into())),
            MofStatus::InvalidArgument
        );
        let io = Error::Io {
            context: None,
            source: std::io::Error::other("x"),
        };
        assert_eq!(status_of(&io), MofStatus::Io);
    }

    #[test]
    fn messages_with_nul_bytes_survive() {
        set_error("bad\0path".into());
        let msg = unsafe { CStr::from_ptr(mof_last_error()) }
            .to_str()
            .unwrap()
            .to_string();
        assert_eq!(msg, "bad path");
    }

    #[test]
    fn panics_become_a_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, MofStatus::Panic);
        assert_eq!(
            unsafe { CStr::from_ptr(mof_last_error()) }.to_str().unwrap(),
            "internal panic"
        );
    }
}
