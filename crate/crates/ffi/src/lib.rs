//! C ABI over the planner, cost model and metrics.
//!
//! Every fallible entry point returns an [`MscStatus`] and writes its result
//! through an out-pointer. On failure a message is available from
//! [`msc_last_error`] on the same thread. Handles are opaque and must be
//! released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use msc_sampler::costmodel::{compare, simulate, CostReport, SimulationMode};
use msc_sampler::io::{self, RunConfig};
use msc_sampler::metrics::{self, EceAccumulator};
use msc_sampler::planner::{plan_epoch, verify_plan, EpochPlan};
use msc_sampler::respool::{batch_size_for, ReferenceBatchShape, Resolution};
use msc_sampler::schedule::{CurriculumSchedule, ScheduleKind};
use msc_sampler::{Error, ErrorCode};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Profile = 4,
    Data = 5,
    Version = 6,
    Truncated = 7,
    Comparison = 8,
    Report = 9,
    Invariant = 10,
    Io = 11,
    Panic = 12,
}

impl From<ErrorCode> for MscStatus {
    fn from(code: ErrorCode) -> Self {
        match code {
            ErrorCode::Config => MscStatus::Config,
            ErrorCode::Profile => MscStatus::Profile,
            ErrorCode::Data => MscStatus::Data,
            ErrorCode::Version => MscStatus::Version,
            ErrorCode::Truncated => MscStatus::Truncated,
            ErrorCode::Comparison => MscStatus::Comparison,
            ErrorCode::Report => MscStatus::Report,
            ErrorCode::Invariant => MscStatus::Invariant,
            ErrorCode::Io => MscStatus::Io,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MscScheduleKind {
    Linear = 0,
    Cosine = 1,
    Polynomial = 2,
    Multistep = 3,
}

impl From<MscScheduleKind> for ScheduleKind {
    fn from(k: MscScheduleKind) -> Self {
        match k {
            MscScheduleKind::Linear => ScheduleKind::Linear,
            MscScheduleKind::Cosine => ScheduleKind::Cosine,
            MscScheduleKind::Polynomial => ScheduleKind::Polynomial,
            MscScheduleKind::Multistep => ScheduleKind::Multistep,
        }
    }
}

/// Shape of one plan step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MscStep {
    pub height: u32,
    pub width: u32,
    pub batch_size: u32,
    pub num_indices: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MscCoverage {
    pub duplicates: u64,
    pub padding_duplicates: u64,
    pub missing: u64,
    pub out_of_range: u64,
    pub max_pixel_budget: u64,
    pub budget_violations: u64,
    pub shape_violations: u64,
    pub steps_equal: bool,
    /// No contract violations for the plan's configuration.
    pub clean: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MscCostSummary {
    pub total_flops: f64,
    pub updates: f64,
    pub peak_activation_units: f64,
    pub epochs: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MscRelative {
    pub flops_ratio: f64,
    pub updates_ratio: f64,
    pub peak_ratio: f64,
}

/// Validated run configuration (sampler and cost profile).
pub struct MscConfig {
    run: RunConfig,
}

/// One epoch's per-rank iteration plan.
pub struct MscPlan {
    plan: EpochPlan,
}

pub struct MscCostReport {
    report: CostReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure {
    status: MscStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            status: e.code().into(),
            message: e.to_string(),
        }
    }
}

fn fail<T>(status: MscStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure {
        status,
        message: message.into(),
    })
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MscStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MscStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            MscStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: caller passes either null or a live pointer from this library.
    match unsafe { p.as_ref() } {
        Some(r) => Ok(r),
        None => fail(MscStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller passes either null or a writable pointer.
    match unsafe { p.as_mut() } {
        Some(r) => Ok(r),
        None => fail(MscStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(MscStatus::NullPointer, format!("{what} is null"));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .or_else(|_| fail(MscStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(MscStatus::NullPointer, format!("{what} is null"));
    }
    // SAFETY: `p` points to `len` readable elements per the API contract.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn msc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn msc_status_name(status: MscStatus) -> *const c_char {
    let s: &'static CStr = match status {
        MscStatus::Ok => c"ok",
        MscStatus::NullPointer => c"null pointer",
        MscStatus::InvalidArgument => c"invalid argument",
        MscStatus::Config => c"E_CONFIG",
        MscStatus::Profile => c"E_PROFILE",
        MscStatus::Data => c"E_DATA",
        MscStatus::Version => c"E_VERSION",
        MscStatus::Truncated => c"E_TRUNCATED",
        MscStatus::Comparison => c"E_COMPARE",
        MscStatus::Report => c"E_REPORT",
        MscStatus::Invariant => c"E_INVARIANT",
        MscStatus::Io => c"E_IO",
        MscStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Parses a run config from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_config_from_json(json: *const c_char, out: *mut *mut MscConfig) -> MscStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        let text = unsafe { c_str(json, "json") }?;
        let run = io::parse_config(text, Path::new("<ffi>"), &[])?;
        *out = Box::into_raw(Box::new(MscConfig { run }));
        Ok(())
    })
}

/// Loads a run config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_config_load(path: *const c_char, out: *mut *mut MscConfig) -> MscStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        let path = unsafe { c_str(path, "path") }?;
        let run = io::load_config(Path::new(path), &[])?;
        *out = Box::into_raw(Box::new(MscConfig { run }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from `msc_config_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msc_config_free(cfg: *mut MscConfig) {
    if !cfg.is_null() {
        // SAFETY: allocated by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn msc_config_epochs(cfg: *const MscConfig) -> u32 {
    unsafe { cfg.as_ref() }.map_or(0, |c| c.run.sampler.epochs)
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn msc_config_world_size(cfg: *const MscConfig) -> u32 {
    unsafe { cfg.as_ref() }.map_or(0, |c| c.run.sampler.world_size)
}

/// Batch size the configured sampler uses at `height x width`.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_config_batch_for(
    cfg: *const MscConfig,
    height: u32,
    width: u32,
    out: *mut u32,
) -> MscStatus {
    guard(|| {
        let cfg = unsafe { borrow(cfg, "cfg") }?;
        let out = unsafe { self::out(out, "out") }?;
        if height == 0 || width == 0 {
            return fail(MscStatus::InvalidArgument, "resolution must be positive");
        }
        *out = cfg.run.sampler.batch_for(Resolution::new(height, width));
        Ok(())
    })
}

/// Builds the plan for one epoch.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_plan_epoch(cfg: *const MscConfig, epoch: u32, out: *mut *mut MscPlan) -> MscStatus {
    guard(|| {
        let cfg = unsafe { borrow(cfg, "cfg") }?;
        let out = unsafe { self::out(out, "out") }?;
        let plan = plan_epoch(&cfg.run.sampler, epoch)?;
        *out = Box::into_raw(Box::new(MscPlan { plan }));
        Ok(())
    })
}

/// # Safety
/// `plan` must be NULL or a handle from `msc_plan_epoch` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msc_plan_free(plan: *mut MscPlan) {
    if !plan.is_null() {
        // SAFETY: allocated by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(plan) });
    }
}

fn steps_of(plan: &MscPlan, rank: u32) -> Result<&[msc_sampler::IterationSpec], Failure> {
    match plan.plan.per_rank.get(rank as usize) {
        Some(s) => Ok(s),
        None => fail(
            MscStatus::InvalidArgument,
            format!("rank {rank} out of range for world size {}", plan.plan.per_rank.len()),
        ),
    }
}

fn step_of(plan: &MscPlan, rank: u32, step: u32) -> Result<&msc_sampler::IterationSpec, Failure> {
    let steps = steps_of(plan, rank)?;
    match steps.get(step as usize) {
        Some(s) => Ok(s),
        None => fail(
            MscStatus::InvalidArgument,
            format!("step {step} out of range ({} steps on rank {rank})", steps.len()),
        ),
    }
}

/// # Safety
/// `plan` must be a live plan handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_plan_num_steps(plan: *const MscPlan, rank: u32, out: *mut u32) -> MscStatus {
    guard(|| {
        let plan = unsafe { borrow(plan, "plan") }?;
        let out = unsafe { self::out(out, "out") }?;
        *out = steps_of(plan, rank)?.len() as u32;
        Ok(())
    })
}

/// # Safety
/// `plan` must be a live plan handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_plan_step(plan: *const MscPlan, rank: u32, step: u32, out: *mut MscStep) -> MscStatus {
    guard(|| {
        let plan = unsafe { borrow(plan, "plan") }?;
        let out = unsafe { self::out(out, "out") }?;
        let s = step_of(plan, rank, step)?;
        *out = MscStep {
            height: s.height,
            width: s.width,
            batch_size: s.batch_size,
            num_indices: s.indices.len() as u32,
        };
        Ok(())
    })
}

/// Borrows the dataset indices of one step. The array stays valid until the
/// plan is freed.
///
/// # Safety
/// `plan` must be a live plan handle; `indices` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_plan_indices(
    plan: *const MscPlan,
    rank: u32,
    step: u32,
    indices: *mut *const u64,
    len: *mut usize,
) -> MscStatus {
    guard(|| {
        let plan = unsafe { borrow(plan, "plan") }?;
        let indices = unsafe { self::out(indices, "indices") }?;
        let len = unsafe { self::out(len, "len") }?;
        let s = step_of(plan, rank, step)?;
        *indices = s.indices.as_ptr();
        *len = s.indices.len();
        Ok(())
    })
}

/// Coverage check of a plan against its config.
///
/// # Safety
/// `plan` and `cfg` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_plan_verify(
    plan: *const MscPlan,
    cfg: *const MscConfig,
    out: *mut MscCoverage,
) -> MscStatus {
    guard(|| {
        let plan = unsafe { borrow(plan, "plan") }?;
        let cfg = unsafe { borrow(cfg, "cfg") }?;
        let out = unsafe { self::out(out, "out") }?;
        let r = verify_plan(&plan.plan, &cfg.run.sampler);
        *out = MscCoverage {
            duplicates: r.duplicates,
            padding_duplicates: r.padding_duplicates,
            missing: r.missing,
            out_of_range: r.out_of_range,
            max_pixel_budget: r.max_pixel_budget,
            budget_violations: r.budget_violations,
            shape_violations: r.shape_violations,
            steps_equal: r.steps_equal,
            clean: r.is_clean(&cfg.run.sampler),
        };
        Ok(())
    })
}

/// Writes epochs `[first_epoch, end_epoch)` as a plan file.
///
/// # Safety
/// `cfg` must be a live config handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn msc_plan_write(
    cfg: *const MscConfig,
    first_epoch: u32,
    end_epoch: u32,
    path: *const c_char,
) -> MscStatus {
    guard(|| {
        let cfg = unsafe { borrow(cfg, "cfg") }?;
        let path = unsafe { c_str(path, "path") }?;
        if first_epoch >= end_epoch || end_epoch > cfg.run.sampler.epochs {
            return fail(
                MscStatus::InvalidArgument,
                format!("epoch range {first_epoch}..{end_epoch} invalid for {} epochs", cfg.run.sampler.epochs),
            );
        }
        let plans = (first_epoch..end_epoch)
            .map(|e| plan_epoch(&cfg.run.sampler, e))
            .collect::<msc_sampler::Result<Vec<_>>>()?;
        io::write_plan(Path::new(path), &cfg.run.sampler, &plans)?;
        Ok(())
    })
}

/// Simulates training cost. `num_seeds == 0` selects the closed-form
/// expected mode; otherwise Monte Carlo over `seeds`.
///
/// # Safety
/// `cfg` must be a live config handle; `seeds` must hold `num_seeds`
/// values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_simulate(
    cfg: *const MscConfig,
    seeds: *const u64,
    num_seeds: usize,
    out: *mut *mut MscCostReport,
) -> MscStatus {
    guard(|| {
        let cfg = unsafe { borrow(cfg, "cfg") }?;
        let out = unsafe { self::out(out, "out") }?;
        let seeds = unsafe { slice(seeds, num_seeds, "seeds") }?;
        let mode = if seeds.is_empty() {
            SimulationMode::Expected
        } else {
            SimulationMode::MonteCarlo { seeds: seeds.to_vec() }
        };
        let report = simulate(&cfg.run.sampler, &cfg.run.profile, &mode)?;
        *out = Box::into_raw(Box::new(MscCostReport { report }));
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle from `msc_simulate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msc_cost_report_free(report: *mut MscCostReport) {
    if !report.is_null() {
        // SAFETY: allocated by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(report) });
    }
}

/// # Safety
/// `report` must be a live report handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_cost_report_summary(report: *const MscCostReport, out: *mut MscCostSummary) -> MscStatus {
    guard(|| {
        let r = &unsafe { borrow(report, "report") }?.report;
        let out = unsafe { self::out(out, "out") }?;
        *out = MscCostSummary {
            total_flops: r.total_flops,
            updates: r.updates,
            peak_activation_units: r.peak_activation_units,
            epochs: r.per_epoch.len() as u32,
        };
        Ok(())
    })
}

/// Candidate-over-baseline ratios.
///
/// # Safety
/// Both reports must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_compare(
    candidate: *const MscCostReport,
    baseline: *const MscCostReport,
    out: *mut MscRelative,
) -> MscStatus {
    guard(|| {
        let c = unsafe { borrow(candidate, "candidate") }?;
        let b = unsafe { borrow(baseline, "baseline") }?;
        let out = unsafe { self::out(out, "out") }?;
        let r = compare(&c.report, &b.report)?;
        *out = MscRelative {
            flops_ratio: r.flops_ratio,
            updates_ratio: r.updates_ratio,
            peak_ratio: r.peak_ratio,
        };
        Ok(())
    })
}

/// `max(1, floor(B*H*W / (ht*wt)))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_batch_size_for(
    batch: u32,
    channels: u32,
    height: u32,
    width: u32,
    target_height: u32,
    target_width: u32,
    out: *mut u32,
) -> MscStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        if target_height == 0 || target_width == 0 {
            return fail(MscStatus::InvalidArgument, "target resolution must be positive");
        }
        let reference = ReferenceBatchShape::new(batch, channels, height, width)?;
        *out = batch_size_for(&reference, Resolution::new(target_height, target_width));
        Ok(())
    })
}

/// Curriculum value `rho(epoch)` with default schedule parameters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_schedule_value(
    kind: MscScheduleKind,
    rho0: f64,
    tau: f64,
    total_epochs: u32,
    epoch: u32,
    out: *mut f64,
) -> MscStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        let sched = CurriculumSchedule::new(kind.into(), rho0, tau, total_epochs)?;
        *out = sched.value(epoch)?;
        Ok(())
    })
}

/// Natural-log entropy of a probability vector.
///
/// # Safety
/// `probs` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_entropy(probs: *const f64, len: usize, out: *mut f64) -> MscStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        *out = metrics::entropy(unsafe { slice(probs, len, "probs") }?)?;
        Ok(())
    })
}

/// Population skewness.
///
/// # Safety
/// `values` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_skewness(values: *const f64, len: usize, out: *mut f64) -> MscStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        *out = metrics::skewness(unsafe { slice(values, len, "values") }?)?;
        Ok(())
    })
}

/// Expected calibration error from per-record confidences and correctness
/// flags (non-zero means correct).
///
/// # Safety
/// `confidences` and `correct` must each hold `len` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn msc_ece(
    confidences: *const f64,
    correct: *const u8,
    len: usize,
    num_bins: u32,
    out: *mut f64,
) -> MscStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        let conf = unsafe { slice(confidences, len, "confidences") }?;
        let ok = unsafe { slice(correct, len, "correct") }?;
        let mut acc = EceAccumulator::new(num_bins as usize)?;
        for (i, (&c, &k)) in conf.iter().zip(ok).enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return fail(MscStatus::InvalidArgument, format!("confidences[{i}] = {c} outside [0, 1]"));
            }
            acc.push_prediction(c, k != 0);
        }
        *out = acc.finish()?.ece;
        Ok(())
    })
}

/// Library version string.
#[no_mangle]
pub extern "C" fn msc_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => c"unknown",
    };
    VERSION.as_ptr()
}
