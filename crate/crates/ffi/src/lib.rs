//! C interface: opaque handles for an environment stream and an experiment
//! lab, status codes, and a thread-local last-error message.
//!
//! Every function returns a [`TsStatus`]; outputs go through pointers. A
//! failed call leaves its outputs untouched and sets the message read by
//! [`ts_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use touchstream::env::{iou, ActionPoint, BBox, InstancePool, Screen, Split, TaskSpec, TouchStream, Variant};
use touchstream::harness::{auc, pair_for, run_switch, run_task, ExperimentConfig, Lab, LearningCurve, SwitchOptions};
use touchstream::voting::VoteMode;
use touchstream::zoo::ArchitectureId;
use touchstream::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Input = 4,
    Training = 5,
    Environment = 6,
    Io = 7,
    Serialization = 8,
    Panic = 9,
}

/// A TouchStream task stream over its own instance pool.
pub struct TsEnv {
    env: TouchStream,
}

/// Encoder, instance pool and experiment config shared by runs.
pub struct TsLab {
    lab: Lab,
}

/// Outcome of one switch run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TsSwitchResult {
    pub rgain: f64,
    pub tgain: f64,
    pub base_reuse: f64,
    pub base_final: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into_bytes());
}

fn status_of(e: &Error) -> TsStatus {
    match e {
        Error::Config(_) => TsStatus::Config,
        Error::Input(_) => TsStatus::Input,
        Error::Training { .. } => TsStatus::Training,
        Error::Environment(_) | Error::StreamEnd(_) => TsStatus::Environment,
        Error::Io { .. } => TsStatus::Io,
        Error::Serde(_) | Error::Csv(_) => TsStatus::Serialization,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lab(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lab(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            TsStatus::NullPointer
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            TsStatus::InvalidArgument
        }
        Ok(Err(Fail::Lab(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let m = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {m}"));
            TsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length without the terminator; 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ts_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a task stream on a square screen of `side` pixels. `variant` is
/// the numeric task variant and `classes` the class ids it draws from.
///
/// # Safety
/// `classes` must point to `n_classes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_env_new(
    side: u32,
    variant: u8,
    classes: *const usize,
    n_classes: usize,
    seed: u64,
    out: *mut *mut TsEnv,
) -> TsStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        if classes.is_null() && n_classes > 0 {
            return Err(Fail::Null("classes"));
        }
        let classes = if n_classes == 0 {
            &[][..]
        } else {
            unsafe { std::slice::from_raw_parts(classes, n_classes) }
        };
        let spec = TaskSpec::new(Variant::from_id(variant)?, classes);
        let pool = Arc::new(InstancePool::generate(Screen::square(side), 4, 2, seed)?);
        let env = TouchStream::new(&spec, pool, Split::Train, seed)?;
        *out = Box::into_raw(Box::new(TsEnv { env }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`ts_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_env_free(env: *mut TsEnv) {
    if !env.is_null() {
        drop(unsafe { Box::from_raw(env) });
    }
}

/// Writes the screen size and copies the current RGB frame (row-major,
/// `width * height * 3` bytes) into `pixels` when it is non-null.
///
/// # Safety
/// `pixels` must be null or hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ts_env_frame(
    env: *const TsEnv,
    width: *mut u32,
    height: *mut u32,
    pixels: *mut u8,
    len: usize,
) -> TsStatus {
    guard(|| {
        let env = unsafe { deref(env, "env") }?;
        let screen = env.env.screen();
        let frame = env.env.frame();
        let bytes = frame.image.pixels();
        if !pixels.is_null() {
            if len < bytes.len() {
                return Err(Fail::Arg(format!("frame needs {} bytes, buffer has {len}", bytes.len())));
            }
            unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr(), pixels, bytes.len()) };
        }
        if let Some(w) = unsafe { width.as_mut() } {
            *w = screen.width;
        }
        if let Some(h) = unsafe { height.as_mut() } {
            *h = screen.height;
        }
        Ok(())
    })
}

/// Touches pixel (`x`, `y`) and writes the reward.
///
/// # Safety
/// `env` and `reward` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ts_env_step(env: *mut TsEnv, x: u32, y: u32, reward: *mut f64) -> TsStatus {
    guard(|| {
        let env = unsafe { deref_mut(env, "env") }?;
        let reward = unsafe { deref_mut(reward, "reward") }?;
        *reward = env.env.step(ActionPoint::new(x, y))?.reward;
        Ok(())
    })
}

/// Intersection over union of two boxes given as `[x0, y0, x1, y1]`.
///
/// # Safety
/// `a` and `b` must point to four values each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_iou(a: *const f64, b: *const f64, out: *mut f64) -> TsStatus {
    guard(|| {
        let a = unsafe { deref(a.cast::<[f64; 4]>(), "a") }?;
        let b = unsafe { deref(b.cast::<[f64; 4]>(), "b") }?;
        let out = unsafe { deref_mut(out, "out") }?;
        *out = iou(&BBox::new(a[0], a[1], a[2], a[3]), &BBox::new(b[0], b[1], b[2], b[3]));
        Ok(())
    })
}

/// Trapezoid area under the curve through (`steps[i]`, `values[i]`).
///
/// # Safety
/// `steps` and `values` must point to `n` values each.
#[no_mangle]
pub unsafe extern "C" fn ts_auc(steps: *const u64, values: *const f64, n: usize, out: *mut f64) -> TsStatus {
    guard(|| {
        if steps.is_null() || values.is_null() {
            return Err(Fail::Null("steps/values"));
        }
        let out = unsafe { deref_mut(out, "out") }?;
        let (s, v) = unsafe { (std::slice::from_raw_parts(steps, n), std::slice::from_raw_parts(values, n)) };
        let curve = LearningCurve::new(s.iter().copied().zip(v.iter().copied()).collect())?;
        *out = auc(&curve)?;
        Ok(())
    })
}

/// Builds a lab from a JSON experiment config, or the built-in desk config
/// when `config_json` is null. Trains the encoder unless the config names
/// a checkpoint.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_lab_new(config_json: *const c_char, out: *mut *mut TsLab) -> TsStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        let config = if config_json.is_null() {
            ExperimentConfig::desk()
        } else {
            serde_json::from_str(unsafe { text(config_json, "config_json") }?).map_err(Error::from)?
        };
        *out = Box::into_raw(Box::new(TsLab { lab: Lab::new(config)? }));
        Ok(())
    })
}

/// # Safety
/// `lab` must come from [`ts_lab_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_lab_free(lab: *mut TsLab) {
    if !lab.is_null() {
        drop(unsafe { Box::from_raw(lab) });
    }
}

/// Trains architecture `arch` (its string id) on the config's task number
/// `task`; `steps` of 0 keeps the configured budget. Writes the AUC and
/// final smoothed reward.
///
/// # Safety
/// Pointers must be valid; `arch` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ts_lab_run_task(
    lab: *mut TsLab,
    arch: *const c_char,
    task: usize,
    seed: u64,
    steps: u64,
    auc_out: *mut f64,
    final_out: *mut f64,
) -> TsStatus {
    guard(|| {
        let lab = unsafe { deref_mut(lab, "lab") }?;
        let arch: ArchitectureId = unsafe { text(arch, "arch") }?.parse()?;
        let auc_out = unsafe { deref_mut(auc_out, "auc_out") }?;
        let final_out = unsafe { deref_mut(final_out, "final_out") }?;
        let mut entry = lab
            .lab
            .config
            .tasks
            .get(task)
            .cloned()
            .ok_or_else(|| Fail::Arg(format!("task index {task} out of range")))?;
        if steps > 0 {
            entry.steps = steps;
            entry.horizon = entry.horizon.min(steps);
        }
        let c = run_task(&mut lab.lab, arch, &entry, seed, None)?;
        *auc_out = c.auc;
        *final_out = c.final_reward;
        Ok(())
    })
}

/// Runs switch `id` (0 re-cues the same task) with layer (`unit_voting`
/// false) or unit voting; `steps` of 0 keeps the configured budget.
///
/// # Safety
/// `lab` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ts_lab_run_switch(
    lab: *mut TsLab,
    id: u8,
    unit_voting: bool,
    transforms: bool,
    seed: u64,
    steps: u64,
    out: *mut TsSwitchResult,
) -> TsStatus {
    guard(|| {
        let lab = unsafe { deref_mut(lab, "lab") }?;
        let out = unsafe { deref_mut(out, "out") }?;
        let opts = SwitchOptions {
            mode: if unit_voting { VoteMode::Unit } else { VoteMode::Layer },
            transforms,
            steps: (steps > 0).then_some(steps),
        };
        let r = run_switch(&mut lab.lab, &pair_for(id)?, opts, seed, None)?;
        *out = TsSwitchResult {
            rgain: r.rgain,
            tgain: r.tgain,
            base_reuse: r.base_reuse,
            base_final: r.base_final,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_error_truncates_and_terminates() {
        set_error("abcdef".into());
        let mut buf = [1 as c_char; 4];
        let n = unsafe { ts_last_error(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(n, 6);
        assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "abc");
        assert_eq!(unsafe { ts_last_error(std::ptr::null_mut(), 0) }, 6);
    }

    #[test]
    fn panics_are_caught() {
        assert_eq!(guard(|| panic!("boom")), TsStatus::Panic);
        let mut buf = [0 as c_char; 32];
        unsafe { ts_last_error(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "panic: boom");
    }
}
