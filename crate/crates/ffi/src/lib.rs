//! C ABI over `quantctl`.
//!
//! Every entry point returns a [`QcStatus`]; on failure the message is kept
//! per thread and read with [`qc_last_error`]. Handles are opaque and owned
//! by the caller, who releases them with the matching `*_free`. Panics never
//! cross the boundary; they come back as `QC_PANIC`.

use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::ptr;
use std::slice;

use quantctl::codec::{ClosedLoop, CodecError, Decoder, Encoder, Scheme};
use quantctl::config::{ConfigError, Experiment, ExperimentConfig};
use quantctl::model::validate_scheme;
use quantctl::sim::{SimError, StopReason, TrialConfig, run_trial};
use quantctl::{ChannelMessage, TrialRng, trial_rng};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    SyncLost = 5,
    Runtime = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Loaded experiment: plant, scheme and run settings.
pub struct QcExperiment {
    inner: Experiment,
}

/// Closed loop with its own generator.
pub struct QcClosedLoop {
    inner: ClosedLoop,
    rng: TrialRng,
}

pub struct QcEncoder {
    inner: Encoder,
}

pub struct QcDecoder {
    inner: Decoder,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QcTrialResult {
    pub avg_cost: f64,
    pub optimum: f64,
    pub gap: f64,
    pub std_error: f64,
    pub steps: u64,
    /// 1 if the stopping rule fired, 0 if the step cap was hit.
    pub stopped_by_rule: u8,
    pub overflow_fraction: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(QcStatus, String);

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(QcStatus::Parse, e.to_string())
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        let status = match e {
            CodecError::SyncLost { .. } => QcStatus::SyncLost,
            CodecError::Protocol(_) | CodecError::WireFormat | CodecError::Dimension { .. } => QcStatus::InvalidArgument,
            _ => QcStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::Validation(_) => QcStatus::Validation,
            SimError::Config(_) => QcStatus::InvalidArgument,
            _ => QcStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(QcStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            QcStatus::Ok
        }
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
            set_error(format!("panic: {msg}"));
            QcStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| Failure(QcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn mutable<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| Failure(QcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(Failure(QcStatus::NullPointer, format!("{what} is null"))) };
    }
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure(QcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(QcStatus::NullPointer, format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn scheme_for(exp: &Experiment, fixed_bins: u32) -> Result<Scheme, Failure> {
    let params = exp.params.with_fixed_bins(fixed_bins);
    let report = validate_scheme(&params, &exp.model);
    if !report.passed() {
        return Err(Failure(QcStatus::Validation, report.to_string()));
    }
    Ok(Scheme::new(params, exp.model.dim())?)
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes. Returns the full message length without the NUL.
///
/// # Safety
///
/// `buf` must be null or point to `len` writable bytes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Bytes in one channel message for a state of dimension `dim`.
#[unsafe(no_mangle)]
pub extern "C" fn qc_wire_len(dim: usize) -> usize {
    ChannelMessage::wire_len(dim)
}

/// Parses a TOML experiment configuration.
///
/// # Safety
///
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_experiment_from_toml(toml: *const c_char, out: *mut *mut QcExperiment) -> QcStatus {
    guard(|| {
        let out = unsafe { mutable(out, "out") }?;
        *out = ptr::null_mut();
        let exp = ExperimentConfig::parse(unsafe { text(toml, "toml") }?)?.build()?;
        *out = Box::into_raw(Box::new(QcExperiment { inner: exp }));
        Ok(())
    })
}

/// Loads a shipped preset: `"reproduce-paper"` or `"smoke"`.
///
/// # Safety
///
/// `name` must be a NUL-terminated string; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_experiment_preset(name: *const c_char, out: *mut *mut QcExperiment) -> QcStatus {
    guard(|| {
        let out = unsafe { mutable(out, "out") }?;
        *out = ptr::null_mut();
        let exp = ExperimentConfig::preset(unsafe { text(name, "name") }?)?.build()?;
        *out = Box::into_raw(Box::new(QcExperiment { inner: exp }));
        Ok(())
    })
}

/// # Safety
///
/// `exp` must be null or a handle from this library not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_experiment_free(exp: *mut QcExperiment) {
    if !exp.is_null() {
        drop(unsafe { Box::from_raw(exp) });
    }
}

/// State dimension of the plant.
///
/// # Safety
///
/// `exp` must be a live handle and `dim` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_experiment_dim(exp: *const QcExperiment, dim: *mut usize) -> QcStatus {
    guard(|| {
        *unsafe { mutable(dim, "dim") }? = unsafe { reference(exp, "exp") }?.inner.model.dim();
        Ok(())
    })
}

/// Checks every scheme condition for `fixed_bins`. Writes 1 to `passed` if
/// all hold; the report is left in the last-error slot either way.
///
/// # Safety
///
/// `exp` must be a live handle and `passed` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_experiment_validate(exp: *const QcExperiment, fixed_bins: u32, passed: *mut u8) -> QcStatus {
    let mut report = String::new();
    let status = guard(|| {
        let exp = &unsafe { reference(exp, "exp") }?.inner;
        let passed = unsafe { mutable(passed, "passed") }?;
        if fixed_bins < 2 || !fixed_bins.is_multiple_of(2) {
            return Err(invalid(format!("N = {fixed_bins} must be even and at least 2")));
        }
        let r = validate_scheme(&exp.params.with_fixed_bins(fixed_bins), &exp.model);
        *passed = u8::from(r.passed());
        report = r.to_string();
        Ok(())
    });
    if status == QcStatus::Ok {
        set_error(report);
    }
    status
}

/// Runs one trial of the experiment at `fixed_bins` with its stopping rule.
///
/// # Safety
///
/// `exp` must be a live handle and `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_run_trial(
    exp: *const QcExperiment,
    fixed_bins: u32,
    seed: u64,
    stream: u64,
    out: *mut QcTrialResult,
) -> QcStatus {
    guard(|| {
        let exp = &unsafe { reference(exp, "exp") }?.inner;
        let out = unsafe { mutable(out, "out") }?;
        let r = run_trial(&TrialConfig {
            model: exp.model.clone(),
            params: exp.params.with_fixed_bins(fixed_bins),
            seed,
            stream,
            stop: exp.stop,
            burn_in: exp.burn_in,
        })?;
        *out = QcTrialResult {
            avg_cost: r.avg_cost,
            optimum: r.optimum,
            gap: r.gap,
            std_error: r.stderr,
            steps: r.steps,
            stopped_by_rule: u8::from(r.stopped_by == StopReason::Rule),
            overflow_fraction: r.overflow_fraction,
        };
        Ok(())
    })
}

/// Creates a closed loop from the experiment's initial condition.
///
/// # Safety
///
/// `exp` must be a live handle and `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_loop_new(
    exp: *const QcExperiment,
    fixed_bins: u32,
    seed: u64,
    stream: u64,
    out: *mut *mut QcClosedLoop,
) -> QcStatus {
    guard(|| {
        let out = unsafe { mutable(out, "out") }?;
        *out = ptr::null_mut();
        let exp = &unsafe { reference(exp, "exp") }?.inner;
        let scheme = scheme_for(exp, fixed_bins)?;
        let mut rng = trial_rng(seed, stream);
        let inner = ClosedLoop::from_init(scheme, &exp.model, &mut rng)?;
        *out = Box::into_raw(Box::new(QcClosedLoop { inner, rng }));
        Ok(())
    })
}

/// # Safety
///
/// `lp` must be null or a handle from this library not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_loop_free(lp: *mut QcClosedLoop) {
    if !lp.is_null() {
        drop(unsafe { Box::from_raw(lp) });
    }
}

/// Enables the per-step check of the pipeline against the controlled
/// dynamics (off by default).
///
/// # Safety
///
/// `lp` must be a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_loop_set_verify(lp: *mut QcClosedLoop, on: u8) -> QcStatus {
    guard(|| {
        unsafe { mutable(lp, "loop") }?.inner.set_verify(on != 0);
        Ok(())
    })
}

/// Advances one step with sampled noise. `cost` receives `xᵀQx` of the
/// state before the step; it may be null.
///
/// # Safety
///
/// `lp` must be a live handle; `cost` null or writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_loop_step(lp: *mut QcClosedLoop, cost: *mut f64) -> QcStatus {
    guard(|| {
        let lp = unsafe { mutable(lp, "loop") }?;
        let o = lp.inner.step(&mut lp.rng)?;
        if let Some(c) = unsafe { cost.as_mut() } {
            *c = o.cost;
        }
        Ok(())
    })
}

/// Advances one step with caller-supplied noise `w[0..len]`.
///
/// # Safety
///
/// `lp` must be a live handle, `w` readable for `len` values and `cost`
/// null or writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_loop_step_with_noise(lp: *mut QcClosedLoop, w: *const f64, len: usize, cost: *mut f64) -> QcStatus {
    guard(|| {
        let lp = unsafe { mutable(lp, "loop") }?;
        let w = unsafe { input(w, len, "w") }?;
        if w.len() != lp.inner.scheme().dim() {
            return Err(invalid(format!("noise has {} entries, expected {}", w.len(), lp.inner.scheme().dim())));
        }
        let o = lp.inner.step_with_noise(w)?;
        if let Some(c) = unsafe { cost.as_mut() } {
            *c = o.cost;
        }
        Ok(())
    })
}

/// Copies the current state into `x[0..len]`; `len` must equal the dimension.
///
/// # Safety
///
/// `lp` must be a live handle and `x` writable for `len` values.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_loop_state(lp: *const QcClosedLoop, x: *mut f64, len: usize) -> QcStatus {
    guard(|| {
        let lp = unsafe { reference(lp, "loop") }?;
        let state = lp.inner.state();
        if len < state.len() {
            return Err(Failure(QcStatus::BufferTooSmall, format!("need {} values, got {len}", state.len())));
        }
        unsafe { output(x, len, "x") }?[..state.len()].copy_from_slice(state);
        Ok(())
    })
}

/// Current adaptive bin size and its exponent; either pointer may be null.
///
/// # Safety
///
/// `lp` must be a live handle; outputs null or writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_loop_bin_size(lp: *const QcClosedLoop, delta: *mut f64, exponent: *mut i32) -> QcStatus {
    guard(|| {
        let lp = unsafe { reference(lp, "loop") }?;
        let state = lp.inner.encoder().state();
        if let Some(d) = unsafe { delta.as_mut() } {
            *d = state.bin_size(lp.inner.scheme().params());
        }
        if let Some(e) = unsafe { exponent.as_mut() } {
            *e = state.delta_exp;
        }
        Ok(())
    })
}

/// Steps taken so far.
///
/// # Safety
///
/// `lp` must be a live handle and `t` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_loop_time(lp: *const QcClosedLoop, t: *mut u64) -> QcStatus {
    guard(|| {
        *unsafe { mutable(t, "t") }? = unsafe { reference(lp, "loop") }?.inner.t();
        Ok(())
    })
}

/// Encoder at the scheme's initial bin size.
///
/// # Safety
///
/// `exp` must be a live handle and `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_encoder_new(exp: *const QcExperiment, fixed_bins: u32, out: *mut *mut QcEncoder) -> QcStatus {
    guard(|| {
        let out = unsafe { mutable(out, "out") }?;
        *out = ptr::null_mut();
        let scheme = scheme_for(&unsafe { reference(exp, "exp") }?.inner, fixed_bins)?;
        *out = Box::into_raw(Box::new(QcEncoder {
            inner: Encoder::new(scheme),
        }));
        Ok(())
    })
}

/// # Safety
///
/// `enc` must be null or a handle from this library not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_encoder_free(enc: *mut QcEncoder) {
    if !enc.is_null() {
        drop(unsafe { Box::from_raw(enc) });
    }
}

/// Encodes `x[0..len]` and writes the wire bytes (`qc_wire_len(len)` of
/// them) to `buf`.
///
/// # Safety
///
/// `enc` must be a live handle, `x` readable for `len` values and `buf`
/// writable for `buf_len` bytes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_encoder_encode(
    enc: *mut QcEncoder,
    x: *const f64,
    len: usize,
    buf: *mut u8,
    buf_len: usize,
) -> QcStatus {
    guard(|| {
        let enc = unsafe { mutable(enc, "encoder") }?;
        let x = unsafe { input(x, len, "x") }?;
        let need = ChannelMessage::wire_len(len);
        if buf_len < need {
            return Err(Failure(QcStatus::BufferTooSmall, format!("need {need} bytes, got {buf_len}")));
        }
        let bytes = enc.inner.encode(x)?.to_bytes();
        unsafe { output(buf, buf_len, "buf") }?[..need].copy_from_slice(&bytes);
        Ok(())
    })
}

/// # Safety
///
/// `enc` must be a live handle and `exponent` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_encoder_exponent(enc: *const QcEncoder, exponent: *mut i32) -> QcStatus {
    guard(|| {
        *unsafe { mutable(exponent, "exponent") }? = unsafe { reference(enc, "encoder") }?.inner.state().delta_exp;
        Ok(())
    })
}

/// Decoder/controller at the scheme's initial bin size.
///
/// # Safety
///
/// `exp` must be a live handle and `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_decoder_new(exp: *const QcExperiment, fixed_bins: u32, out: *mut *mut QcDecoder) -> QcStatus {
    guard(|| {
        let out = unsafe { mutable(out, "out") }?;
        *out = ptr::null_mut();
        let exp = &unsafe { reference(exp, "exp") }?.inner;
        let scheme = scheme_for(exp, fixed_bins)?;
        *out = Box::into_raw(Box::new(QcDecoder {
            inner: Decoder::new(scheme, &exp.model)?,
        }));
        Ok(())
    })
}

/// # Safety
///
/// `dec` must be null or a handle from this library not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_decoder_free(dec: *mut QcDecoder) {
    if !dec.is_null() {
        drop(unsafe { Box::from_raw(dec) });
    }
}

/// Decodes one wire message and writes the control `u` to `u[0..len]`.
/// On error the decoder state is unchanged.
///
/// # Safety
///
/// `dec` must be a live handle, `buf` readable for `buf_len` bytes and `u`
/// writable for `len` values.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_decoder_decode(
    dec: *mut QcDecoder,
    buf: *const u8,
    buf_len: usize,
    u: *mut f64,
    len: usize,
) -> QcStatus {
    guard(|| {
        let dec = unsafe { mutable(dec, "decoder") }?;
        let bytes = unsafe { input(buf, buf_len, "buf") }?;
        let dim = dec.inner.estimate().len();
        if len < dim {
            return Err(Failure(QcStatus::BufferTooSmall, format!("need {dim} values, got {len}")));
        }
        let msg = ChannelMessage::from_bytes(bytes, dim).map_err(|e| invalid(e.to_string()))?;
        let control = dec.inner.decode(&msg)?;
        unsafe { output(u, len, "u") }?[..dim].copy_from_slice(control);
        Ok(())
    })
}

/// # Safety
///
/// `dec` must be a live handle and `exponent` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qc_decoder_exponent(dec: *const QcDecoder, exponent: *mut i32) -> QcStatus {
    guard(|| {
        *unsafe { mutable(exponent, "exponent") }? = unsafe { reference(dec, "decoder") }?.inner.state().delta_exp;
        Ok(())
    })
}
