//! C ABI over the scenecot core library.
//!
//! Conventions:
//! - Every fallible function returns an [`ScStatus`]. On failure the message
//!   is kept in a thread-local slot readable through
//!   [`sc_last_error_message`] until the next failing call on that thread.
//! - Strings passed in are NUL-terminated UTF-8. Strings handed out are owned
//!   by the caller and must be released with [`sc_string_free`].
//! - Handles are opaque pointers released with their matching `_free`
//!   function. Passing NULL to a `_free` function is a no-op.
//! - Panics never cross the boundary; they surface as [`ScStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use scenecot::grpo::checkpoint::Checkpoint;
use scenecot::grpo::{compute_group_advantages, Policy, TokenId, ToyPolicy, ToyTokenizer};
use scenecot::parser::{extract_tagged_sections, parse_structured_vision, TaggedOutput};
use scenecot::reward::{
    final_reward, format_reward, image_reward, understanding_reward, FormatComponents, JudgeScores,
};
use scenecot::vision::{canonicalize, parse_state, validate_state, SchemaOptions};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// An input string was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The input was well-typed but rejected, e.g. a schema violation.
    InvalidInput = 3,
    /// A numeric argument was outside its allowed range.
    OutOfRange = 4,
    /// A caller-provided buffer was too small; the needed size was written.
    BufferTooSmall = 5,
    /// Reading or writing a file failed.
    Io = 6,
    /// The library panicked; this is a bug.
    Panic = 7,
}

/// Reward components of one rollout under the default reward settings.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScRewardBreakdown {
    pub r_label: u8,
    pub r_json: u8,
    pub r_prompt: u8,
    pub r_format: f64,
    pub gate_passed: bool,
    pub r_understanding: f64,
    pub r_image: f64,
    pub r_final: f64,
}

/// Parsed sections of one raw rollout.
pub struct ScTaggedOutput {
    inner: TaggedOutput,
}

/// A toy token policy.
pub struct ScToyPolicy {
    inner: ToyPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    let c = CString::new(message).expect("interior NULs were removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Fail(ScStatus, String);

impl Fail {
    fn new(status: ScStatus, message: impl Into<String>) -> Self {
        Self(status, message.into())
    }
}

/// Runs `body`, converting failures and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ScStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            ScStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(Fail::new(ScStatus::NullPointer, format!("{name} is NULL")));
    }
    // SAFETY: the caller promises a NUL-terminated string that outlives this call.
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|e| Fail::new(ScStatus::InvalidUtf8, format!("{name} is not UTF-8: {e}")))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: a non-NULL out pointer must be valid for writes per the API contract.
    unsafe { ptr.as_mut() }.ok_or_else(|| Fail::new(ScStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn in_slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::new(ScStatus::NullPointer, format!("{name} is NULL")));
    }
    // SAFETY: the caller promises `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Fail::new(ScStatus::NullPointer, format!("{name} is NULL")));
    }
    // SAFETY: the caller promises `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, len) })
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "\\u0000")).expect("interior NULs were escaped").into_raw()
}

/// Message of the last failing call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a pointer returned by this library that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn sc_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: `s` came from `CString::into_raw` in this library.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Library version as a static string. Do not free.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Validates a structured-vision JSON document. Writes whether it is valid
/// to `out_valid` and, if `out_report` is not NULL, the report as JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; out pointers must be NULL or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_validate_state(json: *const c_char, out_valid: *mut bool, out_report: *mut *mut c_char) -> ScStatus {
    guard(|| {
        let text = unsafe { read_str(json, "json") }?;
        let valid = unsafe { out_ref(out_valid, "out_valid") }?;
        let report = validate_state(text);
        *valid = report.valid;
        if let Some(out) = unsafe { out_report.as_mut() } {
            *out = to_c_string(serde_json::to_string(&report).expect("reports serialize"));
        }
        Ok(())
    })
}

/// Canonical JSON of a valid structured-vision document. Invalid input
/// gives [`ScStatus::InvalidInput`] with the violations in the last error.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_canonicalize(json: *const c_char, out: *mut *mut c_char) -> ScStatus {
    guard(|| {
        let text = unsafe { read_str(json, "json") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let (report, state) = parse_state(text, &SchemaOptions::default());
        let state = state.ok_or_else(|| {
            Fail::new(ScStatus::InvalidInput, serde_json::to_string(&report.violations).expect("violations serialize"))
        })?;
        let canonical = canonicalize(&state).map_err(|e| Fail::new(ScStatus::InvalidInput, e.to_string()))?;
        *out = to_c_string(canonical);
        Ok(())
    })
}

/// Splits raw rollout text into its tagged sections. Never fails on
/// content; malformed tags just leave sections absent.
///
/// # Safety
/// `raw` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_tagged_parse(raw: *const c_char, out: *mut *mut ScTaggedOutput) -> ScStatus {
    guard(|| {
        let text = unsafe { read_str(raw, "raw") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = Box::into_raw(Box::new(ScTaggedOutput { inner: extract_tagged_sections(text) }));
        Ok(())
    })
}

/// Releases a tagged-output handle. NULL is ignored.
///
/// # Safety
/// `handle` must be NULL or a live handle from [`sc_tagged_parse`].
#[no_mangle]
pub unsafe extern "C" fn sc_tagged_free(handle: *mut ScTaggedOutput) {
    if !handle.is_null() {
        // SAFETY: the handle came from `Box::into_raw` in `sc_tagged_parse`.
        drop(unsafe { Box::from_raw(handle) });
    }
}

unsafe fn tagged_section(
    handle: *const ScTaggedOutput,
    out: *mut *mut c_char,
    pick: fn(&TaggedOutput) -> Option<&str>,
) -> ScStatus {
    guard(|| {
        // SAFETY: a non-NULL handle is live per the API contract.
        let tagged = unsafe { handle.as_ref() }.ok_or_else(|| Fail::new(ScStatus::NullPointer, "handle is NULL"))?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = pick(&tagged.inner).map_or(ptr::null_mut(), |s| to_c_string(s.to_string()));
        Ok(())
    })
}

/// Trimmed structure-vision section, or NULL in `out` when absent.
///
/// # Safety
/// `handle` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_tagged_structure_vision(handle: *const ScTaggedOutput, out: *mut *mut c_char) -> ScStatus {
    unsafe { tagged_section(handle, out, TaggedOutput::structure_vision) }
}

/// Trimmed final-prompt section, or NULL in `out` when absent.
///
/// # Safety
/// `handle` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_tagged_final_prompt(handle: *const ScTaggedOutput, out: *mut *mut c_char) -> ScStatus {
    unsafe { tagged_section(handle, out, TaggedOutput::final_prompt) }
}

/// Format reward of a parsed rollout. Only the format fields and
/// `gate_passed` of `out` are written.
///
/// # Safety
/// `handle` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_tagged_format_reward(
    handle: *const ScTaggedOutput,
    strict_json_schema: bool,
    out: *mut ScRewardBreakdown,
) -> ScStatus {
    guard(|| {
        // SAFETY: a non-NULL handle is live per the API contract.
        let tagged = unsafe { handle.as_ref() }.ok_or_else(|| Fail::new(ScStatus::NullPointer, "handle is NULL"))?;
        let out = unsafe { out_ref(out, "out") }?;
        let (report, _) = parse_structured_vision(&tagged.inner, &SchemaOptions::default());
        let format = format_reward(&tagged.inner, &report, strict_json_schema);
        write_format(out, &format);
        Ok(())
    })
}

fn write_format(out: &mut ScRewardBreakdown, format: &FormatComponents) {
    out.r_label = format.r_label;
    out.r_json = format.r_json;
    out.r_prompt = format.r_prompt;
    out.r_format = format.r_format;
    out.gate_passed = format.passes_gate();
}

/// Full gated reward from the three format flags, the judge's three 0 to 2
/// scores and the two image scores in [0, 1]. When the gate fails the
/// understanding and image fields are left at zero.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sc_reward(
    label: bool,
    json: bool,
    prompt: bool,
    perception: i64,
    completeness: i64,
    faithfulness: i64,
    hps: f64,
    vlm: f64,
    out: *mut ScRewardBreakdown,
) -> ScStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let format = FormatComponents::from_flags(label, json, prompt);
        let mut result = ScRewardBreakdown::default();
        write_format(&mut result, &format);
        let (understanding, image) = if format.passes_gate() {
            let u = understanding_reward(JudgeScores::clamped(perception, completeness, faithfulness));
            let i = image_reward(hps, vlm).map_err(|e| Fail::new(ScStatus::OutOfRange, e.to_string()))?;
            result.r_understanding = u.r_understanding;
            result.r_image = i.r_image;
            (Some(u), Some(i))
        } else {
            (None, None)
        };
        result.r_final = final_reward(&format, understanding.as_ref(), image.as_ref())
            .map_err(|e| Fail::new(ScStatus::InvalidInput, e.to_string()))?;
        *out = result;
        Ok(())
    })
}

/// Group-relative advantages: (r − mean) / (population std + std_eps).
/// `rewards` and `out` both hold `len` values.
///
/// # Safety
/// `rewards` must hold `len` readable values and `out` `len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn sc_group_advantages(rewards: *const f64, len: usize, std_eps: f64, out: *mut f64) -> ScStatus {
    guard(|| {
        let rewards = unsafe { in_slice(rewards, len, "rewards") }?;
        let out = unsafe { out_slice(out, len, "out") }?;
        let advantages =
            compute_group_advantages(rewards, std_eps).map_err(|e| Fail::new(ScStatus::InvalidInput, e.to_string()))?;
        out.copy_from_slice(&advantages);
        Ok(())
    })
}

/// Creates a toy policy whose parameters are Gaussian noise of std `scale`
/// drawn from `seed`. A `scale` of zero gives the uniform policy.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_toy_policy_new(position_buckets: usize, seed: u64, scale: f64, out: *mut *mut ScToyPolicy) -> ScStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        if position_buckets == 0 {
            return Err(Fail::new(ScStatus::OutOfRange, "position_buckets must be positive"));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Fail::new(ScStatus::OutOfRange, format!("scale must be finite and non-negative, got {scale}")));
        }
        let inner =
            if scale == 0.0 { ToyPolicy::uniform(position_buckets) } else { ToyPolicy::random(position_buckets, seed, scale) };
        *out = Box::into_raw(Box::new(ScToyPolicy { inner }));
        Ok(())
    })
}

/// Loads a toy policy from a JSON checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_toy_policy_load(path: *const c_char, out: *mut *mut ScToyPolicy) -> ScStatus {
    guard(|| {
        let path = unsafe { read_str(path, "path") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let checkpoint = Checkpoint::load(Path::new(path)).map_err(|e| Fail::new(ScStatus::Io, e.to_string()))?;
        let inner = checkpoint.to_policy().map_err(|e| Fail::new(ScStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(Box::new(ScToyPolicy { inner }));
        Ok(())
    })
}

/// Releases a policy handle. NULL is ignored.
///
/// # Safety
/// `handle` must be NULL or a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn sc_toy_policy_free(handle: *mut ScToyPolicy) {
    if !handle.is_null() {
        // SAFETY: the handle came from `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(handle) });
    }
}

unsafe fn policy<'a>(handle: *const ScToyPolicy) -> Result<&'a ToyPolicy, Fail> {
    // SAFETY: a non-NULL handle is live per the API contract.
    unsafe { handle.as_ref() }.map(|p| &p.inner).ok_or_else(|| Fail::new(ScStatus::NullPointer, "policy is NULL"))
}

/// Number of parameters, or 0 for a NULL handle.
///
/// # Safety
/// `handle` must be NULL or a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn sc_toy_policy_param_count(handle: *const ScToyPolicy) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |p| p.inner.param_count())
}

/// Vocabulary size of the toy policy and tokenizer.
#[no_mangle]
pub extern "C" fn sc_toy_vocab_size() -> usize {
    ToyTokenizer::VOCAB_SIZE
}

/// Per-token log-probabilities of `completion` given `prompt`; writes
/// `completion_len` values to `out`.
///
/// # Safety
/// Array pointers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn sc_toy_policy_logprobs(
    handle: *const ScToyPolicy,
    prompt: *const u32,
    prompt_len: usize,
    completion: *const u32,
    completion_len: usize,
    out: *mut f64,
) -> ScStatus {
    guard(|| {
        let policy = unsafe { policy(handle) }?;
        let prompt: &[TokenId] = unsafe { in_slice(prompt, prompt_len, "prompt") }?;
        let completion: &[TokenId] = unsafe { in_slice(completion, completion_len, "completion") }?;
        let out = unsafe { out_slice(out, completion_len, "out") }?;
        let logprobs = policy.logprobs(prompt, completion).map_err(|e| Fail::new(ScStatus::OutOfRange, e.to_string()))?;
        out.copy_from_slice(&logprobs);
        Ok(())
    })
}

/// Samples up to `max_len` tokens. Writes the count to `out_len` and the
/// tokens to `out_tokens`, which must have room for `max_len` entries.
///
/// # Safety
/// Array pointers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn sc_toy_policy_sample(
    handle: *const ScToyPolicy,
    prompt: *const u32,
    prompt_len: usize,
    max_len: usize,
    seed: u64,
    out_tokens: *mut u32,
    out_len: *mut usize,
) -> ScStatus {
    guard(|| {
        let policy = unsafe { policy(handle) }?;
        let prompt: &[TokenId] = unsafe { in_slice(prompt, prompt_len, "prompt") }?;
        let tokens = unsafe { out_slice(out_tokens, max_len, "out_tokens") }?;
        let len = unsafe { out_ref(out_len, "out_len") }?;
        let sample = policy.sample(prompt, max_len, seed).map_err(|e| Fail::new(ScStatus::OutOfRange, e.to_string()))?;
        tokens[..sample.tokens.len()].copy_from_slice(&sample.tokens);
        *len = sample.tokens.len();
        Ok(())
    })
}

/// Encodes text with the toy tokenizer. `capacity` is the room in
/// `out_tokens`; the needed count always goes to `out_len`, and
/// [`ScStatus::BufferTooSmall`] is returned when it exceeds `capacity`.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out_tokens` must hold
/// `capacity` writable entries.
#[no_mangle]
pub unsafe extern "C" fn sc_toy_encode(text: *const c_char, out_tokens: *mut u32, capacity: usize, out_len: *mut usize) -> ScStatus {
    guard(|| {
        let text = unsafe { read_str(text, "text") }?;
        let len = unsafe { out_ref(out_len, "out_len") }?;
        let tokens = ToyTokenizer.encode(text).map_err(|e| Fail::new(ScStatus::InvalidInput, e.to_string()))?;
        *len = tokens.len();
        if tokens.len() > capacity {
            return Err(Fail::new(ScStatus::BufferTooSmall, format!("{} tokens do not fit in {capacity}", tokens.len())));
        }
        let out = unsafe { out_slice(out_tokens, tokens.len(), "out_tokens") }?;
        out.copy_from_slice(&tokens);
        Ok(())
    })
}
