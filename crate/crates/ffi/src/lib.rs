//! C interface to the anchorlm engine.
//!
//! Every fallible call returns an `AlmStatus`; on failure the message is
//! available from `alm_last_error` on the same thread. Strings returned
//! by the library must be released with `alm_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use anchorlm::cache::{AnchorKVCache, CacheEntry};
use anchorlm::cli::{annotate_prompt, eval_text, load_model, Loaded};
use anchorlm::corpus::TokenFlags;
use anchorlm::eval::perplexity;
use anchorlm::infer::{generate, score_continuation, GenerationConfig};
use anchorlm::mask::{anchor_visible, MaskMode};
use anchorlm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlmStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Input = 3,
    Contract = 4,
    Numeric = 5,
    Config = 6,
    InvalidUtf8 = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct AlmModel {
    inner: Loaded,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> AlmStatus {
    match e {
        Error::Usage(_) => AlmStatus::Usage,
        Error::Input { .. } | Error::EmptyCorpus | Error::Io(_) => AlmStatus::Input,
        Error::Contract(_) => AlmStatus::Contract,
        Error::Numeric(_) | Error::UndefinedMetric(_) => AlmStatus::Numeric,
        Error::Config(_) => AlmStatus::Config,
    }
}

struct Fail(AlmStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn fail(status: AlmStatus, msg: &str) -> Fail {
    set_error(msg);
    Fail(status)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AlmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AlmStatus::Ok
        }
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic");
            AlmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(AlmStatus::NullPointer, &format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AlmStatus::InvalidUtf8, &format!("{name} is not UTF-8")))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(fail(AlmStatus::NullPointer, &format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn model_ref<'a>(m: *const AlmModel) -> Result<&'a Loaded, Fail> {
    non_null(m, "model")?;
    Ok(&(*m).inner)
}

/// Message for the last failed call on this thread, empty after success.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn alm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn alm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint directory, or a training run directory holding one.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn alm_model_load(path: *const c_char, out: *mut *mut AlmModel) -> AlmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = load_model(Path::new(path), None)?;
        *out = Box::into_raw(Box::new(AlmModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `alm_model_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn alm_model_free(model: *mut AlmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window length of the model, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn alm_model_context_len(model: *const AlmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.weights.config.context_len)
}

/// Vocabulary size of the model, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn alm_model_vocab_size(model: *const AlmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.weights.config.vocab_size)
}

/// Greedy continuation of `prompt`. `reduce` non-zero enables cache
/// reduction (anchor-masked models only). On success `*out_text` holds the
/// decoded tokens and, if non-null, `*out_final_live` the live cache size.
///
/// # Safety
/// Pointers must be valid; `prompt` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn alm_generate(
    model: *const AlmModel,
    prompt: *const c_char,
    max_new: usize,
    reduce: i32,
    out_text: *mut *mut c_char,
    out_final_live: *mut usize,
) -> AlmStatus {
    guard(|| {
        non_null(out_text, "out_text")?;
        *out_text = ptr::null_mut();
        let m = model_ref(model)?;
        let prompt = str_arg(prompt, "prompt")?;
        let prefix = annotate_prompt(prompt, &m.vocab, &m.policy, m.mask_mode)?;
        if prefix.is_empty() {
            return Err(fail(AlmStatus::Contract, "prompt has no tokens"));
        }
        let anchor_id = match m.mask_mode {
            MaskMode::Ansan => Some(m.vocab.anchor_id_for(&m.policy)?),
            MaskMode::Causal => None,
        };
        let mut cfg = GenerationConfig::greedy(max_new, m.vocab.eos(), anchor_id);
        cfg.mask_mode = m.mask_mode;
        cfg.reduction_enabled = reduce != 0;
        cfg.validate()?;
        let res = generate(&m.weights, &prefix, &cfg)?;
        let text = CString::new(m.vocab.decode(&res.generated))
            .map_err(|_| fail(AlmStatus::Numeric, "generated text contains NUL"))?;
        *out_text = text.into_raw();
        if !out_final_live.is_null() {
            *out_final_live = res.final_live;
        }
        Ok(())
    })
}

/// Log-probability of `continuation` following `context`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn alm_score(
    model: *const AlmModel,
    context: *const c_char,
    continuation: *const c_char,
    out_logprob: *mut f64,
) -> AlmStatus {
    guard(|| {
        non_null(out_logprob, "out_logprob")?;
        let m = model_ref(model)?;
        let ctx = annotate_prompt(str_arg(context, "context")?, &m.vocab, &m.policy, m.mask_mode)?;
        let cont = m.vocab.encode(str_arg(continuation, "continuation")?);
        *out_logprob = score_continuation(&m.weights, &ctx, &cont, m.mask_mode == MaskMode::Ansan)?;
        Ok(())
    })
}

/// Perplexity of `text` (one document per line) with the model's own mask
/// and annotation, over windows of the full context length.
///
/// # Safety
/// Pointers must be valid; `text` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn alm_perplexity(model: *const AlmModel, text: *const c_char, out_ppl: *mut f64) -> AlmStatus {
    guard(|| {
        non_null(out_ppl, "out_ppl")?;
        let m = model_ref(model)?;
        let seg = eval_text(str_arg(text, "text")?, &m.vocab, &m.policy, m.mask_mode)?;
        let scaffold = match m.mask_mode {
            MaskMode::Ansan if m.policy.uses_anchor_token() => m.vocab.anchor(),
            _ => None,
        };
        *out_ppl = perplexity(&m.weights, &seg, m.mask_mode, m.weights.config.context_len, scaffold)?;
        Ok(())
    })
}

unsafe fn flags_arg(is_anchor: *const u8, seq_index: *const usize, len: usize) -> Result<Vec<TokenFlags>, Fail> {
    if len == 0 {
        return Ok(Vec::new());
    }
    non_null(is_anchor, "is_anchor")?;
    non_null(seq_index, "seq_index")?;
    let a = slice::from_raw_parts(is_anchor, len);
    let s = slice::from_raw_parts(seq_index, len);
    Ok(a.iter()
        .zip(s)
        .map(|(&a, &s)| TokenFlags {
            is_anchor: a != 0,
            seq_index: s,
        })
        .collect())
}

/// Writes the `len * len` row-major anchor mask (1 = visible) to `out`.
///
/// # Safety
/// `is_anchor` and `seq_index` must hold `len` elements, `out` `len * len`.
#[no_mangle]
pub unsafe extern "C" fn alm_anchor_mask(
    is_anchor: *const u8,
    seq_index: *const usize,
    len: usize,
    out: *mut u8,
) -> AlmStatus {
    guard(|| {
        let flags = flags_arg(is_anchor, seq_index, len)?;
        if flags.windows(2).any(|w| w[1].seq_index < w[0].seq_index) {
            return Err(fail(AlmStatus::Contract, "sequence indices must not decrease"));
        }
        if len == 0 {
            return Ok(());
        }
        non_null(out, "out")?;
        let out = slice::from_raw_parts_mut(out, len * len);
        for i in 0..len {
            for j in 0..len {
                out[i * len + j] = u8::from(j <= i && anchor_visible(flags[i], flags[j]));
            }
        }
        Ok(())
    })
}

/// Applies one cache reduction to entries at strictly increasing
/// `positions`. `keep_out[i]` is set to 1 for survivors and `*kept` to
/// their count.
///
/// # Safety
/// `positions`, `is_anchor` and `keep_out` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn alm_reduce(
    positions: *const usize,
    is_anchor: *const u8,
    len: usize,
    protected_upto: usize,
    keep_out: *mut u8,
    kept: *mut usize,
) -> AlmStatus {
    guard(|| {
        non_null(kept, "kept")?;
        *kept = 0;
        if len == 0 {
            return Ok(());
        }
        non_null(positions, "positions")?;
        non_null(is_anchor, "is_anchor")?;
        non_null(keep_out, "keep_out")?;
        let pos = slice::from_raw_parts(positions, len);
        let anchor = slice::from_raw_parts(is_anchor, len);
        let mut cache = AnchorKVCache::with_protected_prefix(protected_upto);
        for (&p, &a) in pos.iter().zip(anchor) {
            cache.append(CacheEntry::bare(p, a != 0, 0))?;
        }
        cache.reduction();
        let live = cache.live_positions();
        let keep = slice::from_raw_parts_mut(keep_out, len);
        for (k, p) in keep.iter_mut().zip(pos) {
            *k = u8::from(live.binary_search(p).is_ok());
        }
        *kept = live.len();
        Ok(())
    })
}
