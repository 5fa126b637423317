//! C ABI over the `neurogpt` crate.
//!
//! Objects cross the boundary as opaque handles created by `*_load` / `*_new`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`NgStatus`]; on failure [`ng_last_error`] describes what went wrong on the
//! calling thread. Panics are caught and reported as `NG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use neurogpt::chunk::{fixed_sequence, ChunkConfig};
use neurogpt::encoder::encode_sequence;
use neurogpt::gpt::causal_reconstruction_loss;
use neurogpt::signal::{eegbin, preprocess, Montage, PreprocessConfig, Recording};
use neurogpt::tensor::Tensor;
use neurogpt::train::Checkpoint;
use neurogpt::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Numerical = 6,
    FingerprintMismatch = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A multichannel recording.
pub struct NgRecording(Recording);

/// A model checkpoint.
pub struct NgCheckpoint(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> NgStatus {
    match e {
        Error::Io { .. } => NgStatus::Io,
        Error::Format { .. } => NgStatus::Format,
        Error::Config(_) => NgStatus::Config,
        Error::Numerical(_) => NgStatus::Numerical,
        Error::FingerprintMismatch { .. } => NgStatus::FingerprintMismatch,
        _ => NgStatus::InvalidArgument,
    }
}

/// Failure inside a call before it reaches the library.
struct Fail(NgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NgStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NgStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NgStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ng_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ng_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a recording from row-major `data` (`n_channels * n_samples`) and
/// `n_channels` channel labels.
///
/// # Safety
/// `labels` must point to `n_channels` NUL-terminated strings and `data` to
/// `n_channels * n_samples` doubles.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_new(
    labels: *const *const c_char,
    n_channels: usize,
    data: *const f64,
    n_samples: usize,
    sample_rate_hz: f64,
    out: *mut *mut NgRecording,
) -> NgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let label_ptrs = slice_arg(labels, n_channels, "labels")?;
        let mut names = Vec::with_capacity(n_channels);
        for &l in label_ptrs {
            if l.is_null() {
                return Err(null("label"));
            }
            names.push(CStr::from_ptr(l).to_string_lossy().into_owned());
        }
        let total = n_channels
            .checked_mul(n_samples)
            .ok_or_else(|| Fail(NgStatus::InvalidArgument, "size overflow".into()))?;
        let flat = slice_arg(data, total, "data")?.to_vec();
        let rec = Recording::from_flat(names, flat, n_samples, sample_rate_hz)?;
        *out = Box::into_raw(Box::new(NgRecording(rec)));
        Ok(())
    })
}

/// Reads an eegbin file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_load(path: *const c_char, out: *mut *mut NgRecording) -> NgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let rec = eegbin::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(NgRecording(rec)));
        Ok(())
    })
}

/// Writes an eegbin file.
///
/// # Safety
/// `rec` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_save(rec: *const NgRecording, path: *const c_char) -> NgStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or_else(|| null("recording"))?;
        eegbin::save(&rec.0, &path_arg(path)?)?;
        Ok(())
    })
}

/// Number of channels, 0 for a null handle.
///
/// # Safety
/// `rec` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_n_channels(rec: *const NgRecording) -> usize {
    rec.as_ref().map_or(0, |r| r.0.n_channels())
}

/// Samples per channel, 0 for a null handle.
///
/// # Safety
/// `rec` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_n_samples(rec: *const NgRecording) -> usize {
    rec.as_ref().map_or(0, |r| r.0.n_samples())
}

/// Sample rate in Hz, 0 for a null handle.
///
/// # Safety
/// `rec` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_sample_rate(rec: *const NgRecording) -> f64 {
    rec.as_ref().map_or(0.0, |r| r.0.sample_rate_hz)
}

/// Copies the row-major samples into `buf`, which must hold
/// `n_channels * n_samples` doubles.
///
/// # Safety
/// `rec` must come from this library and `buf` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_copy_data(rec: *const NgRecording, buf: *mut f64, len: usize) -> NgStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or_else(|| null("recording"))?;
        let data = rec.0.data();
        if len < data.len() {
            return Err(Fail(
                NgStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {}", data.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Runs the default cleaning chain (22-channel montage, 60 Hz notch,
/// 0.5-100 Hz band, 250 Hz, z-scored) and returns a new recording.
///
/// # Safety
/// `rec` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_preprocess(rec: *const NgRecording, out: *mut *mut NgRecording) -> NgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let rec = rec.as_ref().ok_or_else(|| null("recording"))?;
        let (clean, _) = preprocess(&rec.0, &Montage::default_22(), &PreprocessConfig::default())?;
        *out = Box::into_raw(Box::new(NgRecording(clean)));
        Ok(())
    })
}

/// Releases a recording. Null is ignored.
///
/// # Safety
/// `rec` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ng_recording_free(rec: *mut NgRecording) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Reads a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_load(path: *const c_char, out: *mut *mut NgCheckpoint) -> NgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ck = Checkpoint::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(NgCheckpoint(ck)));
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `ck` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_save(ck: *const NgCheckpoint, path: *const c_char) -> NgStatus {
    guard(|| {
        let ck = ck.as_ref().ok_or_else(|| null("checkpoint"))?;
        ck.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Training step at which the checkpoint was written, 0 for null.
///
/// # Safety
/// `ck` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_step(ck: *const NgCheckpoint) -> u64 {
    ck.as_ref().map_or(0, |c| c.0.step)
}

/// Number of parameter tensors, 0 for null.
///
/// # Safety
/// `ck` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_n_params(ck: *const NgCheckpoint) -> usize {
    ck.as_ref().map_or(0, |c| c.0.params.iter().count())
}

/// Copies the 32-byte architecture fingerprint into `out`.
///
/// # Safety
/// `ck` must come from this library and `out` hold 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_fingerprint(ck: *const NgCheckpoint, out: *mut u8) -> NgStatus {
    guard(|| {
        let ck = ck.as_ref().ok_or_else(|| null("checkpoint"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let fp = ck.0.fingerprint();
        ptr::copy_nonoverlapping(fp.as_ptr(), out, fp.len());
        Ok(())
    })
}

/// Token dimension of the checkpoint's encoder, 0 for null.
///
/// # Safety
/// `ck` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_token_dim(ck: *const NgCheckpoint) -> usize {
    ck.as_ref().map_or(0, |c| c.0.arch.encoder.token_dim)
}

/// Chunks per sequence of the checkpoint's architecture, 0 for null.
///
/// # Safety
/// `ck` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_n_chunks(ck: *const NgCheckpoint) -> usize {
    ck.as_ref().map_or(0, |c| c.0.arch.chunk.n_chunks)
}

/// Encodes the leading chunk sequence of `rec` with the checkpoint's
/// encoder. Writes `n_chunks * token_dim` floats to `tokens` (zero rows for
/// padded chunks) and the number of real chunks to `n_real`.
///
/// # Safety
/// Handles must come from this library; `tokens` must hold `len` floats and
/// `n_real` be writable.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_embed(
    ck: *const NgCheckpoint,
    rec: *const NgRecording,
    tokens: *mut f32,
    len: usize,
    n_real: *mut usize,
) -> NgStatus {
    guard(|| {
        let ck = ck.as_ref().ok_or_else(|| null("checkpoint"))?;
        let rec = rec.as_ref().ok_or_else(|| null("recording"))?;
        let n_real = out_arg(n_real, "n_real")?;
        let arch = &ck.0.arch;
        if rec.0.n_channels() != arch.n_channels {
            return Err(Fail(
                NgStatus::InvalidArgument,
                format!("recording has {} channels, model expects {}", rec.0.n_channels(), arch.n_channels),
            ));
        }
        let need = arch.chunk.n_chunks * arch.encoder.token_dim;
        if len < need {
            return Err(Fail(NgStatus::BufferTooSmall, format!("buffer holds {len} values, need {need}")));
        }
        if tokens.is_null() {
            return Err(null("tokens"));
        }
        let seq = fixed_sequence(&rec.0, &arch.chunk)?;
        let toks = encode_sequence(&ck.0.params, &arch.encoder, &seq)?;
        let out = std::slice::from_raw_parts_mut(tokens, need);
        let e = arch.encoder.token_dim;
        for (i, real) in toks.pad_mask.iter().enumerate() {
            let row = &mut out[i * e..(i + 1) * e];
            if *real {
                row.copy_from_slice(toks.tokens.row(i));
            } else {
                row.fill(0.0);
            }
        }
        *n_real = seq.n_real();
        Ok(())
    })
}

/// Releases a checkpoint. Null is ignored.
///
/// # Safety
/// `ck` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ng_checkpoint_free(ck: *mut NgCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// Samples spanned by `n_chunks` chunks of `chunk_len_s` seconds with the
/// given fractional overlap.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ng_chunk_required_span(
    n_chunks: usize,
    chunk_len_s: f64,
    overlap_ratio: f64,
    sample_rate_hz: f64,
    out: *mut usize,
) -> NgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = ChunkConfig {
            n_chunks,
            chunk_len_s,
            overlap_ratio,
            sample_rate_hz,
        };
        cfg.validate()?;
        *out = cfg.required_span();
        Ok(())
    })
}

/// Mean over `k` rows of the squared distance between `pred` and `targets`,
/// both row-major `k x dim`.
///
/// # Safety
/// `pred` and `targets` must hold `k * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ng_causal_reconstruction_loss(
    pred: *const f64,
    targets: *const f64,
    k: usize,
    dim: usize,
    out: *mut f64,
) -> NgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if k == 0 || dim == 0 {
            return Err(Fail(NgStatus::InvalidArgument, "k and dim must be positive".into()));
        }
        let n = k
            .checked_mul(dim)
            .ok_or_else(|| Fail(NgStatus::InvalidArgument, "size overflow".into()))?;
        let p = Tensor::new(&[k, dim], slice_arg(pred, n, "pred")?.to_vec())?;
        let t = Tensor::new(&[k, dim], slice_arg(targets, n, "targets")?.to_vec())?;
        *out = causal_reconstruction_loss(&p, &t)?;
        Ok(())
    })
}
