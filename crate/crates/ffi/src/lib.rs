//! C ABI over the `jackup` crate.
//!
//! Every fallible function returns a [`JackupStatus`]. On failure the
//! message is kept per thread and read with [`jackup_last_error`].
//! Strings handed out by this library are freed with
//! [`jackup_string_free`]; decoders with [`jackup_decoder_free`] or
//! [`jackup_decoder_finish`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use jackup::geo::{haversine, GeoPoint};
use jackup::nmea::{Decoder, DecoderConfig, NmeaError};
use jackup::pipeline::{run_analyze, FarmConfig, Overrides};
use jackup::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JackupStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Sentence framing is broken (missing `*`, bad field count, ...).
    Framing = 3,
    Checksum = 4,
    /// Well-framed sentence whose payload could not be decoded.
    Decode = 5,
    /// Invalid configuration, infeasible clustering or an inconsistent time budget.
    Config = 6,
    Io = 7,
    /// Input was readable but unusable (missing columns, too few fixes, ...).
    Data = 8,
    Panic = 9,
}

/// One decoded position fix. Unavailable values are NaN (`sog`, `cog`)
/// or -1 (`nav_status`).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JackupPosition {
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: i64,
    pub mmsi: u32,
    pub lat: f64,
    pub lon: f64,
    pub sog: f64,
    pub cog: f64,
    pub nav_status: i16,
}

/// Opaque streaming AIVDM decoder.
pub struct JackupDecoder {
    inner: Decoder,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn nmea_status(e: &NmeaError) -> JackupStatus {
    match e {
        NmeaError::Framing(_) => JackupStatus::Framing,
        NmeaError::Checksum { .. } => JackupStatus::Checksum,
        _ => JackupStatus::Decode,
    }
}

fn error_status(e: &Error) -> JackupStatus {
    match e {
        Error::Nmea(n) => nmea_status(n),
        Error::Io { .. } => JackupStatus::Io,
        e if e.is_config() => JackupStatus::Config,
        _ => JackupStatus::Data,
    }
}

/// Runs `f`, recording any error or panic for `jackup_last_error`.
fn guarded(f: impl FnOnce() -> Result<(), (JackupStatus, String)>) -> JackupStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JackupStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            JackupStatus::Panic
        }
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, (JackupStatus, String)> {
    if s.is_null() {
        return Err((JackupStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        (
            JackupStatus::InvalidUtf8,
            format!("{name} is not valid UTF-8"),
        )
    })
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn jackup_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn jackup_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Great-circle distance in metres between two (lat, lon) points in degrees.
#[no_mangle]
pub extern "C" fn jackup_haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    haversine(
        GeoPoint {
            lat: lat1,
            lon: lon1,
        },
        GeoPoint {
            lat: lat2,
            lon: lon2,
        },
    )
}

/// New decoder. With `strict`, framing and checksum failures are returned
/// from `jackup_decoder_push` instead of being counted and skipped.
#[no_mangle]
pub extern "C" fn jackup_decoder_new(strict: bool) -> *mut JackupDecoder {
    let config = DecoderConfig {
        strict,
        ..DecoderConfig::default()
    };
    Box::into_raw(Box::new(JackupDecoder {
        inner: Decoder::new(config),
    }))
}

/// Frees a decoder without reading its counters. Null is ignored.
///
/// # Safety
/// `decoder` must be null or a pointer from `jackup_decoder_new` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn jackup_decoder_free(decoder: *mut JackupDecoder) {
    if !decoder.is_null() {
        drop(Box::from_raw(decoder));
    }
}

/// Feeds one line. When the line completes a position report, `*out` is
/// filled and `*produced` set to true; otherwise `*produced` is false.
///
/// # Safety
/// `decoder` must come from `jackup_decoder_new`; `line` must be a
/// NUL-terminated string; `out` and `produced` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jackup_decoder_push(
    decoder: *mut JackupDecoder,
    line: *const c_char,
    out: *mut JackupPosition,
    produced: *mut bool,
) -> JackupStatus {
    guarded(|| {
        if decoder.is_null() || out.is_null() || produced.is_null() {
            return Err((JackupStatus::NullArgument, "null argument".into()));
        }
        *produced = false;
        let line = str_arg(line, "line")?;
        let dec = &mut *decoder;
        match dec.inner.push_line(line) {
            Ok(Some(r)) => {
                *out = JackupPosition {
                    timestamp_ms: r.timestamp.timestamp_millis(),
                    mmsi: r.mmsi.0,
                    lat: r.lat,
                    lon: r.lon,
                    sog: r.sog.unwrap_or(f64::NAN),
                    cog: r.cog.unwrap_or(f64::NAN),
                    nav_status: r.nav_status.map_or(-1, i16::from),
                };
                *produced = true;
                Ok(())
            }
            Ok(None) => Ok(()),
            Err(e) => Err((nmea_status(&e), e.to_string())),
        }
    })
}

/// Counters so far as a JSON object, written to `*json`. Partial
/// multipart messages are not counted until `jackup_decoder_finish`.
/// Free the string with `jackup_string_free`.
///
/// # Safety
/// `decoder` must come from `jackup_decoder_new`; `json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jackup_decoder_stats_json(
    decoder: *const JackupDecoder,
    json: *mut *mut c_char,
) -> JackupStatus {
    guarded(|| {
        if decoder.is_null() || json.is_null() {
            return Err((JackupStatus::NullArgument, "null argument".into()));
        }
        *json = ptr::null_mut();
        let text = serde_json::to_string(&(*decoder).inner.stats())
            .map_err(|e| (JackupStatus::Data, e.to_string()))?;
        *json = into_c_string(text);
        Ok(())
    })
}

/// Frees the decoder and writes its final counters to `*json`, counting
/// multipart messages still waiting for fragments as incomplete. The
/// handle is invalid afterwards, even on failure.
///
/// # Safety
/// `decoder` must come from `jackup_decoder_new` and not be used again;
/// `json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jackup_decoder_finish(
    decoder: *mut JackupDecoder,
    json: *mut *mut c_char,
) -> JackupStatus {
    guarded(|| {
        if decoder.is_null() || json.is_null() {
            if !decoder.is_null() {
                drop(Box::from_raw(decoder));
            }
            return Err((JackupStatus::NullArgument, "null argument".into()));
        }
        *json = ptr::null_mut();
        let stats = Box::from_raw(decoder).inner.finish();
        let text =
            serde_json::to_string(&stats).map_err(|e| (JackupStatus::Data, e.to_string()))?;
        *json = into_c_string(text);
        Ok(())
    })
}

/// Runs the full analysis for the farm config at `config_path` and writes
/// the report bundle. `out_dir` may be null to use the directory from the
/// config. The report JSON is written to `*report_json`; free it with
/// `jackup_string_free`.
///
/// # Safety
/// `config_path` must be a NUL-terminated string, `out_dir` null or one,
/// and `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn jackup_analyze(
    config_path: *const c_char,
    out_dir: *const c_char,
    report_json: *mut *mut c_char,
) -> JackupStatus {
    guarded(|| {
        if report_json.is_null() {
            return Err((JackupStatus::NullArgument, "report_json is null".into()));
        }
        *report_json = ptr::null_mut();
        let config_path = str_arg(config_path, "config_path")?;
        let out_dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(out_dir, "out_dir")?))
        };
        let fail = |e: Error| (error_status(&e), e.to_string());
        let mut cfg = FarmConfig::load(Path::new(config_path)).map_err(fail)?;
        cfg.apply(&Overrides {
            out_dir,
            ..Overrides::default()
        });
        let analysis = run_analyze(&cfg).map_err(fail)?;
        let text = serde_json::to_string(&analysis.report)
            .map_err(|e| (JackupStatus::Data, e.to_string()))?;
        *report_json = into_c_string(text);
        Ok(())
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn jackup_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
