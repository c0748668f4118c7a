//! C ABI over the `qroute` router.
//!
//! Handles are opaque: `qr_router_load` allocates one, `qr_router_free`
//! releases it. Every fallible call returns a [`QrStatus`]; on anything other
//! than `QR_STATUS_OK` a message is available from `qr_last_error` on the
//! same thread until the next failing call. A loaded router is read-only and
//! may be shared across threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qroute::checkpoint::load_checkpoint;
use qroute::rewards::{normalize_rewards, reward_entropy, RoutingDistribution};
use qroute::router::{kl_loss, RouterModel};
use qroute::RewardVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidArgument = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque router handle.
pub struct QrRouter {
    model: RouterModel,
    ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = CString::new(message.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: QrStatus, message: impl Into<String>) -> QrStatus {
    set_error(message);
    status
}

fn guarded<F: FnOnce() -> QrStatus>(f: F) -> QrStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(QrStatus::Panic, "panic inside qroute"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, QrStatus> {
    if p.is_null() {
        return Err(fail(QrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(QrStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn f64_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], QrStatus> {
    if len == 0 {
        return Err(fail(QrStatus::InvalidArgument, format!("{what} is empty")));
    }
    if p.is_null() {
        return Err(fail(QrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a router checkpoint and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn qr_router_load(path: *const c_char, out: *mut *mut QrRouter) -> QrStatus {
    guarded(|| {
        if out.is_null() {
            return fail(QrStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let model = match load_checkpoint(Path::new(path)) {
            Ok(m) => m,
            Err(qroute::checkpoint::CheckpointError::Io { path, source }) => {
                return fail(QrStatus::Io, format!("{}: {source}", path.display()))
            }
            Err(e) => return fail(QrStatus::Checkpoint, e.to_string()),
        };
        let ids = model
            .registry()
            .ids()
            .map(|id| CString::new(id.replace('\0', " ")).expect("no interior nul"))
            .collect();
        *out = Box::into_raw(Box::new(QrRouter { model, ids }));
        QrStatus::Ok
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `router` must come from `qr_router_load` and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn qr_router_free(router: *mut QrRouter) {
    if !router.is_null() {
        drop(Box::from_raw(router));
    }
}

/// Number of candidate models, 0 for NULL.
///
/// # Safety
/// `router` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qr_router_num_models(router: *const QrRouter) -> usize {
    router.as_ref().map_or(0, |r| r.model.num_models())
}

/// Hashed feature dimension, 0 for NULL.
///
/// # Safety
/// `router` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qr_router_dimension(router: *const QrRouter) -> usize {
    router.as_ref().map_or(0, |r| r.model.dimension())
}

/// Model id at registry position `index`, or NULL when out of range. The
/// string lives as long as the handle.
///
/// # Safety
/// `router` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qr_router_model_id(router: *const QrRouter, index: usize) -> *const c_char {
    router
        .as_ref()
        .and_then(|r| r.ids.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Routes `query`. Writes the chosen registry index to `*out_index` and, when
/// `out_probs` is non-NULL, the full distribution to `out_probs[0..K]`.
/// `probs_len` must be at least K in that case.
///
/// # Safety
/// `router` must be a live handle, `query` a NUL-terminated string,
/// `out_index` writable, and `out_probs` NULL or writable for `probs_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn qr_router_route(
    router: *const QrRouter,
    query: *const c_char,
    out_index: *mut usize,
    out_probs: *mut f64,
    probs_len: usize,
) -> QrStatus {
    guarded(|| {
        let Some(router) = router.as_ref() else {
            return fail(QrStatus::NullPointer, "router is null");
        };
        if out_index.is_null() {
            return fail(QrStatus::NullPointer, "out_index is null");
        }
        let query = match c_str(query, "query") {
            Ok(q) => q,
            Err(s) => return s,
        };
        let k = router.model.num_models();
        if !out_probs.is_null() && probs_len < k {
            return fail(
                QrStatus::BufferTooSmall,
                format!("probability buffer holds {probs_len}, need {k}"),
            );
        }
        let route = router.model.route(query);
        *out_index = route.model_index;
        if !out_probs.is_null() {
            std::slice::from_raw_parts_mut(out_probs, k).copy_from_slice(route.distribution.probs());
        }
        QrStatus::Ok
    })
}

/// `out[i] = softmax(rewards / temperature)[i]` for `len` entries.
///
/// # Safety
/// `rewards` must be readable and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qr_normalize_rewards(
    rewards: *const f64,
    len: usize,
    temperature: f64,
    out: *mut f64,
) -> QrStatus {
    guarded(|| {
        let r = match f64_slice(rewards, len, "rewards") {
            Ok(r) => r,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(QrStatus::NullPointer, "out is null");
        }
        let rv = match RewardVector::new(r.to_vec()) {
            Ok(v) => v,
            Err(e) => return fail(QrStatus::InvalidArgument, e.to_string()),
        };
        match normalize_rewards(&rv, temperature) {
            Ok(d) => {
                std::slice::from_raw_parts_mut(out, len).copy_from_slice(d.probs());
                QrStatus::Ok
            }
            Err(e) => fail(QrStatus::InvalidArgument, e.to_string()),
        }
    })
}

unsafe fn distribution(p: *const f64, len: usize, what: &str) -> Result<RoutingDistribution, QrStatus> {
    let probs = f64_slice(p, len, what)?;
    RoutingDistribution::new(probs.to_vec()).map_err(|e| fail(QrStatus::InvalidArgument, format!("{what}: {e}")))
}

/// Shannon entropy (nats) of a probability vector.
///
/// # Safety
/// `probs` must be readable for `len` doubles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qr_reward_entropy(probs: *const f64, len: usize, out: *mut f64) -> QrStatus {
    guarded(|| {
        if out.is_null() {
            return fail(QrStatus::NullPointer, "out is null");
        }
        match distribution(probs, len, "probs") {
            Ok(d) => {
                *out = reward_entropy(&d);
                QrStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// `KL(target ‖ pred)` with the router's probability floor.
///
/// # Safety
/// `pred` and `target` must be readable for `len` doubles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qr_kl_loss(pred: *const f64, target: *const f64, len: usize, out: *mut f64) -> QrStatus {
    guarded(|| {
        if out.is_null() {
            return fail(QrStatus::NullPointer, "out is null");
        }
        let (p, t) = match (distribution(pred, len, "pred"), distribution(target, len, "target")) {
            (Ok(p), Ok(t)) => (p, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match kl_loss(&p, &t) {
            Ok(v) => {
                *out = v;
                QrStatus::Ok
            }
            Err(e) => fail(QrStatus::InvalidArgument, e.to_string()),
        }
    })
}
