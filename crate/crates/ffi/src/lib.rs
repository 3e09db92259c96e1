//! C ABI over the fieldgraph core.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free`. Every fallible call returns an [`FgStatus`]; on
//! failure the message is available from [`fg_last_error_message`] on the same
//! thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fieldgraph::gcn::{init_params, load_checkpoint, model_forward, save_checkpoint, GcnModel};
use fieldgraph::graph::{load_graph, FieldGraph};
use fieldgraph::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Invariant = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// A loaded field graph.
pub struct FgGraph(FieldGraph);

/// A GCN model.
pub struct FgModel(GcnModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> FgStatus {
    match err {
        Error::FileNotFound(_) | Error::Io(_) => FgStatus::Io,
        Error::Decode(_) | Error::Format(_) => FgStatus::Format,
        Error::Shape(_)
        | Error::ShapeMismatch(_)
        | Error::DimensionMismatch { .. }
        | Error::LengthMismatch(..)
        | Error::BinMismatch(..) => FgStatus::Shape,
        Error::Invariant(_) | Error::AsymmetricInput(..) | Error::NegativeWeight(..) | Error::EmptyMask => {
            FgStatus::Invariant
        }
        _ => FgStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (FgStatus, String)>) -> FgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FgStatus::Internal
        }
    }
}

fn core(err: Error) -> (FgStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (FgStatus, String) {
    (FgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, (FgStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| (FgStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a graph file written by `build-graph`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fg_graph_load(path: *const c_char, out: *mut *mut FgGraph) -> FgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let g = load_graph(path_arg(path)?).map_err(core)?;
        *out = Box::into_raw(Box::new(FgGraph(g)));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from [`fg_graph_load`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fg_graph_free(graph: *mut FgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Total node count (including neutral padding) and real-region count.
///
/// # Safety
/// `graph` must be a live handle; `n` and `n_real` writable or null.
#[no_mangle]
pub unsafe extern "C" fn fg_graph_node_count(graph: *const FgGraph, n: *mut usize, n_real: *mut usize) -> FgStatus {
    guard(|| {
        let g = &graph.as_ref().ok_or_else(|| null("graph"))?.0;
        if let Some(n) = n.as_mut() {
            *n = g.n;
        }
        if let Some(r) = n_real.as_mut() {
            *r = g.n_real;
        }
        Ok(())
    })
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fg_model_load(path: *const c_char, out: *mut *mut FgModel) -> FgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = load_checkpoint(path_arg(path)?).map_err(core)?;
        *out = Box::into_raw(Box::new(FgModel(m)));
        Ok(())
    })
}

/// Freshly initialized model with the default architecture.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fg_model_init(seed: u64, out: *mut *mut FgModel) -> FgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(FgModel(init_params(seed))));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fg_model_save(model: *const FgModel, path: *const c_char) -> FgStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        save_checkpoint(m, path_arg(path)?).map_err(core)
    })
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_model_param_count(model: *const FgModel, out: *mut usize) -> FgStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        *out.as_mut().ok_or_else(|| null("out"))? = m.param_count();
        Ok(())
    })
}

/// # Safety
/// `model` must come from a loader or initializer and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fg_model_free(model: *mut FgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes one probability per node (neutral nodes included) into `out`,
/// which must hold at least the graph's total node count.
///
/// # Safety
/// Handles must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fg_predict(
    model: *const FgModel,
    graph: *const FgGraph,
    out: *mut f64,
    len: usize,
) -> FgStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let g = &graph.as_ref().ok_or_else(|| null("graph"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < g.n {
            return Err((FgStatus::BufferTooSmall, format!("buffer holds {len} values, graph has {} nodes", g.n)));
        }
        let pred = model_forward(g, m).map_err(core)?;
        std::slice::from_raw_parts_mut(out, pred.len()).copy_from_slice(&pred);
        Ok(())
    })
}
