//! C ABI for loading network models, bounding their outputs over input boxes,
//! and certifying classification robustness.
//!
//! Handles are opaque pointers created by [`ib_model_load`] and released by
//! [`ib_model_free`]. Every fallible call returns an [`IbStatus`]; the
//! descriptive message for the most recent failure on the current thread is
//! available through [`ib_last_error`]. The generated header lives at
//! `include/innbound.h`.

use std::cell::RefCell;
use std::ffi::CStr;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use innbound::{
    certify, lipschitz_upper_bound, load_model, reach_inn, solve_fixed_point,
    wellposedness_certificate, Error, ImplicitNetwork, IntervalVector, NetworkModel, SolverConfig,
    WellposednessCertificate,
};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IbStatus {
    /// Success.
    Ok = 0,
    /// File I/O or model-format failure.
    Io = 1,
    /// The network admits no well-posedness certificate.
    NoCertificate = 2,
    /// Null pointer, bad dimension, or otherwise invalid argument.
    InvalidArgument = 3,
    /// The fixed-point solver failed to converge.
    SolverFailure = 4,
    /// Unexpected internal failure.
    Internal = 5,
}

/// Opaque model handle: the loaded network, its implicit reading, and the
/// well-posedness certificate when one exists.
pub struct IbModel {
    model: NetworkModel,
    implicit: ImplicitNetwork,
    certificate: Option<WellposednessCertificate>,
    solver: SolverConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message.into());
}

fn status_of(err: &Error) -> IbStatus {
    match err {
        Error::Io(_) | Error::Json(_) | Error::ModelFormat(_) => IbStatus::Io,
        Error::NoCertificate { .. } => IbStatus::NoCertificate,
        Error::MaxIterExceeded { .. }
        | Error::NonConvergence { .. }
        | Error::SingularSystem
        | Error::SpectralRadiusTooLarge { .. } => IbStatus::SolverFailure,
        Error::DimensionMismatch(_)
        | Error::NotSquare { .. }
        | Error::NonFinite(_)
        | Error::NonPositiveWeight
        | Error::InvalidBox { .. }
        | Error::ClassIndexOutOfRange { .. }
        | Error::GridDimensionTooLarge { .. }
        | Error::Config(_)
        | Error::EmptyDataset => IbStatus::InvalidArgument,
        Error::Diverged { .. } => IbStatus::Internal,
    }
}

fn fail(err: &Error) -> IbStatus {
    set_error(err.to_string());
    status_of(err)
}

fn guard<F: FnOnce() -> IbStatus>(f: F) -> IbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            IbStatus::Internal
        }
    }
}

fn implicit_view(model: &NetworkModel) -> ImplicitNetwork {
    match model {
        NetworkModel::Implicit(net) => net.clone(),
        NetworkModel::Feedforward(net) => innbound::ffnn_to_inn(net),
        NetworkModel::WeightTied(net) => net.as_implicit(),
    }
}

/// Loads a model JSON file and prepares it for analysis. Returns null on
/// failure; the reason is available through [`ib_last_error`]. A model that
/// loads but cannot be certified is still usable for [`ib_forward`]; bounding
/// calls on it return [`IbStatus::NoCertificate`].
///
/// # Safety
/// `path` must point to a NUL-terminated string valid for the duration of the
/// call.
#[no_mangle]
pub unsafe extern "C" fn ib_model_load(path: *const c_char) -> *mut IbModel {
    if path.is_null() {
        set_error("path is null");
        return std::ptr::null_mut();
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not valid UTF-8");
        return std::ptr::null_mut();
    };
    match load_model(path) {
        Ok(model) => {
            let implicit = implicit_view(&model);
            let certificate = wellposedness_certificate(&implicit, 1e-12).ok();
            Box::into_raw(Box::new(IbModel {
                model,
                implicit,
                certificate,
                solver: SolverConfig::default(),
            }))
        }
        Err(err) => {
            set_error(err.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Releases a handle returned by [`ib_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be a pointer returned by [`ib_model_load`] that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn ib_model_free(model: *mut IbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model kind: 0 implicit, 1 feedforward, 2 weight-tied, -1 on null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ib_model_kind(model: *const IbModel) -> i32 {
    match model.as_ref() {
        None => -1,
        Some(m) => match m.model {
            NetworkModel::Implicit(_) => 0,
            NetworkModel::Feedforward(_) => 1,
            NetworkModel::WeightTied(_) => 2,
        },
    }
}

/// Input dimension of the model (0 on null).
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ib_model_input_dim(model: *const IbModel) -> usize {
    model.as_ref().map_or(0, |m| m.implicit.input_dim())
}

/// Output dimension of the model (0 on null).
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ib_model_output_dim(model: *const IbModel) -> usize {
    model.as_ref().map_or(0, |m| m.implicit.output_dim())
}

/// Whether a well-posedness certificate exists for the model.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ib_model_certified(model: *const IbModel) -> bool {
    model.as_ref().is_some_and(|m| m.certificate.is_some())
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_out<'a>(ptr: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

fn require_cert(model: &IbModel) -> Result<&WellposednessCertificate, IbStatus> {
    model.certificate.as_ref().ok_or_else(|| {
        set_error("model has no well-posedness certificate");
        IbStatus::NoCertificate
    })
}

/// Evaluates the network at a point: solves the hidden fixed point and writes
/// the `output_dim` outputs into `out`.
///
/// # Safety
/// `model` must be a live handle; `x` must point to `x_len` readable doubles
/// and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ib_forward(
    model: *const IbModel,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> IbStatus {
    let Some(model) = model.as_ref() else {
        set_error("model is null");
        return IbStatus::InvalidArgument;
    };
    let (Some(x), Some(out)) = (slice_arg(x, x_len), slice_out(out, out_len)) else {
        set_error("null buffer");
        return IbStatus::InvalidArgument;
    };
    if x_len != model.implicit.input_dim() || out_len != model.implicit.output_dim() {
        set_error("buffer dimensions do not match the model");
        return IbStatus::InvalidArgument;
    }
    guard(|| {
        let cert = match require_cert(model) {
            Ok(c) => c,
            Err(status) => return status,
        };
        match solve_fixed_point(&model.implicit, x, cert, &model.solver) {
            Ok(result) => {
                out.copy_from_slice(&model.implicit.output(&result.z_star));
                IbStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Bounds the network outputs over the infinity-norm ball of radius `eps`
/// around `center`, writing componentwise lower and upper bounds.
///
/// # Safety
/// `model` must be a live handle; `center` must point to `center_len`
/// readable doubles; `out_lo` and `out_hi` must each point to `out_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ib_reach_box(
    model: *const IbModel,
    center: *const f64,
    center_len: usize,
    eps: f64,
    out_lo: *mut f64,
    out_hi: *mut f64,
    out_len: usize,
) -> IbStatus {
    let Some(model) = model.as_ref() else {
        set_error("model is null");
        return IbStatus::InvalidArgument;
    };
    let (Some(center), Some(lo), Some(hi)) = (
        slice_arg(center, center_len),
        slice_out(out_lo, out_len),
        slice_out(out_hi, out_len),
    ) else {
        set_error("null buffer");
        return IbStatus::InvalidArgument;
    };
    if center_len != model.implicit.input_dim() || out_len != model.implicit.output_dim() {
        set_error("buffer dimensions do not match the model");
        return IbStatus::InvalidArgument;
    }
    guard(|| {
        let cert = match require_cert(model) {
            Ok(c) => c,
            Err(status) => return status,
        };
        let input = match IntervalVector::linf_ball(center, eps) {
            Ok(b) => b,
            Err(err) => return fail(&err),
        };
        match reach_inn(&model.implicit, &input, cert, &model.solver) {
            Ok(result) => {
                lo.copy_from_slice(result.output.lo());
                hi.copy_from_slice(result.output.hi());
                IbStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Certifies that the predicted class stays `label` over the radius-`eps`
/// ball around `x`. Writes the margin lower bounds (entry `label` is zero)
/// and the verdict.
///
/// # Safety
/// `model` must be a live handle; `x` must point to `x_len` readable doubles;
/// `out_margin` must point to `margin_len` writable doubles and
/// `out_certified` to a writable bool.
#[no_mangle]
pub unsafe extern "C" fn ib_certify(
    model: *const IbModel,
    x: *const f64,
    x_len: usize,
    label: usize,
    eps: f64,
    out_margin: *mut f64,
    margin_len: usize,
    out_certified: *mut bool,
) -> IbStatus {
    let Some(model) = model.as_ref() else {
        set_error("model is null");
        return IbStatus::InvalidArgument;
    };
    let (Some(x), Some(margin)) = (slice_arg(x, x_len), slice_out(out_margin, margin_len)) else {
        set_error("null buffer");
        return IbStatus::InvalidArgument;
    };
    if out_certified.is_null() {
        set_error("null buffer");
        return IbStatus::InvalidArgument;
    }
    if x_len != model.implicit.input_dim() || margin_len != model.implicit.output_dim() {
        set_error("buffer dimensions do not match the model");
        return IbStatus::InvalidArgument;
    }
    guard(|| {
        let cert = match require_cert(model) {
            Ok(c) => c,
            Err(status) => return status,
        };
        match certify(&model.implicit, x, label, eps, cert, &model.solver) {
            Ok(report) => {
                margin.copy_from_slice(&report.margin_lower);
                *out_certified = report.certified;
                IbStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Writes the certified global Lipschitz upper bound of the input-output map.
///
/// # Safety
/// `model` must be a live handle and `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn ib_lipschitz_bound(model: *const IbModel, out: *mut f64) -> IbStatus {
    let Some(model) = model.as_ref() else {
        set_error("model is null");
        return IbStatus::InvalidArgument;
    };
    if out.is_null() {
        set_error("null buffer");
        return IbStatus::InvalidArgument;
    }
    guard(|| {
        let cert = match require_cert(model) {
            Ok(c) => c,
            Err(status) => return status,
        };
        *out = lipschitz_upper_bound(&model.implicit, cert);
        IbStatus::Ok
    })
}

/// Copies the most recent error message on this thread into `buf` (truncated
/// to `cap - 1` bytes, always NUL-terminated when `cap > 0`) and returns the
/// full message length in bytes.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn ib_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}
