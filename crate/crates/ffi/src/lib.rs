//! C ABI over `collab_motion`.
//!
//! Every function returns a [`CmStatus`]. On failure the message is kept
//! per thread and can be read with [`cm_last_error`]. Poses are flat
//! `frames × joints × 3` arrays of doubles in millimetres.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use collab_motion::data::CoupleSequence;
use collab_motion::geometry::{triangulate_two_rays, Camera, Skeleton, Vec3};
use collab_motion::metrics::{ame, jme, sme};
use collab_motion::model::CollabModel;
use collab_motion::motion::MotionSequence;
use collab_motion::train::{normalize_couple, rollout};
use collab_motion::Error;
use nalgebra::{Matrix3, Vector2};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Incompatible = 5,
    Numeric = 6,
    Degenerate = 7,
    Panic = 8,
}

/// Loaded model; create with [`cm_model_load`], release with [`cm_model_free`].
pub struct CmModel {
    model: CollabModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CmStatus {
    match e {
        Error::Io { .. } => CmStatus::Io,
        Error::Parse { .. } => CmStatus::Parse,
        Error::Compatibility(_) => CmStatus::Incompatible,
        Error::NonFinite { .. } | Error::Training { .. } => CmStatus::Numeric,
        Error::Degenerate(_) | Error::NoUniqueSolution(_) => CmStatus::Degenerate,
        _ => CmStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CmStatus::Ok
        }
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("{name} is null"));
            CmStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            CmStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CmStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, name: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn sequence(p: *const f64, frames: usize, joints: usize, name: &'static str) -> Result<MotionSequence, Fail> {
    if frames == 0 || joints == 0 {
        return Err(Fail::Arg("frames and joints must be positive".into()));
    }
    let data = slice(p, frames * joints * 3, name)?;
    Ok(MotionSequence::new(joints, 25.0, data.to_vec())?)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by the training tool.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cm_model_load(path: *const c_char, out: *mut *mut CmModel) -> CmStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail::Arg("path is not UTF-8".into()))?;
        let (model, _) = CollabModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(CmModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`cm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cm_model_free(model: *mut CmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Joint count, frames predicted per call and minimum history length.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cm_model_info(
    model: *const CmModel,
    joints: *mut usize,
    step_len: *mut usize,
    min_history: *mut usize,
) -> CmStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        if joints.is_null() || step_len.is_null() || min_history.is_null() {
            return Err(Fail::Null("output"));
        }
        let cfg = m.model.config();
        *joints = cfg.joints;
        *step_len = cfg.step_len;
        *min_history = cfg.window_len();
        Ok(())
    })
}

/// Forecasts `horizon` frames for both persons from `frames` observed
/// frames given in the couple-normalized frame.
///
/// # Safety
/// Inputs hold `frames × J × 3` doubles, outputs `horizon × J × 3`.
#[no_mangle]
pub unsafe extern "C" fn cm_model_predict(
    model: *const CmModel,
    leader: *const f64,
    follower: *const f64,
    frames: usize,
    horizon: usize,
    out_leader: *mut f64,
    out_follower: *mut f64,
) -> CmStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let j = m.model.config().joints;
        let l = sequence(leader, frames, j, "leader")?;
        let f = sequence(follower, frames, j, "follower")?;
        if horizon == 0 {
            return Err(Fail::Arg("horizon must be positive".into()));
        }
        let r = rollout(&m.model, &l, &f, horizon)?;
        slice_mut(out_leader, horizon * j * 3, "out_leader")?.copy_from_slice(r.leader.data());
        slice_mut(out_follower, horizon * j * 3, "out_follower")?.copy_from_slice(r.follower.data());
        Ok(())
    })
}

/// Maps both persons of every frame into that frame's leader-centred frame.
///
/// # Safety
/// All arrays hold `frames × joints × 3` doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_normalize_couple(
    leader: *const f64,
    follower: *const f64,
    frames: usize,
    joints: usize,
    out_leader: *mut f64,
    out_follower: *mut f64,
) -> CmStatus {
    guard(|| {
        let l = sequence(leader, frames, joints, "leader")?;
        let f = sequence(follower, frames, joints, "follower")?;
        let couple = CoupleSequence::new("input", 0, 0, 0, l, f)?;
        let n = normalize_couple(&couple, &Skeleton::for_joints(joints)?)?;
        let len = frames * joints * 3;
        slice_mut(out_leader, len, "out_leader")?.copy_from_slice(n.leader.data());
        slice_mut(out_follower, len, "out_follower")?.copy_from_slice(n.follower.data());
        Ok(())
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmMetric {
    Jme = 0,
    Sme = 1,
    Ame = 2,
}

/// Couple error of a prediction against ground truth, in millimetres.
///
/// # Safety
/// All arrays hold `frames × joints × 3` doubles; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn cm_metric(
    metric: CmMetric,
    pred_leader: *const f64,
    pred_follower: *const f64,
    gt_leader: *const f64,
    gt_follower: *const f64,
    frames: usize,
    joints: usize,
    out: *mut f64,
) -> CmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let pl = sequence(pred_leader, frames, joints, "pred_leader")?;
        let pf = sequence(pred_follower, frames, joints, "pred_follower")?;
        let gl = sequence(gt_leader, frames, joints, "gt_leader")?;
        let gf = sequence(gt_follower, frames, joints, "gt_follower")?;
        *out = match metric {
            CmMetric::Jme => jme(&pl, &pf, &gl, &gf)?,
            CmMetric::Sme => sme(&pl, &pf, &gl, &gf, &Skeleton::for_joints(joints)?)?,
            CmMetric::Ame => ame(&pl, &pf, &gl, &gf)?,
        };
        Ok(())
    })
}

fn camera(v: &[f64]) -> Result<Camera, Fail> {
    Ok(Camera::new(
        Matrix3::from_row_slice(&v[0..9]),
        Matrix3::from_row_slice(&v[9..18]),
        Vec3::new(v[18], v[19], v[20]),
    )?)
}

/// Nearest point to the back-projected rays of two pixel observations.
/// A camera is 21 doubles: intrinsics and world-to-camera rotation, both
/// row-major, then the translation.
///
/// # Safety
/// `cam_*` hold 21 doubles, `pixel_*` 2, `out` 3.
#[no_mangle]
pub unsafe extern "C" fn cm_triangulate(
    cam_a: *const f64,
    pixel_a: *const f64,
    cam_b: *const f64,
    pixel_b: *const f64,
    out: *mut f64,
) -> CmStatus {
    guard(|| {
        let ca = camera(slice(cam_a, 21, "cam_a")?)?;
        let cb = camera(slice(cam_b, 21, "cam_b")?)?;
        let pa = slice(pixel_a, 2, "pixel_a")?;
        let pb = slice(pixel_b, 2, "pixel_b")?;
        let ra = ca.backproject(&Vector2::new(pa[0], pa[1]))?;
        let rb = cb.backproject(&Vector2::new(pb[0], pb[1]))?;
        let x = triangulate_two_rays(&ra, &rb)?;
        slice_mut(out, 3, "out")?.copy_from_slice(&[x.x, x.y, x.z]);
        Ok(())
    })
}
