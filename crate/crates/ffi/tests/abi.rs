use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use collab_motion::geometry::{Camera, Vec3};
use collab_motion::model::{make_variant, ModelConfig, Variant};
use collab_motion::synth::{synthesize_couple, Scenario};
use collab_motion::train::{normalize_couple, rollout};
use collab_motion_ffi::*;
use nalgebra::{Matrix3, Rotation3};

fn last_error() -> String {
    let p = cm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_checkpoint(dir: &std::path::Path) -> (CString, ModelConfig) {
    let cfg = ModelConfig {
        joints: 18,
        ..ModelConfig::tiny()
    };
    let m = make_variant(Variant::Xia, &cfg, 4).unwrap();
    let path = dir.join("m.ckpt");
    m.save(&path, &Default::default()).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), cfg)
}

#[test]
fn model_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, cfg) = tiny_checkpoint(dir.path());
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { cm_model_load(path.as_ptr(), &mut model) }, CmStatus::Ok);
    let (mut j, mut t, mut h) = (0, 0, 0);
    assert_eq!(unsafe { cm_model_info(model, &mut j, &mut t, &mut h) }, CmStatus::Ok);
    assert_eq!((j, t, h), (18, cfg.step_len, cfg.window_len()));

    let couple = synthesize_couple(3, Scenario::LaggedMirror, 40).unwrap();
    let n = normalize_couple(&couple, &collab_motion::geometry::Skeleton::expi()).unwrap();
    let (l, f) = (n.leader.tail(12).unwrap(), n.follower.tail(12).unwrap());
    let horizon = 5;
    let mut out_l = vec![0.0; horizon * 54];
    let mut out_f = vec![0.0; horizon * 54];
    let s = unsafe {
        cm_model_predict(model, l.data().as_ptr(), f.data().as_ptr(), 12, horizon, out_l.as_mut_ptr(), out_f.as_mut_ptr())
    };
    assert_eq!(s, CmStatus::Ok);
    let expected = {
        let (m, _) = collab_motion::model::CollabModel::load(std::path::Path::new(path.to_str().unwrap())).unwrap();
        rollout(&m, &l, &f, horizon).unwrap()
    };
    assert_eq!(out_l, expected.leader.data());
    assert_eq!(out_f, expected.follower.data());

    let s = unsafe { cm_model_predict(model, l.data().as_ptr(), f.data().as_ptr(), 12, 0, out_l.as_mut_ptr(), out_f.as_mut_ptr()) };
    assert_eq!(s, CmStatus::InvalidArgument);
    let s = unsafe { cm_model_predict(model, l.data().as_ptr(), ptr::null(), 12, 1, out_l.as_mut_ptr(), out_f.as_mut_ptr()) };
    assert_eq!(s, CmStatus::NullPointer);
    assert!(last_error().contains("follower"));
    let s = unsafe { cm_model_predict(model, l.data().as_ptr(), f.data().as_ptr(), 2, 1, out_l.as_mut_ptr(), out_f.as_mut_ptr()) };
    assert_eq!(s, CmStatus::InvalidArgument);
    assert!(last_error().contains("history"));
    unsafe { cm_model_free(model) };
}

#[test]
fn load_failures_report_status() {
    let mut model = ptr::null_mut();
    let missing = CString::new("/nonexistent/m.ckpt").unwrap();
    assert_eq!(unsafe { cm_model_load(missing.as_ptr(), &mut model) }, CmStatus::Io);
    assert!(last_error().contains("nonexistent"));
    assert!(model.is_null());
    assert_eq!(unsafe { cm_model_load(ptr::null(), &mut model) }, CmStatus::NullPointer);
    unsafe { cm_model_free(ptr::null_mut()) };
}

#[test]
fn metrics_and_normalization() {
    let couple = synthesize_couple(1, Scenario::CoupledOscillator, 6).unwrap();
    let (l, f) = (couple.leader.data(), couple.follower.data());
    let mut out = f64::NAN;
    for m in [CmMetric::Jme, CmMetric::Sme, CmMetric::Ame] {
        assert_eq!(unsafe { cm_metric(m, l.as_ptr(), f.as_ptr(), l.as_ptr(), f.as_ptr(), 6, 18, &mut out) }, CmStatus::Ok);
        assert_eq!(out, 0.0);
    }
    let shifted: Vec<f64> = f.iter().enumerate().map(|(i, v)| if i % 3 == 0 { v + 40.0 } else { *v }).collect();
    assert_eq!(
        unsafe { cm_metric(CmMetric::Jme, l.as_ptr(), shifted.as_ptr(), l.as_ptr(), f.as_ptr(), 6, 18, &mut out) },
        CmStatus::Ok
    );
    assert!((out - 20.0).abs() < 1e-9);
    assert_eq!(
        unsafe { cm_metric(CmMetric::Jme, l.as_ptr(), f.as_ptr(), l.as_ptr(), f.as_ptr(), 0, 18, &mut out) },
        CmStatus::InvalidArgument
    );

    let mut nl = vec![0.0; l.len()];
    let mut nf = vec![0.0; f.len()];
    assert_eq!(
        unsafe { cm_normalize_couple(l.as_ptr(), f.as_ptr(), 6, 18, nl.as_mut_ptr(), nf.as_mut_ptr()) },
        CmStatus::Ok
    );
    let n = normalize_couple(&couple, &collab_motion::geometry::Skeleton::expi()).unwrap();
    assert_eq!(nl, n.leader.data());
    assert_eq!(nf, n.follower.data());
}

fn flat_camera(cam: &Camera) -> Vec<f64> {
    let mut v = Vec::new();
    for m in [&cam.intrinsic, &cam.rotation] {
        for r in 0..3 {
            for c in 0..3 {
                v.push(m[(r, c)]);
            }
        }
    }
    v.extend([cam.translation.x, cam.translation.y, cam.translation.z]);
    v
}

#[test]
fn triangulation_recovers_point() {
    let k = Matrix3::new(1000.0, 0.0, 640.0, 0.0, 1000.0, 360.0, 0.0, 0.0, 1.0);
    let a = Camera::new(k, Matrix3::identity(), Vec3::new(0.0, 0.0, 3000.0)).unwrap();
    let rot = *Rotation3::from_euler_angles(0.0, 0.6, 0.0).matrix();
    let b = Camera::new(k, rot, Vec3::new(-500.0, 0.0, 3200.0)).unwrap();
    let x = Vec3::new(120.0, -80.0, 400.0);
    let (pa, pb) = (a.project(&x).unwrap(), b.project(&x).unwrap());
    let mut out = [0.0; 3];
    let s = unsafe {
        cm_triangulate(
            flat_camera(&a).as_ptr(),
            [pa.x, pa.y].as_ptr(),
            flat_camera(&b).as_ptr(),
            [pb.x, pb.y].as_ptr(),
            out.as_mut_ptr(),
        )
    };
    assert_eq!(s, CmStatus::Ok);
    assert!((Vec3::new(out[0], out[1], out[2]) - x).norm() < 1e-6);

    let s = unsafe {
        cm_triangulate(
            flat_camera(&a).as_ptr(),
            [pa.x, pa.y].as_ptr(),
            flat_camera(&a).as_ptr(),
            [pa.x, pa.y].as_ptr(),
            out.as_mut_ptr(),
        )
    };
    assert_eq!(s, CmStatus::Degenerate);
    assert!(!last_error().is_empty());
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/collab_motion.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["cm_model_load", "cm_model_predict", "cm_model_free", "cm_metric", "cm_triangulate", "cm_last_error", "CM_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header]).output() else {
        eprintln!("no C compiler available; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
