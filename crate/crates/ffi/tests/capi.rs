use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use dfsm::dfsm::{build_dfsm, eval_dfsm, eval_outputs, save_bundle, simulate_dfsm, DfsmConfig, DfsmModel};
use dfsm::dynsys::{generate_random_controls, simulate, ControlSignal, Interpolation, ParamInput, TwoLinkRobot};
use dfsm_ffi::*;
use nalgebra::DMatrix;

fn robot_model(output_surrogate: bool) -> DfsmModel {
    let sys = TwoLinkRobot::default();
    let data: Vec<_> = (0..6)
        .map(|i| {
            let u = generate_random_controls(&[(-3.0, 3.0), (-3.0, 3.0)], 3, 2.0, Interpolation::PiecewiseLinear, i)
                .unwrap();
            let x0 = [-1.5 + 0.1 * i as f64, 0.2, 0.0, 0.0];
            simulate(&sys, &x0, &u, &ParamInput::None, 2.0, 0.01).unwrap()
        })
        .collect();
    let cfg = DfsmConfig {
        n_samples: 80,
        kmeans_restarts: 2,
        output_surrogate,
        ..DfsmConfig::default()
    };
    build_dfsm(&data, &cfg).unwrap()
}

fn load(dir: &Path) -> *mut DfsmBundle {
    let path = CString::new(dir.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { dfsm_bundle_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, DfsmStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    let p = dfsm_last_error();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

#[test]
fn evaluation_matches_the_library() {
    let model = robot_model(true);
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&model, dir.path()).unwrap();
    let h = load(dir.path());

    let (mut nx, mut nu, mut ny, mut sched) = (0, 0, 0, -1);
    assert_eq!(
        unsafe { dfsm_bundle_dims(h, &mut nx, &mut nu, &mut ny, &mut sched) },
        DfsmStatus::Ok
    );
    assert_eq!((nx, nu, ny, sched), (4, 2, 4, 0));

    let u = [0.7, -1.2];
    let x = [-1.4, 0.3, 0.2, -0.5];
    let mut dx = [0.0; 4];
    let s = unsafe { dfsm_eval(h, u.as_ptr(), 2, x.as_ptr(), 4, 0.0, dx.as_mut_ptr(), 4) };
    assert_eq!(s, DfsmStatus::Ok);
    assert_eq!(dx.to_vec(), eval_dfsm(&model, &u, &x, None).unwrap());

    let mut y = [0.0; 4];
    let s = unsafe { dfsm_eval_outputs(h, u.as_ptr(), 2, x.as_ptr(), 4, 0.0, y.as_mut_ptr(), 4) };
    assert_eq!(s, DfsmStatus::Ok);
    assert_eq!(y.to_vec(), eval_outputs(&model, &u, &x, None).unwrap());

    unsafe { dfsm_bundle_free(h) };
}

#[test]
fn simulation_matches_the_library() {
    let model = robot_model(false);
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&model, dir.path()).unwrap();
    let h = load(dir.path());

    let times = [0.0, 0.5, 1.0];
    let controls = [0.0, 0.0, 1.0, -1.0, 0.5, 0.5];
    let x0 = [-1.5, 0.1, 0.0, 0.0];
    let mut n_steps = 0;

    // a too-small buffer still reports the required length
    let s = unsafe {
        dfsm_simulate(
            h,
            x0.as_ptr(),
            4,
            times.as_ptr(),
            controls.as_ptr(),
            3,
            ptr::null(),
            1.0,
            0.01,
            ptr::null_mut(),
            0,
            &mut n_steps,
        )
    };
    assert_eq!(s, DfsmStatus::BufferTooSmall);
    assert_eq!(n_steps, 101);

    let mut states = vec![0.0; n_steps * 4];
    let s = unsafe {
        dfsm_simulate(
            h,
            x0.as_ptr(),
            4,
            times.as_ptr(),
            controls.as_ptr(),
            3,
            ptr::null(),
            1.0,
            0.01,
            states.as_mut_ptr(),
            n_steps,
            &mut n_steps,
        )
    };
    assert_eq!(s, DfsmStatus::Ok, "{}", last_error());

    let u = ControlSignal::new(
        times.to_vec(),
        DMatrix::from_row_slice(3, 2, &controls).transpose(),
        Interpolation::PiecewiseLinear,
    )
    .unwrap();
    let expected = simulate_dfsm(&model, &x0, &u, &ParamInput::None, 1.0, 0.01).unwrap();
    for k in 0..n_steps {
        for i in 0..4 {
            assert_eq!(states[k * 4 + i], expected.states()[(i, k)]);
        }
    }

    // no output surrogate in this bundle
    let mut y = [0.0; 4];
    let s = unsafe { dfsm_eval_outputs(h, controls.as_ptr(), 2, x0.as_ptr(), 4, 0.0, y.as_mut_ptr(), 4) };
    assert_eq!(s, DfsmStatus::NoOutputs);
    assert!(last_error().contains("output"));

    unsafe { dfsm_bundle_free(h) };
}

#[test]
fn errors_are_reported_as_codes() {
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { dfsm_bundle_load(ptr::null(), &mut handle) },
        DfsmStatus::NullPointer
    );

    let missing = CString::new("/nonexistent/bundle").unwrap();
    let s = unsafe { dfsm_bundle_load(missing.as_ptr(), &mut handle) };
    assert_eq!(s, DfsmStatus::Io);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    let mut dx = [0.0; 4];
    let s = unsafe { dfsm_eval(ptr::null(), ptr::null(), 0, ptr::null(), 0, 0.0, dx.as_mut_ptr(), 4) };
    assert_eq!(s, DfsmStatus::NullPointer);

    let model = robot_model(false);
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&model, dir.path()).unwrap();
    let h = load(dir.path());
    let u = [0.0; 2];
    let x = [0.0; 3];
    let s = unsafe { dfsm_eval(h, u.as_ptr(), 2, x.as_ptr(), 3, 0.0, dx.as_mut_ptr(), 4) };
    assert_eq!(s, DfsmStatus::DimensionMismatch);
    let s = unsafe { dfsm_eval(h, u.as_ptr(), 2, x.as_ptr(), 3, 0.0, dx.as_mut_ptr(), 3) };
    assert_eq!(s, DfsmStatus::DimensionMismatch);

    // a successful call clears the message
    let x = [0.0; 4];
    let s = unsafe { dfsm_eval(h, u.as_ptr(), 2, x.as_ptr(), 4, 0.0, dx.as_mut_ptr(), 4) };
    assert_eq!(s, DfsmStatus::Ok);
    assert!(dfsm_last_error().is_null());

    unsafe { dfsm_bundle_free(h) };
    unsafe { dfsm_bundle_free(ptr::null_mut()) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dfsm.h")).unwrap();
    for name in [
        "dfsm_last_error",
        "dfsm_bundle_load",
        "dfsm_bundle_free",
        "dfsm_bundle_dims",
        "dfsm_eval",
        "dfsm_eval_outputs",
        "dfsm_simulate",
        "typedef struct DfsmBundle DfsmBundle",
        "DFSM_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
