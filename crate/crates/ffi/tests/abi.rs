use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use touchstream_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe { ts_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn env_round_trip() {
    let classes = [0usize, 1];
    let mut env: *mut TsEnv = ptr::null_mut();
    let s = unsafe { ts_env_new(64, 1, classes.as_ptr(), 2, 7, &mut env) };
    assert_eq!(s, TsStatus::Ok, "{}", last_error());
    let (mut w, mut h) = (0u32, 0u32);
    assert_eq!(unsafe { ts_env_frame(env, &mut w, &mut h, ptr::null_mut(), 0) }, TsStatus::Ok);
    assert_eq!((w, h), (64, 64));
    let mut px = vec![0u8; (w * h * 3) as usize];
    assert_eq!(unsafe { ts_env_frame(env, &mut w, &mut h, px.as_mut_ptr(), px.len()) }, TsStatus::Ok);
    assert!(px.iter().any(|&p| p != 0));
    assert_eq!(
        unsafe { ts_env_frame(env, &mut w, &mut h, px.as_mut_ptr(), 10) },
        TsStatus::InvalidArgument
    );
    let mut total = 0.0;
    for i in 0..20 {
        let mut r = -1.0;
        assert_eq!(unsafe { ts_env_step(env, (i * 3) % 64, 32, &mut r) }, TsStatus::Ok);
        assert!(r == 0.0 || r == 1.0);
        total += r;
    }
    assert!(total <= 20.0);
    let mut r = 0.0;
    assert_eq!(unsafe { ts_env_step(env, 64, 0, &mut r) }, TsStatus::Environment);
    assert!(last_error().contains("outside"));
    unsafe { ts_env_free(env) };
}

#[test]
fn errors_are_reported() {
    let mut env: *mut TsEnv = ptr::null_mut();
    assert_eq!(unsafe { ts_env_new(64, 1, ptr::null(), 2, 0, &mut env) }, TsStatus::NullPointer);
    assert!(env.is_null());
    assert_eq!(unsafe { ts_env_new(64, 99, ptr::null(), 0, 0, &mut env) }, TsStatus::Config);
    assert!(!last_error().is_empty());
    let mut out = 0.0;
    assert_eq!(unsafe { ts_auc([0u64].as_ptr(), [1.0].as_ptr(), 1, &mut out) }, TsStatus::Input);
    let bad = CString::new("{\"screen\": 1}").unwrap();
    let mut lab: *mut TsLab = ptr::null_mut();
    assert_eq!(unsafe { ts_lab_new(bad.as_ptr(), &mut lab) }, TsStatus::Serialization);
    assert!(lab.is_null());
    unsafe {
        ts_env_free(ptr::null_mut());
        ts_lab_free(ptr::null_mut());
    }
}

#[test]
fn metrics() {
    let mut v = 0.0;
    let a = [0.0, 0.0, 2.0, 2.0];
    let b = [1.0, 1.0, 3.0, 3.0];
    assert_eq!(unsafe { ts_iou(a.as_ptr(), b.as_ptr(), &mut v) }, TsStatus::Ok);
    assert!((v - 1.0 / 7.0).abs() < 1e-12);
    let steps = [0u64, 10, 20];
    let vals = [0.0, 1.0, 1.0];
    assert_eq!(unsafe { ts_auc(steps.as_ptr(), vals.as_ptr(), 3, &mut v) }, TsStatus::Ok);
    assert!((v - 15.0).abs() < 1e-12);
    let version = unsafe { CStr::from_ptr(ts_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/touchstream.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["ts_env_new", "ts_env_step", "ts_lab_new", "ts_lab_run_switch", "ts_last_error", "TS_STATUS_PANIC"] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"touchstream.h\"\nint main(void) { TsEnv *e = 0; double r; return ts_env_step(e, 0, 0, &r) == TS_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
