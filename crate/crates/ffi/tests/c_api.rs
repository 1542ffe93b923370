use std::ptr;

use henon_lab_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { hl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn map_round_trip() {
    let mut map = ptr::null_mut();
    assert_eq!(unsafe { hl_map_henon(-1.4, 0.3, &mut map) }, HlStatus::Ok);
    let mut out = [0.0; 2];
    let mut jac = [0.0; 4];
    assert_eq!(unsafe { hl_map_eval(map, 0.5, 0.25, out.as_mut_ptr(), jac.as_mut_ptr()) }, HlStatus::Ok);
    assert!((out[0] - (0.25 - 1.4 - 0.075)).abs() < 1e-15);
    assert_eq!(out[1], 0.5);
    assert_eq!(jac, [1.0, -0.3, 1.0, 0.0]);
    unsafe { hl_map_free(map) };
}

#[test]
fn null_pointers_are_reported() {
    assert_eq!(unsafe { hl_map_henon(0.0, 0.0, ptr::null_mut()) }, HlStatus::NullPointer);
    assert_eq!(last_error(), "null pointer argument");
    let mut out = [0.0; 2];
    assert_eq!(unsafe { hl_map_eval(ptr::null(), 0.0, 0.0, out.as_mut_ptr(), ptr::null_mut()) }, HlStatus::NullPointer);
    unsafe {
        hl_map_free(ptr::null_mut());
        hl_tower_free(ptr::null_mut());
        assert_eq!(hl_tower_depth(ptr::null()), 0);
    }
}

#[test]
fn escape_maps_to_status() {
    let mut map = ptr::null_mut();
    unsafe { hl_map_henon(2.0, 0.3, &mut map) };
    let (mut c1, mut c2) = (0.0, 0.0);
    let s = unsafe { hl_lyapunov(map, 0.0, 0.0, 100, 2000, &mut c1, &mut c2) };
    assert!(matches!(s, HlStatus::Escape | HlStatus::Domain), "{s:?}");
    assert!(!last_error().is_empty());
    unsafe { hl_map_free(map) };
}

#[test]
fn ladder_and_boundary() {
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { hl_ladder_build(6, HlPrecision::Standard, &mut l) }, HlStatus::Ok);
    let mut a = 0.0;
    assert_eq!(unsafe { hl_ladder_param(l, 2, &mut a) }, HlStatus::Ok);
    assert!((a + 1.3107026413368).abs() < 1e-12);
    let mut r = 0.0;
    assert_eq!(unsafe { hl_ladder_ratio(l, 6, &mut r) }, HlStatus::Ok);
    assert!(r > 4.6 && r < 4.75);
    assert_eq!(unsafe { hl_ladder_param(l, 7, &mut a) }, HlStatus::InvalidArgument);
    unsafe { hl_ladder_free(l) };
    let mut star = 0.0;
    assert_eq!(unsafe { hl_boundary_param(0.0, 8, HlPrecision::Standard, &mut star) }, HlStatus::Ok);
    assert!((star + 1.401155189).abs() < 1e-8);
    assert_eq!(unsafe { hl_boundary_param(0.5, 8, HlPrecision::Standard, &mut star) }, HlStatus::Continuation);
}

#[test]
fn degenerate_tower_is_infinitely_thin() {
    let mut star = 0.0;
    unsafe { hl_boundary_param(0.0, 8, HlPrecision::Standard, &mut star) };
    let mut map = ptr::null_mut();
    let mut tower = ptr::null_mut();
    unsafe {
        hl_map_henon(star, 0.0, &mut map);
        assert_eq!(hl_tower_build(map, 3, HlPrecision::Standard, &mut tower), HlStatus::Ok);
        assert_eq!(hl_tower_depth(tower), 3);
        let mut d = 0.0;
        assert_eq!(hl_tower_log_delta(tower, 2, &mut d), HlStatus::Ok);
        assert_eq!(d, f64::NEG_INFINITY);
        assert_eq!(hl_tower_log_delta(tower, 0, &mut d), HlStatus::InvalidArgument);
        hl_tower_free(tower);
        hl_map_free(map);
    }
}

#[test]
fn critical_orbit_handle() {
    let mut star = 0.0;
    unsafe { hl_boundary_param(0.1, 8, HlPrecision::Standard, &mut star) };
    let mut map = ptr::null_mut();
    let mut co = ptr::null_mut();
    unsafe {
        hl_map_henon(star, 0.1, &mut map);
        assert_eq!(hl_critical_orbit_find(map, 10_000, 50_000, 30, &mut co), HlStatus::Ok);
        let (mut c0, mut c1, mut img) = ([0.0; 2], [0.0; 2], [0.0; 2]);
        assert_eq!(hl_critical_orbit_point(co, 0, c0.as_mut_ptr()), HlStatus::Ok);
        assert_eq!(hl_critical_orbit_point(co, 1, c1.as_mut_ptr()), HlStatus::Ok);
        hl_map_eval(map, c0[0], c0[1], img.as_mut_ptr(), ptr::null_mut());
        assert!((img[0] - c1[0]).abs() < 1e-12 && (img[1] - c1[1]).abs() < 1e-12);
        assert_eq!(hl_critical_orbit_point(co, i64::MIN, c0.as_mut_ptr()), HlStatus::InvalidArgument);
        hl_critical_orbit_free(co);
        hl_map_free(map);
    }
}

#[test]
fn pliss_and_odometer() {
    let seq = [100i64, 10, 100, 100, 20];
    let (mut holds, mut margin) = (false, 0.0);
    let s = unsafe { hl_pliss_check(seq.as_ptr(), seq.len(), 0, 100, 150, HlPlissKind::Preserving, &mut holds, &mut margin) };
    assert_eq!(s, HlStatus::Ok);
    assert!(holds && margin >= 0.0);
    let bad = [200i64, 1];
    let s = unsafe { hl_pliss_check(bad.as_ptr(), 2, 0, 100, 150, HlPlissKind::Absolute, &mut holds, &mut margin) };
    assert_eq!(s, HlStatus::Hypothesis);

    let mut digits = [2u32, 1, 0];
    let radices = [3u32, 2, 4];
    assert_eq!(unsafe { hl_odometer_add(digits.as_mut_ptr(), radices.as_ptr(), 3) }, HlStatus::Ok);
    assert_eq!(digits, [0, 0, 1]);
    let mut wrong = [5u32];
    assert_eq!(unsafe { hl_odometer_add(wrong.as_mut_ptr(), [2u32].as_ptr(), 1) }, HlStatus::Config);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/henon_lab.h")).unwrap();
    for name in [
        "hl_last_error_message",
        "hl_map_henon",
        "hl_map_eval",
        "hl_lyapunov",
        "hl_ladder_build",
        "hl_boundary_param",
        "hl_tower_build",
        "hl_tower_log_delta",
        "hl_critical_orbit_find",
        "hl_pliss_check",
        "hl_odometer_add",
        "typedef struct HlMap HlMap",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let dir = env!("CARGO_MANIFEST_DIR");
    if std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    // the static library is not part of the test build, so build it into a scratch target
    let target = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("capi");
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let status = std::process::Command::new(cargo)
        .args(["build", "--release", "--offline", "-p", "henon-lab-ffi", "--lib", "--target-dir"])
        .arg(&target)
        .status()
        .unwrap();
    assert!(status.success(), "building the static library failed");
    let lib = target.join("release/libhenon_lab_ffi.a");
    let out = target.join("smoke");
    let status = std::process::Command::new("cc")
        .args([&format!("{dir}/tests/smoke.c"), "-I", &format!("{dir}/include")])
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = std::process::Command::new(&out).output().unwrap();
    assert!(run.status.success(), "smoke program exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
