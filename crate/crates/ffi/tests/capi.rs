use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use gwsos_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let mut needed = 0usize;
    unsafe { gwsos_last_error(buf.as_mut_ptr(), buf.len(), &mut needed) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn space(d: &[f64], m: usize) -> *mut GwsosSpace {
    let mut out = ptr::null_mut();
    let st = unsafe { gwsos_space_from_distances(d.as_ptr(), ptr::null(), m, &mut out) };
    assert_eq!(st, GwsosStatus::Ok, "{}", last_error());
    out
}

#[test]
fn derived_instance_end_to_end() {
    let x = space(&[0.0, 1.0, 1.0, 0.0], 2);
    let y = space(&[0.0, 2.0, 2.0, 0.0], 2);
    let mut sol = ptr::null_mut();
    let st = unsafe { gwsos_solve(x, y, 2.0, 1.0, GwsosHierarchy::FirstLevel, 1, 1e-6, 200_000, &mut sol) };
    assert_eq!(st, GwsosStatus::Ok, "{}", last_error());

    let (mut status, mut iters, mut lb, mut ub, mut eig, mut err, mut solved) =
        (GwsosSolveStatus::NumericalFailure, 0usize, 0.0, 0.0, 0.0, 0.0, false);
    let st = unsafe {
        gwsos_solution_summary(sol, &mut status, &mut iters, &mut lb, &mut ub, &mut eig, &mut err, &mut solved)
    };
    assert_eq!(st, GwsosStatus::Ok);
    assert_eq!(status, GwsosSolveStatus::Optimal);
    assert!(iters > 0);
    assert!((0.5 - 1e-4..=0.5 + 1e-6).contains(&lb));
    assert!(solved);
    assert!(err >= 1.0 - 1e-9);

    let mut needed = 0usize;
    let st = unsafe { gwsos_solution_coupling(sol, ptr::null_mut(), 0, &mut needed) };
    assert_eq!(st, GwsosStatus::BufferTooSmall);
    assert_eq!(needed, 4);
    let mut buf = [0.0; 4];
    let st = unsafe { gwsos_solution_coupling(sol, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) };
    assert_eq!(st, GwsosStatus::Ok);
    assert!((buf.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let mut value = 0.0;
    let mut plan = [0.0; 4];
    let st = unsafe { gwsos_oracle(x, y, 2.0, 1.0, 16, 0, &mut value, plan.as_mut_ptr()) };
    assert_eq!(st, GwsosStatus::Ok);
    assert!((value - 0.5).abs() <= 1e-9);
    assert!(lb <= value + 1e-5);

    unsafe {
        gwsos_solution_free(sol);
        gwsos_space_free(x);
        gwsos_space_free(y);
    }
}

#[test]
fn points_and_distance() {
    let pts = [0.0, 0.0, 3.0, 4.0];
    let mut x = ptr::null_mut();
    let st = unsafe { gwsos_space_from_points(pts.as_ptr(), ptr::null(), 2, 2, &mut x) };
    assert_eq!(st, GwsosStatus::Ok);
    assert_eq!(unsafe { gwsos_space_size(x) }, 2);
    let mut d = -1.0;
    let st = unsafe { gwsos_distance(x, x, 2.0, 1, GwsosHierarchy::Schmudgen, &mut d) };
    assert_eq!(st, GwsosStatus::Ok, "{}", last_error());
    assert!((0.0..=1e-5).contains(&d), "{d}");
    unsafe { gwsos_space_free(x) };
}

#[test]
fn zero_weight_atoms_are_dropped() {
    let d = [0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0];
    let w = [0.5, 0.0, 0.5];
    let mut x = ptr::null_mut();
    let st = unsafe { gwsos_space_from_distances(d.as_ptr(), w.as_ptr(), 3, &mut x) };
    assert_eq!(st, GwsosStatus::Ok);
    assert_eq!(unsafe { gwsos_space_size(x) }, 2);
    unsafe { gwsos_space_free(x) };
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut out = ptr::null_mut();
    let bad = [0.0, -1.0, -1.0, 0.0];
    let st = unsafe { gwsos_space_from_distances(bad.as_ptr(), ptr::null(), 2, &mut out) };
    assert_eq!(st, GwsosStatus::InvalidArgument);
    assert!(last_error().contains("negative"));
    assert!(out.is_null());

    let st = unsafe { gwsos_space_from_distances(ptr::null(), ptr::null(), 2, &mut out) };
    assert_eq!(st, GwsosStatus::NullPointer);

    let x = space(&[0.0, 1.0, 1.0, 0.0], 2);
    let mut sol = ptr::null_mut();
    let st = unsafe { gwsos_solve(x, ptr::null(), 2.0, 1.0, GwsosHierarchy::FirstLevel, 1, 1e-6, 10, &mut sol) };
    assert_eq!(st, GwsosStatus::NullPointer);
    let st = unsafe { gwsos_solve(x, x, 2.0, 1.0, GwsosHierarchy::FirstLevel, 2, 1e-6, 10, &mut sol) };
    assert_eq!(st, GwsosStatus::InvalidArgument);
    assert!(last_error().contains("level"));
    let st = unsafe { gwsos_solve(x, x, 0.5, 1.0, GwsosHierarchy::Schmudgen, 1, 1e-6, 10, &mut sol) };
    assert_eq!(st, GwsosStatus::InvalidArgument);
    assert!(sol.is_null());
    unsafe { gwsos_space_free(x) };

    let mut small = [0 as std::ffi::c_char; 4];
    let mut needed = 0usize;
    let st = unsafe { gwsos_last_error(small.as_mut_ptr(), small.len(), &mut needed) };
    assert_eq!(st, GwsosStatus::BufferTooSmall);
    assert!(needed > 3);
    assert_eq!(small[3], 0);
}

#[test]
fn hierarchy_names_and_version() {
    let mut h = GwsosHierarchy::Schmudgen;
    let st = unsafe { gwsos_hierarchy_from_name(c"putinar".as_ptr(), &mut h) };
    assert_eq!(st, GwsosStatus::Ok);
    assert_eq!(h, GwsosHierarchy::Putinar);
    let st = unsafe { gwsos_hierarchy_from_name(c"lasserre".as_ptr(), &mut h) };
    assert_eq!(st, GwsosStatus::InvalidArgument);
    let v = unsafe { CStr::from_ptr(gwsos_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn free_accepts_null() {
    unsafe {
        gwsos_space_free(ptr::null_mut());
        gwsos_solution_free(ptr::null_mut());
    }
    assert_eq!(unsafe { gwsos_space_size(ptr::null()) }, 0);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/gwsos.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["gwsos_solve", "gwsos_space_free", "gwsos_last_error", "GWSOS_STATUS_BUFFER_TOO_SMALL"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(cc) = which_cc() else {
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ GwsosSpace *s = 0; size_t n = gwsos_space_size(s); (void)n; return GWSOS_STATUS_OK; }}\n"
        ),
    )
    .unwrap();
    let out = Command::new(cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
