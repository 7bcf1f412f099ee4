//! Exercises the C ABI from Rust and, when a C compiler is available,
//! compiles a small C client against the committed header and the built
//! shared library.

use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use cellchar_ffi::*;

fn corner() -> cc_corner {
    cc_corner {
        vdd: 1.0,
        vth: 0.3,
        third_axis: 70.0,
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(cc_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn catalog_lifecycle_and_characterization() {
    unsafe {
        let tech = CString::new("silicon45").unwrap();
        let mut cat: *mut cc_catalog = std::ptr::null_mut();
        assert_eq!(cc_catalog_default(tech.as_ptr(), &mut cat), CC_OK);
        assert_eq!(cc_catalog_cell_count(cat), 33);

        let mut buf = [0 as c_char; 32];
        assert_eq!(
            cc_catalog_cell_name(cat, 0, buf.as_mut_ptr(), buf.len()),
            CC_OK
        );
        let first = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert_eq!(first, "AND2X1");

        let inv = CString::new("INVX1").unwrap();
        let mut arcs: usize = 0;
        assert_eq!(cc_catalog_arc_count(cat, inv.as_ptr(), &mut arcs), CC_OK);
        assert_eq!(arcs, 2);

        let c = corner();
        let mut point = cc_char_point::default();
        assert_eq!(
            cc_characterize(cat, inv.as_ptr(), 0, &c, 40.0, 5.0, &mut point),
            CC_OK
        );
        assert!(point.delay > 0.0);
        assert!(point.flip_energy > 0.0);
        assert_eq!(point.non_flip_energy, 0.0);
        assert_eq!(point.degenerate, 0);

        let mut cap = 0.0f64;
        assert_eq!(
            cc_pin_capacitance(cat, inv.as_ptr(), 0, &c, &mut cap),
            CC_OK
        );
        assert!((cap - 2.7).abs() < 1e-9, "INVX1 input cap, got {cap}");

        // error paths: unknown cell, bad arc, out-of-range corner
        let nope = CString::new("NOPEX1").unwrap();
        let code = cc_characterize(cat, nope.as_ptr(), 0, &c, 40.0, 5.0, &mut point);
        assert_eq!(code, CC_INVALID_ARGUMENT);
        assert!(last_error().contains("unknown cell"));

        let bad = cc_corner {
            vdd: 2.0,
            ..corner()
        };
        let code = cc_characterize(cat, inv.as_ptr(), 0, &bad, 40.0, 5.0, &mut point);
        assert_eq!(code, CC_INVALID_ARGUMENT);
        assert!(last_error().contains("vdd"));

        cc_catalog_free(cat);
    }
}

#[test]
fn library_write_roundtrip() {
    unsafe {
        let tech = CString::new("silicon45").unwrap();
        let mut cat: *mut cc_catalog = std::ptr::null_mut();
        assert_eq!(cc_catalog_default(tech.as_ptr(), &mut cat), CC_OK);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c_api.lib");
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let c = corner();
        assert_eq!(cc_oracle_library_write(cat, &c, 3, 3, cpath.as_ptr()), CC_OK);
        let text = std::fs::read_to_string(&path).unwrap();
        let lib = cellchar::libgen::parse_liberty(&text).unwrap();
        assert_eq!(lib.cells.len(), 33);
        cc_catalog_free(cat);
    }
}

#[test]
fn models_load_reports_missing_checkpoints() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
        let mut models: *mut cc_models = std::ptr::null_mut();
        let code = cc_models_load(cdir.as_ptr(), &mut models);
        assert_eq!(code, CC_IO_ERROR);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn null_arguments_are_rejected_not_crashing() {
    unsafe {
        let mut cat: *mut cc_catalog = std::ptr::null_mut();
        assert_eq!(
            cc_catalog_default(std::ptr::null(), &mut cat),
            CC_INVALID_ARGUMENT
        );
        assert_eq!(cc_catalog_cell_count(std::ptr::null()), 0);
        cc_catalog_free(std::ptr::null_mut()); // no-op
        let version = CStr::from_ptr(cc_version()).to_str().unwrap();
        assert!(!version.is_empty());
    }
}

/// Compile and run a C client against include/cellchar.h and the built
/// cdylib. Requires a C compiler on PATH.
#[test]
fn header_matches_abi() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include_dir = manifest.join("include");
    // target/debug, next to the directory holding this test binary
    let mut lib_dir = std::env::current_exe().unwrap();
    lib_dir.pop(); // test binary
    lib_dir.pop(); // deps/
    let so = lib_dir.join("libcellchar_ffi.so");
    assert!(so.exists(), "cdylib not built at {}", so.display());

    let cc = ["cc", "clang", "gcc"]
        .iter()
        .find(|c| {
            std::process::Command::new(c)
                .arg("--version")
                .output()
                .is_ok()
        })
        .copied();
    let Some(cc) = cc else {
        eprintln!("no C compiler found; skipping C client compile");
        return;
    };

    let dir = tempfile::tempdir().unwrap();
    let c_src = dir.path().join("client.c");
    std::fs::write(
        &c_src,
        r#"
#include <stdio.h>
#include <string.h>
#include "cellchar.h"

int main(void) {
    cc_catalog *cat = NULL;
    if (cc_catalog_default("silicon45", &cat) != CC_OK) return 1;
    if (cc_catalog_cell_count(cat) != 33) return 2;
    char name[32];
    if (cc_catalog_cell_name(cat, 0, name, sizeof name) != CC_OK) return 3;
    if (strcmp(name, "AND2X1") != 0) return 4;
    cc_corner corner = {1.0, 0.3, 70.0};
    cc_char_point point;
    if (cc_characterize(cat, "INVX1", 0, &corner, 40.0, 5.0, &point) != CC_OK) return 5;
    if (!(point.delay > 0.0)) return 6;
    cc_catalog_free(cat);
    printf("ok %s\n", cc_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("client");
    let out = std::process::Command::new(cc)
        .arg(&c_src)
        .arg("-I")
        .arg(&include_dir)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lcellchar_ffi")
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("compiler runs");
    assert!(
        out.status.success(),
        "compile failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = std::process::Command::new(&exe)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .expect("client runs");
    assert!(
        run.status.success(),
        "client exited {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stdout)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
