//! C ABI over the characterization toolkit: opaque handles, integer status
//! codes, and a thread-local last-error message. The matching header lives
//! in `include/cellchar.h` and is kept in sync by the `header_matches_abi`
//! test.

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cellchar::cli::load_models;
use cellchar::dataset::Corner;
use cellchar::libgen::{build_library, emit_liberty_to_path, LibrarySource, TaskModels};
use cellchar::netlist::{build_default_catalog, CellCatalog, Technology};
use cellchar::oracle::{enumerate_arcs, CharEngine, SurrogateParams};

pub const CC_OK: c_int = 0;
pub const CC_INVALID_ARGUMENT: c_int = 1;
pub const CC_PARSE_ERROR: c_int = 2;
pub const CC_IO_ERROR: c_int = 3;
pub const CC_NUMERIC_ERROR: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(cleaned).unwrap());
}

fn fail(code: c_int, msg: &str) -> c_int {
    set_error(msg);
    code
}

/// Opaque: cell catalog plus its device-model constants.
pub struct cc_catalog {
    catalog: CellCatalog,
    params: SurrogateParams,
}

/// Opaque: the five task models with their normalizations.
pub struct cc_models {
    models: TaskModels,
}

#[repr(C)]
#[derive(Clone, Copy)]
pub struct cc_corner {
    pub vdd: f64,
    pub vth: f64,
    /// Temperature in degC (silicon) or Cox in nF/cm2 (flexible).
    pub third_axis: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Default)]
pub struct cc_char_point {
    /// Technology time units; 0 when the arc keeps the output static.
    pub delay: f64,
    pub out_slew: f64,
    pub flip_energy: f64,
    pub non_flip_energy: f64,
    pub leakage_power: f64,
    pub degenerate: c_int,
}

fn guard<F: FnOnce() -> c_int>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => fail(CC_NUMERIC_ERROR, "internal panic"),
    }
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

fn corner_of(catalog: &cc_catalog, raw: &cc_corner) -> Corner {
    Corner {
        technology: catalog.catalog.technology,
        vdd: raw.vdd,
        vth: raw.vth,
        third_axis: raw.third_axis,
    }
}

/// Version string of the library; static storage.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build the default 33-cell catalog for `technology` ("silicon45" or
/// "flexible"). The handle must be released with `cc_catalog_free`.
///
/// # Safety
/// `technology` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_catalog_default(
    technology: *const c_char,
    out: *mut *mut cc_catalog,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return fail(CC_INVALID_ARGUMENT, "out pointer is null");
        }
        let Some(tech_str) = cstr(technology) else {
            return fail(CC_INVALID_ARGUMENT, "technology string is null or not UTF-8");
        };
        let Some(tech) = Technology::parse(tech_str) else {
            return fail(
                CC_INVALID_ARGUMENT,
                "technology must be silicon45 or flexible",
            );
        };
        let handle = Box::new(cc_catalog {
            catalog: build_default_catalog(tech),
            params: SurrogateParams::preset(tech),
        });
        *out = Box::into_raw(handle);
        CC_OK
    })
}

/// # Safety
/// `catalog` must come from `cc_catalog_default` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cc_catalog_free(catalog: *mut cc_catalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// # Safety
/// `catalog` must be a live handle (or null, which yields 0).
#[no_mangle]
pub unsafe extern "C" fn cc_catalog_cell_count(catalog: *const cc_catalog) -> usize {
    if catalog.is_null() {
        return 0;
    }
    (*catalog).catalog.len()
}

/// Copy the NUL-terminated name of cell `index` into `buf`.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cc_catalog_cell_name(
    catalog: *const cc_catalog,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> c_int {
    guard(|| {
        if catalog.is_null() || buf.is_null() {
            return fail(CC_INVALID_ARGUMENT, "null pointer");
        }
        let cells = (*catalog).catalog.cells();
        let Some(cell) = cells.get(index) else {
            return fail(CC_INVALID_ARGUMENT, "cell index out of range");
        };
        let bytes = cell.name.as_bytes();
        if bytes.len() + 1 > cap {
            return fail(CC_INVALID_ARGUMENT, "buffer too small");
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
        *buf.add(bytes.len()) = 0;
        CC_OK
    })
}

/// Number of input transitions (arcs) a cell exposes.
///
/// # Safety
/// Pointers must be valid; `cell` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_catalog_arc_count(
    catalog: *const cc_catalog,
    cell: *const c_char,
    out: *mut usize,
) -> c_int {
    guard(|| {
        if catalog.is_null() || out.is_null() {
            return fail(CC_INVALID_ARGUMENT, "null pointer");
        }
        let Some(name) = cstr(cell) else {
            return fail(CC_INVALID_ARGUMENT, "cell name is null or not UTF-8");
        };
        let Some(netlist) = (*catalog).catalog.get(name) else {
            return fail(CC_INVALID_ARGUMENT, "unknown cell");
        };
        match enumerate_arcs(netlist) {
            Ok(arcs) => {
                *out = arcs.len();
                CC_OK
            }
            Err(e) => fail(CC_NUMERIC_ERROR, &e.to_string()),
        }
    })
}

/// Characterize one arc of one cell at a corner and stimulus point.
///
/// # Safety
/// Pointers must be valid; `cell` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_characterize(
    catalog: *const cc_catalog,
    cell: *const c_char,
    arc_index: usize,
    corner: *const cc_corner,
    slew: f64,
    load: f64,
    out: *mut cc_char_point,
) -> c_int {
    guard(|| {
        if catalog.is_null() || corner.is_null() || out.is_null() {
            return fail(CC_INVALID_ARGUMENT, "null pointer");
        }
        let Some(name) = cstr(cell) else {
            return fail(CC_INVALID_ARGUMENT, "cell name is null or not UTF-8");
        };
        let cat = &*catalog;
        let Some(netlist) = cat.catalog.get(name) else {
            return fail(CC_INVALID_ARGUMENT, "unknown cell");
        };
        let full_corner = corner_of(cat, &*corner);
        if let Err(e) = full_corner.validate() {
            return fail(CC_INVALID_ARGUMENT, &e.to_string());
        }
        let arcs = match enumerate_arcs(netlist) {
            Ok(a) => a,
            Err(e) => return fail(CC_NUMERIC_ERROR, &e.to_string()),
        };
        let Some(arc) = arcs.get(arc_index) else {
            return fail(CC_INVALID_ARGUMENT, "arc index out of range");
        };
        let engine = CharEngine::new(netlist, &cat.params);
        match engine.characterize(arc, &full_corner, slew, load) {
            Ok(point) => {
                *out = cc_char_point {
                    delay: point.delay.unwrap_or(0.0),
                    out_slew: point.out_slew.unwrap_or(0.0),
                    flip_energy: point.flip_energy.unwrap_or(0.0),
                    non_flip_energy: point.non_flip_energy.unwrap_or(0.0),
                    leakage_power: point.leakage_power,
                    degenerate: c_int::from(point.degenerate),
                };
                CC_OK
            }
            Err(e) => fail(CC_NUMERIC_ERROR, &e.to_string()),
        }
    })
}

/// Input pin capacitance in fF.
///
/// # Safety
/// Pointers must be valid; `cell` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_pin_capacitance(
    catalog: *const cc_catalog,
    cell: *const c_char,
    pin: usize,
    corner: *const cc_corner,
    out: *mut f64,
) -> c_int {
    guard(|| {
        if catalog.is_null() || corner.is_null() || out.is_null() {
            return fail(CC_INVALID_ARGUMENT, "null pointer");
        }
        let Some(name) = cstr(cell) else {
            return fail(CC_INVALID_ARGUMENT, "cell name is null or not UTF-8");
        };
        let cat = &*catalog;
        let Some(netlist) = cat.catalog.get(name) else {
            return fail(CC_INVALID_ARGUMENT, "unknown cell");
        };
        if pin >= netlist.inputs.len() {
            return fail(CC_INVALID_ARGUMENT, "pin index out of range");
        }
        let full_corner = corner_of(cat, &*corner);
        let engine = CharEngine::new(netlist, &cat.params);
        *out = engine.pin_capacitance(pin, &full_corner);
        CC_OK
    })
}

/// Characterize the whole catalog at a corner and write a library file.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_oracle_library_write(
    catalog: *const cc_catalog,
    corner: *const cc_corner,
    n_slew: usize,
    n_load: usize,
    path: *const c_char,
) -> c_int {
    guard(|| {
        if catalog.is_null() || corner.is_null() {
            return fail(CC_INVALID_ARGUMENT, "null pointer");
        }
        let Some(path_str) = cstr(path) else {
            return fail(CC_INVALID_ARGUMENT, "path is null or not UTF-8");
        };
        let cat = &*catalog;
        let full_corner = corner_of(cat, &*corner);
        let lib = match build_library(
            &LibrarySource::Oracle(&cat.params),
            &cat.catalog,
            &full_corner,
            n_slew,
            n_load,
            1,
        ) {
            Ok(lib) => lib,
            Err(e) => return fail(CC_NUMERIC_ERROR, &e.to_string()),
        };
        match emit_liberty_to_path(&lib, Path::new(path_str)) {
            Ok(()) => CC_OK,
            Err(e) => fail(CC_IO_ERROR, &e.to_string()),
        }
    })
}

/// Load the five trained task models from a checkpoint directory.
///
/// # Safety
/// Pointers must be valid; `checkpoint_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_models_load(
    checkpoint_dir: *const c_char,
    out: *mut *mut cc_models,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return fail(CC_INVALID_ARGUMENT, "out pointer is null");
        }
        let Some(dir) = cstr(checkpoint_dir) else {
            return fail(CC_INVALID_ARGUMENT, "directory is null or not UTF-8");
        };
        match load_models(Path::new(dir)) {
            Ok(models) => {
                *out = Box::into_raw(Box::new(cc_models { models }));
                CC_OK
            }
            Err(e) => fail(CC_IO_ERROR, &e.to_string()),
        }
    })
}

/// # Safety
/// `models` must come from `cc_models_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cc_models_free(models: *mut cc_models) {
    if !models.is_null() {
        drop(Box::from_raw(models));
    }
}

/// Build a model-predicted library over the catalog and write it.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_models_library_write(
    models: *const cc_models,
    catalog: *const cc_catalog,
    corner: *const cc_corner,
    n_slew: usize,
    n_load: usize,
    path: *const c_char,
) -> c_int {
    guard(|| {
        if models.is_null() || catalog.is_null() || corner.is_null() {
            return fail(CC_INVALID_ARGUMENT, "null pointer");
        }
        let Some(path_str) = cstr(path) else {
            return fail(CC_INVALID_ARGUMENT, "path is null or not UTF-8");
        };
        let cat = &*catalog;
        let full_corner = corner_of(cat, &*corner);
        let lib = match build_library(
            &LibrarySource::Models(&(*models).models),
            &cat.catalog,
            &full_corner,
            n_slew,
            n_load,
            1,
        ) {
            Ok(lib) => lib,
            Err(e) => return fail(CC_NUMERIC_ERROR, &e.to_string()),
        };
        match emit_liberty_to_path(&lib, Path::new(path_str)) {
            Ok(()) => CC_OK,
            Err(e) => fail(CC_IO_ERROR, &e.to_string()),
        }
    })
}
