//! C interface. Objects cross the boundary as opaque pointers owned by the
//! caller and released with the matching `*_free`. Every fallible function
//! returns an [`MfStatus`]; on failure the message is available from
//! [`mf_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use migrate_fuse::config::RunConfig;
use migrate_fuse::geo::GeoHierarchy;
use migrate_fuse::harmonize::{harmonize, ipf_to_county_pops, solve_population_path, HarmonizeOptions, PopulationPaths};
use migrate_fuse::constraints::{ConstraintSet, PATH_YEARS};
use migrate_fuse::synth::{gen_ground_truth, generate_world, TruthSpec, WorldSpec};
use migrate_fuse::{commands, io, BlockPartition, Error, FlowMatrix, Level};

/// Result codes. Input errors and numerical failures use the same numbers
/// as the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Panic = 4,
}

/// A block-group hierarchy.
pub struct MfHierarchy(GeoHierarchy);

/// A square flow matrix.
pub struct MfMatrix(FlowMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> MfStatus {
    let code = if e.is_numerical() { MfStatus::Numerical } else { MfStatus::InvalidInput };
    set_error(e.to_string());
    code
}

fn guard(f: impl FnOnce() -> Result<(), MfStatus>) -> MfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            MfStatus::Panic
        }
    }
}

fn null(what: &str) -> MfStatus {
    set_error(format!("`{what}` is null"));
    MfStatus::NullPointer
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, MfStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("`{what}` is not UTF-8"));
        MfStatus::InvalidInput
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], MfStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, MfStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<T>(out: *mut T, v: T, what: &str) -> Result<(), MfStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Read a hierarchy CSV.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_hierarchy_read(path: *const c_char, out: *mut *mut MfHierarchy) -> MfStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        let h = io::read_hierarchy(&p).map_err(fail)?;
        out_arg(out, Box::into_raw(Box::new(MfHierarchy(h))), "out")
    })
}

/// A synthetic world with the given shape.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_hierarchy_synthetic(
    states: usize,
    counties_per_state: usize,
    tracts_per_county: usize,
    cbgs_per_tract: usize,
    seed: u64,
    out: *mut *mut MfHierarchy,
) -> MfStatus {
    guard(|| {
        let spec = WorldSpec {
            states,
            counties_per_state,
            tracts_per_county,
            cbgs_per_tract,
            seed,
        };
        let h = generate_world(&spec).map_err(fail)?;
        out_arg(out, Box::into_raw(Box::new(MfHierarchy(h))), "out")
    })
}

/// Number of block groups.
///
/// # Safety
/// `h` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mf_hierarchy_len(h: *const MfHierarchy) -> usize {
    h.as_ref().map_or(0, |h| h.0.len())
}

/// Number of counties.
///
/// # Safety
/// `h` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mf_hierarchy_county_count(h: *const MfHierarchy) -> usize {
    h.as_ref().map_or(0, |h| h.0.block_count(Level::County))
}

/// # Safety
/// `h` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mf_hierarchy_free(h: *mut MfHierarchy) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Build a matrix from `len` (row, col, value) triplets; duplicates add.
///
/// # Safety
/// The three arrays must hold `len` elements each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_from_triplets(
    n: usize,
    year: i32,
    rows: *const usize,
    cols: *const usize,
    values: *const f64,
    len: usize,
    out: *mut *mut MfMatrix,
) -> MfStatus {
    guard(|| {
        let r = slice_arg(rows, len, "rows")?;
        let c = slice_arg(cols, len, "cols")?;
        let v = slice_arg(values, len, "values")?;
        let t: Vec<(usize, usize, f64)> = (0..len).map(|k| (r[k], c[k], v[k])).collect();
        let m = FlowMatrix::from_triplets(n, year, t).map_err(fail)?;
        out_arg(out, Box::into_raw(Box::new(MfMatrix(m))), "out")
    })
}

/// Read a triplet CSV indexed by `h`.
///
/// # Safety
/// `path` must be a valid C string; `h` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_read(path: *const c_char, h: *const MfHierarchy, out: *mut *mut MfMatrix) -> MfStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        let h = ref_arg(h, "h")?;
        let m = io::read_matrix(&p, &h.0).map_err(fail)?;
        out_arg(out, Box::into_raw(Box::new(MfMatrix(m))), "out")
    })
}

/// Write a triplet CSV using the block-group ids of `h`.
///
/// # Safety
/// `m` and `h` must be valid; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_write(m: *const MfMatrix, h: *const MfHierarchy, path: *const c_char) -> MfStatus {
    guard(|| {
        let m = ref_arg(m, "m")?;
        let h = ref_arg(h, "h")?;
        let p = path_arg(path, "path")?;
        io::write_matrix(&p, &m.0, h.0.cbg_ids()).map_err(fail)
    })
}

/// Gravity ground truth on `h`.
///
/// # Safety
/// `h` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_synthetic_truth(
    h: *const MfHierarchy,
    year: i32,
    total_pop: f64,
    stay_rate: f64,
    seed: u64,
    out: *mut *mut MfMatrix,
) -> MfStatus {
    guard(|| {
        let h = ref_arg(h, "h")?;
        let spec = TruthSpec {
            year,
            total_pop,
            stay_rate,
            seed,
            ..TruthSpec::default()
        };
        let m = gen_ground_truth(&h.0, &spec).map_err(fail)?;
        out_arg(out, Box::into_raw(Box::new(MfMatrix(m))), "out")
    })
}

/// # Safety
/// `m` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_dim(m: *const MfMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.n())
}

/// Number of stored entries.
///
/// # Safety
/// `m` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_nnz(m: *const MfMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.nnz())
}

/// # Safety
/// `m` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_total(m: *const MfMatrix) -> f64 {
    m.as_ref().map_or(0.0, |m| m.0.total())
}

/// Entry (row, col); zero when not stored.
///
/// # Safety
/// `m` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_get(m: *const MfMatrix, row: usize, col: usize, out: *mut f64) -> MfStatus {
    guard(|| {
        let m = ref_arg(m, "m")?;
        if row >= m.0.n() || col >= m.0.n() {
            set_error(format!("({row}, {col}) outside a {0}×{0} matrix", m.0.n()));
            return Err(MfStatus::InvalidInput);
        }
        out_arg(out, m.0.get(row, col), "out")
    })
}

/// Copy row sums into `out`, which must hold `mf_matrix_dim` values.
///
/// # Safety
/// `m` must be valid and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_row_sums(m: *const MfMatrix, out: *mut f64, len: usize) -> MfStatus {
    guard(|| {
        let m = ref_arg(m, "m")?;
        if len != m.0.n() {
            set_error(format!("buffer holds {len} values, matrix has {} rows", m.0.n()));
            return Err(MfStatus::InvalidInput);
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&m.0.row_sums());
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mf_matrix_free(m: *mut MfMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Block IPF of `m` to county populations at the start (`prev`) and end
/// (`curr`) of the year. Both arrays hold one value per county in
/// hierarchy order. `tol` is absolute; `iterations` may be null.
///
/// # Safety
/// Pointers must be valid and arrays hold `n_counties` values.
#[no_mangle]
pub unsafe extern "C" fn mf_ipf_county(
    m: *const MfMatrix,
    h: *const MfHierarchy,
    prev: *const f64,
    curr: *const f64,
    n_counties: usize,
    max_iter: usize,
    tol: f64,
    out: *mut *mut MfMatrix,
    iterations: *mut usize,
) -> MfStatus {
    guard(|| {
        let m = ref_arg(m, "m")?;
        let h = ref_arg(h, "h")?;
        let prev = slice_arg(prev, n_counties, "prev")?;
        let curr = slice_arg(curr, n_counties, "curr")?;
        let counties = BlockPartition::from_hierarchy(&h.0, Level::County);
        let (e, report) = ipf_to_county_pops(&m.0, &counties, prev, curr, max_iter, tol).map_err(fail)?;
        if !iterations.is_null() {
            iterations.write(report.iterations);
        }
        out_arg(out, Box::into_raw(Box::new(MfMatrix(e))), "out")
    })
}

/// Harmonize `raw` against the marginals of `reference` with every stage
/// on; block-group targets are the reference's row sums.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_harmonize_to_reference(
    raw: *const MfMatrix,
    reference: *const MfMatrix,
    h: *const MfHierarchy,
    out: *mut *mut MfMatrix,
) -> MfStatus {
    guard(|| {
        let raw = ref_arg(raw, "raw")?;
        let t = ref_arg(reference, "reference")?;
        let h = ref_arg(h, "h")?;
        if raw.0.year() != t.0.year() {
            set_error("matrices are for different years".into());
            return Err(MfStatus::InvalidInput);
        }
        let c = ConstraintSet::from_matrix(&t.0, &h.0).map_err(fail)?;
        let paths = PopulationPaths::single_year(t.0.year() - 1, &t.0.row_sums());
        let (e, _) = harmonize(&raw.0, &h.0, &c, Some(&paths), &HarmonizeOptions::default()).map_err(fail)?;
        out_arg(out, Box::into_raw(Box::new(MfMatrix(e))), "out")
    })
}

/// Smooth 11 overlapping population observations (census 2010, then the
/// five-year surveys ending 2010 through 2019) into yearly populations
/// 2009 to 2019.
///
/// # Safety
/// `b` and `x` must hold 11 doubles; `residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn mf_population_path(b: *const f64, x: *mut f64, residual: *mut f64) -> MfStatus {
    guard(|| {
        let b = slice_arg(b, PATH_YEARS, "b")?;
        if x.is_null() {
            return Err(null("x"));
        }
        let mut arr = [0.0; PATH_YEARS];
        arr.copy_from_slice(b);
        let p = solve_population_path(&arr).map_err(fail)?;
        std::slice::from_raw_parts_mut(x, PATH_YEARS).copy_from_slice(&p.x);
        if !residual.is_null() {
            residual.write(p.residual);
        }
        Ok(())
    })
}

/// Run a command-line subcommand (`harmonize`, `validate`, ...) with a
/// config file. `overrides` holds `n_overrides` `key=value` strings.
///
/// # Safety
/// Strings must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn mf_run_command(
    command: *const c_char,
    config: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
) -> MfStatus {
    guard(|| {
        if command.is_null() {
            return Err(null("command"));
        }
        let cmd = CStr::from_ptr(command).to_string_lossy().into_owned();
        let cfg = path_arg(config, "config")?;
        let mut sets = Vec::with_capacity(n_overrides);
        for &p in slice_arg(overrides, n_overrides, "overrides")? {
            sets.push(path_arg(p, "override")?.to_string_lossy().into_owned());
        }
        let c = RunConfig::load(&cfg, &sets).map_err(fail)?;
        let f = match cmd.as_str() {
            "process-records" => commands::cmd_process_records,
            "harmonize" => commands::cmd_harmonize,
            "validate" => commands::cmd_validate,
            "synth-eval" => commands::cmd_synth_eval,
            "analyze" => commands::cmd_analyze,
            "redact" => commands::cmd_redact,
            "gen-fixture" => commands::cmd_gen_fixture,
            other => {
                set_error(format!("unknown command `{other}`"));
                return Err(MfStatus::InvalidInput);
            }
        };
        f(&c).map(|_| ()).map_err(fail)
    })
}
