//! C ABI over the `mobile-maps` library.
//!
//! Objects cross the boundary as opaque handles created by `mm_*_new` style
//! functions and released by the matching `mm_*_free`. Every fallible call
//! returns an [`MmStatus`] code; on failure `mm_last_error` describes the
//! most recent error on the calling thread. Strings returned by the library
//! are owned by the caller and released with `mm_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mobile_maps::harness::{self, SuiteOptions};
use mobile_maps::laws::mobile::ConditionedSampler;
use mobile_maps::maps::{self, Encoded, HalfEdgeMap, Sign, WeightSeq};
use mobile_maps::metrics::{gh_distance_exact, FiniteMetricMeasureSpace};
use mobile_maps::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Status codes.
#[allow(non_camel_case_types)]
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmStatus {
    MM_OK = 0,
    MM_ERR_NULL = 1,
    MM_ERR_DOMAIN = 2,
    MM_ERR_PARSE = 3,
    MM_ERR_INVALID = 4,
    MM_ERR_EXHAUSTED = 5,
    MM_ERR_CAP = 6,
    MM_ERR_PANIC = 7,
}

use MmStatus::*;

/// Root sign of a map: positive, null or negative.
pub const MM_SIGN_PLUS: i32 = 1;
pub const MM_SIGN_NULL: i32 = 0;
pub const MM_SIGN_MINUS: i32 = -1;

/// Sampler of Boltzmann maps with its random state.
pub struct MmSampler {
    sampler: ConditionedSampler,
    rng: ChaCha8Rng,
}

/// A rooted pointed map, with its mobile when it was sampled or encoded.
pub struct MmMap {
    map: HalfEdgeMap,
    mobile: Option<mobile_maps::tree_core::LabeledTypedTree>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MmStatus {
    match e {
        Error::Parse(_) => MM_ERR_PARSE,
        Error::Domain(_) | Error::VertexMap | Error::NegativeMap => MM_ERR_DOMAIN,
        Error::Exhausted { .. } | Error::NonConvergence { .. } | Error::Overflow { .. } => MM_ERR_EXHAUSTED,
        Error::CapExceeded(_) => MM_ERR_CAP,
        _ => MM_ERR_INVALID,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), MmStatus>) -> MmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MM_OK,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            MM_ERR_PANIC
        }
    }
}

fn lib<T>(r: mobile_maps::Result<T>) -> Result<T, MmStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null() -> MmStatus {
    set_error("null pointer argument".into());
    MM_ERR_NULL
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, MmStatus> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|e| {
        set_error(format!("string is not UTF-8: {e}"));
        MM_ERR_PARSE
    })
}

fn give_string(s: String, out: *mut *mut c_char) -> Result<(), MmStatus> {
    if out.is_null() {
        return Err(null());
    }
    let c = CString::new(s).map_err(|_| {
        set_error("interior NUL in output".into());
        MM_ERR_INVALID
    })?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn sign_of(code: i32) -> Result<Sign, MmStatus> {
    match code {
        MM_SIGN_PLUS => Ok(Sign::Plus),
        MM_SIGN_NULL => Ok(Sign::Null),
        MM_SIGN_MINUS => Ok(Sign::Minus),
        _ => {
            set_error(format!("unknown sign code {code}"));
            Err(MM_ERR_DOMAIN)
        }
    }
}

/// Message of the last error on this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn mm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a sampler for face weights given as JSON, e.g. `{"5":1}`.
/// Weights without a fixed point are rescaled to criticality.
///
/// # Safety
/// `q_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_sampler_new(q_json: *const c_char, seed: u64, out: *mut *mut MmSampler) -> MmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let q = lib(WeightSeq::from_json(read_str(q_json)?))?;
        let sampler = lib(harness::sampler_for(&q))?;
        *out = Box::into_raw(Box::new(MmSampler {
            sampler,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from `mm_sampler_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn mm_sampler_free(s: *mut MmSampler) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Samples a map with `n_vertices` vertices and root sign `sign`.
///
/// # Safety
/// `s` must be a live sampler and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_sample_map(s: *mut MmSampler, n_vertices: usize, sign: i32, out: *mut *mut MmMap) -> MmStatus {
    guard(|| {
        if s.is_null() || out.is_null() {
            return Err(null());
        }
        let s = &mut *s;
        let sign = sign_of(sign)?;
        let Encoded { map, mobile, .. } =
            lib(maps::boltzmann_sample(&mut s.sampler, n_vertices, sign, &mut s.rng, 10_000_000))?;
        *out = Box::into_raw(Box::new(MmMap {
            map,
            mobile: Some(mobile),
        }));
        Ok(())
    })
}

/// Parses a map from its text form.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_map_from_text(text: *const c_char, out: *mut *mut MmMap) -> MmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let map = lib(HalfEdgeMap::from_text(read_str(text)?.trim()))?;
        *out = Box::into_raw(Box::new(MmMap { map, mobile: None }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mm_map_free(m: *mut MmMap) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Vertex, edge and face counts.
///
/// # Safety
/// `m` must be a live map; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mm_map_counts(m: *const MmMap, vertices: *mut usize, edges: *mut usize, faces: *mut usize) -> MmStatus {
    guard(|| {
        if m.is_null() || vertices.is_null() || edges.is_null() || faces.is_null() {
            return Err(null());
        }
        let m = &(*m).map;
        *vertices = m.n_vertices();
        *edges = m.n_edges();
        *faces = m.n_faces();
        Ok(())
    })
}

/// Root sign as one of the `MM_SIGN_*` codes.
///
/// # Safety
/// `m` must be a live map and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_map_sign(m: *const MmMap, out: *mut i32) -> MmStatus {
    guard(|| {
        if m.is_null() || out.is_null() {
            return Err(null());
        }
        *out = match lib((*m).map.classify_sign())? {
            Sign::Plus => MM_SIGN_PLUS,
            Sign::Null => MM_SIGN_NULL,
            Sign::Minus => MM_SIGN_MINUS,
        };
        Ok(())
    })
}

/// Graph distance between vertices `u` and `v`.
///
/// # Safety
/// `m` must be a live map and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_map_distance(m: *const MmMap, u: usize, v: usize, out: *mut usize) -> MmStatus {
    guard(|| {
        if m.is_null() || out.is_null() {
            return Err(null());
        }
        let m = &(*m).map;
        if u >= m.n_vertices() || v >= m.n_vertices() {
            set_error(format!("vertex out of range (n = {})", m.n_vertices()));
            return Err(MM_ERR_DOMAIN);
        }
        *out = m.bfs_distance(u)[v];
        Ok(())
    })
}

/// Text form of the map; free with `mm_string_free`.
///
/// # Safety
/// `m` must be a live map and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_map_to_text(m: *const MmMap, out: *mut *mut c_char) -> MmStatus {
    guard(|| {
        if m.is_null() {
            return Err(null());
        }
        give_string((*m).map.to_text(), out)
    })
}

/// Mobile of the map as JSON, encoding it first when needed (negative maps
/// are encoded after reversing the root); free with `mm_string_free`.
///
/// # Safety
/// `m` must be a live map and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_map_mobile_json(m: *mut MmMap, out: *mut *mut c_char) -> MmStatus {
    guard(|| {
        if m.is_null() {
            return Err(null());
        }
        let m = &mut *m;
        if m.mobile.is_none() {
            let mut map = m.map.clone();
            if lib(map.classify_sign())? == Sign::Minus {
                map = lib(map.reverse_root())?;
            }
            m.mobile = Some(lib(maps::bdg_forward(&map))?.mobile);
        }
        give_string(m.mobile.as_ref().expect("set above").to_json_string(), out)
    })
}

/// Exact Gromov-Hausdorff distance between two finite metric spaces given
/// as row-major distance matrices of sizes `nx` and `ny` (at most 7 points).
///
/// # Safety
/// `dx` must hold `nx * nx` and `dy` `ny * ny` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mm_gh_distance(dx: *const f64, nx: usize, dy: *const f64, ny: usize, out: *mut f64) -> MmStatus {
    guard(|| {
        if dx.is_null() || dy.is_null() || out.is_null() {
            return Err(null());
        }
        let space = |d: *const f64, n: usize| {
            let flat = std::slice::from_raw_parts(d, n * n);
            lib(FiniteMetricMeasureSpace::uniform(flat.chunks(n.max(1)).map(|r| r.to_vec()).collect()))
        };
        *out = lib(gh_distance_exact(&space(dx, nx)?, &space(dy, ny)?))?;
        Ok(())
    })
}

/// Runs a named verification suite with default sizes. Writes the JSON
/// report array to `report` (free with `mm_string_free`, may be null) and
/// whether every report passed to `all_pass`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `all_pass` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mm_verify_suite(name: *const c_char, seed: u64, all_pass: *mut i32, report: *mut *mut c_char) -> MmStatus {
    guard(|| {
        if all_pass.is_null() {
            return Err(null());
        }
        let opts = SuiteOptions {
            seed,
            ..SuiteOptions::default()
        };
        let reports = lib(harness::run_suite(read_str(name)?, &opts))?;
        *all_pass = i32::from(reports.iter().all(|r| r.pass));
        if !report.is_null() {
            let json = serde_json::to_string(&reports).map_err(|e| {
                set_error(e.to_string());
                MM_ERR_INVALID
            })?;
            give_string(json, report)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Parse("x".into())), MM_ERR_PARSE);
        assert_eq!(status_of(&Error::CapExceeded(9)), MM_ERR_CAP);
        assert_eq!(status_of(&Error::Exhausted { attempts: 1 }), MM_ERR_EXHAUSTED);
        assert_eq!(sign_of(7), Err(MM_ERR_DOMAIN));
        assert_eq!(sign_of(MM_SIGN_NULL), Ok(Sign::Null));
    }

    #[test]
    fn guard_catches_panics() {
        assert_eq!(guard(|| panic!("boom")), MM_ERR_PANIC);
        assert_eq!(guard(|| Ok(())), MM_OK);
    }
}
