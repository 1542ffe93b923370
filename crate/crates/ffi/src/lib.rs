//! C ABI over the henon-lab library.
//!
//! Objects live behind opaque handles created by `hl_*_new`/`hl_*_build` functions and
//! released by the matching `hl_*_free`. Every fallible call returns an [`HlStatus`];
//! the message of the last failure on the calling thread is available from
//! [`hl_last_error_message`].

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use henon_lab::critical::{find_critical_orbit, sample_limit_set, CriticalOrbit};
use henon_lab::dynamics::HenonLikeMap;
use henon_lab::odometer::{odometer_add, OdometerState};
use henon_lab::pesin::{lyapunov_exponents, pliss_density_check, PlissKind, PlissQuery};
use henon_lab::renorm1d::SuperstableLadder;
use henon_lab::renorm2d::{boundary_of_chaos_param, renorm_sequence, RenormTower};
use henon_lab::{LabError, Precision};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Escape = 4,
    Bracket = 5,
    Tolerance = 6,
    NotRenormalizable = 7,
    Sample = 8,
    Continuation = 9,
    Depth = 10,
    Fit = 11,
    Hypothesis = 12,
    NoTangency = 13,
    Field = 14,
    Membership = 15,
    OrderOracle = 16,
    Config = 17,
    Io = 18,
    Numerical = 19,
    Panic = 99,
}

impl From<&LabError> for HlStatus {
    fn from(e: &LabError) -> Self {
        match e {
            LabError::Domain { .. } => HlStatus::Domain,
            LabError::Escape { .. } => HlStatus::Escape,
            LabError::Bracket { .. } => HlStatus::Bracket,
            LabError::Tolerance { .. } => HlStatus::Tolerance,
            LabError::NotRenormalizable(_) => HlStatus::NotRenormalizable,
            LabError::Sample { .. } => HlStatus::Sample,
            LabError::Continuation(_) => HlStatus::Continuation,
            LabError::Depth { .. } => HlStatus::Depth,
            LabError::Fit { .. } | LabError::ShrinkHint { .. } => HlStatus::Fit,
            LabError::Hypothesis { .. } => HlStatus::Hypothesis,
            LabError::NoTangency { .. } => HlStatus::NoTangency,
            LabError::Field(_) => HlStatus::Field,
            LabError::Membership(_) => HlStatus::Membership,
            LabError::OrderOracle(_) => HlStatus::OrderOracle,
            LabError::Config(_) => HlStatus::Config,
            LabError::Io(_) => HlStatus::Io,
            _ => HlStatus::Numerical,
        }
    }
}

/// Arithmetic mode, mirroring the library's `Precision`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HlPrecision {
    Standard = 0,
    Compensated = 1,
}

impl From<HlPrecision> for Precision {
    fn from(p: HlPrecision) -> Self {
        match p {
            HlPrecision::Standard => Precision::Standard,
            HlPrecision::Compensated => Precision::Compensated,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HlPlissKind {
    Preserving = 0,
    Reversing = 1,
    Absolute = 2,
}

/// Opaque Henon-like map.
pub struct HlMap(HenonLikeMap);

/// Opaque superstable ladder.
pub struct HlLadder(SuperstableLadder);

/// Opaque renormalization tower.
pub struct HlTower(RenormTower);

/// Opaque critical orbit.
pub struct HlCriticalOrbit(CriticalOrbit);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, recording the message of any error or panic.
fn guard(f: impl FnOnce() -> Result<(), HlStatus>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside henon-lab".into());
            HlStatus::Panic
        }
    }
}

fn lab<T>(r: henon_lab::Result<T>) -> Result<T, HlStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        HlStatus::from(&e)
    })
}

fn non_null<T>(p: *const T) -> Result<(), HlStatus> {
    if p.is_null() {
        set_error("null pointer argument".into());
        Err(HlStatus::NullPointer)
    } else {
        Ok(())
    }
}

fn invalid(msg: &str) -> HlStatus {
    set_error(msg.into());
    HlStatus::InvalidArgument
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to `len`) and
/// returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// `F(x, y) = (x^2 + a - b y, x)` on the default domain.
///
/// # Safety
/// `out` must be a valid pointer; the handle written there is released with [`hl_map_free`].
#[no_mangle]
pub unsafe extern "C" fn hl_map_henon(a: f64, b: f64, out: *mut *mut HlMap) -> HlStatus {
    guard(|| {
        non_null(out)?;
        if !(a.is_finite() && b.is_finite()) {
            return Err(invalid("a and b must be finite"));
        }
        *out = Box::into_raw(Box::new(HlMap(HenonLikeMap::henon(a, b))));
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a handle from [`hl_map_henon`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hl_map_free(map: *mut HlMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Image of `(x, y)` and the row-major Jacobian `[dx/dx, dx/dy, dy/dx, dy/dy]` there;
/// `jac` may be null.
///
/// # Safety
/// `map` must be a live handle; `out` must hold 2 doubles and `jac` 4 when non-null.
#[no_mangle]
pub unsafe extern "C" fn hl_map_eval(map: *const HlMap, x: f64, y: f64, out: *mut f64, jac: *mut f64) -> HlStatus {
    guard(|| {
        non_null(map)?;
        non_null(out)?;
        let (p, j) = lab((*map).0.eval_jac([x, y]))?;
        *out = p[0];
        *out.add(1) = p[1];
        if !jac.is_null() {
            for (k, v) in [j.m[0][0], j.m[0][1], j.m[1][0], j.m[1][1]].into_iter().enumerate() {
                *jac.add(k) = v;
            }
        }
        Ok(())
    })
}

/// Lyapunov exponents of the orbit of `(x, y)` after `transient` steps, over `length` steps.
///
/// # Safety
/// `map` must be a live handle; `chi1` and `chi2` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hl_lyapunov(
    map: *const HlMap,
    x: f64,
    y: f64,
    transient: usize,
    length: usize,
    chi1: *mut f64,
    chi2: *mut f64,
) -> HlStatus {
    guard(|| {
        non_null(map)?;
        non_null(chi1)?;
        non_null(chi2)?;
        let s = lab(sample_limit_set(&(*map).0, [x, y], transient, length))?;
        let (c1, c2) = lab(lyapunov_exponents(&s))?;
        *chi1 = c1;
        *chi2 = c2;
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer; release the handle with [`hl_ladder_free`].
#[no_mangle]
pub unsafe extern "C" fn hl_ladder_build(levels: usize, precision: HlPrecision, out: *mut *mut HlLadder) -> HlStatus {
    guard(|| {
        non_null(out)?;
        let l = lab(SuperstableLadder::build(levels, precision.into()))?;
        *out = Box::into_raw(Box::new(HlLadder(l)));
        Ok(())
    })
}

/// # Safety
/// `ladder` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_ladder_free(ladder: *mut HlLadder) {
    if !ladder.is_null() {
        drop(Box::from_raw(ladder));
    }
}

/// Superstable parameter `a_n` of level `n`.
///
/// # Safety
/// `ladder` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hl_ladder_param(ladder: *const HlLadder, n: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        non_null(ladder)?;
        non_null(out)?;
        let l = &(*ladder).0;
        if n > l.max_level() {
            return Err(invalid("level beyond the ladder"));
        }
        *out = l.a(n);
        Ok(())
    })
}

/// Feigenbaum ratio at level `n >= 2`.
///
/// # Safety
/// `ladder` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hl_ladder_ratio(ladder: *const HlLadder, n: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        non_null(ladder)?;
        non_null(out)?;
        let l = &(*ladder).0;
        if n < 2 || n > l.max_level() {
            return Err(invalid("ratio level must lie in 2..=max level"));
        }
        *out = lab(l.feigenbaum_ratio(n))?;
        Ok(())
    })
}

/// `a_*(b)` from `max_level` levels of trace-zero cycles.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hl_boundary_param(b: f64, max_level: usize, precision: HlPrecision, out: *mut f64) -> HlStatus {
    guard(|| {
        non_null(out)?;
        *out = lab(boundary_of_chaos_param(b, max_level, precision.into()))?.a_star;
        Ok(())
    })
}

/// Renormalization tower of `map` to depth `depth`.
///
/// # Safety
/// `map` must be a live handle and `out` valid; release with [`hl_tower_free`].
#[no_mangle]
pub unsafe extern "C" fn hl_tower_build(
    map: *const HlMap,
    depth: usize,
    precision: HlPrecision,
    out: *mut *mut HlTower,
) -> HlStatus {
    guard(|| {
        non_null(map)?;
        non_null(out)?;
        let t = lab(renorm_sequence((*map).0.clone(), depth, precision.into()))?;
        *out = Box::into_raw(Box::new(HlTower(t)));
        Ok(())
    })
}

/// # Safety
/// `tower` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_tower_free(tower: *mut HlTower) {
    if !tower.is_null() {
        drop(Box::from_raw(tower));
    }
}

/// Number of levels in the tower, `0` for a null handle.
///
/// # Safety
/// `tower` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_tower_depth(tower: *const HlTower) -> usize {
    if tower.is_null() {
        0
    } else {
        (*tower).0.levels.len()
    }
}

/// `log delta_n` (natural log) of level `n >= 1`; `-INFINITY` for a degenerate level.
///
/// # Safety
/// `tower` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hl_tower_log_delta(tower: *const HlTower, n: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        non_null(tower)?;
        non_null(out)?;
        let levels = &(*tower).0.levels;
        let level = n.checked_sub(1).and_then(|k| levels.get(k)).ok_or_else(|| invalid("no such level"))?;
        *out = level.log_delta_n;
        Ok(())
    })
}

/// Critical orbit of `map` located from a sample orbit of `(0, 0)`.
///
/// # Safety
/// `map` must be a live handle and `out` valid; release with [`hl_critical_orbit_free`].
#[no_mangle]
pub unsafe extern "C" fn hl_critical_orbit_find(
    map: *const HlMap,
    transient: usize,
    length: usize,
    horizon: usize,
    out: *mut *mut HlCriticalOrbit,
) -> HlStatus {
    guard(|| {
        non_null(map)?;
        non_null(out)?;
        let s = lab(sample_limit_set(&(*map).0, [0.0, 0.0], transient, length))?;
        let co = lab(find_critical_orbit(&(*map).0, &s, horizon))?;
        *out = Box::into_raw(Box::new(HlCriticalOrbit(co)));
        Ok(())
    })
}

/// # Safety
/// `orbit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_critical_orbit_free(orbit: *mut HlCriticalOrbit) {
    if !orbit.is_null() {
        drop(Box::from_raw(orbit));
    }
}

/// `c_m` for `m` within the stored stretch; `c0` and `c1` are `m = 0, 1`.
///
/// # Safety
/// `orbit` must be a live handle and `out` hold 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_critical_orbit_point(orbit: *const HlCriticalOrbit, m: i64, out: *mut f64) -> HlStatus {
    guard(|| {
        non_null(orbit)?;
        non_null(out)?;
        let p = (*orbit).0.point(m).ok_or_else(|| invalid("index outside the stored orbit"))?;
        *out = p[0];
        *out.add(1) = p[1];
        Ok(())
    })
}

/// Exact density check of Pliss moments for an integer sequence.
///
/// # Safety
/// `seq` must point to `len` values; `holds` and `margin` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hl_pliss_check(
    seq: *const i64,
    len: usize,
    alpha1: i64,
    alpha2: i64,
    alpha3: i64,
    kind: HlPlissKind,
    holds: *mut bool,
    margin: *mut f64,
) -> HlStatus {
    guard(|| {
        non_null(seq)?;
        non_null(holds)?;
        non_null(margin)?;
        let values = std::slice::from_raw_parts(seq, len).to_vec();
        let q = lab(PlissQuery::new(values, alpha1, alpha2, alpha3))?;
        let kind = match kind {
            HlPlissKind::Preserving => PlissKind::Preserving,
            HlPlissKind::Reversing => PlissKind::Reversing,
            HlPlissKind::Absolute => PlissKind::Absolute,
        };
        let c = lab(pliss_density_check(&q, kind))?;
        *holds = c.holds;
        *margin = c.margin;
        Ok(())
    })
}

/// Adds one to the little-endian mixed-radix `digits` in place, with carry.
///
/// # Safety
/// `digits` and `radices` must each point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn hl_odometer_add(digits: *mut u32, radices: *const u32, len: usize) -> HlStatus {
    guard(|| {
        non_null(digits)?;
        non_null(radices)?;
        let d = std::slice::from_raw_parts_mut(digits, len);
        let r = std::slice::from_raw_parts(radices, len).to_vec();
        let s = lab(OdometerState::new(d.to_vec(), r))?;
        d.copy_from_slice(&odometer_add(&s).digits);
        Ok(())
    })
}
