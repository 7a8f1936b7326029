//! C interface to coopgrid.
//!
//! Communities and games are opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible function
//! returns a [`CgStatus`]; on failure a message is available from
//! [`cg_last_error`] on the same thread. Outputs are written only on
//! success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coopgrid::alloc::{self, Mechanism, ProportionalRule};
use coopgrid::game::{self, CoalitionGame, Scheme};
use coopgrid::model::{self, Coalition, Prosumer, QuadDevice, TariffHour};
use coopgrid::{solver, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Infeasible = 3,
    SizeLimit = 4,
    SolverFailure = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgScheme {
    Centralized = 0,
    Decentralized = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgMechanism {
    EqualDivision = 0,
    Egalitarian = 1,
    Proportional = 2,
    NetConsumption = 3,
    Shapley = 4,
    Dnem = 5,
}

/// Quadratic device: utility `alpha*d - beta*d^2/2` on `[d_min, d_max]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgDevice {
    pub alpha: f64,
    pub beta: f64,
    pub d_min: f64,
    pub d_max: f64,
}

/// Opaque list of prosumers.
pub struct CgCommunity {
    prosumers: Vec<Prosumer>,
}

/// Opaque coalition game of a community for one tariff hour.
pub struct CgGame {
    community: Vec<Prosumer>,
    game: CoalitionGame,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CgStatus {
    match err {
        Error::InfeasibleProsumer { .. } => CgStatus::Infeasible,
        Error::SizeLimit { .. } => CgStatus::SizeLimit,
        e if !e.is_input_error() => CgStatus::SolverFailure,
        _ => CgStatus::InvalidInput,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CgStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CgStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CgStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either null or a pointer to a live value.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a writable pointer.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

fn to_scheme(s: CgScheme) -> Scheme {
    match s {
        CgScheme::Centralized => Scheme::Centralized,
        CgScheme::Decentralized => Scheme::Decentralized,
    }
}

fn to_mechanism(m: CgMechanism) -> Mechanism {
    match m {
        CgMechanism::EqualDivision => Mechanism::EqualDivision,
        CgMechanism::Egalitarian => Mechanism::Egalitarian,
        CgMechanism::Proportional => Mechanism::Proportional,
        CgMechanism::NetConsumption => Mechanism::NetConsumption,
        CgMechanism::Shapley => Mechanism::Shapley,
        CgMechanism::Dnem => Mechanism::Dnem,
    }
}

fn coalition(community: &[Prosumer], mask: u32) -> Result<Coalition, Failure> {
    let c = Coalition(mask);
    if community.len() < 32 && !c.is_subset(Coalition::grand(community.len())) {
        return Err(Error::InvalidInput(format!("mask {mask:#x} names a missing prosumer")).into());
    }
    Ok(c)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// NEM bill of net consumption `z`.
#[no_mangle]
pub extern "C" fn cg_payment(z: f64, retail: f64, export: f64, out: *mut f64) -> CgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = model::payment(z, retail, export)?;
        Ok(())
    })
}

/// New empty community. Never returns null.
#[no_mangle]
pub extern "C" fn cg_community_new() -> *mut CgCommunity {
    Box::into_raw(Box::new(CgCommunity { prosumers: Vec::new() }))
}

/// # Safety
/// `community` must be null or a handle from [`cg_community_new`] that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_community_free(community: *mut CgCommunity) {
    if !community.is_null() {
        // SAFETY: ownership returns to Rust exactly once, per the contract.
        drop(unsafe { Box::from_raw(community) });
    }
}

/// Number of prosumers, or 0 for a null handle.
///
/// # Safety
/// `community` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_community_len(community: *const CgCommunity) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { community.as_ref() }.map_or(0, |c| c.prosumers.len())
}

/// Appends a prosumer and writes its index to `out_index`.
///
/// # Safety
/// `community` must be a live handle; `devices` must point to
/// `n_devices` values (it may be null when `n_devices` is 0).
#[no_mangle]
pub unsafe extern "C" fn cg_community_add_prosumer(
    community: *mut CgCommunity,
    devices: *const CgDevice,
    n_devices: usize,
    renewable: f64,
    z_min: f64,
    z_max: f64,
    out_index: *mut usize,
) -> CgStatus {
    guard(|| {
        // SAFETY: null or live per the contract.
        let community = unsafe { community.as_mut() }.ok_or(Failure::Null("community"))?;
        let out_index = out_ref(out_index, "out_index")?;
        let raw = if n_devices == 0 {
            &[][..]
        } else {
            non_null(devices, "devices")?;
            // SAFETY: the caller guarantees n_devices readable elements.
            unsafe { std::slice::from_raw_parts(devices, n_devices) }
        };
        let devs = raw
            .iter()
            .map(|d| QuadDevice::new(d.alpha, d.beta, d.d_min, d.d_max))
            .collect::<coopgrid::Result<Vec<_>>>()?;
        let index = community.prosumers.len();
        let p = Prosumer::new(format!("p{index}"), devs, renewable, z_min, z_max)?;
        community.prosumers.push(p);
        *out_index = index;
        Ok(())
    })
}

/// Standalone optimum of one prosumer under the NEM tariff.
///
/// # Safety
/// `community` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_best_response(
    community: *const CgCommunity,
    index: usize,
    retail: f64,
    export: f64,
    out_welfare: *mut f64,
    out_z: *mut f64,
) -> CgStatus {
    guard(|| {
        let community = non_null(community, "community")?;
        let out_welfare = out_ref(out_welfare, "out_welfare")?;
        let out_z = out_ref(out_z, "out_z")?;
        let p = community
            .prosumers
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("no prosumer {index}")))?;
        let sol = solver::best_response(p, index, TariffHour::new(retail, export)?)?;
        *out_welfare = sol.schedule.welfare;
        *out_z = sol.schedule.z[0];
        Ok(())
    })
}

/// Value of the coalition whose members are the set bits of `mask`.
///
/// # Safety
/// `community` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_coalition_value(
    community: *const CgCommunity,
    mask: u32,
    scheme: CgScheme,
    retail: f64,
    export: f64,
    out_value: *mut f64,
) -> CgStatus {
    guard(|| {
        let community = non_null(community, "community")?;
        let out_value = out_ref(out_value, "out_value")?;
        let c = coalition(&community.prosumers, mask)?;
        let tariff = TariffHour::new(retail, export)?;
        *out_value = match to_scheme(scheme) {
            Scheme::Centralized => game::value_centralized(&community.prosumers, c, tariff)?,
            Scheme::Decentralized => solver::decentralized_schedule(&community.prosumers, c, tariff)?.welfare,
        };
        Ok(())
    })
}

/// Builds the full coalition game of the community. The game keeps its
/// own copy of the prosumers.
///
/// # Safety
/// `community` must be a live handle and `out_game` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_game_build(
    community: *const CgCommunity,
    scheme: CgScheme,
    retail: f64,
    export: f64,
    out_game: *mut *mut CgGame,
) -> CgStatus {
    guard(|| {
        let community = non_null(community, "community")?;
        let out_game = out_ref(out_game, "out_game")?;
        let tariff = TariffHour::new(retail, export)?;
        let g = game::build_game(&community.prosumers, to_scheme(scheme), tariff, 0)?;
        *out_game = Box::into_raw(Box::new(CgGame {
            community: community.prosumers.clone(),
            game: g,
        }));
        Ok(())
    })
}

/// # Safety
/// `game` must be null or a handle from [`cg_game_build`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_game_free(game: *mut CgGame) {
    if !game.is_null() {
        // SAFETY: ownership returns to Rust exactly once, per the contract.
        drop(unsafe { Box::from_raw(game) });
    }
}

/// Number of players, or 0 for a null handle.
///
/// # Safety
/// `game` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_game_players(game: *const CgGame) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { game.as_ref() }.map_or(0, |g| g.community.len())
}

/// # Safety
/// `game` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_game_value(game: *const CgGame, mask: u32, out_value: *mut f64) -> CgStatus {
    guard(|| {
        let g = non_null(game, "game")?;
        let out_value = out_ref(out_value, "out_value")?;
        let c = coalition(&g.community, mask)?;
        *out_value = g.game.table.value(c);
        Ok(())
    })
}

/// Least-core certificate: `out_nonempty` is true when the core is
/// nonempty and `out_epsilon` receives the least-core value.
///
/// # Safety
/// `game` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_game_core_nonempty(
    game: *const CgGame,
    out_nonempty: *mut bool,
    out_epsilon: *mut f64,
) -> CgStatus {
    guard(|| {
        let g = non_null(game, "game")?;
        let out_nonempty = out_ref(out_nonempty, "out_nonempty")?;
        let out_epsilon = out_ref(out_epsilon, "out_epsilon")?;
        let cert = game::core_nonempty(&g.game.table)?;
        *out_nonempty = cert.nonempty;
        *out_epsilon = cert.epsilon;
        Ok(())
    })
}

/// Writes one payoff per player into `payoffs`, which must hold `len`
/// values with `len` equal to the number of players.
///
/// # Safety
/// `game` must be a live handle and `payoffs` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn cg_allocate(
    game: *const CgGame,
    mechanism: CgMechanism,
    payoffs: *mut f64,
    len: usize,
) -> CgStatus {
    guard(|| {
        let g = non_null(game, "game")?;
        if payoffs.is_null() {
            return Err(Failure::Null("payoffs"));
        }
        if len != g.community.len() {
            return Err(Error::InvalidInput(format!("payoff buffer holds {len}, game has {}", g.community.len())).into());
        }
        let a = alloc::allocate(to_mechanism(mechanism), &g.community, &g.game, ProportionalRule::StandaloneSum)?;
        // SAFETY: the caller guarantees len writable values.
        let out = unsafe { std::slice::from_raw_parts_mut(payoffs, len) };
        out.copy_from_slice(&a.payoffs);
        Ok(())
    })
}
