//! C ABI over `mfaz-core`.
//!
//! Every function returns an [`MfazStatus`]; outputs go through pointer
//! arguments. Handles are opaque and released with their `_free` function.
//! On failure, [`mfaz_last_error`] describes the most recent error on the
//! calling thread. Digests are 32-byte buffers, session ids 16 bytes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use mfaz::crypto::{DIGEST_LEN, KEY_LEN};
use mfaz::server::{key_proof_for, NONCE_LEN, SID_LEN};
use mfaz::{
    AccessRequest, AuthKey, AuthzServer, BloomFilter, Digest, Error, InsertStatus, Ledger,
    Operation, Reason, Resource, ResourceClass, RuleSet, ServerConfig, Sid, Timestamp, UserAttr,
    VerificationPoint,
};

/// Result of every call. Values 1 to 17 mirror the library's error codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfazStatus {
    Ok = 0,
    RejectEncoding = 1,
    InvalidInput = 2,
    RejectParams = 3,
    RejectState = 4,
    RejectFormat = 5,
    Conflict = 6,
    RejectPayload = 7,
    LedgerUnavailable = 8,
    AlreadyEnrolled = 9,
    UnknownUser = 10,
    AuthFail = 11,
    SessionNotFound = 12,
    VaultEmpty = 13,
    NotInVault = 14,
    RejectFrame = 15,
    Config = 16,
    Io = 17,
    NullPointer = 100,
    InvalidUtf8 = 101,
    BufferTooSmall = 102,
    Panic = 103,
    Internal = 104,
}

impl MfazStatus {
    fn from_error(e: &Error) -> Self {
        use MfazStatus::*;
        match e {
            Error::RejectEncoding(_) => RejectEncoding,
            Error::InvalidInput(_) => InvalidInput,
            Error::RejectParams(_) => RejectParams,
            Error::RejectState(_) => RejectState,
            Error::RejectFormat(_) => RejectFormat,
            Error::Conflict { .. } => Conflict,
            Error::RejectPayload => RejectPayload,
            Error::LedgerUnavailable(_) => LedgerUnavailable,
            Error::AlreadyEnrolled(_) => AlreadyEnrolled,
            Error::UnknownUser(_) => UnknownUser,
            Error::AuthFail => AuthFail,
            Error::SessionNotFound => SessionNotFound,
            Error::VaultEmpty { .. } => VaultEmpty,
            Error::NotInVault(_) => NotInVault,
            Error::RejectFrame(_) => RejectFrame,
            Error::Config(_) => Config,
            Error::Io(_) => Io,
            Error::Remote { .. } => Internal,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfazReason {
    Ok = 0,
    ArFail = 1,
    VpFail = 2,
    SessionInvalid = 3,
}

impl From<Reason> for MfazReason {
    fn from(r: Reason) -> Self {
        match r {
            Reason::Ok => MfazReason::Ok,
            Reason::ArFail => MfazReason::ArFail,
            Reason::VpFail => MfazReason::VpFail,
            Reason::SessionInvalid => MfazReason::SessionInvalid,
        }
    }
}

pub const MFAZ_DIGEST_LEN: usize = 32;
pub const MFAZ_SID_LEN: usize = 16;

const _: () = assert!(MFAZ_DIGEST_LEN == DIGEST_LEN && MFAZ_SID_LEN == SID_LEN);
const _: () = assert!(KEY_LEN == DIGEST_LEN && NONCE_LEN == DIGEST_LEN);

/// Opaque Bloom filter handle.
pub struct MfazBloom(BloomFilter);

/// Opaque authorization server handle.
pub struct MfazServer(Arc<AuthzServer>);

/// Access request. `role` may be NULL. `sga` points to `sga_len` 32-byte digests.
#[repr(C)]
pub struct MfazRequest {
    pub user_id: *const c_char,
    pub key_id: *const c_char,
    pub role: *const c_char,
    pub sid: [u8; MFAZ_SID_LEN],
    /// 1 read, 2 write, 3 execute.
    pub op: u8,
    pub resource_id: *const c_char,
    /// 1 private, 2 public.
    pub resource_class: u8,
    pub sga: *const u8,
    pub sga_len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MfazDecision {
    pub granted: bool,
    pub reason: MfazReason,
    /// Timestamp of the newly issued GA; 0 when denied.
    pub new_ga_ts: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(MfazStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_last_error(e.to_string());
        Fail(MfazStatus::from_error(&e))
    }
}

fn fail<T>(status: MfazStatus, msg: &str) -> Result<T, Fail> {
    set_last_error(msg.to_owned());
    Err(Fail(status))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MfazStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfazStatus::Ok,
        Ok(Err(Fail(status))) => status,
        Err(_) => {
            set_last_error("panic inside mfaz".into());
            MfazStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return fail(MfazStatus::NullPointer, &format!("{what} is NULL"));
    }
    Ok(())
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Fail> {
    non_null(p, what)?;
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => fail(MfazStatus::InvalidUtf8, &format!("{what} is not UTF-8")),
    }
}

unsafe fn opt_string(p: *const c_char, what: &str) -> Result<Option<String>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        string(p, what).map(Some)
    }
}

unsafe fn array<const N: usize>(p: *const u8, what: &str) -> Result<[u8; N], Fail> {
    non_null(p, what)?;
    let mut out = [0u8; N];
    ptr::copy_nonoverlapping(p, out.as_mut_ptr(), N);
    Ok(out)
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    non_null(out, what)?;
    out.write(value);
    Ok(())
}

unsafe fn write_bytes(out: *mut u8, bytes: &[u8], what: &str) -> Result<(), Fail> {
    non_null(out, what)?;
    ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
    Ok(())
}

unsafe fn user_attr(
    user_id: *const c_char,
    key_id: *const c_char,
    role: *const c_char,
) -> Result<UserAttr, Fail> {
    Ok(UserAttr::new(
        string(user_id, "user_id")?,
        string(key_id, "key_id")?,
        opt_string(role, "role")?,
    )?)
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mfaz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Writes the 32-byte GA digest to `out`. `role` may be NULL.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must hold 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn mfaz_gen_ga(
    user_id: *const c_char,
    key_id: *const c_char,
    role: *const c_char,
    op: u8,
    resource_id: *const c_char,
    resource_class: u8,
    ts: u64,
    out: *mut u8,
) -> MfazStatus {
    guard(|| {
        let u = user_attr(user_id, key_id, role)?;
        let r = Resource::new(
            string(resource_id, "resource_id")?,
            ResourceClass::from_byte(resource_class)?,
        )?;
        let ga = mfaz::gen_ga(&u, Operation::from_byte(op)?, &r, Timestamp(ts));
        write_bytes(out, &ga.digest, "out")
    })
}

/// Writes the 32-byte VP for `ga` under the 32-byte key to `out`.
///
/// # Safety
/// `ga`, `key_bytes` and `out` must each point to 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn mfaz_gen_vp(
    ga: *const u8,
    key_bytes: *const u8,
    out: *mut u8,
) -> MfazStatus {
    guard(|| {
        let ga: Digest = array(ga, "ga")?;
        let key = AuthKey::new("ffi", array::<KEY_LEN>(key_bytes, "key_bytes")?)?;
        write_bytes(out, &mfaz::gen_vp(&ga, &key).digest, "out")
    })
}

/// Login proof for a server challenge: SHA-256(key ‖ nonce).
///
/// # Safety
/// `key_bytes`, `nonce` and `out` must each point to 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn mfaz_key_proof(
    key_bytes: *const u8,
    nonce: *const u8,
    out: *mut u8,
) -> MfazStatus {
    guard(|| {
        let key = AuthKey::new("ffi", array::<KEY_LEN>(key_bytes, "key_bytes")?)?;
        let nonce: [u8; NONCE_LEN] = array(nonce, "nonce")?;
        write_bytes(out, &key_proof_for(&key, &nonce), "out")
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfaz_bloom_new(
    capacity: u64,
    fpr: f64,
    out: *mut *mut MfazBloom,
) -> MfazStatus {
    guard(|| {
        non_null(out, "out")?;
        let bf = BloomFilter::new(capacity, fpr)?;
        write_out(out, Box::into_raw(Box::new(MfazBloom(bf))), "out")
    })
}

/// # Safety
/// `bf` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn mfaz_bloom_free(bf: *mut MfazBloom) {
    if !bf.is_null() {
        drop(Box::from_raw(bf));
    }
}

/// Bit count `m` and hash count `k`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfaz_bloom_params(
    bf: *const MfazBloom,
    bits: *mut u64,
    hashes: *mut u64,
) -> MfazStatus {
    guard(|| {
        non_null(bf, "bf")?;
        let p = (*bf).0.params();
        write_out(bits, p.bits, "bits")?;
        write_out(hashes, p.hashes, "hashes")
    })
}

/// Sets `is_new` to whether any bit changed.
///
/// # Safety
/// `bf` must be a live handle, `vp` 32 bytes; `is_new` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mfaz_bloom_insert(
    bf: *mut MfazBloom,
    vp: *const u8,
    is_new: *mut bool,
) -> MfazStatus {
    guard(|| {
        non_null(bf, "bf")?;
        let vp = VerificationPoint {
            digest: array(vp, "vp")?,
        };
        let status = (*bf).0.insert(&vp)?;
        if !is_new.is_null() {
            is_new.write(status == InsertStatus::New);
        }
        Ok(())
    })
}

/// # Safety
/// `bf` must be a live handle, `vp` 32 bytes, `present` valid.
#[no_mangle]
pub unsafe extern "C" fn mfaz_bloom_check(
    bf: *const MfazBloom,
    vp: *const u8,
    present: *mut bool,
) -> MfazStatus {
    guard(|| {
        non_null(bf, "bf")?;
        let vp = VerificationPoint {
            digest: array(vp, "vp")?,
        };
        write_out(present, (*bf).0.check(&vp).is_present(), "present")
    })
}

/// Writes the serialized filter into `buf`. `written` always receives the
/// required size; with a short buffer the call returns BUFFER_TOO_SMALL.
///
/// # Safety
/// `buf` must hold `cap` bytes (may be NULL when `cap` is 0); `written` valid.
#[no_mangle]
pub unsafe extern "C" fn mfaz_bloom_serialize(
    bf: *const MfazBloom,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> MfazStatus {
    guard(|| {
        non_null(bf, "bf")?;
        let data = (*bf).0.serialize();
        write_out(written, data.len(), "written")?;
        if cap < data.len() {
            return fail(
                MfazStatus::BufferTooSmall,
                &format!("need {} bytes, got {cap}", data.len()),
            );
        }
        write_bytes(buf, &data, "buf")
    })
}

/// # Safety
/// `data` must hold `len` bytes; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mfaz_bloom_deserialize(
    data: *const u8,
    len: usize,
    out: *mut *mut MfazBloom,
) -> MfazStatus {
    guard(|| {
        non_null(data, "data")?;
        non_null(out, "out")?;
        let bf = BloomFilter::deserialize(std::slice::from_raw_parts(data, len))?;
        write_out(out, Box::into_raw(Box::new(MfazBloom(bf))), "out")
    })
}

/// Server with default settings. `ledger_path` selects a file-backed
/// ledger; NULL keeps the ledger in memory.
///
/// # Safety
/// `ledger_path` must be NULL or NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mfaz_server_new(
    ledger_path: *const c_char,
    out: *mut *mut MfazServer,
) -> MfazStatus {
    guard(|| {
        non_null(out, "out")?;
        let ledger = match opt_string(ledger_path, "ledger_path")? {
            Some(p) => Ledger::open(p)?,
            None => Ledger::in_memory(),
        };
        let server = AuthzServer::new(ServerConfig::default(), Arc::new(ledger))?;
        write_out(out, Box::into_raw(Box::new(MfazServer(Arc::new(server)))), "out")
    })
}

/// # Safety
/// `server` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn mfaz_server_free(server: *mut MfazServer) {
    if !server.is_null() {
        drop(Box::from_raw(server));
    }
}

/// Replaces the rule set with `rules` (one `subject;ops;resource` per line).
///
/// # Safety
/// `server` must be live; `rules` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mfaz_server_install_rules(
    server: *const MfazServer,
    rules: *const c_char,
) -> MfazStatus {
    guard(|| {
        non_null(server, "server")?;
        let rules = RuleSet::parse_text(&string(rules, "rules")?)?;
        (*server).0.install_rules(&rules)?;
        Ok(())
    })
}

/// Enrolls a user and writes the bootstrap GA digests (32 bytes each) into
/// `gas`. `count` always receives the number issued; if it exceeds
/// `gas_cap` the call fails with BUFFER_TOO_SMALL before enrolling.
///
/// # Safety
/// Strings NUL-terminated (`role` may be NULL); `key_bytes` 32 bytes;
/// `gas` holds `gas_cap * 32` bytes; `count` valid.
#[no_mangle]
pub unsafe extern "C" fn mfaz_server_enroll(
    server: *const MfazServer,
    user_id: *const c_char,
    key_id: *const c_char,
    role: *const c_char,
    key_bytes: *const u8,
    gas: *mut u8,
    gas_cap: usize,
    count: *mut usize,
) -> MfazStatus {
    guard(|| {
        non_null(server, "server")?;
        let server = &(*server).0;
        let user = user_attr(user_id, key_id, role)?;
        let key = AuthKey::new(user.key_id.clone(), array::<KEY_LEN>(key_bytes, "key_bytes")?)?;
        let needed = server.config().bootstrap_count as usize;
        write_out(count, needed, "count")?;
        if gas_cap < needed {
            return fail(
                MfazStatus::BufferTooSmall,
                &format!("need room for {needed} GAs, got {gas_cap}"),
            );
        }
        non_null(gas, "gas")?;
        let (_, issued) = server.enroll(user, key, None)?;
        for (i, ga) in issued.iter().enumerate() {
            write_bytes(gas.add(i * DIGEST_LEN), &ga.digest, "gas")?;
        }
        Ok(())
    })
}

/// Writes a fresh 32-byte login challenge for `user_id`.
///
/// # Safety
/// `server` live; `user_id` NUL-terminated; `nonce` holds 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn mfaz_server_challenge(
    server: *const MfazServer,
    user_id: *const c_char,
    nonce: *mut u8,
) -> MfazStatus {
    guard(|| {
        non_null(server, "server")?;
        let n = (*server).0.issue_challenge(&string(user_id, "user_id")?)?;
        write_bytes(nonce, &n, "nonce")
    })
}

/// Opens a session given the proof for an outstanding challenge and writes
/// the 16-byte session id.
///
/// # Safety
/// `server` live; `user_id` NUL-terminated; `proof` 32 bytes; `sid` 16 bytes.
#[no_mangle]
pub unsafe extern "C" fn mfaz_server_open_session(
    server: *const MfazServer,
    user_id: *const c_char,
    proof: *const u8,
    sid: *mut u8,
) -> MfazStatus {
    guard(|| {
        non_null(server, "server")?;
        let proof: Digest = array(proof, "proof")?;
        let session = (*server).0.open_session(&string(user_id, "user_id")?, &proof)?;
        write_bytes(sid, &session.sid.0, "sid")
    })
}

/// # Safety
/// `server` live; `sid` 16 bytes.
#[no_mangle]
pub unsafe extern "C" fn mfaz_server_revoke_session(
    server: *const MfazServer,
    sid: *const u8,
) -> MfazStatus {
    guard(|| {
        non_null(server, "server")?;
        (*server).0.revoke_session(&Sid(array(sid, "sid")?))?;
        Ok(())
    })
}

/// Runs the full decision pipeline; on grant the next VP is stored.
///
/// # Safety
/// `server` live; `request` fields valid as documented on [`MfazRequest`];
/// `decision` valid.
#[no_mangle]
pub unsafe extern "C" fn mfaz_server_authorize(
    server: *const MfazServer,
    request: *const MfazRequest,
    decision: *mut MfazDecision,
) -> MfazStatus {
    guard(|| {
        non_null(server, "server")?;
        non_null(request, "request")?;
        non_null(decision, "decision")?;
        let r = &*request;
        if r.sga_len > 0 {
            non_null(r.sga, "sga")?;
        }
        let sga = (0..r.sga_len)
            .map(|i| array::<DIGEST_LEN>(r.sga.add(i * DIGEST_LEN), "sga"))
            .collect::<Result<Vec<_>, _>>()?;
        let req = AccessRequest {
            user: user_attr(r.user_id, r.key_id, r.role)?,
            sid: Sid(r.sid),
            op: Operation::from_byte(r.op)?,
            resource: Resource::new(
                string(r.resource_id, "resource_id")?,
                ResourceClass::from_byte(r.resource_class)?,
            )?,
            sga,
        };
        let d = (*server).0.authorize(&req)?;
        write_out(
            decision,
            MfazDecision {
                granted: d.is_granted(),
                reason: d.reason.into(),
                new_ga_ts: d.new_ga_ts.map_or(0, |t| t.0),
            },
            "decision",
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_match_library_codes() {
        let samples = [
            Error::RejectEncoding(String::new()),
            Error::InvalidInput(String::new()),
            Error::RejectParams(String::new()),
            Error::RejectState(String::new()),
            Error::RejectFormat(String::new()),
            Error::Conflict { expected: 0, actual: 1 },
            Error::RejectPayload,
            Error::LedgerUnavailable(String::new()),
            Error::AlreadyEnrolled(String::new()),
            Error::UnknownUser(String::new()),
            Error::AuthFail,
            Error::SessionNotFound,
            Error::VaultEmpty { available: 0, requested: 1 },
            Error::NotInVault(String::new()),
            Error::RejectFrame(String::new()),
            Error::Config(String::new()),
            Error::Io(std::io::ErrorKind::Other.into()),
        ];
        for e in &samples {
            assert_eq!(MfazStatus::from_error(e) as u16, e.code(), "{e:?}");
        }
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), MfazStatus::Panic);
        let msg = unsafe { CStr::from_ptr(mfaz_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "panic inside mfaz");
    }
}
