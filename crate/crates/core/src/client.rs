//! Client side: the GA vault and request construction.
//!
//! Vault file layout: `u32 BE count ‖ count × (32-byte digest ‖ u64 BE ts)`.
//! Writes go to a sibling temp file (mode 0600 on unix) that is renamed over
//! the vault, so a crash leaves either the old or the new contents.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::crypto::{gen_ga, Digest, GrantedAccess, Operation, Resource, Timestamp, UserAttr};
use crate::error::{Error, Result};
use crate::server::{AccessDecision, AccessRequest, AuthzServer, Sid};

const RECORD_LEN: usize = 40;

/// Anything that can answer an access request: the in-process server or a
/// network client.
pub trait AuthzEndpoint {
    fn authorize(&self, req: &AccessRequest) -> Result<AccessDecision>;
}

impl AuthzEndpoint for AuthzServer {
    fn authorize(&self, req: &AccessRequest) -> Result<AccessDecision> {
        AuthzServer::authorize(self, req)
    }
}

impl<T: AuthzEndpoint + ?Sized> AuthzEndpoint for &T {
    fn authorize(&self, req: &AccessRequest) -> Result<AccessDecision> {
        (**self).authorize(req)
    }
}

impl<T: AuthzEndpoint + ?Sized> AuthzEndpoint for std::sync::Arc<T> {
    fn authorize(&self, req: &AccessRequest) -> Result<AccessDecision> {
        (**self).authorize(req)
    }
}

#[derive(Debug, Clone)]
pub struct GaVault {
    user_id: String,
    entries: Vec<GrantedAccess>,
    path: Option<PathBuf>,
}

impl GaVault {
    pub fn in_memory(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            entries: Vec::new(),
            path: None,
        }
    }

    /// Loads the vault at `path`, or starts an empty one if the file is absent.
    pub fn open(path: impl AsRef<Path>, user_id: impl Into<String>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = match fs::read(&path) {
            Ok(raw) => decode_vault(&raw)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            user_id: user_id.into(),
            entries,
            path: Some(path),
        })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GrantedAccess] {
        &self.entries
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.entries.iter().any(|e| &e.digest == digest)
    }

    /// Adds entries, skipping digests already held, and persists.
    pub fn store(&mut self, gas: impl IntoIterator<Item = GrantedAccess>) -> Result<usize> {
        let mut added = 0;
        for ga in gas {
            if !self.contains(&ga.digest) {
                self.entries.push(ga);
                added += 1;
            }
        }
        if added > 0 {
            self.persist()?;
        }
        Ok(added)
    }

    /// Uniform random `q`-subset without replacement.
    pub fn select_sga<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Result<Vec<GrantedAccess>> {
        if q == 0 {
            return Err(Error::InvalidInput("q must be at least 1".into()));
        }
        if self.entries.len() < q {
            return Err(Error::VaultEmpty {
                available: self.entries.len(),
                requested: q,
            });
        }
        Ok(rand::seq::index::sample(rng, self.entries.len(), q)
            .into_iter()
            .map(|i| self.entries[i])
            .collect())
    }

    /// Seeded selection is reproducible; unseeded draws from the thread CSPRNG.
    pub fn select_sga_seeded(&self, q: usize, seed: Option<u64>) -> Result<Vec<GrantedAccess>> {
        match seed {
            Some(s) => self.select_sga(q, &mut ChaCha20Rng::seed_from_u64(s)),
            None => self.select_sga(q, &mut rand::rng()),
        }
    }

    /// Removes used GAs. Fails without changes if any is missing.
    pub fn consume(&mut self, used: &[GrantedAccess]) -> Result<()> {
        if let Some(missing) = used.iter().find(|u| !self.contains(&u.digest)) {
            return Err(Error::NotInVault(hex::encode(missing.digest)));
        }
        let gone: HashSet<Digest> = used.iter().map(|u| u.digest).collect();
        self.entries.retain(|e| !gone.contains(&e.digest));
        self.persist()
    }

    fn persist(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let bytes = encode_vault(&self.entries);
        let tmp = path.with_extension("tmp");
        {
            let mut opts = fs::OpenOptions::new();
            opts.write(true).create(true).truncate(true);
            #[cfg(unix)]
            {
                use std::os::unix::fs::OpenOptionsExt;
                opts.mode(0o600);
            }
            let mut f = opts.open(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

pub fn encode_vault(entries: &[GrantedAccess]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + entries.len() * RECORD_LEN);
    out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
    for e in entries {
        out.extend_from_slice(&e.digest);
        out.extend_from_slice(&e.issued_at.to_be_bytes());
    }
    out
}

pub fn decode_vault(raw: &[u8]) -> Result<Vec<GrantedAccess>> {
    if raw.len() < 4 {
        return Err(Error::RejectFormat("vault file shorter than its count".into()));
    }
    let count = u32::from_be_bytes(raw[..4].try_into().unwrap()) as usize;
    let body = &raw[4..];
    if body.len() != count * RECORD_LEN {
        return Err(Error::RejectFormat(format!(
            "vault declares {count} entries but holds {} bytes",
            body.len()
        )));
    }
    let entries: Vec<GrantedAccess> = body
        .chunks_exact(RECORD_LEN)
        .map(|c| GrantedAccess {
            digest: c[..32].try_into().unwrap(),
            issued_at: Timestamp(u64::from_be_bytes(c[32..].try_into().unwrap())),
        })
        .collect();
    let unique: HashSet<_> = entries.iter().map(|e| e.digest).collect();
    if unique.len() != entries.len() {
        return Err(Error::RejectFormat("vault contains duplicate digests".into()));
    }
    Ok(entries)
}

/// One user's client: attributes, vault and current session.
pub struct ClientAgent {
    pub user: UserAttr,
    pub vault: GaVault,
    pub sid: Sid,
    rng: ChaCha20Rng,
    sent: HashSet<Digest>,
}

impl ClientAgent {
    pub fn new(user: UserAttr, vault: GaVault, sid: Sid, seed: Option<u64>) -> Self {
        let rng = match seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_rng(&mut rand::rng()),
        };
        Self {
            user,
            vault,
            sid,
            rng,
            sent: HashSet::new(),
        }
    }

    /// Digests that have left this client in some request.
    pub fn sent_digests(&self) -> &HashSet<Digest> {
        &self.sent
    }

    /// Sends a request carrying `q` random vault entries. On grant, the used
    /// entries are destroyed and the new GA is derived locally from the
    /// server's grant timestamp and stored. On denial the vault is untouched.
    pub fn request_access(
        &mut self,
        endpoint: &dyn AuthzEndpoint,
        op: Operation,
        resource: &Resource,
        q: usize,
    ) -> Result<AccessDecision> {
        let sga = self.vault.select_sga(q, &mut self.rng)?;
        let req = AccessRequest {
            user: self.user.clone(),
            sid: self.sid,
            op,
            resource: resource.clone(),
            sga: sga.iter().map(|g| g.digest).collect(),
        };
        self.sent.extend(req.sga.iter().copied());
        let decision = endpoint.authorize(&req)?;
        if decision.is_granted() {
            let ts = decision.new_ga_ts.ok_or_else(|| {
                Error::RejectFormat("grant without a new GA timestamp".into())
            })?;
            self.vault.consume(&sga)?;
            self.vault.store([gen_ga(&self.user, op, resource, ts)])?;
        }
        Ok(decision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ga(i: u8) -> GrantedAccess {
        GrantedAccess {
            digest: [i; 32],
            issued_at: Timestamp(i as u64),
        }
    }

    fn vault_of(n: u8) -> GaVault {
        let mut v = GaVault::in_memory("u");
        v.store((0..n).map(ga)).unwrap();
        v
    }

    #[test]
    fn forced_full_selection() {
        let v = vault_of(3);
        let mut sel = v.select_sga_seeded(3, Some(1)).unwrap();
        sel.sort_by_key(|g| g.digest);
        assert_eq!(sel, vec![ga(0), ga(1), ga(2)]);
    }

    #[test]
    fn too_few_entries() {
        let v = vault_of(1);
        assert!(matches!(
            v.select_sga_seeded(2, Some(1)),
            Err(Error::VaultEmpty { available: 1, requested: 2 })
        ));
    }

    #[test]
    fn seeded_selection_repeats() {
        let v = vault_of(10);
        assert_eq!(
            v.select_sga_seeded(3, Some(99)).unwrap(),
            v.select_sga_seeded(3, Some(99)).unwrap()
        );
    }

    /// 10^4 seeded draws of 2 from 10: each of the 45 pairs should land within
    /// 3σ of N/45, and the chi-square statistic below the 0.999 quantile for 44 dof.
    #[test]
    fn pair_selection_is_uniform() {
        let v = vault_of(10);
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let mut counts = std::collections::HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            let mut pair: Vec<u8> = v
                .select_sga(2, &mut rng)
                .unwrap()
                .iter()
                .map(|g| g.digest[0])
                .collect();
            pair.sort();
            *counts.entry(pair).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 45);
        let p = 1.0 / 45.0;
        let expected = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for &c in counts.values() {
            assert!((c as f64 - expected).abs() <= 3.0 * sigma, "count {c}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        assert!(chi2 < 78.75, "chi2 {chi2}");
    }

    #[test]
    fn consume_rules() {
        let mut v = vault_of(1);
        assert!(matches!(v.consume(&[ga(9)]), Err(Error::NotInVault(_))));
        v.consume(&[ga(0)]).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn duplicate_digests_not_stored() {
        let mut v = vault_of(2);
        assert_eq!(v.store([ga(1), ga(5)]).unwrap(), 1);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn persistence_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vault.bin");
        let mut v = GaVault::open(&path, "u").unwrap();
        v.store([ga(1), ga(2)]).unwrap();
        v.consume(&[ga(1)]).unwrap();
        let reopened = GaVault::open(&path, "u").unwrap();
        assert_eq!(reopened.entries(), &[ga(2)]);
        let raw = fs::read(&path).unwrap();
        assert_eq!(raw.len(), 4 + 40);
        assert_eq!(&raw[..4], &1u32.to_be_bytes());
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = fs::metadata(&path).unwrap().permissions().mode();
            assert_eq!(mode & 0o077, 0);
        }
    }

    #[test]
    fn corrupt_vault_rejected() {
        assert!(decode_vault(&[0, 0]).is_err());
        let mut raw = encode_vault(&[ga(1)]);
        raw.pop();
        assert!(decode_vault(&raw).is_err());
        assert!(decode_vault(&encode_vault(&[ga(1), ga(1)])).is_err());
    }
}
