//! Bloom filter holding every issued verification point.
//!
//! Sizing follows the textbook optimum with `round()` on both parameters, so
//! 1000 entries at 1% give 9585 bits and 7 probes. Probe positions come from
//! double hashing over one SHA-256 of the VP digest.
//!
//! Serialized layout, all integers big-endian:
//!
//! ```text
//! "MFAZ" | version u32 | bits u64 | hashes u64 | capacity u64
//!        | inserted u64 | fpr micro-units u64 | reserved [0; 8]
//! bit array, ceil(bits / 8) bytes, bit i at byte i/8 mask 0x80 >> (i%8)
//! ```

use std::f64::consts::LN_2;

use crate::crypto::{sha256, VerificationPoint};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MFAZ";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 56;
pub const DEFAULT_CAPACITY: u64 = 1000;
pub const DEFAULT_FPR: f64 = 0.01;
const MICROS: f64 = 1_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BloomParams {
    pub capacity: u64,
    /// Target false-positive rate in millionths.
    pub fpr_micros: u64,
    pub bits: u64,
    pub hashes: u64,
}

impl BloomParams {
    /// Derives bit and hash counts. The rate is quantized to micro-units so that
    /// the serialized header reproduces the same parameters.
    pub fn new(capacity: u64, target_fpr: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::RejectParams("capacity must be at least 1".into()));
        }
        if !(target_fpr > 0.0 && target_fpr < 1.0) {
            return Err(Error::RejectParams(format!(
                "false-positive rate {target_fpr} not in (0, 1)"
            )));
        }
        let fpr_micros = (target_fpr * MICROS).round() as u64;
        Self::from_micros(capacity, fpr_micros)
    }

    pub fn from_micros(capacity: u64, fpr_micros: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::RejectParams("capacity must be at least 1".into()));
        }
        if fpr_micros == 0 || fpr_micros >= MICROS as u64 {
            return Err(Error::RejectParams(format!(
                "false-positive rate {fpr_micros}e-6 not in (0, 1)"
            )));
        }
        let p = fpr_micros as f64 / MICROS;
        let n = capacity as f64;
        let bits = (n * p.ln().abs() / (LN_2 * LN_2)).round().max(1.0) as u64;
        let hashes = ((bits as f64 / n) * LN_2).round().max(1.0) as u64;
        Ok(Self {
            capacity,
            fpr_micros,
            bits,
            hashes,
        })
    }

    pub fn default_params() -> Self {
        Self::new(DEFAULT_CAPACITY, DEFAULT_FPR).expect("default parameters are valid")
    }

    pub fn fpr(&self) -> f64 {
        self.fpr_micros as f64 / MICROS
    }

    pub fn byte_len(&self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_LEN + self.byte_len()
    }
}

/// Probe positions for `vp`: `(h1 + i*h2) mod bits` for `i in 0..hashes`,
/// where h1, h2 are the first two big-endian u64 words of `SHA-256(vp)` and h2
/// is forced odd.
pub fn bf_indices(vp: &VerificationPoint, params: &BloomParams) -> Vec<u64> {
    probe_iter(vp, params).collect()
}

fn probe_iter(vp: &VerificationPoint, params: &BloomParams) -> impl Iterator<Item = u64> {
    let d = sha256(&vp.digest);
    let h1 = u64::from_be_bytes(d[0..8].try_into().unwrap()) as u128;
    let h2 = (u64::from_be_bytes(d[8..16].try_into().unwrap()) | 1) as u128;
    let m = params.bits as u128;
    (0..params.hashes as u128).map(move |i| ((h1 + i * h2) % m) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertStatus {
    New,
    Present,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Present,
    Absent,
}

impl Membership {
    pub fn is_present(self) -> bool {
        self == Membership::Present
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct BloomFilter {
    params: BloomParams,
    bits: Vec<u8>,
    inserted: u64,
}

impl std::fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BloomFilter")
            .field("params", &self.params)
            .field("inserted", &self.inserted)
            .finish_non_exhaustive()
    }
}

impl BloomFilter {
    pub fn new(capacity: u64, target_fpr: f64) -> Result<Self> {
        Ok(Self::with_params(BloomParams::new(capacity, target_fpr)?))
    }

    pub fn with_params(params: BloomParams) -> Self {
        Self {
            bits: vec![0; params.byte_len()],
            params,
            inserted: 0,
        }
    }

    pub fn params(&self) -> &BloomParams {
        &self.params
    }

    pub fn inserted_count(&self) -> u64 {
        self.inserted
    }

    pub fn bit_bytes(&self) -> &[u8] {
        &self.bits
    }

    fn get_bit(&self, i: u64) -> bool {
        self.bits[(i / 8) as usize] & (0x80 >> (i % 8)) != 0
    }

    fn set_bit(&mut self, i: u64) -> bool {
        let byte = &mut self.bits[(i / 8) as usize];
        let mask = 0x80 >> (i % 8);
        let was = *byte & mask != 0;
        *byte |= mask;
        was
    }

    fn check_state(&self) -> Result<()> {
        if self.bits.len() != self.params.byte_len() {
            return Err(Error::RejectState(format!(
                "bit array is {} bytes, parameters require {}",
                self.bits.len(),
                self.params.byte_len()
            )));
        }
        if self.params.bits == 0 || self.params.hashes == 0 {
            return Err(Error::RejectState("zero bits or hashes".into()));
        }
        Ok(())
    }

    pub fn insert(&mut self, vp: &VerificationPoint) -> Result<InsertStatus> {
        self.check_state()?;
        let mut all_set = true;
        for i in probe_iter(vp, &self.params) {
            all_set &= self.set_bit(i);
        }
        if all_set {
            Ok(InsertStatus::Present)
        } else {
            self.inserted += 1;
            Ok(InsertStatus::New)
        }
    }

    pub fn check(&self, vp: &VerificationPoint) -> Membership {
        if probe_iter(vp, &self.params).all(|i| self.get_bit(i)) {
            Membership::Present
        } else {
            Membership::Absent
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(p.serialized_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
        out.extend_from_slice(&p.bits.to_be_bytes());
        out.extend_from_slice(&p.hashes.to_be_bytes());
        out.extend_from_slice(&p.capacity.to_be_bytes());
        out.extend_from_slice(&self.inserted.to_be_bytes());
        out.extend_from_slice(&p.fpr_micros.to_be_bytes());
        out.extend_from_slice(&[0u8; 8]);
        debug_assert_eq!(out.len(), HEADER_LEN);
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn deserialize(data: &[u8]) -> Result<Self> {
        if data.len() < HEADER_LEN {
            return Err(Error::RejectFormat(format!(
                "{} bytes is shorter than the {HEADER_LEN}-byte header",
                data.len()
            )));
        }
        if &data[0..4] != MAGIC {
            return Err(Error::RejectFormat("bad magic".into()));
        }
        let version = u32::from_be_bytes(data[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::RejectFormat(format!("unsupported version {version}")));
        }
        let word = |at: usize| u64::from_be_bytes(data[at..at + 8].try_into().unwrap());
        let bits = word(8);
        let hashes = word(16);
        let capacity = word(24);
        let inserted = word(32);
        let fpr_micros = word(40);
        if data[48..56].iter().any(|&b| b != 0) {
            return Err(Error::RejectFormat("reserved header bytes are not zero".into()));
        }
        let expected_len = (bits.div_ceil(8) as usize).checked_add(HEADER_LEN);
        if expected_len != Some(data.len()) {
            return Err(Error::RejectFormat(format!(
                "length {} does not match {bits} bits",
                data.len()
            )));
        }
        let params = BloomParams::from_micros(capacity, fpr_micros)?;
        if params.bits != bits || params.hashes != hashes {
            return Err(Error::RejectParams(format!(
                "header declares {bits} bits / {hashes} hashes, parameters imply {} / {}",
                params.bits, params.hashes
            )));
        }
        let body = &data[HEADER_LEN..];
        let pad = (params.byte_len() * 8) as u64 - bits;
        if pad > 0 && body[body.len() - 1] & ((1u8 << pad) - 1) != 0 {
            return Err(Error::RejectFormat("padding bits are set".into()));
        }
        Ok(Self {
            params,
            bits: body.to_vec(),
            inserted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vp(rng: &mut impl Rng) -> VerificationPoint {
        VerificationPoint { digest: rng.random() }
    }

    #[test]
    fn default_sizing() {
        let p = BloomParams::default_params();
        assert_eq!((p.bits, p.hashes), (9585, 7));
        assert_eq!(p.byte_len(), 1199);
        assert_eq!(p.serialized_len(), 1255);
    }

    #[test]
    fn minimal_sizing() {
        let p = BloomParams::new(1, 0.5).unwrap();
        assert_eq!((p.bits, p.hashes), (1, 1));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(BloomFilter::new(0, 0.01), Err(Error::RejectParams(_))));
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(BloomFilter::new(10, p), Err(Error::RejectParams(_))));
        }
        // below one micro-unit
        assert!(BloomFilter::new(10, 1e-7).is_err());
    }

    #[test]
    fn empty_filter_reports_absent() {
        let bf = BloomFilter::new(1000, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(bf.check(&vp(&mut rng)), Membership::Absent);
        }
    }

    #[test]
    fn insert_then_reinsert() {
        let mut bf = BloomFilter::new(1000, 0.01).unwrap();
        let v = VerificationPoint { digest: [3; 32] };
        assert_eq!(bf.insert(&v).unwrap(), InsertStatus::New);
        assert_eq!(bf.insert(&v).unwrap(), InsertStatus::Present);
        assert_eq!(bf.inserted_count(), 1);
        assert!(bf.check(&v).is_present());
    }

    #[test]
    fn indices_in_range_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, p) in [(1000, 0.01), (1, 0.5), (37, 0.2), (5000, 0.001)] {
            let params = BloomParams::new(n, p).unwrap();
            for _ in 0..50 {
                let v = vp(&mut rng);
                let idx = bf_indices(&v, &params);
                assert_eq!(idx.len() as u64, params.hashes);
                assert!(idx.iter().all(|&i| i < params.bits));
                assert_eq!(idx, bf_indices(&v, &params));
            }
        }
    }

    #[test]
    fn thousand_inserts_then_all_present() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bf = BloomFilter::new(1000, 0.01).unwrap();
        let vps: Vec<_> = (0..1000).map(|_| vp(&mut rng)).collect();
        for v in &vps {
            bf.insert(v).unwrap();
        }
        assert!(bf.inserted_count() <= 1000);
        assert!(vps.iter().all(|v| bf.check(v).is_present()));
    }

    #[test]
    fn empty_default_serialization() {
        let bytes = BloomFilter::new(1000, 0.01).unwrap().serialize();
        assert_eq!(bytes.len(), 1255);
        assert_eq!(&bytes[..4], b"MFAZ");
        assert!(bytes[HEADER_LEN..].iter().all(|&b| b == 0));
    }

    #[test]
    fn deserialize_rejections() {
        let mut bf = BloomFilter::new(1000, 0.01).unwrap();
        bf.insert(&VerificationPoint { digest: [1; 32] }).unwrap();
        let good = bf.serialize();

        assert!(matches!(BloomFilter::deserialize(&good[..good.len() - 1]), Err(Error::RejectFormat(_))));
        assert!(matches!(BloomFilter::deserialize(&good[..10]), Err(Error::RejectFormat(_))));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(BloomFilter::deserialize(&bad), Err(Error::RejectFormat(_))));

        let mut bad = good.clone();
        bad[7] = 2;
        assert!(matches!(BloomFilter::deserialize(&bad), Err(Error::RejectFormat(_))));

        // hashes field no longer matches capacity/fpr
        let mut bad = good.clone();
        bad[23] = 8;
        assert!(matches!(BloomFilter::deserialize(&bad), Err(Error::RejectParams(_))));

        // 9585 bits leaves 7 pad bits in the last byte
        let mut bad = good.clone();
        *bad.last_mut().unwrap() |= 0x01;
        assert!(matches!(BloomFilter::deserialize(&bad), Err(Error::RejectFormat(_))));

        let mut extended = good.clone();
        extended.push(0);
        assert!(matches!(BloomFilter::deserialize(&extended), Err(Error::RejectFormat(_))));
    }

    #[test]
    fn round_trip_preserves_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bf = BloomFilter::new(1000, 0.01).unwrap();
        for _ in 0..500 {
            bf.insert(&vp(&mut rng)).unwrap();
        }
        let bytes = bf.serialize();
        let back = BloomFilter::deserialize(&bytes).unwrap();
        assert_eq!(back.serialize(), bytes);
        assert_eq!(back.inserted_count(), bf.inserted_count());
        for _ in 0..1000 {
            let probe = vp(&mut rng);
            assert_eq!(bf.check(&probe), back.check(&probe));
        }
    }
}
