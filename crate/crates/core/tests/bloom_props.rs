use mfaz::{BloomFilter, BloomParams, VerificationPoint};
use proptest::prelude::*;

fn vp(d: [u8; 32]) -> VerificationPoint {
    VerificationPoint { digest: d }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inserted_points_are_always_present(
        capacity in 1u64..2000,
        fpr_micros in 1_000u64..500_000,
        points in prop::collection::vec(any::<[u8; 32]>(), 1..300),
    ) {
        let mut bf = BloomFilter::with_params(BloomParams::from_micros(capacity, fpr_micros).unwrap());
        for p in &points {
            bf.insert(&vp(*p)).unwrap();
        }
        for p in &points {
            prop_assert!(bf.check(&vp(*p)).is_present());
        }
    }

    #[test]
    fn serialization_round_trips(points in prop::collection::vec(any::<[u8; 32]>(), 0..200)) {
        let mut bf = BloomFilter::new(1000, 0.01).unwrap();
        for p in &points {
            bf.insert(&vp(*p)).unwrap();
        }
        let bytes = bf.serialize();
        prop_assert_eq!(bytes.len(), 1255);
        let back = BloomFilter::deserialize(&bytes).unwrap();
        prop_assert_eq!(back.inserted_count(), bf.inserted_count());
        for p in &points {
            prop_assert!(back.check(&vp(*p)).is_present());
        }
        prop_assert_eq!(back, bf);
    }

    #[test]
    fn accepted_mutations_are_canonical(
        at in 0usize..1255,
        mask in 1u8..=255,
    ) {
        let mut bf = BloomFilter::new(1000, 0.01).unwrap();
        bf.insert(&vp([3; 32])).unwrap();
        let mut bytes = bf.serialize();
        bytes[at] ^= mask;
        // anything accepted is canonical: it reserializes to the same bytes
        if let Ok(other) = BloomFilter::deserialize(&bytes) {
            prop_assert_eq!(other.serialize(), bytes);
            prop_assert_ne!(other, bf);
        }
    }
}
