//! Property tests over the serialization-shaped invariants.

use proptest::prelude::*;

use triref::geometry::{rle_decode, rle_encode, BinaryMask};
use triref::trp;

proptest! {
    #[test]
    fn rle_round_trips(h in 1usize..16, w in 1usize..16, bits in proptest::collection::vec(any::<bool>(), 0..256)) {
        let mut data = vec![false; h * w];
        for (i, b) in bits.into_iter().take(h * w).enumerate() {
            data[i] = b;
        }
        let mask = BinaryMask::new(h, w, data).unwrap();
        prop_assert_eq!(rle_decode(&rle_encode(&mask)).unwrap(), mask);
    }

    #[test]
    fn normalize_phrase_is_idempotent(s in ".{0,40}") {
        let once = trp::normalize_phrase(&s);
        prop_assert_eq!(trp::normalize_phrase(&once), once);
    }

    #[test]
    fn canonicalize_is_a_fixed_point(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ast = trp::testgen::random_answer_ast(&mut rng);
        let emitted = trp::emit_answer(&ast).unwrap();
        prop_assert_eq!(trp::canonicalize(&emitted).unwrap(), emitted);
    }
}
