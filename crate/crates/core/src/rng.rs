//! Counter-keyed random streams.
//!
//! Every random decision in a simulation draws from a stream identified by
//! `(master_seed, domain, round, entity)`. The derivation is:
//!
//! 1. The 256-bit ChaCha key is four successive SplitMix64 outputs seeded with
//!    `master_seed`, each written little-endian (bytes 0..8 hold the first output).
//! 2. The 64-bit ChaCha stream id is `domain << 56 | (round & 0xFF_FFFF) << 32 | entity`,
//!    with `entity` a `u32` and `round < 2^24`.
//! 3. The generator is `ChaCha8Rng` from `rand_chacha` with word position 0.
//!
//! Distinct keys occupy disjoint stream ids, so streams never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG type handed to every randomized operation.
pub type Stream = ChaCha8Rng;

/// Largest round index representable in a stream id.
pub const MAX_ROUND: usize = (1 << 24) - 1;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Domain {
    Partition = 1,
    Init = 2,
    Stratify = 3,
    ClientSample = 4,
    Privacy = 5,
    DataSample = 6,
    LocalTrain = 7,
    Dataset = 8,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_for(master_seed: u64) -> [u8; 32] {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Stream id for a `(domain, round, entity)` triple.
///
/// Panics if `round > MAX_ROUND`.
pub fn stream_id(domain: Domain, round: usize, entity: u32) -> u64 {
    assert!(
        round <= MAX_ROUND,
        "round index {round} exceeds stream id range"
    );
    ((domain as u64) << 56) | ((round as u64) << 32) | u64::from(entity)
}

/// Returns the stream for `(master_seed, domain, round, entity)`.
pub fn rng_stream(master_seed: u64, domain: Domain, round: usize, entity: u32) -> Stream {
    let mut rng = ChaCha8Rng::from_seed(key_for(master_seed));
    rng.set_stream(stream_id(domain, round, entity));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, RngCore};

    #[test]
    fn same_key_same_stream() {
        let mut a = rng_stream(7, Domain::Privacy, 3, 11);
        let mut b = rng_stream(7, Domain::Privacy, 3, 11);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn stream_ids_are_disjoint_per_component() {
        assert_ne!(
            stream_id(Domain::Privacy, 1, 0),
            stream_id(Domain::Privacy, 0, 1)
        );
        assert_ne!(
            stream_id(Domain::Init, 0, 0),
            stream_id(Domain::Stratify, 0, 0)
        );
        assert_eq!(stream_id(Domain::Partition, 0, 0), 1u64 << 56);
    }

    #[test]
    fn splitmix_reference_value() {
        // First output of SplitMix64 seeded with 0.
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn neighbouring_entities_are_uncorrelated() {
        let n = 20_000;
        let draw = |entity| {
            let mut r = rng_stream(1, Domain::LocalTrain, 0, entity);
            (0..n).map(|_| r.random::<f64>()).collect::<Vec<_>>()
        };
        for e in 0..4u32 {
            let x = draw(e);
            let y = draw(e + 1);
            let mx = x.iter().sum::<f64>() / n as f64;
            let my = y.iter().sum::<f64>() / n as f64;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (a, b) in x.iter().zip(&y) {
                sxy += (a - mx) * (b - my);
                sxx += (a - mx) * (a - mx);
                syy += (b - my) * (b - my);
            }
            let corr = sxy / libm::sqrt(sxx * syy);
            // 5 standard errors of a null correlation estimate.
            assert!(corr.abs() < 5.0 / libm::sqrt(n as f64), "corr {corr}");
        }
    }
}
