//! Counter-based random streams.
//!
//! Every random draw is a pure function of (base seed, replication, step,
//! urn, slot): a SplitMix64 finalizer is applied to a key derived from the
//! first four coordinates plus a multiple of the slot index. No generator
//! state is shared between replications or urns, so the schedule used to run
//! replications cannot change any sampled value.

use rand::rand_core::{impls, RngCore};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STEP_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const URN_SALT: u64 = 0x8CB9_2BA7_2F3D_8DD7;

/// SplitMix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` under `base_seed`.
pub fn replication_seed(base_seed: u64, rep: u64) -> u64 {
    mix(base_seed ^ mix(rep.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Per-step salt, shared by all urns of one step.
#[inline]
pub fn step_key(rep_seed: u64, step: u64) -> u64 {
    mix(rep_seed ^ step.wrapping_mul(STEP_SALT))
}

/// A stream of draws for one key; slot `i` is `mix(key + (i + 1) * GOLDEN)`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    slot: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, slot: 0 }
    }

    /// Stream for the draws of `urn` at the step whose salt is `step_key`.
    #[inline]
    pub fn for_urn(step_key: u64, urn: usize) -> Self {
        Self::new(mix(step_key ^ (urn as u64 + 1).wrapping_mul(URN_SALT)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.slot = self.slot.wrapping_add(1);
        mix(self.key.wrapping_add(self.slot.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
