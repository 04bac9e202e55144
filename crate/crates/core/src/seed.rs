//! Seed derivation and bookkeeping.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a base seed with a stream index (splitmix64 finalizer).
pub fn derive(base: u64, stream: u64) -> u64 {
    let mut z = base
        ^ stream
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a seed from a base seed and a label, e.g. `"cp"` or `"gan/init"`.
pub fn derive_named(base: u64, label: &str) -> u64 {
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    derive(base, h)
}

/// Record of every seed consumed by a run, keyed by operation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLedger {
    pub seeds: BTreeMap<String, u64>,
}

impl SeedLedger {
    /// Derive the seed for `label` from `base` and record it.
    pub fn take(&mut self, base: u64, label: &str) -> u64 {
        let s = derive_named(base, label);
        self.seeds.insert(label.to_string(), s);
        s
    }

    pub fn record(&mut self, label: &str, seed: u64) {
        self.seeds.insert(label.to_string(), seed);
    }

    pub fn contains(&self, label: &str) -> bool {
        self.seeds.contains_key(label)
    }
}
