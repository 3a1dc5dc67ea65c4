//! Deterministic train/validation/test partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// Digest of the three ordered id lists.
    pub fn fingerprint(&self) -> String {
        fingerprint(&serde_json::to_vec(self).expect("split serializes"))
    }
}

pub(crate) fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Validation and test take `round(n·ratio)`; training takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let val = ((n as f64 * ratios[1]).round() as usize).min(n);
    let test = ((n as f64 * ratios[2]).round() as usize).min(n - val);
    [n - val - test, val, test]
}

/// Shuffle `case_ids` with `seed` and cut it into train, validation and test.
pub fn split_dataset(case_ids: &[String], ratios: [f64; 3], seed: u64) -> Split {
    let mut ids = case_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [train, val, _] = split_sizes(ids.len(), ratios);
    let test = ids.split_off(train + val);
    let val = ids.split_off(train);
    Split { train: ids, val, test }
}
