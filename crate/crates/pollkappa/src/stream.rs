//! Deterministic random streams.
//!
//! Every replica draws from its own stream, derived by hashing
//! `(master seed, command tag, replica index)`. Results are therefore
//! byte-identical for any worker count: the stream depends only on the
//! replica index, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

/// Stream for replica `replica` of the experiment tagged `tag`.
pub fn replica_rng(master_seed: u64, tag: &str, replica: u64) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(replica.to_le_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

/// Run `f` once per replica in parallel; the result vector is ordered by
/// replica index regardless of thread count.
pub fn par_map_replicas<T, F>(master_seed: u64, tag: &str, replicas: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ChaCha12Rng) -> T + Sync,
{
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(master_seed, tag, r);
            f(r, &mut rng)
        })
        .collect()
}
