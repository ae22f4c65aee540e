//! Planted-interest synthetic corpus.
//!
//! Items `0..n_items` are split into `n_interests` contiguous clusters; the
//! single attribute column is the cluster id. Each user owns 1 to 3 clusters
//! and emits runs of 2 to 4 behaviors from one owned cluster at a time, so
//! interests interleave along the sequence.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{InteractionLog, Record};
use crate::error::{MissError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub interests: usize,
    pub min_len: usize,
    pub max_len: usize,
}

pub const ATTR_NAME: &str = "cluster";
const MAX_USER_INTERESTS: usize = 3;
const RUN_LEN: (usize, usize) = (2, 4);

pub fn item_token(id: usize) -> String {
    format!("i{id}")
}

pub fn cluster_token(k: usize) -> String {
    format!("c{k}")
}

pub fn synth_generate(spec: SynthSpec, seed: u64) -> Result<InteractionLog> {
    if spec.interests == 0 || spec.items == 0 || !spec.items.is_multiple_of(spec.interests) {
        return Err(MissError::Config(format!(
            "synth_items ({}) must be a positive multiple of synth_interests ({})",
            spec.items, spec.interests
        )));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(MissError::Config(format!(
            "invalid synthetic length range [{}, {}]",
            spec.min_len, spec.max_len
        )));
    }
    let per_cluster = spec.items / spec.interests;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for u in 0..spec.users {
        let k = rng.gen_range(1..=MAX_USER_INTERESTS.min(spec.interests));
        let owned = index::sample(&mut rng, spec.interests, k).into_vec();
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let user = format!("u{u:05}");
        let mut t = 0i64;
        while (t as usize) < len {
            let cluster = owned[rng.gen_range(0..owned.len())];
            let run = rng.gen_range(RUN_LEN.0..=RUN_LEN.1);
            for _ in 0..run.min(len - t as usize) {
                let item = cluster * per_cluster + rng.gen_range(0..per_cluster);
                records.push(Record {
                    user: user.clone(),
                    item: item_token(item),
                    attrs: vec![cluster_token(cluster)],
                    timestamp: t,
                });
                t += 1;
            }
        }
    }
    InteractionLog::new(vec![ATTR_NAME.to_string()], records)
}
