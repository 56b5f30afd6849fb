use std::path::Path;

use rand::Rng as _;

use crate::envs::{reset, DiscreteEnv, EnvError, InitialSampler, TransitionRecord};
use crate::exec::split_rng;
use crate::io::Hasher;

/// Fixed-width little-endian encoding of one record, the unit of dataset
/// hashing.
pub fn record_bytes(r: &TransitionRecord) -> [u8; 35] {
    let mut b = [0u8; 35];
    b[0..4].copy_from_slice(&r.state.to_le_bytes());
    b[4..12].copy_from_slice(&(r.action as u64).to_le_bytes());
    b[12..20].copy_from_slice(&r.reward.to_bits().to_le_bytes());
    b[20..24].copy_from_slice(&r.next_state.to_le_bytes());
    b[24] = r.terminated as u8;
    b[25] = r.truncated as u8;
    b[26] = r.active_node.is_some() as u8;
    b[27..35].copy_from_slice(&(r.active_node.unwrap_or(0) as u64).to_le_bytes());
    b
}

/// Streaming hash over a concatenation of datasets.
#[derive(Clone, Default)]
pub struct DatasetHasher(Hasher);

impl DatasetHasher {
    pub fn update(&mut self, records: &[TransitionRecord]) {
        for r in records {
            self.0.update(&record_bytes(r));
        }
    }

    pub fn finish_hex(self) -> String {
        self.0.finish_hex()
    }
}

pub fn dataset_hash(records: &[TransitionRecord]) -> String {
    let mut h = DatasetHasher::default();
    h.update(records);
    h.finish_hex()
}

/// Uniform-random-action episodes from the base distribution.
pub fn collect_uniform<E: DiscreteEnv + ?Sized>(
    env: &E,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<TransitionRecord>, EnvError> {
    let na = env.spec().action_count();
    let mut out = Vec::new();
    for e in 0..episodes {
        let mut rng = split_rng(seed, e as u64);
        let mut s = reset(env, &InitialSampler::Base, &mut rng)?;
        for k in 0..horizon {
            let a = rng.gen_range(0..na);
            let next = env.successor(s, a, &mut rng);
            let terminated = env.is_absorbing(next);
            out.push(TransitionRecord {
                state: s,
                action: a,
                reward: 0.0,
                next_state: next,
                terminated,
                truncated: !terminated && k + 1 == horizon,
                active_node: None,
            });
            if terminated {
                break;
            }
            s = next;
        }
    }
    Ok(out)
}

pub fn write_records_csv<E: DiscreteEnv + ?Sized>(
    env: &E,
    records: &[TransitionRecord],
    path: &Path,
) -> Result<(), EnvError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    crate::envs::write_trajectory_csv(env, records, f)
}
