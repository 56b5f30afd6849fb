//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in index order, so callers that reduce the
//! output sequentially get identical numbers in both modes. Without the
//! `parallel` feature, [`ExecMode::Parallel`] runs sequentially.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::envs::Rng;

/// Generator for the `index`-th independent unit of work under `master`:
/// the ChaCha stream selected by `index`, keyed by `master`.
pub fn split_rng(master: u64, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }

    /// `(0..n).map(f)`, collected in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == ExecMode::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Calls `f(start_index, chunk)` on consecutive chunks of `data`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == ExecMode::Parallel {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(k, c)| f(k * chunk, c));
            return;
        }
        for (k, c) in data.chunks_mut(chunk).enumerate() {
            f(k * chunk, c);
        }
    }
}
