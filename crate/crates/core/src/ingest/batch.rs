use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClipRecord, Subset};

/// Clips drawn per subset, ordered as [`Subset::ALL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchComposition(pub [usize; 5]);

impl BatchComposition {
    pub const STAGE1: BatchComposition = BatchComposition([12, 10, 10, 20, 20]);
    pub const STAGE2: BatchComposition = BatchComposition([56, 40, 40, 72, 72]);

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn count(&self, subset: Subset) -> usize {
        self.0[subset.index()]
    }

    /// Scales every count by `factor`, keeping positive counts at least 1.
    pub fn scaled(&self, factor: f64) -> BatchComposition {
        BatchComposition(self.0.map(|n| {
            if n == 0 {
                0
            } else {
                ((n as f64 * factor).round() as usize).max(1)
            }
        }))
    }
}

/// Per-subset sampling without replacement, reshuffled when exhausted.
#[derive(Clone, Debug)]
pub struct EpochState {
    rng: ChaCha8Rng,
    order: [Vec<usize>; 5],
    cursor: [usize; 5],
}

impl EpochState {
    pub fn new(seed: u64) -> Self {
        EpochState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Default::default(),
            cursor: [0; 5],
        }
    }

    fn next_index(&mut self, subset: usize, len: usize) -> usize {
        if self.order[subset].len() != len || self.cursor[subset] >= len {
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut self.rng);
            self.order[subset] = order;
            self.cursor[subset] = 0;
        }
        let i = self.order[subset][self.cursor[subset]];
        self.cursor[subset] += 1;
        i
    }
}

/// Draws one batch; the result is grouped by subset in composition order.
pub fn sample_batch(
    datasets: &[Vec<ClipRecord>; 5],
    composition: &BatchComposition,
    state: &mut EpochState,
) -> Result<Vec<ClipRecord>> {
    let mut batch = Vec::with_capacity(composition.total());
    for subset in Subset::ALL {
        let want = composition.count(subset);
        let pool = &datasets[subset.index()];
        if want > 0 && pool.is_empty() {
            return Err(Error::Data(format!(
                "batch requests {want} clips from empty subset {}",
                subset.name()
            )));
        }
        for _ in 0..want {
            let i = state.next_index(subset.index(), pool.len());
            batch.push(pool[i].clone());
        }
    }
    Ok(batch)
}
