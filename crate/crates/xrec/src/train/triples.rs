use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::Dataset;
use crate::error::{Result, XrecError};
use crate::train::positive_item_sets;

/// One pairwise training example: the user prefers `pos_item` (observed in
/// interaction `pos_interaction`) over the sampled `neg_item`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos_interaction: usize,
    pub pos_item: usize,
    pub neg_item: usize,
}

/// One epoch's worth of triples: every training positive paired with
/// `negatives` items sampled uniformly outside the user's positive set,
/// shuffled. Users whose positives cover the whole catalog contribute
/// nothing (there is no item left to contrast against).
pub fn sample_bpr_triples(ds: &Dataset, negatives: usize, seed: u64) -> Result<Vec<BprTriple>> {
    if negatives == 0 {
        return Err(XrecError::Config("negatives per positive must be >= 1".into()));
    }
    let pos_sets = positive_item_sets(ds);
    let n_items = ds.num_items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (user, list) in ds.train_positives.iter().enumerate() {
        let positives = &pos_sets[user];
        if positives.len() >= n_items {
            continue;
        }
        for &idx in list {
            let pos_item = ds.interactions[idx].item;
            for _ in 0..negatives {
                let neg_item = loop {
                    let cand = rng.random_range(0..n_items);
                    if !positives.contains(&cand) {
                        break cand;
                    }
                };
                out.push(BprTriple { user, pos_interaction: idx, pos_item, neg_item });
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}
