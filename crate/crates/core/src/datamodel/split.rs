use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{invalid, Result};

/// Partitions a dataset by unique query id into `(train, test)`.
///
/// Items sharing a query id always land on the same side. The train side
/// receives `round(train_fraction * unique_ids)` ids.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return invalid(format!("train_fraction must lie in (0, 1), got {train_fraction}"));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in dataset.items().iter().enumerate() {
        groups.entry(it.query_id()).or_default().push(i);
    }
    let mut ids: Vec<&str> = groups.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    if n_train == 0 || n_train == ids.len() {
        return invalid(format!(
            "train_fraction {train_fraction} over {} unique queries leaves one side empty",
            ids.len()
        ));
    }
    let mut train_idx: Vec<usize> = ids[..n_train].iter().flat_map(|id| groups[id].clone()).collect();
    let mut test_idx: Vec<usize> = ids[n_train..].iter().flat_map(|id| groups[id].clone()).collect();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| dataset.items()[i].clone()).collect());
    Ok((pick(&train_idx)?, pick(&test_idx)?))
}
