use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl FoldSplit {
    pub fn partition_of(&self, geometry_id: &str) -> Option<Partition> {
        let has = |v: &[String]| v.iter().any(|g| g == geometry_id);
        if has(&self.test) {
            Some(Partition::Test)
        } else if has(&self.val) {
            Some(Partition::Val)
        } else if has(&self.train) {
            Some(Partition::Train)
        } else {
            None
        }
    }

    pub fn ids(&self, p: Partition) -> &[String] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

/// Geometry-level cross-validation: the ids are shuffled once under `seed`,
/// fold `i` tests on the `i`-th id and validates on the next one, and trains
/// on the rest.
pub fn kfold(geometry_ids: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>, DataError> {
    let mut ids = geometry_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != geometry_ids.len() {
        return Err(DataError::Invalid("geometry ids must be unique".into()));
    }
    let n = ids.len();
    if n < 3 {
        return Err(DataError::Invalid(format!("{n} geometries cannot fill train, val and test")));
    }
    if k == 0 || k > n {
        return Err(DataError::Invalid(format!("{k} folds requested for {n} geometries")));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|i| {
            let test = ids[i].clone();
            let val = ids[(i + 1) % n].clone();
            let mut train: Vec<String> = ids.iter().filter(|g| **g != test && **g != val).cloned().collect();
            train.sort();
            FoldSplit { fold: i, train, val: vec![val], test: vec![test] }
        })
        .collect())
}
