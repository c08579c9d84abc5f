//! Seeded development/evaluation splits, persisted as JSON id lists.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};

pub const SPLIT_FORMAT: &str = "scan-split-v1";

/// Published split sizes: (development, evaluation).
pub const JSRT_SPLIT: (usize, usize) = (209, 38);
pub const MONTGOMERY_SPLIT: (usize, usize) = (117, 21);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub format: String,
    pub dataset: String,
    pub seed: u64,
    pub development: Vec<String>,
    pub evaluation: Vec<String>,
}

/// Shuffles `ids` with `seed` and takes the first `dev_count` for
/// development. Both lists keep the shuffled order.
pub fn make_split(dataset: &str, ids: &[String], seed: u64, dev_count: usize) -> Result<DatasetSplit> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ScanError::Validation(format!("duplicate id `{id}` in {dataset}")));
        }
    }
    if dev_count >= ids.len() {
        return Err(ScanError::Config(format!(
            "development count {dev_count} leaves no evaluation images out of {}",
            ids.len()
        )));
    }
    // sort first so the split does not depend on directory listing order
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let evaluation = order.split_off(dev_count);
    Ok(DatasetSplit { format: SPLIT_FORMAT.into(), dataset: dataset.into(), seed, development: order, evaluation })
}

impl DatasetSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| ScanError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScanError::io(path, e))?;
        let split: Self = serde_json::from_str(&text).map_err(|e| ScanError::format(path, e.to_string()))?;
        if split.format != SPLIT_FORMAT {
            return Err(ScanError::format(path, format!("split format `{}`", split.format)));
        }
        split.check_disjoint().map_err(|m| ScanError::format(path, m))?;
        Ok(split)
    }

    fn check_disjoint(&self) -> std::result::Result<(), String> {
        let dev: HashSet<_> = self.development.iter().collect();
        match self.evaluation.iter().find(|id| dev.contains(id)) {
            Some(id) => Err(format!("id `{id}` is in both subsets")),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.development.len() + self.evaluation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
