use super::{DatasetRecord, EvalError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Held-out split sizes of the fixed train/test preset.
pub const HOLDOUT_TEST_POS: usize = 29;
pub const HOLDOUT_TEST_NEG: usize = 108;

/// Record ids assigned to folds, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    pub assignments: Vec<(String, usize)>,
    /// Folds that are evaluated; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scored_folds: Option<Vec<usize>>,
}

impl FoldPlan {
    pub fn fold_of(&self, index: usize) -> usize {
        self.assignments[index].1
    }

    /// Corpus indices of the training and test records for `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.assignments.len()).partition(|&i| self.assignments[i].1 == fold);
        (train, test)
    }

    pub fn scored(&self) -> Vec<usize> {
        self.scored_folds.clone().unwrap_or_else(|| (0..self.k).collect())
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for (_, f) in &self.assignments {
            sizes[*f] += 1;
        }
        sizes
    }
}

/// Shuffles each class with the seed and deals its members round-robin onto
/// `k` folds. The dealing position carries over from one class to the next,
/// so fold sizes differ by at most one as well as per-class counts.
pub fn stratified_assignment(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..2 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(EvalError::TooFewRecords {
                class,
                count: members.len(),
                needed: k,
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            out[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(out)
}

pub fn make_folds(records: &[DatasetRecord], k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewRecords {
            class: 0,
            count: k,
            needed: 2,
        });
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let folds = stratified_assignment(&labels, k, seed)?;
    Ok(FoldPlan {
        seed,
        k,
        assignments: records.iter().map(|r| r.record_id.clone()).zip(folds).collect(),
        scored_folds: None,
    })
}

/// The fixed holdout shape: 29 positives and 108 negatives drawn (seeded)
/// into the test side, everything else trains. Returned as a two-fold plan
/// where fold 1 is the test set and the only fold scored.
pub fn holdout_preset(records: &[DatasetRecord], seed: u64) -> Result<FoldPlan, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments: Vec<(String, usize)> = records.iter().map(|r| (r.record_id.clone(), 0)).collect();
    for (class, take) in [(1, HOLDOUT_TEST_POS), (0, HOLDOUT_TEST_NEG)] {
        let mut members: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == class).collect();
        if members.len() <= take {
            return Err(EvalError::TooFewRecords {
                class,
                count: members.len(),
                needed: take + 1,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            assignments[i].1 = 1;
        }
    }
    Ok(FoldPlan {
        seed,
        k: 2,
        assignments,
        scored_folds: Some(vec![1]),
    })
}
