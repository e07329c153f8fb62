//! Optimal injective assignment of empty classes to novel classes.
//!
//! The count table is tiny (k empty classes by the handful of novel classes),
//! so an exact bitmask DP over the novel-class set suffices: O(k * 2^m)
//! states, each empty class either skipped or matched to an unused column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Injective map from empty-class slot (`0..k`, i.e. output classes
/// `q..q+k`) to novel-class index. `None` marks an unused empty class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMapping {
    pub assignment: Vec<Option<usize>>,
    /// False when there are more novel classes than empty classes, so some
    /// novel class could not receive a cluster.
    pub complete: bool,
}

impl ClusterMapping {
    pub fn mapped_novel(&self, empty_slot: usize) -> Option<usize> {
        self.assignment.get(empty_slot).copied().flatten()
    }

    /// Empty-class slots that received no novel class.
    pub fn unused_slots(&self) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Maximizes the total matched count over injective assignments.
/// `counts[slot][novel]` is how many samples of that novel class the empty
/// class received. Ties resolve to the lexicographically smallest assignment
/// (lowest slot takes the lowest column), so the result is deterministic.
pub fn map_clusters(counts: &[Vec<u64>]) -> Result<ClusterMapping> {
    let k = counts.len();
    if k == 0 {
        return Err(Error::Argument("cluster mapping needs at least one empty class".into()));
    }
    let m = counts[0].len();
    if counts.iter().any(|row| row.len() != m) {
        return Err(Error::Shape("ragged cluster count table".into()));
    }
    if m == 0 {
        return Ok(ClusterMapping {
            assignment: vec![None; k],
            complete: true,
        });
    }
    if m > 20 {
        return Err(Error::Argument(format!(
            "cluster mapping supports at most 20 novel classes, got {m}"
        )));
    }

    // best[mask] = maximal total count after deciding the first `slot` rows
    // with `mask` marking used novel columns; rebuilt row by row.
    let full = 1usize << m;
    let mut best = vec![i64::MIN; full];
    best[0] = 0;
    // choice[slot][mask] = column picked by `slot` on the way INTO `mask`
    // (usize::MAX = skipped).
    let mut choice = vec![vec![usize::MAX; full]; k];

    for slot in 0..k {
        let mut next = vec![i64::MIN; full];
        let mut pick = vec![usize::MAX; full];
        for mask in 0..full {
            let cur = best[mask];
            if cur == i64::MIN {
                continue;
            }
            // Skip this empty class.
            if cur > next[mask] {
                next[mask] = cur;
                pick[mask] = usize::MAX;
            }
            // Or match it to any free novel class.
            for (col, &count) in counts[slot].iter().enumerate() {
                if mask & (1 << col) != 0 {
                    continue;
                }
                let nm = mask | (1 << col);
                let val = cur + count as i64;
                if val > next[nm] {
                    next[nm] = val;
                    pick[nm] = col;
                }
            }
        }
        best = next;
        choice[slot] = pick;
    }

    let (mut mask, _) = best
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty");

    let mut assignment = vec![None; k];
    for slot in (0..k).rev() {
        let col = choice[slot][mask];
        if col != usize::MAX {
            assignment[slot] = Some(col);
            mask &= !(1 << col);
        }
    }
    let assigned = assignment.iter().flatten().count();
    Ok(ClusterMapping {
        complete: assigned == m.min(k) && k >= m,
        assignment,
    })
}
