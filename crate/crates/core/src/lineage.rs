//! Typed ancestor counts.
//!
//! Every strict ancestor `w` of a node `v` has a *type* `(k, j)`: `k` is the
//! number of children of `w` and `j` is the index (1-based) of the child of `w`
//! through which `v` descends. Types live in the triangular index set
//! `{(k, j) : 1 <= j <= k <= K}`, flattened here in row-major order
//! `(1,1), (2,1), (2,2), (3,1), ...`.

use serde::{Deserialize, Serialize};

/// Flat position of type `(k, j)` in the triangular index set.
#[inline]
pub fn type_slot(k: usize, j: usize) -> usize {
    debug_assert!(1 <= j && j <= k, "invalid type ({k},{j})");
    k * (k - 1) / 2 + (j - 1)
}

/// Number of types for arity bound `max_arity`.
#[inline]
pub fn type_count(max_arity: usize) -> usize {
    max_arity * (max_arity + 1) / 2
}

/// Iterates `(k, j)` in slot order.
pub fn types(max_arity: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..=max_arity).flat_map(|k| (1..=k).map(move |j| (k, j)))
}

/// Inverse of [`type_slot`].
pub fn slot_type(slot: usize) -> (usize, usize) {
    let mut k = 1;
    while type_count(k) <= slot {
        k += 1;
    }
    (k, slot - type_count(k - 1) + 1)
}

/// Counts of typed ancestors of a node, indexed by `(k, j)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineageVector {
    max_arity: usize,
    counts: Vec<u64>,
}

impl LineageVector {
    pub fn zeros(max_arity: usize) -> Self {
        Self {
            max_arity,
            counts: vec![0; type_count(max_arity)],
        }
    }

    /// Builds a vector from `((k, j), count)` entries; unlisted types are zero.
    pub fn from_entries(max_arity: usize, entries: &[((usize, usize), u64)]) -> Self {
        let mut v = Self::zeros(max_arity);
        for &((k, j), c) in entries {
            v.counts[type_slot(k, j)] += c;
        }
        v
    }

    pub fn from_counts(max_arity: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), type_count(max_arity));
        Self { max_arity, counts }
    }

    pub fn max_arity(&self) -> usize {
        self.max_arity
    }

    pub fn get(&self, k: usize, j: usize) -> u64 {
        if k > self.max_arity {
            return 0;
        }
        self.counts[type_slot(k, j)]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn increment(&mut self, k: usize, j: usize) {
        self.counts[type_slot(k, j)] += 1;
    }

    /// Sum of all counts; for a node's lineage this is its depth.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(N1, N2) = (sum (j-1) a_kj, sum (k-j) a_kj)`: the number of subtrees
    /// hanging to the left and to the right of the ancestral line.
    pub fn n1_n2(&self) -> (u64, u64) {
        let mut n1 = 0;
        let mut n2 = 0;
        for (slot, (k, j)) in types(self.max_arity).enumerate() {
            let a = self.counts[slot];
            n1 += (j as u64 - 1) * a;
            n2 += (k - j) as u64 * a;
        }
        (n1, n2)
    }

    /// Re-indexes the vector for a different arity bound. Fails (returns
    /// `None`) if shrinking would drop a non-zero count.
    pub fn with_max_arity(&self, max_arity: usize) -> Option<Self> {
        let mut out = Self::zeros(max_arity);
        for (slot, (k, j)) in types(self.max_arity).enumerate() {
            let c = self.counts[slot];
            if c == 0 {
                continue;
            }
            if k > max_arity {
                return None;
            }
            out.counts[type_slot(k, j)] = c;
        }
        Some(out)
    }

    /// Non-zero entries as `((k, j), count)`.
    pub fn entries(&self) -> Vec<((usize, usize), u64)> {
        types(self.max_arity)
            .zip(self.counts.iter().copied())
            .filter(|&(_, c)| c > 0)
            .collect()
    }
}
