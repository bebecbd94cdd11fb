//! Rooted ordered (planar) trees indexed by depth-first rank.
//!
//! Node `0` is the root and node `i` is the `i`-th vertex in lexicographic
//! order. Everything else (parents, depths, children, the contour walk) is
//! derived from the child-count sequence read in that order.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lineage::LineageVector;

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("empty child-count sequence")]
    Empty,
    #[error(
        "not a Lukasiewicz sequence: prefix ending at index {index} has partial sum {partial_sum}"
    )]
    InvalidLukasiewicz { index: usize, partial_sum: i64 },
    #[error("node {node} out of range (tree has {nodes} nodes)")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("window {window} exceeds depth {depth} of node {node}")]
    WindowTooLarge {
        node: usize,
        window: usize,
        depth: usize,
    },
    #[error("n_edges = {n_edges} does not match {len} child counts")]
    EdgeCountMismatch { n_edges: usize, len: usize },
    #[error("tree too large for 32-bit node indices")]
    TooLarge,
    #[error("label vector has length {got}, expected {expected}")]
    LabelLength { got: usize, expected: usize },
    #[error("root label must be 0, got {0}")]
    RootLabel(f64),
    #[error("the root cannot be a marked node")]
    RootMarked,
    #[error("marked nodes must be non-empty and strictly increasing")]
    MarkedOrder,
}

/// Checks the Lukasiewicz condition: partial sums of `c - 1` stay
/// non-negative until the last position, where they reach `-1`.
pub fn check_lukasiewicz(seq: &[u32]) -> Result<(), TreeError> {
    if seq.is_empty() {
        return Err(TreeError::Empty);
    }
    let last = seq.len() - 1;
    let mut s: i64 = 0;
    for (i, &c) in seq.iter().enumerate() {
        s += c as i64 - 1;
        if i < last && s < 0 {
            return Err(TreeError::InvalidLukasiewicz {
                index: i,
                partial_sum: s,
            });
        }
    }
    if s != -1 {
        return Err(TreeError::InvalidLukasiewicz {
            index: last,
            partial_sum: s,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanarTree {
    child_counts: Vec<u32>,
    parent: Vec<u32>,
    depth: Vec<u32>,
    child_index: Vec<u32>,
    child_offsets: Vec<u32>,
    children: Vec<u32>,
    subtree_size: Vec<u32>,
    max_arity: usize,
}

/// The three integer encodings of a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encodings {
    /// `height[k]` is the depth of the `k`-th node, `k in 0..=n`.
    pub height: Vec<u32>,
    /// `contour[i]` is the depth of the node visited at step `i` of the
    /// depth-first walk, `i in 0..=2n`.
    pub contour: Vec<u32>,
    /// `first_visit[k]` is the first walk step visiting the `k`-th node.
    pub first_visit: Vec<usize>,
}

impl PlanarTree {
    /// Builds the tree whose child counts, read in depth-first order, are `seq`.
    pub fn from_child_counts(seq: &[u32]) -> Result<Self, TreeError> {
        check_lukasiewicz(seq)?;
        if seq.len() >= NO_PARENT as usize {
            return Err(TreeError::TooLarge);
        }
        let len = seq.len();
        let mut parent = vec![NO_PARENT; len];
        let mut depth = vec![0u32; len];
        let mut child_index = vec![0u32; len];
        let mut child_offsets = Vec::with_capacity(len + 1);
        let mut acc = 0u32;
        for &c in seq {
            child_offsets.push(acc);
            acc += c;
        }
        child_offsets.push(acc);
        let mut children = vec![0u32; len - 1];
        let mut subtree_size = vec![1u32; len];

        // (node, children still to attach)
        let mut open: Vec<(u32, u32)> = Vec::new();
        for v in 0..len {
            if v > 0 {
                let top = open.last_mut().expect("validated sequence");
                let p = top.0;
                let j = seq[p as usize] - top.1 + 1;
                top.1 -= 1;
                if top.1 == 0 {
                    open.pop();
                }
                parent[v] = p;
                depth[v] = depth[p as usize] + 1;
                child_index[v] = j;
                children[(child_offsets[p as usize] + j - 1) as usize] = v as u32;
            }
            if seq[v] > 0 {
                open.push((v as u32, seq[v]));
            }
        }
        for v in (1..len).rev() {
            let p = parent[v] as usize;
            subtree_size[p] += subtree_size[v];
        }
        let max_arity = seq.iter().copied().max().unwrap_or(0) as usize;
        Ok(Self {
            child_counts: seq.to_vec(),
            parent,
            depth,
            child_index,
            child_offsets,
            children,
            subtree_size,
            max_arity,
        })
    }

    /// The single-node tree.
    pub fn singleton() -> Self {
        Self::from_child_counts(&[0]).expect("valid")
    }

    pub fn n_edges(&self) -> usize {
        self.child_counts.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.child_counts.len()
    }

    pub fn child_counts(&self) -> &[u32] {
        &self.child_counts
    }

    pub fn child_count(&self, v: usize) -> usize {
        self.child_counts[v] as usize
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        match self.parent[v] {
            NO_PARENT => None,
            p => Some(p as usize),
        }
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v] as usize
    }

    pub fn depths(&self) -> &[u32] {
        &self.depth
    }

    /// Position (1-based) of `v` among its father's children; 0 for the root.
    pub fn child_index(&self, v: usize) -> usize {
        self.child_index[v] as usize
    }

    pub fn children(&self, v: usize) -> &[u32] {
        let a = self.child_offsets[v] as usize;
        let b = self.child_offsets[v + 1] as usize;
        &self.children[a..b]
    }

    /// Number of nodes in the fringe subtree rooted at `v`.
    pub fn subtree_size(&self, v: usize) -> usize {
        self.subtree_size[v] as usize
    }

    /// Largest child count in the tree.
    pub fn max_arity(&self) -> usize {
        self.max_arity
    }

    /// `true` if `u` is an ancestor of `v` or `u == v`.
    pub fn is_ancestor_or_self(&self, u: usize, v: usize) -> bool {
        u <= v && v < u + self.subtree_size(u)
    }

    fn check_node(&self, v: usize) -> Result<(), TreeError> {
        if v >= self.node_count() {
            return Err(TreeError::NodeOutOfRange {
                node: v,
                nodes: self.node_count(),
            });
        }
        Ok(())
    }

    /// The ancestor of `v` at depth `d <= depth(v)`.
    pub fn ancestor_at_depth(&self, mut v: usize, d: usize) -> usize {
        while self.depth(v) > d {
            v = self.parent[v] as usize;
        }
        v
    }

    /// Deepest common ancestor of `u` and `v`.
    pub fn common_ancestor(&self, mut u: usize, mut v: usize) -> usize {
        while self.depth(u) > self.depth(v) {
            u = self.parent[u] as usize;
        }
        while self.depth(v) > self.depth(u) {
            v = self.parent[v] as usize;
        }
        while u != v {
            u = self.parent[u] as usize;
            v = self.parent[v] as usize;
        }
        u
    }

    /// Child index of the child of `w` on the way down to `v`
    /// (`w` must be a strict ancestor of `v`).
    pub fn branch_index(&self, w: usize, v: usize) -> usize {
        debug_assert!(w != v && self.is_ancestor_or_self(w, v));
        self.child_index(self.ancestor_at_depth(v, self.depth(w) + 1))
    }

    /// Depth-first walk around the tree: `2n + 1` node ranks starting and
    /// ending at the root, consecutive entries being father and child.
    pub fn depth_first_walk(&self) -> Vec<usize> {
        let n = self.n_edges();
        let mut walk = Vec::with_capacity(2 * n + 1);
        let mut next = vec![0u32; self.node_count()];
        let mut cur = 0usize;
        walk.push(0);
        loop {
            let k = next[cur] as usize;
            if k < self.child_count(cur) {
                next[cur] += 1;
                cur = self.children(cur)[k] as usize;
            } else if let Some(p) = self.parent(cur) {
                cur = p;
            } else {
                break;
            }
            walk.push(cur);
        }
        walk
    }

    /// Height process, contour process and first-visit times.
    pub fn encodings(&self) -> Encodings {
        let walk = self.depth_first_walk();
        let contour = walk.iter().map(|&v| self.depth[v]).collect();
        let mut first_visit = vec![usize::MAX; self.node_count()];
        for (i, &v) in walk.iter().enumerate() {
            if first_visit[v] == usize::MAX {
                first_visit[v] = i;
            }
        }
        Encodings {
            height: self.depth.clone(),
            contour,
            first_visit,
        }
    }

    /// Lineage of `v` with arity bound `max_arity()`.
    pub fn lineage(&self, v: usize, window: Option<usize>) -> Result<LineageVector, TreeError> {
        self.lineage_bounded(v, window, self.max_arity.max(1))
    }

    /// Typed counts of the strict ancestors of `v`. With `window = Some(l)`
    /// only the `l` ancestors closest to `v` are counted.
    pub fn lineage_bounded(
        &self,
        v: usize,
        window: Option<usize>,
        max_arity: usize,
    ) -> Result<LineageVector, TreeError> {
        self.check_node(v)?;
        let depth = self.depth(v);
        let limit = match window {
            Some(l) if l > depth => {
                return Err(TreeError::WindowTooLarge {
                    node: v,
                    window: l,
                    depth,
                })
            }
            Some(l) => l,
            None => depth,
        };
        assert!(
            max_arity >= self.max_arity,
            "arity bound {max_arity} below tree arity {}",
            self.max_arity
        );
        let mut a = LineageVector::zeros(max_arity);
        let mut x = v;
        for _ in 0..limit {
            let w = self.parent[x] as usize;
            a.increment(self.child_count(w), self.child_index(x));
            x = w;
        }
        Ok(a)
    }

    /// Neveu word of `v` (sequence of child indices from the root).
    pub fn word(&self, v: usize) -> Vec<u32> {
        let mut w = Vec::with_capacity(self.depth(v));
        let mut x = v;
        while x != 0 {
            w.push(self.child_index[x]);
            x = self.parent[x] as usize;
        }
        w.reverse();
        w
    }

    /// Neveu words of all nodes in rank order, e.g. `["", "1", "11", "12", "2"]`.
    pub fn words(&self) -> Vec<String> {
        (0..self.node_count())
            .map(|v| {
                self.word(v)
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(".")
            })
            .collect()
    }

    /// CSV rows `rank,parent,depth,child_index,label` (parent and label left
    /// empty when absent).
    pub fn write_csv<W: Write>(&self, labels: Option<&[f64]>, mut out: W) -> io::Result<()> {
        writeln!(out, "rank,parent,depth,child_index,label")?;
        for v in 0..self.node_count() {
            let parent = self.parent(v).map(|p| p.to_string()).unwrap_or_default();
            let label = labels.map(|l| format!("{}", l[v])).unwrap_or_default();
            writeln!(
                out,
                "{v},{parent},{},{},{label}",
                self.depth(v),
                self.child_index(v)
            )?;
        }
        Ok(())
    }
}

/// On-disk form: `{"n_edges": n, "child_counts": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeRecord {
    pub n_edges: usize,
    pub child_counts: Vec<u32>,
}

impl From<&PlanarTree> for TreeRecord {
    fn from(t: &PlanarTree) -> Self {
        Self {
            n_edges: t.n_edges(),
            child_counts: t.child_counts.clone(),
        }
    }
}

impl TryFrom<TreeRecord> for PlanarTree {
    type Error = TreeError;

    fn try_from(r: TreeRecord) -> Result<Self, TreeError> {
        if r.child_counts.len() != r.n_edges + 1 {
            return Err(TreeError::EdgeCountMismatch {
                n_edges: r.n_edges,
                len: r.child_counts.len(),
            });
        }
        PlanarTree::from_child_counts(&r.child_counts)
    }
}

impl Serialize for PlanarTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TreeRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PlanarTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = TreeRecord::deserialize(d)?;
        PlanarTree::try_from(r).map_err(serde::de::Error::custom)
    }
}

/// A tree with a real label on every node; the root carries label 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTree {
    pub tree: PlanarTree,
    labels: Vec<f64>,
}

impl LabeledTree {
    pub fn new(tree: PlanarTree, labels: Vec<f64>) -> Result<Self, TreeError> {
        if labels.len() != tree.node_count() {
            return Err(TreeError::LabelLength {
                got: labels.len(),
                expected: tree.node_count(),
            });
        }
        if labels[0] != 0.0 {
            return Err(TreeError::RootLabel(labels[0]));
        }
        Ok(Self { tree, labels })
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> f64 {
        self.labels[v]
    }

    /// Label along the depth-first walk.
    pub fn contour_labels(&self) -> Vec<f64> {
        self.tree
            .depth_first_walk()
            .into_iter()
            .map(|v| self.labels[v])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(seq: &[u32]) -> PlanarTree {
        PlanarTree::from_child_counts(seq).unwrap()
    }

    #[test]
    fn cherry() {
        let tree = t(&[2, 0, 0]);
        assert_eq!(tree.n_edges(), 2);
        assert_eq!(tree.children(0), &[1, 2]);
        assert_eq!(tree.words(), vec!["", "1", "2"]);
        assert_eq!(tree.depth_first_walk(), vec![0, 1, 0, 2, 0]);
        let e = tree.encodings();
        assert_eq!(e.height, vec![0, 1, 1]);
        assert_eq!(e.contour, vec![0, 1, 0, 1, 0]);
        assert_eq!(e.first_visit, vec![0, 1, 3]);
    }

    #[test]
    fn singleton_tree() {
        let tree = PlanarTree::singleton();
        assert_eq!(tree.n_edges(), 0);
        assert_eq!(tree.depth_first_walk(), vec![0]);
        let e = tree.encodings();
        assert_eq!((e.height, e.contour, e.first_visit), (vec![0], vec![0], vec![0]));
        assert_eq!(tree.lineage(0, None).unwrap().total(), 0);
    }

    #[test]
    fn two_level_binary() {
        let tree = t(&[2, 2, 0, 0, 0]);
        assert_eq!(tree.words(), vec!["", "1", "1.1", "1.2", "2"]);
        assert_eq!(tree.depths(), &[0, 1, 2, 2, 1]);
        assert_eq!(tree.child_counts(), &[2, 2, 0, 0, 0]);
        assert_eq!(tree.subtree_size(1), 3);
        assert!(tree.is_ancestor_or_self(1, 3));
        assert!(!tree.is_ancestor_or_self(1, 4));
        assert_eq!(tree.common_ancestor(2, 4), 0);
        assert_eq!(tree.common_ancestor(2, 3), 1);
    }

    #[test]
    fn invalid_sequences() {
        assert_eq!(PlanarTree::from_child_counts(&[]), Err(TreeError::Empty));
        assert_eq!(
            PlanarTree::from_child_counts(&[1, 0, 0]),
            Err(TreeError::InvalidLukasiewicz {
                index: 1,
                partial_sum: -1
            })
        );
        assert_eq!(
            PlanarTree::from_child_counts(&[2, 0]),
            Err(TreeError::InvalidLukasiewicz {
                index: 1,
                partial_sum: 0
            })
        );
        assert!(matches!(
            PlanarTree::from_child_counts(&[0, 0]),
            Err(TreeError::InvalidLukasiewicz { index: 0, .. })
        ));
    }

    #[test]
    fn lineage_of_mixed_arity_node() {
        // root has 5 children, descend through the 3rd; that node has 4
        // children, descend through the 2nd; then 2nd of 2; then only child.
        let seq = [5, 0, 0, 4, 0, 2, 0, 1, 0, 0, 0, 0, 0];
        let tree = t(&seq);
        let u = (0..tree.node_count())
            .find(|&v| tree.word(v) == vec![3, 2, 2, 1])
            .unwrap();
        let a = tree.lineage(u, None).unwrap();
        assert_eq!(
            a.entries(),
            vec![((1, 1), 1), ((2, 2), 1), ((4, 2), 1), ((5, 3), 1)]
        );
        assert_eq!(a.total() as usize, tree.depth(u));
        assert_eq!(a.n1_n2(), (4, 4));
        // two closest ancestors: types (1,1) and (2,2)
        let w = tree.lineage(u, Some(2)).unwrap();
        assert_eq!(w.entries(), vec![((1, 1), 1), ((2, 2), 1)]);
        assert!(matches!(
            tree.lineage(u, Some(5)),
            Err(TreeError::WindowTooLarge { .. })
        ));
        assert!(matches!(
            tree.lineage(99, None),
            Err(TreeError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn lineage_small() {
        let tree = t(&[2, 0, 0]);
        assert_eq!(tree.lineage(0, None).unwrap().total(), 0);
        let a = tree.lineage(2, None).unwrap();
        assert_eq!(a.entries(), vec![((2, 2), 1)]);
    }

    #[test]
    fn json_roundtrip_and_mismatch() {
        let tree = t(&[2, 2, 0, 0, 0]);
        let s = serde_json::to_string(&tree).unwrap();
        assert_eq!(s, r#"{"n_edges":4,"child_counts":[2,2,0,0,0]}"#);
        let back: PlanarTree = serde_json::from_str(&s).unwrap();
        assert_eq!(back, tree);
        assert!(serde_json::from_str::<PlanarTree>(r#"{"n_edges":3,"child_counts":[2,0,0]}"#)
            .is_err());
    }

    #[test]
    fn csv_export() {
        let tree = t(&[2, 0, 0]);
        let lt = LabeledTree::new(tree.clone(), vec![0.0, 1.0, -1.0]).unwrap();
        let mut buf = Vec::new();
        tree.write_csv(Some(lt.labels()), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "rank,parent,depth,child_index,label\n0,,0,0,0\n1,0,1,1,1\n2,0,1,2,-1\n"
        );
        assert_eq!(lt.contour_labels(), vec![0.0, 1.0, 0.0, -1.0, 0.0]);
        assert!(LabeledTree::new(tree.clone(), vec![1.0, 0.0, 0.0]).is_err());
        assert!(LabeledTree::new(tree, vec![0.0]).is_err());
    }

    /// Random Lukasiewicz sequences: adjust an arbitrary sequence so that its
    /// entries sum to `len - 1`, then apply the cycle shift.
    fn lukasiewicz_strategy() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(0u32..4, 1..40).prop_map(|mut v| {
            let target = v.len() as i64 - 1;
            let mut total: i64 = v.iter().map(|&c| c as i64).sum();
            let mut i = 0;
            while total != target {
                let len = v.len();
                if total > target && v[i % len] > 0 {
                    v[i % len] -= 1;
                    total -= 1;
                } else if total < target {
                    v[i % len] += 1;
                    total += 1;
                }
                i += 1;
            }
            let mut s = 0i64;
            let mut min = i64::MAX;
            let mut arg = 0;
            for (i, &c) in v.iter().enumerate() {
                s += c as i64 - 1;
                if s < min {
                    min = s;
                    arg = i + 1;
                }
            }
            let len = v.len();
            v.rotate_left(arg % len);
            v
        })
    }

    proptest! {
        #[test]
        fn structural_invariants(seq in lukasiewicz_strategy()) {
            let tree = PlanarTree::from_child_counts(&seq).unwrap();
            let n = tree.n_edges();
            prop_assert_eq!(tree.node_count(), n + 1);
            prop_assert_eq!(tree.child_counts(), &seq[..]);
            let total: usize = (0..=n).map(|v| tree.child_count(v)).sum();
            prop_assert_eq!(total, n);
            for v in 1..=n {
                let p = tree.parent(v).unwrap();
                prop_assert!(p < v);
                prop_assert_eq!(tree.depth(v), tree.depth(p) + 1);
                let j = tree.child_index(v);
                prop_assert!(1 <= j && j <= tree.child_count(p));
                prop_assert_eq!(tree.children(p)[j - 1] as usize, v);
                prop_assert_eq!(tree.lineage(v, None).unwrap().total() as usize, tree.depth(v));
            }
            let walk = tree.depth_first_walk();
            prop_assert_eq!(walk.len(), 2 * n + 1);
            prop_assert_eq!(walk[0], 0);
            prop_assert_eq!(walk[2 * n], 0);
            let mut visits = vec![0usize; n + 1];
            for w in walk.windows(2) {
                let (a, b) = (w[0], w[1]);
                prop_assert!(tree.parent(a) == Some(b) || tree.parent(b) == Some(a));
            }
            for &v in &walk { visits[v] += 1; }
            for v in 0..=n { prop_assert_eq!(visits[v], tree.child_count(v) + 1); }
            let e = tree.encodings();
            for k in 0..=n {
                prop_assert_eq!(e.first_visit[k] + e.height[k] as usize, 2 * k);
            }
            for w in e.contour.windows(2) {
                prop_assert_eq!((w[0] as i64 - w[1] as i64).abs(), 1);
            }
            let rebuilt = PlanarTree::from_child_counts(tree.child_counts()).unwrap();
            prop_assert_eq!(rebuilt, tree);
        }
    }
}
