//! Decomposition of a tree along the subtree spanned by a few marked nodes.
//!
//! Given marked nodes `u_1 < ... < u_k` (depth-first ranks), the spanned
//! subtree is the union of the root-to-`u_i` paths. Its branching structure
//! is captured by the *shape*: the smallest planar tree on the marked nodes,
//! the root and the branching nodes `lca(u_i, u_{i+1})`, with ancestry kept.
//! Each shape edge corresponds to a spanned branch of the original tree whose
//! interior nodes are summarised by their typed counts (the branch content).
//!
//! The gaps between consecutive marked nodes (with the root before `u_1` and
//! the end of the traversal after `u_k`) are described by the roots of the
//! fringe subtrees hanging off the path between the two marked nodes.

use serde::Serialize;

use crate::lineage::LineageVector;
use crate::tree::{PlanarTree, TreeError};

/// A shape edge `(upper, lower)` seen in the original tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpannedBranch {
    pub upper: usize,
    pub lower: usize,
    /// Number of nodes strictly between `upper` and `lower`.
    pub length: usize,
    /// Typed counts of the nodes strictly between `upper` and `lower`.
    pub content: LineageVector,
}

/// Arity of a branching node (or the root) and the sorted child indices
/// leading to marked descendants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchingRecord {
    pub node: usize,
    pub arity: usize,
    pub child_indices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpannedDecomposition {
    pub n_edges: usize,
    pub marked: Vec<usize>,
    /// Distinct branching nodes, in rank order.
    pub branching: Vec<usize>,
    /// Root, marked and branching nodes in rank order; `shape_nodes[i]` is
    /// sent to node `i` of the shape.
    pub shape_nodes: Vec<usize>,
    #[serde(skip)]
    pub shape: PlanarTree,
    /// Ordered by the rank of the lower endpoint.
    pub branches: Vec<SpannedBranch>,
    /// Root first, then the branching nodes, in rank order.
    pub theta: Vec<BranchingRecord>,
    /// `sub_counts[l]`, `l in 0..=k`: number of fringe roots in gap `l`.
    pub sub_counts: Vec<usize>,
    /// `fringe_sizes[l]`: total size of the fringe subtrees of gap `l`.
    pub fringe_sizes: Vec<usize>,
    /// Some marked node is an ancestor of another one. The gap counting
    /// formulas only apply when this is `false`.
    pub nested: bool,
    /// Depth in the original tree of each shape node.
    shape_depths: Vec<usize>,
    /// Index in `branches` of the edge ending at shape node `i` (`i > 0`).
    branch_of: Vec<usize>,
}

impl SpannedDecomposition {
    pub fn new(tree: &PlanarTree, marked: &[usize]) -> Result<Self, TreeError> {
        if marked.is_empty() || marked.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TreeError::MarkedOrder);
        }
        if marked[0] == 0 {
            return Err(TreeError::RootMarked);
        }
        let last = *marked.last().unwrap();
        if last >= tree.node_count() {
            return Err(TreeError::NodeOutOfRange {
                node: last,
                nodes: tree.node_count(),
            });
        }
        let k = marked.len();
        let mut branching: Vec<usize> = marked
            .windows(2)
            .map(|w| tree.common_ancestor(w[0], w[1]))
            .collect();
        branching.sort_unstable();
        branching.dedup();
        let nested = marked
            .windows(2)
            .any(|w| tree.is_ancestor_or_self(w[0], w[1]));

        let mut shape_nodes = vec![0];
        shape_nodes.extend_from_slice(marked);
        shape_nodes.extend_from_slice(&branching);
        shape_nodes.sort_unstable();
        shape_nodes.dedup();

        // shape parents via a preorder stack
        let m = shape_nodes.len();
        let mut shape_parent = vec![usize::MAX; m];
        let mut shape_children = vec![0u32; m];
        let mut stack: Vec<usize> = vec![0];
        for i in 1..m {
            let x = shape_nodes[i];
            while !tree.is_ancestor_or_self(shape_nodes[*stack.last().unwrap()], x) {
                stack.pop();
            }
            let p = *stack.last().unwrap();
            shape_parent[i] = p;
            shape_children[p] += 1;
            stack.push(i);
        }
        let shape = PlanarTree::from_child_counts(&shape_children)
            .expect("preorder restriction of a tree is a tree");

        let max_arity = tree.max_arity().max(1);
        let mut branches = Vec::with_capacity(m - 1);
        let mut branch_of = vec![usize::MAX; m];
        for i in 1..m {
            let upper = shape_nodes[shape_parent[i]];
            let lower = shape_nodes[i];
            let mut content = LineageVector::zeros(max_arity);
            let mut y = lower;
            let mut w = tree.parent(y).expect("non-root");
            while w != upper {
                content.increment(tree.child_count(w), tree.child_index(y));
                y = w;
                w = tree.parent(w).expect("upper is an ancestor");
            }
            branch_of[i] = branches.len();
            branches.push(SpannedBranch {
                upper,
                lower,
                length: tree.depth(lower) - tree.depth(upper) - 1,
                content,
            });
        }

        let mut theta_nodes = vec![0];
        theta_nodes.extend(branching.iter().copied().filter(|&z| z != 0));
        let theta = theta_nodes
            .into_iter()
            .map(|u| {
                let mut idx: Vec<usize> = marked
                    .iter()
                    .filter(|&&v| v != u && tree.is_ancestor_or_self(u, v))
                    .map(|&v| tree.branch_index(u, v))
                    .collect();
                idx.sort_unstable();
                idx.dedup();
                BranchingRecord {
                    node: u,
                    arity: tree.child_count(u),
                    child_indices: idx,
                }
            })
            .collect();

        let shape_depths = shape_nodes.iter().map(|&v| tree.depth(v)).collect();
        let mut dec = Self {
            n_edges: tree.n_edges(),
            marked: marked.to_vec(),
            branching,
            shape_nodes,
            shape,
            branches,
            theta,
            sub_counts: Vec::new(),
            fringe_sizes: Vec::new(),
            nested,
            shape_depths,
            branch_of,
        };
        for l in 0..=k {
            let roots = dec.gap_roots(tree, l);
            dec.fringe_sizes
                .push(roots.iter().map(|&v| tree.subtree_size(v)).sum());
            dec.sub_counts.push(roots.len());
        }
        Ok(dec)
    }

    pub fn kappa(&self) -> usize {
        self.marked.len()
    }

    /// Shape node of a root, marked or branching node.
    pub fn phi(&self, v: usize) -> Option<usize> {
        self.shape_nodes.binary_search(&v).ok()
    }

    /// Roots of the fringe subtrees of gap `l`, found by scanning the
    /// neighbours of the path between the gap's two endpoints.
    pub fn gap_roots(&self, tree: &PlanarTree, l: usize) -> Vec<usize> {
        let k = self.kappa();
        assert!(l <= k);
        let mut on_path = vec![false; tree.node_count()];
        let mut path = Vec::new();
        let mut mark_strict_ancestors = |v: usize, min_depth: usize, path: &mut Vec<usize>| {
            let mut w = v;
            while let Some(p) = tree.parent(w) {
                if tree.depth(p) < min_depth {
                    break;
                }
                if !on_path[p] {
                    on_path[p] = true;
                    path.push(p);
                }
                w = p;
            }
        };
        let (lo, hi) = if l == 0 {
            mark_strict_ancestors(self.marked[0], 0, &mut path);
            (0, self.marked[0])
        } else if l == k {
            mark_strict_ancestors(self.marked[k - 1], 0, &mut path);
            (self.marked[k - 1], usize::MAX)
        } else {
            let (a, b) = (self.marked[l - 1], self.marked[l]);
            let z = tree.common_ancestor(a, b);
            let dz = tree.depth(z);
            mark_strict_ancestors(a, dz, &mut path);
            mark_strict_ancestors(b, dz + 1, &mut path);
            (a, b)
        };
        let mut roots: Vec<usize> = Vec::new();
        for &p in &path {
            let neighbours = tree
                .children(p)
                .iter()
                .map(|&c| c as usize)
                .chain(tree.parent(p));
            for x in neighbours {
                if !on_path[x] && lo < x && x < hi {
                    roots.push(x);
                }
            }
        }
        if l > 0 {
            roots.push(self.marked[l - 1]);
        }
        roots.sort_unstable();
        roots.dedup();
        roots
    }

    fn theta_of(&self, v: usize) -> Option<&BranchingRecord> {
        self.theta.iter().find(|r| r.node == v)
    }

    /// Child index, in the original tree, of the child of shape node `x`
    /// leading to shape node `y`; read off the shape and the branching data.
    fn shape_branch_index(&self, x: usize, y: usize) -> Option<usize> {
        let rec = self.theta_of(self.shape_nodes[x])?;
        let below = self.shape.ancestor_at_depth(y, self.shape.depth(x) + 1);
        let pos = self.shape.child_index(below);
        rec.child_indices.get(pos - 1).copied()
    }

    /// Shape nodes strictly between `top` and `y` (excluded), bottom first,
    /// together with the shape edges from `y` up to `top`.
    fn shape_path(&self, top: usize, y: usize) -> (Vec<usize>, Vec<usize>) {
        let mut inner = Vec::new();
        let mut edges = Vec::new();
        let mut x = y;
        while x != top {
            edges.push(self.branch_of[x]);
            let p = self.shape.parent(x).expect("top is an ancestor");
            if p != top {
                inner.push(p);
            }
            x = p;
        }
        (inner, edges)
    }

    /// Shape node of the marked node `u_i` (`i in 1..=k`).
    fn marked_shape(&self, i: usize) -> usize {
        self.phi(self.marked[i - 1]).expect("marked nodes are in the shape")
    }

    /// Number of fringe roots of gap `l` recomputed from the shape, the
    /// branch contents and the branching data only: left/right subtree counts
    /// along the spanned branches plus the contribution of the branching
    /// nodes. `None` when marked nodes are nested.
    pub fn sub_count_formula(&self, l: usize) -> Option<i64> {
        if self.nested {
            return None;
        }
        let k = self.kappa();
        let left = (l > 0).then(|| self.marked_shape(l));
        let right = (l < k).then(|| self.marked_shape(l + 1));
        let top = match (left, right) {
            (Some(a), Some(b)) => self.shape.common_ancestor(a, b),
            _ => 0,
        };
        let root_rec = self.theta_of(self.shape_nodes[top])?;
        let f_left = match left {
            Some(a) => self.shape_branch_index(top, a)? as i64,
            None => 0,
        };
        let f_right = match right {
            Some(b) => self.shape_branch_index(top, b)? as i64,
            None => root_rec.arity as i64 + 1,
        };
        let mut y = (l != 0) as i64 + f_right - f_left - 1;
        let mut n = 0i64;
        if let Some(a) = left {
            let (inner, edges) = self.shape_path(top, a);
            for z in inner {
                let c = self.theta_of(self.shape_nodes[z])?.arity as i64;
                y += c - self.shape_branch_index(z, a)? as i64;
            }
            for e in edges {
                n += self.branches[e].content.n1_n2().1 as i64;
            }
        }
        if let Some(b) = right {
            let (inner, edges) = self.shape_path(top, b);
            for z in inner {
                y += self.shape_branch_index(z, b)? as i64 - 1;
            }
            for e in edges {
                n += self.branches[e].content.n1_n2().0 as i64;
            }
        }
        Some(n + y)
    }

    /// Total fringe size of gap `l` from the marked ranks, the shape and the
    /// branch lengths: the nodes visited during the gap minus those on the
    /// way down from the branching node to the next marked node. `None` when
    /// marked nodes are nested.
    pub fn fringe_size_formula(&self, l: usize) -> Option<i64> {
        if self.nested {
            return None;
        }
        let k = self.kappa();
        let r_lo = if l == 0 { 0 } else { self.marked[l - 1] as i64 };
        let r_hi = if l == k {
            self.n_edges as i64
        } else {
            self.marked[l] as i64
        };
        let descent = if l == k {
            0
        } else {
            let b = self.marked_shape(l + 1);
            let top = if l == 0 {
                0
            } else {
                self.shape.common_ancestor(self.marked_shape(l), b)
            };
            let (_, edges) = self.shape_path(top, b);
            edges
                .iter()
                .map(|&e| self.branches[e].length as i64 + 1)
                .sum()
        };
        Some(r_hi - r_lo + 1 - descent - (l == 0) as i64)
    }

    /// Ancestry between root, marked and branching nodes is the same in the
    /// tree and in the shape.
    pub fn phi_preserves_ancestry(&self, tree: &PlanarTree) -> bool {
        let m = self.shape_nodes.len();
        (0..m).all(|i| {
            (0..m).all(|j| {
                tree.is_ancestor_or_self(self.shape_nodes[i], self.shape_nodes[j])
                    == self.shape.is_ancestor_or_self(i, j)
            })
        })
    }

    /// Depth in the original tree of shape node `i`.
    pub fn shape_depth(&self, i: usize) -> usize {
        self.shape_depths[i]
    }
}
