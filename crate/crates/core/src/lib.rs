//! Simulation and exact verification toolkit for branching random walks
//! indexed by Galton-Watson trees conditioned on their size.

// `!(x >= 0.0)` style comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod lineage;
pub mod mc;
pub mod model;
pub mod oracle;
pub mod sampler;
pub mod snake;
pub mod spanned;
pub mod stats;
pub mod tree;

pub use lineage::LineageVector;
pub use spanned::SpannedDecomposition;
pub use tree::{LabeledTree, PlanarTree, TreeError};
