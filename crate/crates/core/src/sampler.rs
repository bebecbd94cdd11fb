//! Exact sampling of Galton-Watson trees conditioned on their number of
//! edges, and of displacement labels given a tree.
//!
//! Trees come from the cycle lemma: a multiset of child counts with
//! `sum (c - 1) = -1` is drawn (by rejection on the count vector), shuffled
//! uniformly, and rotated to its unique valid starting point.
//!
//! Randomness: every replica owns a ChaCha12 stream. The 256-bit key is the
//! splitmix64 expansion of the master seed and the stream id is the replica
//! index, so distinct replicas read disjoint keystreams (each stream has
//! 2^64 blocks of its own).

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DisplacementFamily, OffspringDistribution};
use crate::tree::{LabeledTree, PlanarTree, TreeError};

/// Name recorded in run manifests.
pub const GENERATOR: &str = "ChaCha12 (rand_chacha 0.3), splitmix64 key expansion, stream = replica index";

pub const DEFAULT_MAX_ATTEMPTS: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("no tree with {n_edges} edges: span d = {span} does not divide it")]
    SpanMismatch { n_edges: usize, span: usize },
    #[error("no tree with {n_edges} edges: not a sum of supported arities (span d = {span})")]
    Unattainable { n_edges: usize, span: usize },
    #[error("rejection budget exceeded after {attempts} attempts")]
    BudgetExceeded { attempts: u64 },
    #[error("no displacement law for arity {0}")]
    MissingArity(usize),
    #[error("cycle shift produced an invalid sequence: {0}")]
    Rotation(TreeError),
}

/// `(master_seed, stream_index)`; equal specs give bit-identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut state = self.master_seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// Stream for replica `replica_index`.
pub fn derive_stream(master_seed: u64, replica_index: u64) -> SeedSpec {
    SeedSpec::new(master_seed, replica_index)
}

/// Exact sampler for `P(. | |T| = n + 1)`.
#[derive(Debug, Clone)]
pub struct ConditionedSampler {
    n_edges: usize,
    /// `cond[k] = mu_k / (mu_k + ... + mu_K)`, the binomial parameters of the
    /// sequential multinomial draw.
    cond: Vec<f64>,
    max_attempts: u64,
}

impl ConditionedSampler {
    pub fn new(mu: &OffspringDistribution, n_edges: usize) -> Result<Self, SamplerError> {
        let span = mu.span();
        if span == 0 || !n_edges.is_multiple_of(span) {
            return Err(SamplerError::SpanMismatch { n_edges, span });
        }
        if !mu.size_attainable(n_edges) {
            return Err(SamplerError::Unattainable { n_edges, span });
        }
        let p = mu.probs();
        let mut tail = 0.0;
        let mut cond = vec![0.0; p.len()];
        for k in (0..p.len()).rev() {
            tail += p[k];
            cond[k] = if tail > 0.0 { (p[k] / tail).min(1.0) } else { 0.0 };
        }
        Ok(Self {
            n_edges,
            cond,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        })
    }

    pub fn with_max_attempts(mut self, max_attempts: u64) -> Self {
        self.max_attempts = max_attempts;
        self
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Count vector `(n_0, ..., n_K)` with `sum n_k = n + 1` and
    /// `sum k n_k = n`, plus the number of attempts used.
    pub fn sample_counts<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec<u64>, u64), SamplerError> {
        let total = self.n_edges as u64 + 1;
        let kmax = self.cond.len() - 1;
        let mut counts = vec![0u64; kmax + 1];
        for attempt in 1..=self.max_attempts {
            let mut left = total;
            let mut edges = 0u64;
            for k in 0..kmax {
                let c = if left == 0 || self.cond[k] == 0.0 {
                    0
                } else if self.cond[k] >= 1.0 {
                    left
                } else {
                    Binomial::new(left, self.cond[k]).unwrap().sample(rng)
                };
                counts[k] = c;
                left -= c;
                edges += k as u64 * c;
            }
            counts[kmax] = left;
            edges += kmax as u64 * left;
            if edges == self.n_edges as u64 {
                return Ok((counts, attempt));
            }
        }
        Err(SamplerError::BudgetExceeded {
            attempts: self.max_attempts,
        })
    }

    /// Child-count sequence of a conditioned tree, in depth-first order.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<u32>, SamplerError> {
        let (counts, _) = self.sample_counts(rng)?;
        let mut seq = Vec::with_capacity(self.n_edges + 1);
        for (k, &c) in counts.iter().enumerate() {
            seq.extend(std::iter::repeat_n(k as u32, c as usize));
        }
        seq.shuffle(rng);
        cycle_shift(&mut seq);
        Ok(seq)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PlanarTree, SamplerError> {
        let seq = self.sample_sequence(rng)?;
        PlanarTree::from_child_counts(&seq).map_err(SamplerError::Rotation)
    }
}

/// Rotates `seq` (whose terms `c - 1` sum to `-1`) to start right after the
/// first index where the partial sums of `c - 1` are minimal.
pub fn cycle_shift(seq: &mut [u32]) {
    let mut s = 0i64;
    let mut min = i64::MAX;
    let mut arg = 0;
    for (i, &c) in seq.iter().enumerate() {
        s += c as i64 - 1;
        if s < min {
            min = s;
            arg = i;
        }
    }
    let len = seq.len();
    seq.rotate_left((arg + 1) % len);
}

pub fn sample_conditioned_tree(
    mu: &OffspringDistribution,
    n_edges: usize,
    seed: SeedSpec,
) -> Result<PlanarTree, SamplerError> {
    ConditionedSampler::new(mu, n_edges)?.sample(&mut seed.rng())
}

/// Atom weights and vectors of one displacement law.
type AtomTable = (WeightedIndex<f64>, Vec<Vec<f64>>);

/// Per-arity atom tables for drawing displacement vectors.
#[derive(Debug, Clone)]
pub struct LabelSampler {
    tables: Vec<Option<AtomTable>>,
}

impl LabelSampler {
    pub fn new(nu: &DisplacementFamily) -> Self {
        let kmax = nu.arities().max().unwrap_or(0);
        let mut tables = vec![None; kmax + 1];
        for k in nu.arities() {
            let atoms = nu.law(k).unwrap();
            let w = WeightedIndex::new(atoms.iter().map(|a| a.prob)).expect("validated law");
            tables[k] = Some((w, atoms.iter().map(|a| a.vector.clone()).collect()));
        }
        Self { tables }
    }

    pub fn assign<R: Rng + ?Sized>(
        &self,
        tree: &PlanarTree,
        rng: &mut R,
    ) -> Result<LabeledTree, SamplerError> {
        let mut labels = vec![0.0; tree.node_count()];
        for u in 0..tree.node_count() {
            let k = tree.child_count(u);
            if k == 0 {
                continue;
            }
            let (w, vecs) = self
                .tables
                .get(k)
                .and_then(Option::as_ref)
                .ok_or(SamplerError::MissingArity(k))?;
            let v = &vecs[if vecs.len() == 1 { 0 } else { w.sample(rng) }];
            let base = labels[u];
            for (i, &c) in tree.children(u).iter().enumerate() {
                labels[c as usize] = base + v[i];
            }
        }
        Ok(LabeledTree::new(tree.clone(), labels).expect("root label is zero"))
    }
}

pub fn assign_labels(
    tree: &PlanarTree,
    nu: &DisplacementFamily,
    seed: SeedSpec,
) -> Result<LabeledTree, SamplerError> {
    LabelSampler::new(nu).assign(tree, &mut seed.rng())
}
