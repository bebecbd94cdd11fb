//! Rescaled path functionals of a (labeled) tree with `n` edges:
//!
//! * `h_n(i/n) = H_i / sqrt(n)` and `hc_n(i/2n) = Hc(i) / sqrt(n)`,
//! * `r_n(i/n) = l(u(i)) / n^(1/4)` and its contour version,
//! * the lineage field `G_kj(i/n) = (A_{u(i),k,j} - mu_k |u(i)|) / n^(1/4)`,
//!
//! all linearly interpolated between breakpoints.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::distributions::{MomentSummary, OffspringDistribution};
use crate::lineage::{type_count, type_slot, types};
use crate::tree::{LabeledTree, PlanarTree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnakeError {
    #[error("tree has {0} edges; at least {1} required")]
    TooSmall(usize, usize),
    #[error("paths have different breakpoint counts ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("moment summary has arity bound {got}, tree needs {needed}")]
    ArityBound { got: usize, needed: usize },
}

/// Piecewise-linear function on `[0, 1]` with equally spaced breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFunction {
    values: Vec<f64>,
}

impl PathFunction {
    /// `values[i]` sits at `i / (values.len() - 1)`.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(values.len() >= 2, "a path needs at least two breakpoints");
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn eval(&self, s: f64) -> f64 {
        let m = self.intervals();
        let x = s.clamp(0.0, 1.0) * m as f64;
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            return self.values[r as usize];
        }
        let i = (x.floor() as usize).min(m - 1);
        let f = x - i as f64;
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }

    /// Exact minimum over `[s ^ t, s v t]`.
    pub fn path_min(&self, s: f64, t: f64) -> f64 {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        let m = self.intervals() as f64;
        let mut best = self.eval(lo).min(self.eval(hi));
        let first = (lo * m).floor() as usize + 1;
        let last = ((hi * m).ceil() as usize).min(self.intervals() + 1);
        for i in first..last {
            let x = i as f64 / m;
            if x > lo && x < hi {
                best = best.min(self.values[i]);
            }
        }
        best
    }
}

/// One path per type `(k, j)`, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPath {
    max_arity: usize,
    components: Vec<PathFunction>,
}

impl VectorPath {
    pub fn max_arity(&self) -> usize {
        self.max_arity
    }

    pub fn get(&self, k: usize, j: usize) -> &PathFunction {
        &self.components[type_slot(k, j)]
    }

    pub fn components(&self) -> &[PathFunction] {
        &self.components
    }

    pub fn eval(&self, s: f64) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(s)).collect()
    }
}

/// Height path `h_n` only.
pub fn height_path(tree: &PlanarTree) -> Result<PathFunction, SnakeError> {
    let n = tree.n_edges();
    if n == 0 {
        return Err(SnakeError::TooSmall(0, 1));
    }
    let q = (n as f64).sqrt();
    Ok(PathFunction::new(
        tree.depths().iter().map(|&d| d as f64 / q).collect(),
    ))
}

/// Contour path `hc_n` on the `i / 2n` grid.
pub fn contour_path(tree: &PlanarTree) -> Result<PathFunction, SnakeError> {
    let n = tree.n_edges();
    if n == 0 {
        return Err(SnakeError::TooSmall(0, 1));
    }
    let q = (n as f64).sqrt();
    let enc = tree.encodings();
    Ok(PathFunction::new(
        enc.contour.iter().map(|&d| d as f64 / q).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedProcesses {
    pub height: PathFunction,
    pub contour: PathFunction,
    pub label: PathFunction,
    pub contour_label: PathFunction,
}

pub fn normalized_processes(lt: &LabeledTree) -> Result<NormalizedProcesses, SnakeError> {
    let tree = &lt.tree;
    let n = tree.n_edges();
    if n == 0 {
        return Err(SnakeError::TooSmall(0, 1));
    }
    let q4 = (n as f64).powf(0.25);
    let walk = tree.depth_first_walk();
    let q2 = (n as f64).sqrt();
    Ok(NormalizedProcesses {
        height: height_path(tree)?,
        contour: PathFunction::new(walk.iter().map(|&v| tree.depth(v) as f64 / q2).collect()),
        label: PathFunction::new(lt.labels().iter().map(|&x| x / q4).collect()),
        contour_label: PathFunction::new(walk.iter().map(|&v| lt.label(v) / q4).collect()),
    })
}

/// Visits nodes in rank order with the lineage of the current node held in
/// `counts`; `path[d]` is the slot contributed by the ancestor at depth `d`.
fn sweep_lineages(tree: &PlanarTree, slots: usize, mut visit: impl FnMut(usize, &[u64], &[usize])) {
    let mut counts = vec![0u64; slots];
    let mut path: Vec<usize> = Vec::new();
    for v in 0..tree.node_count() {
        let d = tree.depth(v);
        while path.len() > d.saturating_sub(1) {
            let s = path.pop().unwrap();
            counts[s] -= 1;
        }
        if let Some(p) = tree.parent(v) {
            let s = type_slot(tree.child_count(p), tree.child_index(v));
            counts[s] += 1;
            path.push(s);
        }
        visit(v, &counts, &path);
    }
}

/// Lineage field `G^(n)`; the arity bound is the larger of the tree's and
/// `mu`'s.
pub fn lineage_field(tree: &PlanarTree, mu: &OffspringDistribution) -> Result<VectorPath, SnakeError> {
    let n = tree.n_edges();
    if n == 0 {
        return Err(SnakeError::TooSmall(0, 1));
    }
    let kmax = tree.max_arity().max(mu.max_arity()).max(1);
    let slots = type_count(kmax);
    let q4 = (n as f64).powf(0.25);
    let mu_of: Vec<f64> = types(kmax).map(|(k, _)| mu.prob(k)).collect();
    let mut data: Vec<Vec<f64>> = (0..slots).map(|_| Vec::with_capacity(n + 1)).collect();
    sweep_lineages(tree, slots, |v, counts, _| {
        let d = tree.depth(v) as f64;
        for s in 0..slots {
            data[s].push((counts[s] as f64 - mu_of[s] * d) / q4);
        }
    });
    Ok(VectorPath {
        max_arity: kmax,
        components: data.into_iter().map(PathFunction::new).collect(),
    })
}

/// `r_n = r1 + r2 + drift` with `r2 = <G, m_kj>` and `drift = |u| m / n^(1/4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDecomposition {
    pub r1: PathFunction,
    pub r2: PathFunction,
    pub drift: PathFunction,
}

impl LabelDecomposition {
    /// Largest `|r - (r1 + r2 + drift)|` relative to `1 + |r|` over breakpoints.
    pub fn max_residual(&self, r: &PathFunction) -> f64 {
        (0..=r.intervals())
            .map(|i| {
                let sum = self.r1.at(i) + self.r2.at(i) + self.drift.at(i);
                (r.at(i) - sum).abs() / (1.0 + r.at(i).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Splits the label path. `r1` is built independently from the centered
/// displacements along each ancestral line, so the sum identity is a check.
pub fn label_decomposition(
    lt: &LabeledTree,
    mu: &OffspringDistribution,
    ms: &MomentSummary,
) -> Result<LabelDecomposition, SnakeError> {
    let tree = &lt.tree;
    let n = tree.n_edges();
    if n == 0 {
        return Err(SnakeError::TooSmall(0, 1));
    }
    if ms.max_arity < tree.max_arity() {
        return Err(SnakeError::ArityBound {
            got: ms.max_arity,
            needed: tree.max_arity(),
        });
    }
    let q4 = (n as f64).powf(0.25);
    let kmax = ms.max_arity;
    let slots = type_count(kmax);
    let g = lineage_field(tree, mu)?;
    let mut centered = vec![0.0; tree.node_count()];
    for v in 1..tree.node_count() {
        let p = tree.parent(v).unwrap();
        let m = ms.mean_kj[type_slot(tree.child_count(p), tree.child_index(v))];
        centered[v] = centered[p] + (lt.label(v) - lt.label(p) - m);
    }
    let comps = g.components();
    let mut r2 = Vec::with_capacity(n + 1);
    for i in 0..=n {
        r2.push((0..slots.min(comps.len())).map(|s| comps[s].at(i) * ms.mean_kj[s]).sum());
    }
    Ok(LabelDecomposition {
        r1: PathFunction::new(centered.iter().map(|c| c / q4).collect()),
        r2: PathFunction::new(r2),
        drift: PathFunction::new(
            tree.depths()
                .iter()
                .map(|&d| d as f64 * ms.global_mean / q4)
                .collect(),
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n_edges: usize,
    pub max_increment: u32,
    /// `max_l | |u(l+1)| - |u(l)| | / ln n`.
    pub max_increment_ratio: f64,
    /// `|u(n)| / ln n`.
    pub last_depth_ratio: f64,
    /// `max |A_{u,l,k,j} - mu_k l| / sqrt(l ln n)` over nodes, windows and types.
    pub concentration: f64,
    pub full_window_scan: bool,
    /// `sup_t |hc_n(t) - h_n(t)|`.
    pub sup_gap: f64,
}

/// Diagnostics record; windows are powers of two unless `full_window_scan`.
pub fn diagnostics(
    tree: &PlanarTree,
    mu: &OffspringDistribution,
    full_window_scan: bool,
) -> Result<Diagnostics, SnakeError> {
    let n = tree.n_edges();
    if n < 2 {
        return Err(SnakeError::TooSmall(n, 2));
    }
    let ln = (n as f64).ln();
    let depths = tree.depths();
    let max_increment = depths
        .windows(2)
        .map(|w| w[0].abs_diff(w[1]))
        .max()
        .unwrap_or(0);

    let kmax = tree.max_arity().max(mu.max_arity()).max(1);
    let slots = type_count(kmax);
    let mu_of: Vec<f64> = types(kmax).map(|(k, _)| mu.prob(k)).collect();
    // prefix[d] = lineage counts of the ancestor at depth d of the current node
    let mut prefix: Vec<Vec<u64>> = vec![vec![0; slots]];
    let mut concentration: f64 = 0.0;
    sweep_lineages(tree, slots, |v, counts, _| {
        let d = tree.depth(v);
        prefix.truncate(d);
        prefix.push(counts.to_vec());
        let mut l = 1;
        while l <= d {
            let lo = &prefix[d - l];
            let norm = ((l as f64) * ln).sqrt();
            for s in 0..slots {
                let a = (counts[s] - lo[s]) as f64;
                concentration = concentration.max((a - mu_of[s] * l as f64).abs() / norm);
            }
            l = if full_window_scan { l + 1 } else { l * 2 };
        }
    });

    let h = height_path(tree)?;
    let c = contour_path(tree)?;
    let sup_gap = (0..=2 * n)
        .map(|i| (c.at(i) - h.eval(i as f64 / (2 * n) as f64)).abs())
        .fold(0.0, f64::max);
    Ok(Diagnostics {
        n_edges: n,
        max_increment,
        max_increment_ratio: max_increment as f64 / ln,
        last_depth_ratio: depths[n] as f64 / ln,
        concentration,
        full_window_scan,
        sup_gap,
    })
}

/// Writes paths sharing one breakpoint grid as CSV: header `s,<names...>`,
/// one row per breakpoint.
pub fn write_paths_csv<W: Write>(
    mut out: W,
    names: &[&str],
    paths: &[&PathFunction],
) -> io::Result<()> {
    assert_eq!(names.len(), paths.len());
    let len = paths.first().map_or(0, |p| p.values().len());
    if let Some(bad) = paths.iter().find(|p| p.values().len() != len) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            SnakeError::LengthMismatch(len, bad.values().len()),
        ));
    }
    write!(out, "s")?;
    for n in names {
        write!(out, ",{n}")?;
    }
    writeln!(out)?;
    let m = len.saturating_sub(1).max(1) as f64;
    for i in 0..len {
        write!(out, "{}", i as f64 / m)?;
        for p in paths {
            write!(out, ",{}", p.at(i))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Column names `G_k_j` in slot order.
pub fn field_names(max_arity: usize) -> Vec<String> {
    types(max_arity).map(|(k, j)| format!("G_{k}_{j}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{moments, DisplacementFamily};
    use crate::sampler::{sample_conditioned_tree, assign_labels, SeedSpec};

    fn cherry_labeled() -> LabeledTree {
        let t = PlanarTree::from_child_counts(&[2, 0, 0]).unwrap();
        LabeledTree::new(t, vec![0.0, 1.0, -1.0]).unwrap()
    }

    #[test]
    fn cherry_processes() {
        let p = normalized_processes(&cherry_labeled()).unwrap();
        let q = 2f64.powf(0.25);
        assert_eq!(p.label.values(), &[0.0, 1.0 / q, -1.0 / q]);
        assert_eq!(p.height.at(0), 0.0);
        assert_eq!(p.contour.at(0), 0.0);
        assert_eq!(p.contour.values().len(), 5);
        assert!(normalized_processes(
            &LabeledTree::new(PlanarTree::singleton(), vec![0.0]).unwrap()
        )
        .is_err());
    }

    #[test]
    fn cherry_field() {
        let t = PlanarTree::from_child_counts(&[2, 0, 0]).unwrap();
        let g = lineage_field(&t, &OffspringDistribution::binary()).unwrap();
        let q = 2f64.powf(0.25);
        assert_eq!(g.eval(0.0), vec![0.0, 0.0, 0.0]);
        assert_eq!(g.get(2, 1).eval(0.5), 0.5 / q);
        assert_eq!(g.get(2, 2).eval(0.5), -0.5 / q);
    }

    #[test]
    fn interpolation_and_min() {
        let p = PathFunction::new(vec![0.0, 2.0, 1.0, 3.0]);
        assert_eq!(p.eval(1.0 / 3.0), 2.0);
        assert!((p.eval(0.5) - 1.5).abs() < 1e-15);
        assert_eq!(p.path_min(0.4, 0.4), p.eval(0.4));
        assert_eq!(p.path_min(0.5, 0.9), 1.0);
        assert_eq!(p.path_min(0.9, 0.5), 1.0);
        assert!((p.path_min(0.1, 0.3) - p.eval(0.1)).abs() < 1e-15);
    }

    #[test]
    fn path_min_matches_dense_grid() {
        let t = sample_conditioned_tree(&OffspringDistribution::binary(), 60, SeedSpec::new(2, 0))
            .unwrap();
        let h = height_path(&t).unwrap();
        let c = PlanarTree::from_child_counts(&[2, 0, 0]).unwrap();
        let hc = height_path(&c).unwrap();
        let brute = (0..=5000)
            .map(|i| hc.eval(0.25 + 0.5 * i as f64 / 5000.0))
            .fold(f64::INFINITY, f64::min);
        assert!((hc.path_min(0.25, 0.75) - brute).abs() < 1e-12);
        for (s, t) in [(0.1, 0.9), (0.33, 0.34), (0.5, 0.77), (0.0, 1.0)] {
            let steps = 10_000;
            let brute = (0..=steps)
                .map(|i| h.eval(s + (t - s) * i as f64 / steps as f64))
                .fold(f64::INFINITY, f64::min);
            // the grid contains every breakpoint only approximately; the exact
            // minimum can only be lower
            assert!(h.path_min(s, t) <= brute + 1e-12);
            assert!(brute - h.path_min(s, t) < 1.0 / (60f64.sqrt() * 10.0));
        }
    }

    #[test]
    fn streaming_field_matches_lineage() {
        let mu = OffspringDistribution::three_point();
        for seed in 0..20 {
            let t = sample_conditioned_tree(&mu, 300, SeedSpec::new(seed, 0)).unwrap();
            let g = lineage_field(&t, &mu).unwrap();
            let q4 = 300f64.powf(0.25);
            for v in (0..=300).step_by(7) {
                let a = t.lineage_bounded(v, None, 2).unwrap();
                let d = t.depth(v) as f64;
                for (s, (k, _)) in types(2).enumerate() {
                    let want = (a.counts()[s] as f64 - mu.prob(k) * d) / q4;
                    assert_eq!(g.components()[s].at(v), want);
                }
            }
        }
    }

    #[test]
    fn binary_deterministic_identity() {
        let mu = OffspringDistribution::binary();
        let nu = DisplacementFamily::point_masses(&[(2, vec![1.0, -1.0])]);
        let t = sample_conditioned_tree(&mu, 500, SeedSpec::new(9, 0)).unwrap();
        let lt = assign_labels(&t, &nu, SeedSpec::new(9, 1)).unwrap();
        let p = normalized_processes(&lt).unwrap();
        let g = lineage_field(&t, &mu).unwrap();
        for i in 0..=500 {
            let diff = g.get(2, 1).at(i) - g.get(2, 2).at(i);
            assert!((p.label.at(i) - diff).abs() < 1e-12);
        }
        let ms = moments(&mu, &nu).unwrap();
        let dec = label_decomposition(&lt, &mu, &ms).unwrap();
        assert!(dec.r1.values().iter().all(|&x| x == 0.0));
        assert!(dec.max_residual(&p.label) < 1e-12);
    }

    #[test]
    fn mixed_identity() {
        let mu = OffspringDistribution::binary();
        let nu = DisplacementFamily::uniform(2, &[vec![2.0, -1.0], vec![0.0, -1.0]]);
        let ms = moments(&mu, &nu).unwrap();
        assert_eq!(&ms.mean_kj[1..], &[1.0, -1.0]);
        for seed in 0..10 {
            let t = sample_conditioned_tree(&mu, 500, SeedSpec::new(seed, 0)).unwrap();
            let lt = assign_labels(&t, &nu, SeedSpec::new(seed, 1)).unwrap();
            let p = normalized_processes(&lt).unwrap();
            let dec = label_decomposition(&lt, &mu, &ms).unwrap();
            assert!(dec.max_residual(&p.label) < 1e-9);
            assert!(dec.drift.values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_means_give_zero_r2() {
        let mu = OffspringDistribution::binary();
        let nu = DisplacementFamily::uniform(2, &[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let ms = moments(&mu, &nu).unwrap();
        let t = sample_conditioned_tree(&mu, 100, SeedSpec::new(1, 0)).unwrap();
        let lt = assign_labels(&t, &nu, SeedSpec::new(1, 1)).unwrap();
        let dec = label_decomposition(&lt, &mu, &ms).unwrap();
        assert!(dec.r2.values().iter().all(|&x| x == 0.0));
        assert_eq!(dec.r1, normalized_processes(&lt).unwrap().label);
    }

    #[test]
    fn cherry_diagnostics() {
        let t = PlanarTree::from_child_counts(&[2, 0, 0]).unwrap();
        let d = diagnostics(&t, &OffspringDistribution::binary(), true).unwrap();
        assert_eq!(d.max_increment, 1);
        // contour (0,1,0,1,0)/sqrt2 against h at quarter points (0,.5,1,1,1)/sqrt2
        assert!((d.sup_gap - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(diagnostics(&PlanarTree::from_child_counts(&[1, 0]).unwrap(), &OffspringDistribution::three_point(), false).is_err());
    }

    #[test]
    fn windowed_concentration_full_scan_dominates() {
        let mu = OffspringDistribution::binary();
        let t = sample_conditioned_tree(&mu, 400, SeedSpec::new(4, 0)).unwrap();
        let a = diagnostics(&t, &mu, false).unwrap();
        let b = diagnostics(&t, &mu, true).unwrap();
        assert!(b.concentration >= a.concentration);
        // brute force over all nodes and windows
        let ln = 400f64.ln();
        let mut best: f64 = 0.0;
        for v in 0..=400 {
            for l in 1..=t.depth(v) {
                let a = t.lineage_bounded(v, Some(l), 2).unwrap();
                for (s, (k, _)) in types(2).enumerate() {
                    best = best.max(
                        (a.counts()[s] as f64 - mu.prob(k) * l as f64).abs()
                            / ((l as f64) * ln).sqrt(),
                    );
                }
            }
        }
        assert!((best - b.concentration).abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let p = PathFunction::new(vec![0.0, 0.5, -1.0]);
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, &["r"], &[&p]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "s,r\n0,0\n0.5,0.5\n1,-1\n");
        let q = PathFunction::new(vec![0.0, 1.0]);
        assert!(write_paths_csv(Vec::new(), &["a", "b"], &[&p, &q]).is_err());
        assert_eq!(field_names(2), vec!["G_1_1", "G_2_1", "G_2_2"]);
    }
}
