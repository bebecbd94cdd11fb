//! Replicated Monte Carlo experiments on conditioned trees: covariance
//! ratios against the simulated height minimum, conditional normality,
//! independence of the two label components, and diagnostics.
//!
//! Replica `i` reads stream `i` of the master seed; results are aggregated
//! in replica order so a manifest is reproducible bit for bit.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::distributions::Distribution;
use rand_distr::Binomial;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::distributions::{moments, DistributionError, MomentSummary, OffspringDistribution};
use crate::lineage::{type_count, types};
use crate::model::Model;
use crate::sampler::{derive_stream, ConditionedSampler, LabelSampler, SamplerError, GENERATOR};
use crate::snake::{
    diagnostics, field_names, height_path, label_decomposition, lineage_field,
    normalized_processes, write_paths_csv, Diagnostics, PathFunction,
};
use crate::stats;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
/// Relative tolerance of the pathwise label decomposition.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("label statistics need a globally centered displacement law with positive variance: {0}")]
    Hypothesis(String),
    #[error("replica {index}: {source}")]
    Replica { index: usize, source: SamplerError },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("only {included} replicas above the height floor (at least {required} needed)")]
    TooFewReplicas { included: usize, required: usize },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Cov,
    Ks,
    Indep,
    Diag,
}

impl FromStr for Statistic {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "cov" => Ok(Self::Cov),
            "ks" => Ok(Self::Ks),
            "indep" => Ok(Self::Indep),
            "diag" => Ok(Self::Diag),
            other => Err(format!("unknown statistic {other:?} (expected cov, ks, indep, diag)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Where the model was read from (informational).
    pub model_ref: Option<String>,
    pub n_edges: usize,
    pub replicas: usize,
    pub grid: Vec<f64>,
    pub stats: Vec<Statistic>,
    pub master_seed: u64,
    pub threads: usize,
    /// Replicas with `h_n(s)` below this are left out of normality tests.
    pub ks_floor: f64,
    pub bootstrap_resamples: usize,
    /// Absolute tolerance of lineage-field covariance ratios.
    pub field_tolerance: f64,
    /// Absolute tolerance of label covariance ratios.
    pub label_tolerance: f64,
    pub full_window_scan: bool,
    pub max_attempts: u64,
    pub dump_paths: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(n_edges: usize, replicas: usize, grid: Vec<f64>, stats: Vec<Statistic>, master_seed: u64) -> Self {
        Self {
            model_ref: None,
            n_edges,
            replicas,
            grid,
            stats,
            master_seed,
            threads: 1,
            ks_floor: 0.05,
            bootstrap_resamples: 200,
            field_tolerance: 0.05,
            label_tolerance: 0.1,
            full_window_scan: false,
            max_attempts: crate::sampler::DEFAULT_MAX_ATTEMPTS,
            dump_paths: None,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        let bad = |m: String| Err(McError::Config(m));
        if self.replicas < 2 {
            return bad(format!("need at least 2 replicas, got {}", self.replicas));
        }
        if self.n_edges == 0 {
            return bad("need at least one edge".into());
        }
        if self.grid.is_empty() {
            return bad("empty grid".into());
        }
        if let Some(s) = self.grid.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
            return bad(format!("grid point {s} outside (0, 1)"));
        }
        if self.threads == 0 {
            return bad("threads must be positive".into());
        }
        if self.bootstrap_resamples < 2 {
            return bad("need at least 2 bootstrap resamples".into());
        }
        if self.stats.contains(&Statistic::Diag) && self.n_edges < 2 {
            return bad("diagnostics need at least 2 edges".into());
        }
        Ok(())
    }

    fn wants(&self, s: Statistic) -> bool {
        self.stats.contains(&s)
    }
}

/// Per-replica functionals at the grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSample {
    /// `h_n(s)` per grid point.
    pub height: Vec<f64>,
    /// `min h_n` between grid points `a` and `b`, at `a * g + b`.
    pub height_min: Vec<f64>,
    /// `G(s)` per grid point, in slot order.
    pub field: Vec<Vec<f64>>,
    pub label: Option<Vec<f64>>,
    pub r1: Option<Vec<f64>>,
    pub r2: Option<Vec<f64>>,
    /// Largest relative residual of `r = r1 + r2 + drift` over all breakpoints.
    pub decomposition_residual: Option<f64>,
    /// Labels determined by the lineage: `r1` vanishes identically and
    /// `r = <G, m_kj> + drift` at every breakpoint.
    pub lineage_label_identity: Option<bool>,
    pub diagnostics: Option<Diagnostics>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    mu: &'a OffspringDistribution,
    moments: Option<MomentSummary>,
    sampler: ConditionedSampler,
    labels: Option<LabelSampler>,
    deterministic_labels: bool,
}

fn at_grid(p: &PathFunction, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&s| p.eval(s)).collect()
}

impl Context<'_> {
    fn replica(&self, index: usize) -> Result<ReplicaSample, McError> {
        let cfg = self.cfg;
        let mut rng = derive_stream(cfg.master_seed, index as u64).rng();
        let tree = self
            .sampler
            .sample(&mut rng)
            .map_err(|source| McError::Replica { index, source })?;
        let h = height_path(&tree).expect("n >= 1");
        let g = lineage_field(&tree, self.mu).expect("n >= 1");
        let grid = &cfg.grid;
        let gl = grid.len();
        let mut height_min = vec![0.0; gl * gl];
        for a in 0..gl {
            for b in 0..gl {
                height_min[a * gl + b] = h.path_min(grid[a], grid[b]);
            }
        }
        let field = grid.iter().map(|&s| g.eval(s)).collect();
        let mut out = ReplicaSample {
            height: at_grid(&h, grid),
            height_min,
            field,
            label: None,
            r1: None,
            r2: None,
            decomposition_residual: None,
            lineage_label_identity: None,
            diagnostics: None,
        };
        let mut label_path = None;
        if let (Some(ls), Some(ms)) = (&self.labels, &self.moments) {
            let lt = ls
                .assign(&tree, &mut rng)
                .map_err(|source| McError::Replica { index, source })?;
            let p = normalized_processes(&lt).expect("n >= 1");
            let dec = label_decomposition(&lt, self.mu, ms).expect("arity covered");
            out.decomposition_residual = Some(dec.max_residual(&p.label));
            if self.deterministic_labels {
                let r1_zero = dec.r1.values().iter().all(|&x| x == 0.0);
                let close = (0..=p.label.intervals()).all(|i| {
                    let r = p.label.at(i);
                    (r - dec.r2.at(i) - dec.drift.at(i)).abs() <= 1e-12 * (1.0 + r.abs())
                });
                out.lineage_label_identity = Some(r1_zero && close);
            }
            out.label = Some(at_grid(&p.label, grid));
            out.r1 = Some(at_grid(&dec.r1, grid));
            out.r2 = Some(at_grid(&dec.r2, grid));
            label_path = Some(p.label);
        }
        if cfg.wants(Statistic::Diag) {
            out.diagnostics = Some(diagnostics(&tree, self.mu, cfg.full_window_scan).expect("n >= 2"));
        }
        if let Some(dir) = &cfg.dump_paths {
            let mut names = vec!["h".to_string()];
            let mut paths = vec![&h];
            if let Some(r) = &label_path {
                names.push("r".into());
                paths.push(r);
            }
            names.extend(field_names(g.max_arity()));
            paths.extend(g.components().iter());
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            let file = fs::File::create(dir.join(format!("replica_{index:06}.csv")))?;
            let mut w = io::BufWriter::new(file);
            write_paths_csv(&mut w, &names, &paths)?;
            w.flush()?;
        }
        Ok(out)
    }
}

/// Samples every replica; order follows the replica index.
pub fn run_replicas(model: &Model, cfg: &ExperimentConfig) -> Result<Vec<ReplicaSample>, McError> {
    cfg.validate()?;
    let mu = &model.mu;
    let label_stats = [Statistic::Cov, Statistic::Ks, Statistic::Indep]
        .iter()
        .any(|&s| cfg.wants(s));
    let mut ms = None;
    if let Some(nu) = &model.nu {
        let m = moments(mu, nu)?;
        if label_stats {
            if !m.centered {
                return Err(McError::Hypothesis(format!("global mean is {}", m.global_mean)));
            }
            if !(m.global_second > 0.0) {
                return Err(McError::Hypothesis("global variance is zero".into()));
            }
        }
        ms = Some(m);
    } else if cfg.wants(Statistic::Indep) {
        return Err(McError::Hypothesis("the independence check needs a displacement law".into()));
    }
    let use_labels = label_stats && ms.is_some();
    let deterministic_labels = ms
        .as_ref()
        .is_some_and(|m| m.variance_kj.iter().all(|&v| v == 0.0));
    if let Some(dir) = &cfg.dump_paths {
        fs::create_dir_all(dir)?;
    }
    let ctx = Context {
        cfg,
        mu,
        sampler: ConditionedSampler::new(mu, cfg.n_edges)?.with_max_attempts(cfg.max_attempts),
        labels: use_labels.then(|| LabelSampler::new(model.nu.as_ref().unwrap())),
        moments: if use_labels { ms } else { None },
        deterministic_labels,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| McError::Config(e.to_string()))?;
    pool.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|i| ctx.replica(i))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceEntry {
    pub a: String,
    pub b: String,
    pub s: f64,
    pub t: f64,
    pub ratio: f64,
    pub se: f64,
    pub target: f64,
    pub tolerance: f64,
    pub mean_height_min: f64,
    /// Mean height minimum too small for the ratio to mean anything.
    pub degenerate: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub replicas: usize,
    pub resamples: usize,
    pub entries: Vec<CovarianceEntry>,
}

impl CovarianceReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, a: &str, b: &str, s: f64, t: f64) -> Option<&CovarianceEntry> {
        self.entries
            .iter()
            .find(|e| e.a == a && e.b == b && e.s == s && e.t == t)
    }
}

/// Reserved bootstrap streams, beyond any replica index.
const COV_BOOTSTRAP_STREAM: u64 = u64::MAX;
const INDEP_BOOTSTRAP_STREAM: u64 = u64::MAX - 1;

/// `E[A(s) B(t)] / E[min h_n on [s, t]]` for each pair of lineage-field
/// components (and the label path when sampled), with bootstrap errors.
pub fn covariance_ratios(
    samples: &[ReplicaSample],
    cfg: &ExperimentConfig,
    mu: &OffspringDistribution,
    beta2: Option<f64>,
) -> CovarianceReport {
    struct Column {
        a: String,
        b: String,
        sa: usize,
        tb: usize,
        target: f64,
        tolerance: f64,
        values: Vec<f64>,
    }
    let grid = &cfg.grid;
    let gl = grid.len();
    let kmax = mu.max_arity();
    let live: Vec<(usize, usize, usize)> = types(kmax)
        .enumerate()
        .filter(|(_, (k, _))| mu.prob(*k) > 0.0)
        .map(|(s, (k, j))| (s, k, j))
        .collect();
    let mut cols: Vec<Column> = Vec::new();
    for (x, &(sa, ka, ja)) in live.iter().enumerate() {
        for &(sb, kb, jb) in &live[x..] {
            let same = sa == sb;
            let target = -mu.prob(ka) * mu.prob(kb) + if same { mu.prob(ka) } else { 0.0 };
            for a in 0..gl {
                for b in 0..gl {
                    if same && b < a {
                        continue;
                    }
                    cols.push(Column {
                        a: format!("G_{ka}_{ja}"),
                        b: format!("G_{kb}_{jb}"),
                        sa: a,
                        tb: b,
                        target,
                        tolerance: cfg.field_tolerance,
                        values: samples.iter().map(|r| r.field[a][sa] * r.field[b][sb]).collect(),
                    });
                }
            }
        }
    }
    if let Some(b2) = beta2 {
        if samples.iter().all(|r| r.label.is_some()) {
            for a in 0..gl {
                for b in a..gl {
                    cols.push(Column {
                        a: "r".into(),
                        b: "r".into(),
                        sa: a,
                        tb: b,
                        target: b2,
                        tolerance: cfg.label_tolerance,
                        values: samples
                            .iter()
                            .map(|r| {
                                let l = r.label.as_ref().unwrap();
                                l[a] * l[b]
                            })
                            .collect(),
                    });
                }
            }
        }
    }
    let denoms: Vec<Vec<f64>> = (0..gl * gl)
        .map(|p| samples.iter().map(|r| r.height_min[p]).collect())
        .collect();
    let ratio_of = |idx: Option<&[usize]>| -> Vec<f64> {
        let sum = |v: &[f64]| match idx {
            Some(ix) => ix.iter().map(|&i| v[i]).sum::<f64>(),
            None => v.iter().sum::<f64>(),
        };
        let dsum: Vec<f64> = denoms.iter().map(|d| sum(d)).collect();
        cols.iter()
            .map(|c| sum(&c.values) / dsum[c.sa * gl + c.tb])
            .collect()
    };
    let point = ratio_of(None);
    let mut rng = derive_stream(cfg.master_seed, COV_BOOTSTRAP_STREAM).rng();
    let se = stats::bootstrap_se(samples.len(), cfg.bootstrap_resamples, &mut rng, |ix| {
        ratio_of(Some(ix))
    });
    let entries = cols
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mh = stats::mean(&denoms[c.sa * gl + c.tb]);
            let degenerate = !(mh > 1e-9);
            let tolerance = (3.0 * se[i]).max(c.tolerance);
            CovarianceEntry {
                a: c.a.clone(),
                b: c.b.clone(),
                s: grid[c.sa],
                t: grid[c.tb],
                ratio: point[i],
                se: se[i],
                target: c.target,
                tolerance,
                mean_height_min: mh,
                degenerate,
                pass: !degenerate && (point[i] - c.target).abs() <= tolerance,
            }
        })
        .collect();
    CovarianceReport {
        replicas: samples.len(),
        resamples: cfg.bootstrap_resamples,
        entries,
    }
}

/// Which process a normality test looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Process {
    Label,
    /// Lineage-field component by slot.
    Field(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    pub process: String,
    pub s: f64,
    /// Conditional variance constant: `z = x / sqrt(c h_n(s))`.
    pub variance_constant: f64,
    pub included: usize,
    pub excluded: usize,
    pub excluded_fraction: f64,
    /// Five percent or more of the replicas fell below the height floor.
    pub flagged: bool,
    pub statistic: f64,
    pub z_mean: f64,
    pub z_variance: f64,
}

pub const KS_MIN_REPLICAS: usize = 100;

/// Kolmogorov-Smirnov distance of `x / sqrt(c h_n(s))` to the standard
/// normal, over replicas with `h_n(s) >= floor`.
pub fn ks_normality(
    samples: &[ReplicaSample],
    grid_index: usize,
    s: f64,
    process: Process,
    c: f64,
    floor: f64,
) -> Result<KsReport, McError> {
    let mut z = Vec::with_capacity(samples.len());
    for r in samples {
        let h = r.height[grid_index];
        if h < floor {
            continue;
        }
        let x = match process {
            Process::Label => r.label.as_ref().map(|l| l[grid_index]),
            Process::Field(slot) => Some(r.field[grid_index][slot]),
        };
        let Some(x) = x else { continue };
        z.push(x / (c * h).sqrt());
    }
    let excluded = samples.len() - z.len();
    if z.len() < KS_MIN_REPLICAS {
        return Err(McError::TooFewReplicas {
            included: z.len(),
            required: KS_MIN_REPLICAS,
        });
    }
    let excluded_fraction = excluded as f64 / samples.len() as f64;
    Ok(KsReport {
        process: match process {
            Process::Label => "r".into(),
            Process::Field(slot) => {
                let (k, j) = crate::lineage::slot_type(slot);
                format!("G_{k}_{j}")
            }
        },
        s,
        variance_constant: c,
        included: z.len(),
        excluded,
        excluded_fraction,
        flagged: excluded_fraction >= 0.05,
        statistic: stats::ks_normal(&z),
        z_mean: stats::mean(&z),
        z_variance: stats::variance(&z),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceReport {
    pub s: f64,
    pub t: f64,
    pub correlation: Option<f64>,
    pub se: Option<f64>,
    /// `3 / sqrt(R)`.
    pub threshold: f64,
    pub degenerate: Option<String>,
    pub pass: Option<bool>,
}

/// Correlation of `r1(s)` and `r2(t)` across replicas.
pub fn independence_check(
    samples: &[ReplicaSample],
    cfg: &ExperimentConfig,
    ms: &MomentSummary,
    mu: &OffspringDistribution,
    pairs: &[(usize, usize)],
) -> Vec<IndependenceReport> {
    let live = |s: usize| {
        let (k, _) = crate::lineage::slot_type(s);
        mu.prob(k) > 0.0
    };
    let slots = type_count(ms.max_arity);
    let model_reason = if (0..slots).filter(|&s| live(s)).all(|s| ms.variance_kj[s] == 0.0) {
        Some("all centered displacements vanish: r1 is identically zero".to_string())
    } else if (0..slots).filter(|&s| live(s)).all(|s| ms.mean_kj[s] == 0.0) {
        Some("all displacement means vanish: r2 is identically zero".to_string())
    } else {
        None
    };
    let threshold = 3.0 / (samples.len() as f64).sqrt();
    let mut rng = derive_stream(cfg.master_seed, INDEP_BOOTSTRAP_STREAM).rng();
    pairs
        .iter()
        .map(|&(a, b)| {
            let (s, t) = (cfg.grid[a], cfg.grid[b]);
            let x: Vec<f64> = samples.iter().map(|r| r.r1.as_ref().unwrap()[a]).collect();
            let y: Vec<f64> = samples.iter().map(|r| r.r2.as_ref().unwrap()[b]).collect();
            let degenerate = model_reason.clone().or_else(|| {
                stats::correlation(&x, &y)
                    .is_none()
                    .then(|| "a component is constant across replicas".to_string())
            });
            if let Some(reason) = degenerate {
                return IndependenceReport {
                    s,
                    t,
                    correlation: None,
                    se: None,
                    threshold,
                    degenerate: Some(reason),
                    pass: None,
                };
            }
            let rho = stats::correlation(&x, &y).unwrap();
            let se = stats::bootstrap_se(samples.len(), cfg.bootstrap_resamples, &mut rng, |ix| {
                let xs: Vec<f64> = ix.iter().map(|&i| x[i]).collect();
                let ys: Vec<f64> = ix.iter().map(|&i| y[i]).collect();
                vec![stats::correlation(&xs, &ys).unwrap_or(0.0)]
            })[0];
            IndependenceReport {
                s,
                t,
                correlation: Some(rho),
                se: Some(se),
                threshold,
                degenerate: None,
                pass: Some(rho.abs() < threshold),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsSummary {
    pub replicas: usize,
    pub median_max_increment_ratio: f64,
    pub median_last_depth_ratio: f64,
    pub median_concentration: f64,
    pub max_concentration: f64,
    pub median_sup_gap: f64,
}

pub fn summarize_diagnostics(samples: &[ReplicaSample]) -> Option<DiagnosticsSummary> {
    let d: Vec<&Diagnostics> = samples.iter().filter_map(|r| r.diagnostics.as_ref()).collect();
    if d.is_empty() {
        return None;
    }
    let col = |f: fn(&Diagnostics) -> f64| d.iter().map(|x| f(x)).collect::<Vec<f64>>();
    let conc = col(|x| x.concentration);
    Some(DiagnosticsSummary {
        replicas: d.len(),
        median_max_increment_ratio: stats::median(&col(|x| x.max_increment_ratio)),
        median_last_depth_ratio: stats::median(&col(|x| x.last_depth_ratio)),
        median_concentration: stats::median(&conc),
        max_concentration: conc.iter().copied().fold(0.0, f64::max),
        median_sup_gap: stats::median(&col(|x| x.sup_gap)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwiseReport {
    pub replicas_checked: usize,
    pub max_decomposition_residual: Option<f64>,
    pub decomposition_failures: usize,
    /// Replicas whose labels are a function of the lineage (all displacement
    /// laws are point masses).
    pub lineage_label_checked: usize,
    pub lineage_label_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub wall_clock_seconds: f64,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub model: Value,
    pub generator: String,
    pub moments: Option<MomentSummary>,
    pub covariance: Option<CovarianceReport>,
    pub ks: Vec<KsReport>,
    pub independence: Vec<IndependenceReport>,
    pub diagnostics: Option<DiagnosticsSummary>,
    pub pathwise: PathwiseReport,
    pub notes: Vec<String>,
    /// Excluded from reproducibility comparisons.
    pub metadata: Metadata,
}

impl RunManifest {
    /// The manifest without its metadata block.
    pub fn deterministic_value(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("serializable");
        v.as_object_mut().unwrap().remove("metadata");
        v
    }
}

/// Aggregates replica samples into a manifest (metadata left blank).
pub fn summarize(model: &Model, cfg: &ExperimentConfig, samples: &[ReplicaSample]) -> RunManifest {
    let mu = &model.mu;
    let ms = model.nu.as_ref().and_then(|nu| moments(mu, nu).ok());
    let has_labels = samples.first().is_some_and(|r| r.label.is_some());
    let beta2 = if has_labels { ms.as_ref().map(|m| m.global_second) } else { None };
    let mut notes = Vec::new();

    let covariance = cfg
        .wants(Statistic::Cov)
        .then(|| covariance_ratios(samples, cfg, mu, beta2));

    let mut ks = Vec::new();
    if cfg.wants(Statistic::Ks) {
        for (gi, &s) in cfg.grid.iter().enumerate() {
            let mut tests: Vec<(Process, f64)> = Vec::new();
            if let Some(b2) = beta2 {
                tests.push((Process::Label, b2));
            }
            for (slot, (k, _)) in types(mu.max_arity()).enumerate() {
                let c = mu.prob(k) - mu.prob(k) * mu.prob(k);
                if c > 0.0 {
                    tests.push((Process::Field(slot), c));
                }
            }
            for (p, c) in tests {
                match ks_normality(samples, gi, s, p, c, cfg.ks_floor) {
                    Ok(r) => ks.push(r),
                    Err(e) => notes.push(format!("normality test at s = {s} skipped: {e}")),
                }
            }
        }
    }

    let independence = match (&ms, cfg.wants(Statistic::Indep) && has_labels) {
        (Some(m), true) => {
            let gl = cfg.grid.len();
            let pairs: Vec<(usize, usize)> =
                (0..gl).flat_map(|a| (0..gl).map(move |b| (a, b))).collect();
            independence_check(samples, cfg, m, mu, &pairs)
        }
        _ => Vec::new(),
    };

    let residuals: Vec<f64> = samples.iter().filter_map(|r| r.decomposition_residual).collect();
    let ident: Vec<bool> = samples.iter().filter_map(|r| r.lineage_label_identity).collect();
    let pathwise = PathwiseReport {
        replicas_checked: residuals.len(),
        max_decomposition_residual: residuals.iter().copied().reduce(f64::max),
        decomposition_failures: residuals.iter().filter(|&&x| !(x <= DECOMPOSITION_TOLERANCE)).count(),
        lineage_label_checked: ident.len(),
        lineage_label_failures: ident.iter().filter(|&&ok| !ok).count(),
    };

    RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        config: cfg.clone(),
        model: model.source().clone(),
        generator: GENERATOR.to_string(),
        moments: ms,
        covariance,
        ks,
        independence,
        diagnostics: summarize_diagnostics(samples),
        pathwise,
        notes,
        metadata: Metadata {
            wall_clock_seconds: 0.0,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    }
}

pub fn run_ensemble(model: &Model, cfg: &ExperimentConfig) -> Result<RunManifest, McError> {
    let start = Instant::now();
    let samples = run_replicas(model, cfg)?;
    let mut manifest = summarize(model, cfg, &samples);
    manifest.metadata.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(manifest)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultinomialEntry {
    pub a: String,
    pub b: String,
    pub empirical: f64,
    pub se: f64,
    pub target: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultinomialReport {
    pub n: usize,
    pub h: u64,
    pub lambda: f64,
    pub replicas: usize,
    pub entries: Vec<MultinomialEntry>,
    /// `E ||G(n, h)||_1^2 / (h / sqrt n)`.
    pub moment_ratio: f64,
}

/// Draws `(M^(h) - mu_k h) / n^(1/4)` with `M^(h)` multinomial over the types.
fn draw_scaled_multinomial<R: rand::Rng + ?Sized>(
    mu: &OffspringDistribution,
    n: usize,
    h: u64,
    rng: &mut R,
) -> Vec<f64> {
    let kmax = mu.max_arity();
    let p: Vec<f64> = types(kmax).map(|(k, _)| mu.prob(k)).collect();
    let q4 = (n as f64).powf(0.25);
    let mut left = h;
    let mut tail: f64 = p.iter().sum();
    let mut out = Vec::with_capacity(p.len());
    for (i, &pi) in p.iter().enumerate() {
        let c = if i + 1 == p.len() || left == 0 {
            left
        } else if pi <= 0.0 {
            0
        } else {
            let q = (pi / tail).min(1.0);
            Binomial::new(left, q).unwrap().sample(rng)
        };
        left -= c;
        tail -= pi;
        out.push((c as f64 - pi * h as f64) / q4);
    }
    out
}

/// Empirical covariance of the scaled multinomial vector at
/// `h = floor(lambda sqrt n)` against `lambda (-p_i p_i' + p_i 1{i = i'})`,
/// plus the second-moment ratio.
pub fn multinomial_limit_check(
    mu: &OffspringDistribution,
    n: usize,
    lambda: f64,
    replicas: usize,
    seed: u64,
) -> MultinomialReport {
    let h = (lambda * (n as f64).sqrt()).floor() as u64;
    let mut rng = derive_stream(seed, 0).rng();
    let draws: Vec<Vec<f64>> = (0..replicas)
        .map(|_| draw_scaled_multinomial(mu, n, h, &mut rng))
        .collect();
    let kmax = mu.max_arity();
    let live: Vec<(usize, usize, usize)> = types(kmax)
        .enumerate()
        .filter(|(_, (k, _))| mu.prob(*k) > 0.0)
        .map(|(s, (k, j))| (s, k, j))
        .collect();
    let mut entries = Vec::new();
    for (x, &(sa, ka, ja)) in live.iter().enumerate() {
        for &(sb, kb, jb) in &live[x..] {
            let xa: Vec<f64> = draws.iter().map(|d| d[sa]).collect();
            let xb: Vec<f64> = draws.iter().map(|d| d[sb]).collect();
            let (ma, mb) = (stats::mean(&xa), stats::mean(&xb));
            let prods: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| (a - ma) * (b - mb)).collect();
            let cov = stats::mean(&prods) * replicas as f64 / (replicas as f64 - 1.0);
            let se = (stats::variance(&prods) / replicas as f64).sqrt();
            let p = (mu.prob(ka), mu.prob(kb));
            let target = lambda * (-p.0 * p.1 + if sa == sb { p.0 } else { 0.0 });
            entries.push(MultinomialEntry {
                a: format!("G_{ka}_{ja}"),
                b: format!("G_{kb}_{jb}"),
                empirical: cov,
                se,
                target,
                pass: (cov - target).abs() <= 3.0 * se + 1e-12,
            });
        }
    }
    let norm2: Vec<f64> = draws
        .iter()
        .map(|d| d.iter().map(|x| x.abs()).sum::<f64>().powi(2))
        .collect();
    let scale = h as f64 / (n as f64).sqrt();
    MultinomialReport {
        n,
        h,
        lambda,
        replicas,
        entries,
        moment_ratio: if scale > 0.0 { stats::mean(&norm2) / scale } else { 0.0 },
    }
}

/// `E ||G(n, h)||_1^2 / (h / sqrt n)` by simulation.
pub fn moment_ratio(mu: &OffspringDistribution, n: usize, h: u64, replicas: usize, seed: u64) -> f64 {
    let mut rng = derive_stream(seed, 0).rng();
    let scale = h as f64 / (n as f64).sqrt();
    let m = (0..replicas)
        .map(|_| {
            draw_scaled_multinomial(mu, n, h, &mut rng)
                .iter()
                .map(|x| x.abs())
                .sum::<f64>()
                .powi(2)
        })
        .sum::<f64>()
        / replicas as f64;
    if scale > 0.0 {
        m / scale
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, r: usize, stats: Vec<Statistic>) -> ExperimentConfig {
        ExperimentConfig::new(n, r, vec![0.2, 0.5, 0.8], stats, 42)
    }

    #[test]
    fn config_validation() {
        assert!(cfg(4, 1, vec![]).validate().is_err());
        let mut c = cfg(4, 2, vec![]);
        c.grid = vec![0.0, 0.5];
        assert!(c.validate().is_err());
        c.grid = vec![0.5, 1.0];
        assert!(c.validate().is_err());
        assert!(cfg(4, 2, vec![Statistic::Cov]).validate().is_ok());
        assert_eq!("indep".parse::<Statistic>(), Ok(Statistic::Indep));
        assert!("foo".parse::<Statistic>().is_err());
    }

    #[test]
    fn smoke_and_determinism() {
        let model = Model::binary_deterministic();
        let c = cfg(4, 2, vec![Statistic::Cov, Statistic::Ks, Statistic::Indep, Statistic::Diag]);
        let a = run_ensemble(&model, &c).unwrap();
        let b = run_ensemble(&model, &c).unwrap();
        assert_eq!(a.deterministic_value(), b.deterministic_value());
        assert_eq!(a.pathwise.replicas_checked, 2);
        assert_eq!(a.pathwise.lineage_label_failures, 0);
        // too few replicas for a normality test
        assert!(a.ks.is_empty() && !a.notes.is_empty());
        // r1 vanishes for this model
        assert!(a.independence.iter().all(|r| r.degenerate.is_some()));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let model = Model::binary_mixed();
        let mut c = cfg(100, 50, vec![Statistic::Cov, Statistic::Indep]);
        let a = run_ensemble(&model, &c).unwrap();
        c.threads = 3;
        let b = run_ensemble(&model, &c).unwrap();
        let strip = |m: &RunManifest| {
            let mut v = m.deterministic_value();
            v["config"]["threads"] = Value::Null;
            v
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn hypothesis_violations() {
        let off_center = Model::from_json_str(
            r#"{"mu":{"probs":["1/2","0","1/2"]},"nu":{"2":[{"v":[1,1],"p":"1"}]}}"#,
        )
        .unwrap();
        assert!(matches!(
            run_replicas(&off_center, &cfg(10, 2, vec![Statistic::Cov])),
            Err(McError::Hypothesis(_))
        ));
        // structural statistics do not need the label hypotheses
        assert!(run_replicas(&off_center, &cfg(10, 2, vec![Statistic::Diag])).is_ok());
        let zero = Model::from_json_str(
            r#"{"mu":{"probs":["1/2","0","1/2"]},"nu":{"2":[{"v":[0,0],"p":"1"}]}}"#,
        )
        .unwrap();
        assert!(matches!(
            run_replicas(&zero, &cfg(10, 2, vec![Statistic::Ks])),
            Err(McError::Hypothesis(_))
        ));
        let bare = Model::from_json_str(r#"{"mu":{"probs":["1/2","0","1/2"]}}"#).unwrap();
        assert!(run_replicas(&bare, &cfg(10, 2, vec![Statistic::Cov])).is_ok());
        assert!(matches!(
            run_replicas(&bare, &cfg(10, 2, vec![Statistic::Indep])),
            Err(McError::Hypothesis(_))
        ));
        assert!(matches!(
            run_replicas(&bare, &cfg(11, 2, vec![])),
            Err(McError::Sampler(SamplerError::SpanMismatch { .. }))
        ));
    }

    #[test]
    fn ks_needs_enough_replicas() {
        let model = Model::binary_deterministic();
        let s = run_replicas(&model, &cfg(50, 20, vec![Statistic::Ks])).unwrap();
        assert!(matches!(
            ks_normality(&s, 1, 0.5, Process::Label, 1.0, 0.05),
            Err(McError::TooFewReplicas { .. })
        ));
    }

    #[test]
    fn multinomial_covariance() {
        let mu = OffspringDistribution::binary();
        let r = multinomial_limit_check(&mu, 10_000, 1.0, 20_000, 3);
        assert_eq!(r.h, 100);
        let e = r.entries.iter().find(|e| e.a == "G_2_1" && e.b == "G_2_2").unwrap();
        assert_eq!(e.target, -0.25);
        assert!(e.pass, "{e:?}");
        let z = multinomial_limit_check(&mu, 100, 0.0, 10, 1);
        assert_eq!(z.h, 0);
        assert!(z.entries.iter().all(|e| e.empirical == 0.0));
    }

    #[test]
    fn atomic_write() {
        let dir = std::env::temp_dir().join(format!("gwsnake-atomic-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("x.json");
        write_atomic(&p, b"{}").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"{}");
        assert!(!dir.join("x.json.tmp").exists());
        fs::remove_dir_all(&dir).unwrap();
    }
}
