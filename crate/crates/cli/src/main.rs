use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use gwsnake_core::mc::{self, ExperimentConfig, McError, Statistic};
use gwsnake_core::model::{Model, ModelError};
use gwsnake_core::oracle::{self, OracleError, DEFAULT_ENUMERATION_CAP};
use gwsnake_core::sampler::{derive_stream, ConditionedSampler, LabelSampler, SamplerError, DEFAULT_MAX_ATTEMPTS, GENERATOR};
use gwsnake_core::snake::{self, PathFunction};
use gwsnake_core::{LabeledTree, PlanarTree};

mod render;

/// Artifact format version written by every subcommand.
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Budget(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Validation(_) => 2,
            Self::Verification(_) => 3,
            Self::Budget(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::Validation(format!("model: {e}"))
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::BudgetExceeded { .. } => Self::Budget(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::CapExceeded { .. } => Self::Budget(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Config(_) | McError::Io(_) => Self::Usage(e.to_string()),
            McError::Replica { source: SamplerError::BudgetExceeded { .. }, .. }
            | McError::Sampler(SamplerError::BudgetExceeded { .. }) => Self::Budget(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

/// Conditioned Galton-Watson trees and the branching random walks they index.
#[derive(Debug, Parser)]
#[command(name = "gwsnake", version)]
struct Cli {
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample one tree conditioned on its number of edges.
    Sample(SampleArgs),
    /// Write normalized paths of a sampled tree as CSV.
    Encode(EncodeArgs),
    /// Run the exact identity suite over all small trees.
    Verify(VerifyArgs),
    /// Replicated Monte Carlo experiment.
    Mc(McArgs),
    /// Render a tree, verification report or run manifest as text.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Number of edges n (the tree has n + 1 nodes).
    #[arg(long)]
    edges: usize,
    /// Master seed; the tree and its labels use stream 0.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also draw displacements from the model's nu.
    #[arg(long)]
    labels: bool,
    /// Rejection budget.
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: u64,
    /// Output path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Tree file written by `sample`.
    #[arg(long)]
    tree: PathBuf,
    /// Comma-separated: height, labels, field (node grid i/n) or
    /// contour, contour-labels (walk grid i/2n). Grids cannot be mixed.
    #[arg(long, value_delimiter = ',', default_value = "height")]
    paths: Vec<String>,
    /// Model file; needed for `field` and for drawing labels.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Draw labels with this seed when the tree file has none.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; its configuration goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Model file with rational probabilities ("1/2").
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 6)]
    max_edges: usize,
    /// Largest number of marked nodes.
    #[arg(long, default_value_t = 3)]
    kappa: usize,
    /// Refuse to enumerate more trees than this at a single size.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: u128,
    /// Output path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct McArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Number of edges per tree.
    #[arg(long)]
    edges: usize,
    /// Number of independent trees (at least 2).
    #[arg(long)]
    replicas: usize,
    /// Evaluation points in (0, 1).
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,0.8")]
    grid: Vec<f64>,
    /// Any of cov, ks, indep, diag.
    #[arg(long, value_delimiter = ',', default_value = "cov")]
    stats: Vec<Statistic>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Master seed; replica i uses stream i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Height floor for normality tests.
    #[arg(long, default_value_t = 0.05)]
    ks_floor: f64,
    /// Bootstrap resamples for standard errors.
    #[arg(long, default_value_t = 200)]
    resamples: usize,
    /// Absolute band for lineage-field covariance ratios.
    #[arg(long, default_value_t = 0.05)]
    field_tolerance: f64,
    /// Absolute band for label covariance ratios.
    #[arg(long, default_value_t = 0.1)]
    label_tolerance: f64,
    /// Scan every window length in the concentration diagnostic.
    #[arg(long)]
    full_window_scan: bool,
    /// Rejection budget per tree.
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: u64,
    /// Directory for per-replica path CSVs.
    #[arg(long)]
    dump_paths: Option<PathBuf>,
    /// Run manifest (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Any JSON artifact written by this tool.
    input: PathBuf,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Validation(format!("{}: invalid JSON: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Ok(Model::from_json_str(&read_text(path)?)?)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    let io_err = |e: io::Error| CliError::Usage(format!("cannot write output: {e}"));
    match path {
        Some(p) => mc::write_atomic(p, text.as_bytes()).map_err(io_err),
        None => io::stdout().write_all(text.as_bytes()).map_err(io_err),
    }
}

fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn sample(args: &SampleArgs, verbose: bool) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let sampler = ConditionedSampler::new(&model.mu, args.edges)?.with_max_attempts(args.max_attempts);
    let mut rng = derive_stream(args.seed, 0).rng();
    let tree = sampler.sample(&mut rng)?;
    let labels = if args.labels {
        let nu = model
            .nu
            .as_ref()
            .ok_or_else(|| CliError::Usage("--labels needs a model with a displacement law (nu)".into()))?;
        Some(LabelSampler::new(nu).assign(&tree, &mut rng)?.labels().to_vec())
    } else {
        None
    };
    if verbose {
        eprintln!("sampled a tree with {} edges", tree.n_edges());
    }
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "kind": "tree",
        "generator": GENERATOR,
        "config": {
            "command": "sample",
            "model": model.source(),
            "edges": args.edges,
            "seed": args.seed,
            "labels": args.labels,
            "max_attempts": args.max_attempts,
        },
        "tree": tree,
        "labels": labels,
    });
    write_output(args.out.as_deref(), &to_pretty(&doc))
}

fn encode(args: &EncodeArgs, verbose: bool) -> Result<(), CliError> {
    let doc = read_json(&args.tree)?;
    let tree: PlanarTree = serde_json::from_value(doc.get("tree").cloned().unwrap_or(Value::Null))
        .map_err(|e| CliError::Validation(format!("{}: bad tree: {e}", args.tree.display())))?;
    if tree.n_edges() == 0 {
        return Err(CliError::Validation("paths need a tree with at least one edge".into()));
    }
    let model = args.model.as_deref().map(load_model).transpose()?;
    let node_grid = ["height", "labels", "field"];
    let walk_grid = ["contour", "contour-labels"];
    for p in &args.paths {
        if !node_grid.contains(&p.as_str()) && !walk_grid.contains(&p.as_str()) {
            return Err(CliError::Usage(format!("unknown path {p:?}")));
        }
    }
    let on_walk = args.paths.iter().filter(|p| walk_grid.contains(&p.as_str())).count();
    if on_walk != 0 && on_walk != args.paths.len() {
        return Err(CliError::Usage(
            "contour-type paths (grid i/2n) cannot share a file with node-indexed paths (grid i/n)".into(),
        ));
    }
    let wants_labels = args.paths.iter().any(|p| p == "labels" || p == "contour-labels");
    let mut label_source = Value::Null;
    let labeled = if wants_labels {
        let stored: Option<Vec<f64>> = doc
            .get("labels")
            .filter(|v| !v.is_null())
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()
            .map_err(|e| CliError::Validation(format!("bad labels: {e}")))?;
        let labels = match (stored, args.seed, &model) {
            (Some(l), _, _) => {
                label_source = json!("tree file");
                l
            }
            (None, Some(seed), Some(m)) if m.nu.is_some() => {
                label_source = json!({ "seed": seed });
                let mut rng = derive_stream(seed, 0).rng();
                LabelSampler::new(m.nu.as_ref().unwrap()).assign(&tree, &mut rng)?.labels().to_vec()
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "{} has no labels: pass --seed with a --model that defines nu to draw them",
                    args.tree.display()
                )))
            }
        };
        Some(LabeledTree::new(tree.clone(), labels).map_err(|e| CliError::Validation(e.to_string()))?)
    } else {
        None
    };
    let processes = labeled.as_ref().map(|lt| snake::normalized_processes(lt).expect("n >= 1"));
    let field = if args.paths.iter().any(|p| p == "field") {
        let m = model
            .as_ref()
            .ok_or_else(|| CliError::Usage("the lineage field needs --model (for mu)".into()))?;
        Some(snake::lineage_field(&tree, &m.mu).map_err(|e| CliError::Validation(e.to_string()))?)
    } else {
        None
    };
    let height = snake::height_path(&tree).expect("n >= 1");
    let contour = snake::contour_path(&tree).expect("n >= 1");
    let mut names: Vec<String> = Vec::new();
    let mut paths: Vec<&PathFunction> = Vec::new();
    for p in &args.paths {
        match p.as_str() {
            "height" => paths.push(&height),
            "contour" => paths.push(&contour),
            "labels" => paths.push(&processes.as_ref().unwrap().label),
            "contour-labels" => paths.push(&processes.as_ref().unwrap().contour_label),
            "field" => {
                let f = field.as_ref().unwrap();
                names.extend(snake::field_names(f.max_arity()));
                paths.extend(f.components().iter());
                continue;
            }
            _ => unreachable!(),
        }
        names.push(p.replace('-', "_"));
    }
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut csv = Vec::new();
    snake::write_paths_csv(&mut csv, &names, &paths).map_err(|e| CliError::Validation(e.to_string()))?;
    let io_err = |e: io::Error| CliError::Usage(format!("cannot write output: {e}"));
    mc::write_atomic(&args.out, &csv).map_err(io_err)?;
    let mut sidecar = args.out.as_os_str().to_owned();
    sidecar.push(".json");
    let meta = json!({
        "format_version": FORMAT_VERSION,
        "kind": "paths",
        "config": {
            "command": "encode",
            "tree": args.tree,
            "tree_config": doc.get("config"),
            "paths": args.paths,
            "model": model.as_ref().map(|m| m.source()),
            "labels": label_source,
        },
        "columns": names,
        "rows": paths.first().map_or(0, |p| p.values().len()),
    });
    mc::write_atomic(Path::new(&sidecar), to_pretty(&meta).as_bytes()).map_err(io_err)?;
    if verbose {
        eprintln!("wrote {} columns to {}", names.len(), args.out.display());
    }
    Ok(())
}

fn verify(args: &VerifyArgs, verbose: bool) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    if model.mu.exact().is_none() {
        return Err(CliError::Validation(
            "verify needs exact probabilities: write them as strings such as \"1/2\"".into(),
        ));
    }
    let report = oracle::verify_identities(&model.mu, args.max_edges, args.kappa, args.cap)?;
    let mut doc = serde_json::to_value(&report).expect("serializable");
    let obj = doc.as_object_mut().unwrap();
    obj.insert("kind".into(), json!("verification"));
    obj.insert(
        "config".into(),
        json!({
            "command": "verify",
            "model": model.source(),
            "max_edges": args.max_edges,
            "kappa": args.kappa,
            "cap": args.cap.to_string(),
        }),
    );
    write_output(args.out.as_deref(), &to_pretty(&doc))?;
    if verbose {
        for c in &report.checks {
            eprintln!("{:<22} {} ({} instances)", c.name, if c.passed { "pass" } else { "FAIL" }, c.instances);
        }
    }
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(format!("identities failed: {}", failed.join(", "))))
    }
}

fn run_mc(args: &McArgs, verbose: bool) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let mut cfg = ExperimentConfig::new(args.edges, args.replicas, args.grid.clone(), args.stats.clone(), args.seed);
    cfg.model_ref = Some(args.model.display().to_string());
    cfg.threads = args.threads;
    cfg.ks_floor = args.ks_floor;
    cfg.bootstrap_resamples = args.resamples;
    cfg.field_tolerance = args.field_tolerance;
    cfg.label_tolerance = args.label_tolerance;
    cfg.full_window_scan = args.full_window_scan;
    cfg.max_attempts = args.max_attempts;
    cfg.dump_paths = args.dump_paths.clone();
    let manifest = mc::run_ensemble(&model, &cfg)?;
    mc::write_manifest(&args.out, &manifest).map_err(|e| CliError::Usage(format!("cannot write output: {e}")))?;
    if verbose {
        eprintln!(
            "{} replicas in {:.2}s -> {}",
            args.replicas,
            manifest.metadata.wall_clock_seconds,
            args.out.display()
        );
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let doc = read_json(&args.input)?;
    let text = render::render(&doc).map_err(CliError::Validation)?;
    write_output(None, &text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let v = cli.verbose;
    let result = match &cli.command {
        Command::Sample(a) => sample(a, v),
        Command::Encode(a) => encode(a, v),
        Command::Verify(a) => verify(a, v),
        Command::Mc(a) => run_mc(a, v),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
