//! Command-line front end for trace performance analysis.
//!
//! Exit codes: 0 success, 1 usage error, 2 no fit within the cluster and
//! error bounds, 3 I/O or file-format error, 4 internal numeric failure.

mod dot;
mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use perfclass_core::benchgen::{self, BenchSpec};
use perfclass_core::klinear::{
    best_permutation_agreement, klinear_cluster, Clustering, InitStrategy, KLinearConfig,
};
use perfclass_core::pipeline::{
    analyze, derive_seed, fixed_k_analyze, AnalysisReport, AnalyzeOutcome, Engine, NoFitRecord,
    PipelineConfig, PipelineError,
};
use perfclass_core::spectral::{alignment_kernel_approx, spectral_cluster, AlignmentConfig};
use perfclass_core::trace::{
    load_traces_with_truth, project_points, save_traces_with_truth, TraceError, TraceSet,
    VariableSchema,
};

use report::ReportDoc;

#[derive(Parser)]
#[command(
    name = "perfclass",
    version,
    about = "Clusters execution traces into affine performance classes and explains them with a tree over call counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace file from a named preset or a spec file.
    Gen(GenArgs),
    /// Cluster a trace file at a fixed number of performance classes.
    Cluster(ClusterArgs),
    /// Run the full analysis and write report.json, tree.dot, clusters.csv.
    Analyze(AnalyzeArgs),
    /// Re-export a report.json as DOT.
    Export(ExportArgs),
    /// Score clustering labels against a ground-truth column.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Klinear,
    Spectral,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Tube,
}

#[derive(Args)]
struct GenArgs {
    /// Preset name (r2, r3-1, r3-2, r4-1, r4-2, r4-3, r5, r6, r7, r200,
    /// r400-1, r400-2, r600, r800-1, r800-2, r1600, r3200, r6400).
    #[arg(long, conflicts_with = "spec_file")]
    preset: Option<String>,
    /// JSON file holding a full generator spec.
    #[arg(long)]
    spec_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the preset's trace count.
    #[arg(long)]
    traces: Option<usize>,
    /// Override the preset's noise level (absolute sigma).
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Output trace file (CSV with a truth:label column).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EngineOpts {
    /// K-linear restarts.
    #[arg(long)]
    restarts: Option<usize>,
    /// K-linear iteration cap per run.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// K-linear initialization.
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Tube half-width for tube initialization (default: 5% of y range).
    #[arg(long)]
    tube_epsilon: Option<f64>,
    /// Alignment tube half-width (default: 5% of y range).
    #[arg(long)]
    delta: Option<f64>,
    /// Alignment neighbor samples per point (default: min(n-1, 32)).
    #[arg(long)]
    neighbor_samples: Option<usize>,
    /// Finite stand-in cost for empty tubes.
    #[arg(long)]
    infinity_cap: Option<f64>,
}

#[derive(Args)]
struct TreeOpts {
    #[arg(long)]
    max_height: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    min_impurity_decrease: Option<f64>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Trace file.
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = EngineArg::Klinear)]
    engine: EngineArg,
    /// Number of clusters.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    engine_opts: EngineOpts,
    /// JSON schema file overriding header prefixes.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace file.
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = EngineArg::Klinear)]
    engine: EngineArg,
    /// Fix the cluster count instead of searching.
    #[arg(long)]
    k: Option<usize>,
    /// Upper bound on the cluster count for the search.
    #[arg(long, default_value_t = 8)]
    max_clusters: usize,
    /// Clustering mean-squared-error bound the search must meet.
    #[arg(long)]
    mse_bound: Option<f64>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// RNG seed (defaults to 0; required with --strict).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Reproducibility-first mode: requires --seed and zeroes the timing
    /// field in report.json so repeated runs are byte-identical.
    #[arg(long)]
    strict: bool,
    /// JSON schema file overriding header prefixes.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Also write the similarity matrix (spectral engine) as similarity.csv.
    #[arg(long)]
    dump_similarity: bool,
    #[command(flatten)]
    engine_opts: EngineOpts,
    #[command(flatten)]
    tree_opts: TreeOpts,
}

#[derive(Args)]
struct ExportArgs {
    /// report.json produced by analyze.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "dot")]
    format: String,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// clusters.csv produced by analyze or cluster.
    #[arg(long)]
    clusters: PathBuf,
    /// Trace file with a truth:label column.
    #[arg(long)]
    truth: PathBuf,
}

enum CliError {
    Usage(String),
    NoFit(NoFitRecord),
    Io(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::NoFit(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::BadConfig(msg) => CliError::Usage(msg),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<perfclass_core::benchgen::BenchError> for CliError {
    fn from(e: perfclass_core::benchgen::BenchError) -> Self {
        match e {
            perfclass_core::benchgen::BenchError::Invalid(msg) => CliError::Usage(msg),
            perfclass_core::benchgen::BenchError::Trace(t) => t.into(),
        }
    }
}

impl From<perfclass_core::klinear::ClusterError> for CliError {
    fn from(e: perfclass_core::klinear::ClusterError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<perfclass_core::spectral::SpectralError> for CliError {
    fn from(e: perfclass_core::spectral::SpectralError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, anything else is a
            // usage error (exit 1).
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("usage error: {msg}"),
                CliError::NoFit(record) => {
                    let mut line = format!(
                        "no fit: no cluster count up to {} met the error bound {:e}; per-K mse:",
                        record.max_clusters, record.mse_bound
                    );
                    for (k, mse) in &record.per_k_mse {
                        let _ = write!(line, " k={k} mse={mse:e}");
                    }
                    eprintln!("{line}");
                }
                CliError::Io(msg) => eprintln!("i/o error: {msg}"),
                CliError::Numeric(msg) => eprintln!("numeric failure: {msg}"),
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Export(args) => cmd_export(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn load_schema(path: &Option<PathBuf>) -> Result<Option<VariableSchema>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    #[derive(serde::Deserialize)]
    struct Sidecar {
        inputs: Vec<String>,
        #[serde(default)]
        aux: Vec<String>,
        output: String,
    }
    let raw: Sidecar = serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let schema = VariableSchema::new(raw.inputs, raw.aux, raw.output)?;
    Ok(Some(schema))
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let mut spec: BenchSpec = match (&args.preset, &args.spec_file) {
        (Some(name), None) => benchgen::preset(name, args.seed).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset `{name}` (known: {})",
                benchgen::PRESET_NAMES.join(", ")
            ))
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let mut spec: BenchSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            spec.seed = args.seed;
            spec
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --preset or --spec-file is required".into(),
            ))
        }
    };
    if let Some(n) = args.traces {
        spec.n_traces = n;
    }
    if let Some(sigma) = args.noise_sigma {
        spec.noise_sigma = sigma;
    }
    let bench = benchgen::generate(&spec)?;
    save_traces_with_truth(&bench.traces, Some(&bench.truth), &args.out)?;
    println!(
        "wrote {} traces ({} aux variables, {} patterns) to {}",
        bench.traces.len(),
        bench.traces.schema().n_aux(),
        spec.call_patterns.len(),
        args.out.display()
    );
    Ok(())
}

fn engine_of(arg: EngineArg) -> Engine {
    match arg {
        EngineArg::Klinear => Engine::KLinear,
        EngineArg::Spectral => Engine::Spectral,
    }
}

fn apply_engine_opts(cfg: &mut PipelineConfig, opts: &EngineOpts) {
    if let Some(r) = opts.restarts {
        cfg.klinear.restarts = r;
    }
    if let Some(m) = opts.max_iterations {
        cfg.klinear.max_iterations = m;
    }
    if let Some(init) = opts.init {
        cfg.klinear.init = match init {
            InitArg::Random => InitStrategy::RandomPartition,
            InitArg::Tube => InitStrategy::TubePairs,
        };
    }
    cfg.klinear.tube_epsilon = opts.tube_epsilon;
    cfg.alignment.delta = opts.delta;
    cfg.alignment.neighbor_samples = opts.neighbor_samples;
    cfg.alignment.infinity_cap = opts.infinity_cap;
}

fn write_clusters_csv(
    ts: &TraceSet,
    clustering: &Clustering,
    path: &Path,
) -> Result<(), CliError> {
    let schema = ts.schema();
    let ps = project_points(ts);
    let residuals = clustering.residuals(&ps);
    let mut out = String::new();
    let mut header: Vec<String> = schema.input_names.clone();
    header.push(schema.output_name.clone());
    header.push("label".into());
    header.push("residual".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, t) in ts.traces().iter().enumerate() {
        let mut fields: Vec<String> = t.inputs.iter().map(|v| v.to_string()).collect();
        fields.push(t.output.to_string());
        fields.push(clustering.assignments[i].to_string());
        fields.push(residuals[i].to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let loaded = load_traces_with_truth(&args.input, schema.as_ref())?;
    let ts = loaded.trace_set;
    let ps = project_points(&ts);

    let clustering = match args.engine {
        EngineArg::Klinear => {
            let mut cfg = KLinearConfig::new(args.k);
            cfg.seed = args.seed;
            if let Some(r) = args.engine_opts.restarts {
                cfg.restarts = r;
            }
            if let Some(m) = args.engine_opts.max_iterations {
                cfg.max_iterations = m;
            }
            if let Some(InitArg::Tube) = args.engine_opts.init {
                cfg.init = InitStrategy::TubePairs;
            }
            cfg.tube_epsilon = args.engine_opts.tube_epsilon;
            klinear_cluster(&ps, &cfg)?
        }
        EngineArg::Spectral => {
            let mut acfg = AlignmentConfig::new(args.k.max(2));
            acfg.seed = derive_seed(args.seed, 17);
            acfg.delta = args.engine_opts.delta;
            acfg.neighbor_samples = args.engine_opts.neighbor_samples;
            if let Some(cap) = args.engine_opts.infinity_cap {
                acfg.infinity_cap = cap;
            }
            let sim = alignment_kernel_approx(&ps, &acfg)?;
            spectral_cluster(&ps, &sim, args.k, derive_seed(args.seed, 2_000 + args.k as u64))?
        }
    };

    fs::create_dir_all(&args.out_dir)?;
    write_clusters_csv(&ts, &clustering, &args.out_dir.join("clusters.csv"))?;
    println!(
        "k={} rss={:e} iterations={}",
        clustering.k(),
        clustering.rss,
        clustering.iterations
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    if args.strict && args.seed.is_none() {
        return Err(CliError::Usage("--strict requires an explicit --seed".into()));
    }
    let seed = args.seed.unwrap_or(0);

    let schema = load_schema(&args.schema)?;
    let ts = load_traces_with_truth(&args.input, schema.as_ref())?.trace_set;

    if args.k.is_none() && args.mse_bound.is_none() {
        return Err(CliError::Usage(
            "either --k (fixed cluster count) or --mse-bound (search) is required".into(),
        ));
    }

    let mut cfg = PipelineConfig::new(
        engine_of(args.engine),
        args.max_clusters,
        args.mse_bound.unwrap_or(1.0),
    );
    cfg.folds = args.folds;
    cfg.seed = seed;
    apply_engine_opts(&mut cfg, &args.engine_opts);
    if let Some(h) = args.tree_opts.max_height {
        cfg.tree.max_height = h;
    }
    if let Some(l) = args.tree_opts.min_leaf {
        cfg.tree.min_leaf = l;
    }
    if let Some(d) = args.tree_opts.min_impurity_decrease {
        cfg.tree.min_impurity_decrease = d;
    }

    let report: AnalysisReport = match args.k {
        Some(k) => fixed_k_analyze(&ts, k, &cfg)?,
        None => match analyze(&ts, &cfg)? {
            AnalyzeOutcome::Fit(report) => *report,
            AnalyzeOutcome::NoFit(record) => return Err(CliError::NoFit(record)),
        },
    };

    fs::create_dir_all(&args.out_dir)?;
    let doc = ReportDoc::from_analysis(&report, args.strict);
    fs::write(args.out_dir.join("report.json"), doc.to_json())?;
    fs::write(args.out_dir.join("tree.dot"), dot::render_dot(&doc))?;
    write_clusters_csv(&ts, &report.clustering, &args.out_dir.join("clusters.csv"))?;

    if args.dump_similarity {
        if let Engine::Spectral = cfg.engine {
            let ps = project_points(&ts);
            let mut acfg = AlignmentConfig::new(report.k.max(2));
            acfg.seed = derive_seed(seed, 17);
            acfg.delta = cfg.alignment.delta;
            acfg.neighbor_samples = cfg.alignment.neighbor_samples;
            if let Some(cap) = cfg.alignment.infinity_cap {
                acfg.infinity_cap = cap;
            }
            let sim = alignment_kernel_approx(&ps, &acfg)?;
            fs::write(args.out_dir.join("similarity.csv"), sim.to_csv_string())?;
        } else {
            eprintln!("note: --dump-similarity only applies to the spectral engine");
        }
    }

    println!(
        "T={:.3}s A={:.3} R2={:.4} H={} L={}",
        report.wall_time_s, report.accuracy, report.r2, report.height, report.leaf_models
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    if args.format != "dot" {
        return Err(CliError::Usage(format!(
            "unsupported export format `{}` (supported: dot)",
            args.format
        )));
    }
    let text = fs::read_to_string(&args.report)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.report.display())))?;
    let doc: ReportDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.report.display())))?;
    let rendered = dot::render_dot(&doc);
    match args.out {
        Some(path) => fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let truth = load_traces_with_truth(&args.truth, None)?
        .truth
        .ok_or_else(|| {
            CliError::Usage(format!(
                "{} has no truth: column",
                args.truth.display()
            ))
        })?;

    let text = fs::read_to_string(&args.clusters)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.clusters.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Io("clusters file is empty".into()))?;
    let label_col = header
        .split(',')
        .position(|c| c.trim() == "label")
        .ok_or_else(|| CliError::Io("clusters file has no label column".into()))?;
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(label_col).ok_or_else(|| {
            CliError::Io(format!("clusters row {}: missing label", i + 1))
        })?;
        let label: usize = field.trim().parse().map_err(|_| {
            CliError::Io(format!("clusters row {}: bad label `{field}`", i + 1))
        })?;
        labels.push(label);
    }

    if labels.len() != truth.len() {
        return Err(CliError::Usage(format!(
            "{} labels but {} truth rows",
            labels.len(),
            truth.len()
        )));
    }
    let agreement = best_permutation_agreement(&labels, &truth)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    println!("agreement={agreement}");
    Ok(())
}
