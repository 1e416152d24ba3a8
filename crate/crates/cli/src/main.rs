//! `faeclust`: simulate, smooth, measure, fit, cluster and score functional data.

mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use faeclust_core::cvxclust::{verify_path, FistaOptions, PathCheck};
use faeclust_core::datagen::{generate_warped, SimKind, SimParams, SimSpec, WarpSpec};
use faeclust_core::fdata::SamplePath;
use faeclust_core::io::{
    align_labels, build_dataset, default_manifest, read_embedding, read_graph, read_json, read_labels, read_long_csv,
    write_distances, write_embedding, write_graph, write_json_atomic, write_labels, write_long_csv, DatasetManifest,
};
use faeclust_core::metrics::{
    build_similarity_graph, distance_matrix, select_neighborhood_size, MetricKind, MetricOptions, NeighborhoodStrategy,
    WeightScaling,
};
use faeclust_core::network::{save_checkpoint, NetworkConfig};
use faeclust_core::pipeline::{ami, ari, cluster_embedding, fit, FitConfig};
use faeclust_core::FaeError;
use serde::Serialize;

use output::{OutRoot, RunManifest};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("FAECLUST_BUILD_HASH"), ")");

#[derive(Debug, Parser)]
#[command(name = "faeclust", version = VERSION, about = "Functional autoencoder clustering of functional data")]
struct Cli {
    /// Worker threads for the parallel kernels; FAECLUST_THREADS is the fallback.
    #[arg(long, global = true, env = "FAECLUST_THREADS")]
    threads: Option<usize>,
    /// Seed for every random draw (defaults to 0, or the config file's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output; repeat for debug level. RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a simulated dataset in long CSV format.
    Simulate(SimulateArgs),
    /// Smooth raw observations into a basis and write coefficients and curves.
    Smooth(SmoothArgs),
    /// Pairwise distances, and optionally the similarity graph.
    Distances(DistancesArgs),
    /// Train the autoencoder and cluster its embedding.
    Fit(FitArgs),
    /// Convex clustering of a precomputed embedding.
    Cluster(ClusterArgs),
    /// AMI and ARI of predicted labels against the truth.
    Evaluate(EvaluateArgs),
    /// Re-run the invocation recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// hypersphere, hyperbolic, swissroll, lorenz or pendulum.
    #[arg(long)]
    kind: SimKind,
    /// Standard deviation of the observation noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Observations file; its directory holds every output.
    #[arg(long)]
    out: PathBuf,
    /// Truth labels (`subject_id,label`), next to `--out`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Shape overrides; each kind has its own defaults.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    dims: Option<usize>,
    /// Observation times per path.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    /// JSON file overriding generator constants.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Compose every path with a random monotone time warp.
    #[arg(long)]
    warp: bool,
    /// Knots of each warp, endpoints included.
    #[arg(long, default_value_t = 4)]
    warp_knots: usize,
    /// Bound on the ratio of fastest to slowest warp speed.
    #[arg(long, default_value_t = 2.0)]
    warp_ratio: f64,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Long-format observations `subject_id,dim,t,value`.
    #[arg(long)]
    data: PathBuf,
    /// Dataset manifest (basis, lambda_s, standardize). Defaults to 20 cubic
    /// B-splines over the observed time range.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SmoothArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Points of the uniform grid the smoothed curves are written on.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    L2,
    Srv,
    DtwFast,
    DtwUltra,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::L2 => MetricKind::HilbertL2,
            MetricArg::Srv => MetricKind::ElasticSrv,
            MetricArg::DtwFast => MetricKind::DtwFast,
            MetricArg::DtwUltra => MetricKind::DtwUltra,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Knee,
    Connectivity,
}

#[derive(Debug, Args)]
struct DistancesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "l2")]
    metric: MetricArg,
    /// Evaluation grid of the elastic and DTW metrics.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// Fast-DTW search radius.
    #[arg(long)]
    radius: Option<usize>,
    /// Distance list `i,j,d`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the similarity graph `i,j,s` here.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Fixed neighbourhood size of the graph.
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long, value_enum, default_value = "knee")]
    strategy: StrategyArg,
    /// Use exp(−d) instead of exp(−d / median d).
    #[arg(long)]
    raw_exp: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Network config (JSON); defaults when absent.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Fit config (JSON); defaults when absent.
    #[arg(long)]
    fitcfg: Option<PathBuf>,
    /// Truth labels; adds evaluation.json.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Embedding `subject_id,x0,x1,...`.
    #[arg(long)]
    embedding: PathBuf,
    /// Similarity graph `i,j,s` over the embedding rows.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 2)]
    kmin: usize,
    #[arg(long, default_value_t = 10)]
    kmax: usize,
    #[arg(long)]
    k_fixed: Option<usize>,
    /// Re-solve at 50 levels per dimension with FISTA and report deviations.
    #[arg(long)]
    verify_fista: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// A `run_manifest.json` or `*.run.json` file.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(FaeError),
}

impl From<FaeError> for CliError {
    fn from(e: FaeError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(
                FaeError::Config(_) | FaeError::InvalidBasisConfig(_) | FaeError::GridTooSmall { .. } | FaeError::InvalidSpec(_),
            ) => 1,
            CliError::Core(FaeError::ShapeMismatch(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(cli.verbose);
    match run(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => t,
        None => rayon::current_num_threads(),
    };
    // a second call (replay) keeps the pool from the first
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let ctx = Ctx { seed: cli.seed, threads, argv, started: Instant::now() };
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Smooth(a) => smooth_cmd(&ctx, a),
        Command::Distances(a) => distances(&ctx, a),
        Command::Fit(a) => fit_cmd(&ctx, a),
        Command::Cluster(a) => cluster(&ctx, a),
        Command::Evaluate(a) => evaluate(a),
        Command::Replay(a) => replay(a),
    }
}

struct Ctx {
    seed: Option<u64>,
    threads: usize,
    argv: Vec<String>,
    started: Instant,
}

impl Ctx {
    fn manifest(&self, subcommand: &'static str, seed: Option<u64>, config: impl Serialize) -> CliResult<RunManifest> {
        Ok(RunManifest {
            tool: "faeclust",
            version: VERSION,
            subcommand,
            argv: self.argv.clone(),
            seed,
            threads: self.threads,
            config: serde_json::to_value(config).map_err(FaeError::from)?,
            inputs: BTreeMap::new(),
            output_root: String::new(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
            wall_time_s: 0.0,
        })
    }

    fn finish(&self, out: OutRoot, mut manifest: RunManifest) -> CliResult<()> {
        manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        out.finish(manifest)
    }
}

fn input(m: &mut RunManifest, name: &str, path: &Path) {
    m.inputs.insert(name.into(), path.display().to_string());
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> CliResult<()> {
    let seed = ctx.seed.unwrap_or(0);
    let mut spec = SimSpec::new(a.kind, seed).with_noise(a.noise);
    if let Some(v) = a.samples {
        spec.n_samples = v;
    }
    if let Some(v) = a.dims {
        spec.n_dims = v;
    }
    if let Some(v) = a.steps {
        spec.n_steps = v;
    }
    if let Some(v) = a.clusters {
        spec.n_clusters = v;
    }
    if let Some(p) = &a.params {
        spec.params = read_json::<SimParams>(p)?;
    }
    let warp = a.warp.then_some(WarpSpec { n_knots: a.warp_knots, max_speed_ratio: a.warp_ratio, seed });
    let mut out = OutRoot::file(&a.out)?;
    let data_path = out.place(&a.out)?;
    let truth_path = a.truth.as_deref().map(|t| out.place(t)).transpose()?;

    let sim = generate_warped(&spec, warp.as_ref())?;
    write_long_csv(&data_path, &sim.paths)?;
    if let Some(t) = &truth_path {
        let ids: Vec<i64> = sim.paths.iter().map(|p| p.subject_id).collect();
        write_labels(t, &ids, &sim.labels)?;
    }
    log::info!("simulated {} {} subjects", sim.paths.len(), a.kind.name());
    #[derive(Serialize)]
    struct Config<'a> {
        spec: &'a SimSpec,
        warp: Option<WarpSpec>,
    }
    let mut m = ctx.manifest("simulate", Some(seed), Config { spec: &spec, warp })?;
    if let Some(p) = &a.params {
        input(&mut m, "params", p);
    }
    ctx.finish(out, m)
}

fn load_data(args: &DataArgs, m: &mut RunManifest) -> CliResult<(Vec<SamplePath>, DatasetManifest)> {
    let paths = read_long_csv(&args.data)?;
    input(m, "data", &args.data);
    let manifest = match &args.manifest {
        Some(p) => {
            input(m, "manifest", p);
            read_json(p)?
        }
        None => default_manifest(&paths)?,
    };
    Ok((paths, manifest))
}

fn smooth_cmd(ctx: &Ctx, a: SmoothArgs) -> CliResult<()> {
    if a.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    let mut out = OutRoot::dir(&a.out)?;
    let mut m = ctx.manifest("smooth", ctx.seed, serde_json::Value::Null)?;
    let (paths, manifest) = load_data(&a.data, &mut m)?;
    let (ds, report) = build_dataset(&paths, &manifest)?;
    if let Some(r) = &report {
        if !r.degenerate_points.is_empty() {
            log::warn!("{} grid points had degenerate variance", r.degenerate_points.len());
        }
    }

    let coeff_path = out.artifact("coefficients.csv");
    let mut text = String::from("subject_id,dim,k,coef\n");
    for s in &ds.samples {
        for (d, row) in s.coeffs.rows().into_iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                text.push_str(&format!("{},{d},{k},{}\n", s.subject_id, faeclust_core::io::format_f64(*c)));
            }
        }
    }
    faeclust_core::io::write_atomic(&coeff_path, text.as_bytes())?;

    let (lo, hi) = ds.basis.domain();
    let grid: Vec<f64> = (0..a.grid).map(|k| lo + (hi - lo) * k as f64 / (a.grid - 1) as f64).collect();
    let curves = ds
        .samples
        .iter()
        .map(|s| {
            let v = s.evaluate(&ds.basis, &grid)?;
            Ok(SamplePath::new(s.subject_id, grid.clone(), v.reversed_axes().as_standard_layout().to_owned())?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_long_csv(&out.artifact("smoothed.csv"), &curves)?;
    write_json_atomic(&out.artifact("manifest.json"), &manifest)?;
    m.config = serde_json::to_value(manifest).map_err(FaeError::from)?;
    ctx.finish(out, m)
}

fn distances(ctx: &Ctx, a: DistancesArgs) -> CliResult<()> {
    let mut out = OutRoot::file(&a.out)?;
    let dist_path = out.place(&a.out)?;
    let graph_path = a.graph.as_deref().map(|g| out.place(g)).transpose()?;
    let opts = MetricOptions { kind: a.metric.into(), grid: a.grid, radius: a.radius };
    let mut m = ctx.manifest("distances", ctx.seed, opts)?;
    let (paths, manifest) = load_data(&a.data, &mut m)?;
    let (ds, _) = build_dataset(&paths, &manifest)?;
    let t = Instant::now();
    let d = distance_matrix(&ds, &opts)?;
    m.timings.insert("distances".into(), t.elapsed().as_secs_f64());
    write_distances(&dist_path, &d)?;
    if let Some(gp) = graph_path {
        let strategy = match a.strategy {
            StrategyArg::Knee => NeighborhoodStrategy::Knee,
            StrategyArg::Connectivity => NeighborhoodStrategy::Connectivity,
        };
        let nn = a.neighbors.unwrap_or_else(|| select_neighborhood_size(&d, strategy));
        let scaling = if a.raw_exp { WeightScaling::Raw } else { WeightScaling::Median };
        let g = build_similarity_graph(&d, nn, scaling);
        log::info!("graph: {nn} neighbours, {} edges", g.edges.len());
        write_graph(&gp, &g)?;
    }
    ctx.finish(out, m)
}

#[derive(Serialize)]
struct Agreement {
    ami: f64,
    ari: f64,
}

fn fit_cmd(ctx: &Ctx, a: FitArgs) -> CliResult<()> {
    let mut out = OutRoot::dir(&a.out)?;
    let mut m = ctx.manifest("fit", None, serde_json::Value::Null)?;
    let (paths, manifest) = load_data(&a.data, &mut m)?;
    let net_cfg: NetworkConfig = match &a.net {
        Some(p) => {
            input(&mut m, "net", p);
            read_json(p)?
        }
        None => NetworkConfig::default(),
    };
    let mut fit_cfg: FitConfig = match &a.fitcfg {
        Some(p) => {
            input(&mut m, "fitcfg", p);
            read_json(p)?
        }
        None => FitConfig::default(),
    };
    if let Some(s) = ctx.seed {
        fit_cfg.seed = s;
    }
    let truth = a
        .truth
        .as_ref()
        .map(|p| {
            input(&mut m, "truth", p);
            read_labels(p)
        })
        .transpose()?;

    let (ds, _) = build_dataset(&paths, &manifest)?;
    let (net, result, report) = fit(&ds, &net_cfg, &fit_cfg)?;
    let ids = ds.subject_ids();
    let labels: Vec<i64> = result.labels.iter().map(|&l| l as i64).collect();
    write_labels(&out.artifact("labels.csv"), &ids, &labels)?;
    write_embedding(&out.artifact("embedding.csv"), &ids, &report.embedding)?;
    write_json_atomic(&out.artifact("report.json"), &report)?;
    save_checkpoint(&net, &out.artifact("checkpoint.json"))?;
    if let Some(truth) = truth {
        let pred: Vec<(i64, i64)> = ids.iter().copied().zip(labels.iter().copied()).collect();
        let (p, t) = align_labels(&pred, &truth)?;
        let score = Agreement { ami: ami(&p, &t)?, ari: ari(&p, &t)? };
        log::info!("AMI {:.4}, ARI {:.4}", score.ami, score.ari);
        write_json_atomic(&out.artifact("evaluation.json"), &score)?;
    }
    #[derive(Serialize)]
    struct Config<'a> {
        manifest: &'a DatasetManifest,
        net: &'a NetworkConfig,
        fit: &'a FitConfig,
    }
    m.seed = Some(fit_cfg.seed);
    m.config = serde_json::to_value(Config { manifest: &manifest, net: &net_cfg, fit: &fit_cfg }).map_err(FaeError::from)?;
    let t = report.timings;
    for (k, v) in [("graph", t.graph), ("pretrain", t.pretrain), ("finetune", t.finetune), ("cluster", t.cluster)] {
        m.timings.insert(k.into(), v);
    }
    eprintln!("K = {}, converged = {}", report.k, report.converged);
    ctx.finish(out, m)
}

/// Number of levels `--verify-fista` checks per latent dimension.
const VERIFY_LEVELS: usize = 50;

fn cluster(ctx: &Ctx, a: ClusterArgs) -> CliResult<()> {
    let mut out = OutRoot::dir(&a.out)?;
    let cfg = FitConfig { kmin: a.kmin, kmax: a.kmax, k_fixed: a.k_fixed, ..FitConfig::default() };
    cfg.validate()?;
    #[derive(Serialize)]
    struct Config {
        kmin: usize,
        kmax: usize,
        k_fixed: Option<usize>,
        verify_fista: bool,
    }
    let mut m = ctx.manifest(
        "cluster",
        ctx.seed,
        Config { kmin: a.kmin, kmax: a.kmax, k_fixed: a.k_fixed, verify_fista: a.verify_fista },
    )?;
    input(&mut m, "embedding", &a.embedding);
    input(&mut m, "graph", &a.graph);
    let (ids, x) = read_embedding(&a.embedding)?;
    let graph = read_graph(&a.graph, ids.len())?;
    let t = Instant::now();
    let c = cluster_embedding(&x, &graph, &cfg)?;
    m.timings.insert("cluster".into(), t.elapsed().as_secs_f64());
    let labels: Vec<i64> = c.result.labels.iter().map(|&l| l as i64).collect();
    write_labels(&out.artifact("labels.csv"), &ids, &labels)?;
    write_json_atomic(&out.artifact("hierarchy.json"), &c.hierarchy)?;
    #[derive(Serialize)]
    struct Scores<'a> {
        k: usize,
        scores: &'a BTreeMap<usize, faeclust_core::cvxclust::PartitionScores>,
    }
    write_json_atomic(&out.artifact("scores.json"), &Scores { k: c.result.k, scores: &c.result.scores })?;
    if a.verify_fista {
        let t = Instant::now();
        let checks: Vec<PathCheck> = c
            .paths
            .iter()
            .map(|p| {
                let col = x.column(p.dim).to_vec();
                let top = p.breakpoints().last().copied().unwrap_or(1.0).max(1e-12) * 1.1;
                let levels: Vec<f64> = (0..VERIFY_LEVELS).map(|k| top * k as f64 / (VERIFY_LEVELS - 1) as f64).collect();
                verify_path(&col, &graph, p, &levels, &FistaOptions::default())
            })
            .collect();
        m.timings.insert("verify".into(), t.elapsed().as_secs_f64());
        let worst = checks.iter().map(|c| c.max_deviation).fold(0.0, f64::max);
        let splits: usize = checks.iter().map(|c| c.suspected_splits.len()).sum();
        eprintln!("FISTA check: max deviation {worst:.3e}, {splits} suspected splits");
        write_json_atomic(&out.artifact("verification.json"), &checks)?;
    }
    ctx.finish(out, m)
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let pred = read_labels(&a.pred)?;
    let truth = read_labels(&a.truth)?;
    let (p, t) = align_labels(&pred, &truth)?;
    let score = Agreement { ami: ami(&p, &t)?, ari: ari(&p, &t)? };
    println!("{}", serde_json::to_string(&score).map_err(FaeError::from)?);
    Ok(())
}

#[derive(serde::Deserialize)]
struct RecordedRun {
    argv: Vec<String>,
}

fn replay(a: ReplayArgs) -> CliResult<()> {
    let rec: RecordedRun = read_json(&a.manifest)?;
    let mut argv = vec!["faeclust".to_string()];
    argv.extend(rec.argv);
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(format!("recorded arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a replay manifest cannot replay itself".into()));
    }
    log::info!("replaying: {}", argv[1..].join(" "));
    run(cli, argv[1..].to_vec())
}
