use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use blockann::bench::{run_benchmark, BenchmarkConfig, SearchMode};
use blockann::dataset::{
    knn_ground_truth, load_vectors, range_ground_truth, read_ivecs, save_vectors, synthetic,
    write_distances, write_ivecs, ElemType, GroundTruth, Metric, VectorDataset,
};
use blockann::diskindex::{verify_index, with_suffix, write_index, DiskIndex};
use blockann::engine::{Engine, SearchParams, TARGET_ONLY_SIGMA};
use blockann::graph::{
    avg_out_degree, build_navigation, build_vamana, read_graph, read_navigation, write_graph,
    write_navigation, BuildParams,
};
use blockann::layout::{
    or_graph, read_layout, shuffle, write_layout, BlockLayout, LayoutGeometry, ShuffleAlgorithm,
    ShuffleParams, ShuffleReport,
};
use blockann::pq::PqIndex;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Disk-resident graph index for vector similarity search.
#[derive(Parser)]
#[command(name = "blockann", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Brute-force ground truth: ivecs IDs plus a `.dist` sidecar.
    Gt(GtArgs),
    /// Build the disk graph and write `PREFIX.graph`.
    Build(BuildArgs),
    /// Compute a block layout from `PREFIX.graph` and write `PREFIX.layout`.
    Shuffle(ShuffleArgs),
    /// Write the block file and location map (`PREFIX.idx`, `PREFIX.map`).
    Pack(PackArgs),
    /// Build the in-memory navigation graph (`PREFIX.nav`).
    Nav(NavArgs),
    /// Train product quantization and encode the base set (`PREFIX.pq`).
    Pq(PqArgs),
    /// Run a query batch against a packed index.
    Search(SearchArgs),
    /// Overlap ratio and geometry of a packed index.
    LayoutStats(LayoutStatsArgs),
    /// Check a packed index for structural consistency.
    Verify(VerifyArgs),
    /// Write a synthetic clustered uint8 dataset as bvecs.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ElemArg {
    U8,
    F32,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    L2,
    Ip,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Knn,
    Range,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Bnp,
    Bnf,
    Bns,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<AlgoArg> for ShuffleAlgorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Bnp => ShuffleAlgorithm::Bnp,
            AlgoArg::Bnf => ShuffleAlgorithm::Bnf,
            AlgoArg::Bns => ShuffleAlgorithm::Bns,
        }
    }
}

/// How to read a vector file.
#[derive(Args, Clone)]
struct Format {
    /// Element type; inferred from the `.bvecs`/`.fvecs` extension if omitted.
    #[arg(long, value_enum)]
    elem: Option<ElemArg>,
    #[arg(long, value_enum, default_value = "l2")]
    metric: MetricArg,
}

impl Format {
    fn load(&self, path: &Path) -> Result<VectorDataset> {
        let elem = match self.elem {
            Some(ElemArg::U8) => ElemType::U8,
            Some(ElemArg::F32) => ElemType::F32,
            None => match path.extension().and_then(|e| e.to_str()) {
                Some("bvecs") => ElemType::U8,
                Some("fvecs") => ElemType::F32,
                _ => bail!("cannot infer element type of {}; pass --elem", path.display()),
            },
        };
        let metric = match self.metric {
            MetricArg::L2 => Metric::L2,
            MetricArg::Ip => Metric::InnerProduct,
        };
        load_vectors(path, elem, metric).with_context(|| format!("loading {}", path.display()))
    }
}

#[derive(Args)]
struct GtArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    k: Option<usize>,
    /// Radius in distance units (squared L2, negated inner product).
    #[arg(long)]
    r: Option<f32>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: Format,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 48)]
    max_degree: usize,
    #[arg(long, default_value_t = 96)]
    build_list: usize,
    #[arg(long, default_value_t = 1.2)]
    alpha: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 0 uses every core; 1 is a deterministic serial build.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Fill pruned neighbor lists up to the degree cap.
    #[arg(long)]
    saturate: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: Format,
}

#[derive(Args)]
struct ShuffleArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum, default_value = "bnf")]
    algo: AlgoArg,
    #[arg(long, default_value_t = 8)]
    beta: usize,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Starting layout for BNS.
    #[arg(long, value_enum, default_value = "bnp")]
    init: AlgoArg,
    /// Base vectors; only their dimension and element type are used.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4096)]
    block_size: usize,
    #[command(flatten)]
    format: Format,
}

#[derive(Args)]
struct PackArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// `seq` for ID order, otherwise a layout file from `shuffle`.
    #[arg(long, default_value = "seq")]
    layout: String,
    #[arg(long, default_value_t = 4096)]
    block_size: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: Format,
}

#[derive(Args)]
struct NavArgs {
    #[arg(long)]
    data: PathBuf,
    /// Sample ratio.
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    #[arg(long, default_value_t = 48)]
    max_degree: usize,
    #[arg(long, default_value_t = 96)]
    build_list: usize,
    #[arg(long, default_value_t = 1.2)]
    alpha: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    saturate: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: Format,
}

#[derive(Args)]
struct PqArgs {
    #[arg(long)]
    data: PathBuf,
    /// Total code bytes for the base set.
    #[arg(long)]
    budget_bytes: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: Format,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum, default_value = "knn")]
    mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    r: Option<f32>,
    #[arg(long, default_value_t = 128)]
    gamma: usize,
    /// Pruning ratio; 0 explores only target vertices.
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    phi: f64,
    #[arg(long, default_value_t = 8)]
    entries: usize,
    #[arg(long, default_value_t = 1)]
    beam_width: usize,
    #[arg(long, default_value_t = 100)]
    initial_capacity: usize,
    #[arg(long, default_value_t = 10)]
    max_doublings: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, value_enum, default_value = "off")]
    pipeline: Switch,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ignore `PREFIX.nav` and start from the entry vertex.
    #[arg(long)]
    no_nav: bool,
    /// ivecs ground truth for recall or AP.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// ivecs file receiving the result IDs.
    #[arg(long)]
    results_out: Option<PathBuf>,
}

#[derive(Args)]
struct LayoutStatsArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    index: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    /// Seed of the cluster centers; share it between base and query files.
    #[arg(long, default_value_t = 0)]
    centers_seed: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn gt(a: GtArgs) -> Result<()> {
    let data = a.format.load(&a.data)?;
    let queries = a.format.load(&a.queries)?;
    let start = Instant::now();
    let truth = match a.mode {
        ModeArg::Knn => knn_ground_truth(&data, &queries, a.k.context("--k is required for knn")?)?,
        ModeArg::Range => range_ground_truth(&data, &queries, a.r.context("--r is required for range")?)?,
    };
    write_ivecs(&a.out, &truth.ids)?;
    let sidecar = with_suffix(&a.out, ".dist");
    write_distances(&sidecar, &truth.dists)?;
    print_json(&json!({
        "queries": truth.len(),
        "ids": a.out,
        "distances": sidecar,
        "elapsed_secs": start.elapsed().as_secs_f64(),
    }))
}

fn build(a: BuildArgs) -> Result<()> {
    let data = a.format.load(&a.data)?;
    let params = BuildParams {
        max_degree: a.max_degree,
        list_size: a.build_list,
        alpha: a.alpha,
        seed: a.seed,
        threads: a.threads,
        saturate: a.saturate,
    };
    let start = Instant::now();
    let graph = build_vamana(&data, &params)?;
    let t_disk_graph = start.elapsed().as_secs_f64();
    let path = with_suffix(&a.out, ".graph");
    write_graph(&path, &graph)?;
    print_json(&json!({
        "graph": path,
        "vertices": graph.len(),
        "edges": graph.edge_count(),
        "avg_out_degree": avg_out_degree(&graph),
        "entry": graph.entry(),
        "t_disk_graph": t_disk_graph,
    }))
}

fn geometry_for(data: &VectorDataset, max_degree: usize, block_size: usize) -> Result<LayoutGeometry> {
    Ok(LayoutGeometry::new(data.dim(), data.elem().size(), max_degree, block_size, data.len())?)
}

fn shuffle_cmd(a: ShuffleArgs) -> Result<()> {
    let data = a.format.load(&a.data)?;
    let graph = read_graph(with_suffix(&a.index, ".graph"))?;
    let geometry = geometry_for(&data, graph.max_degree(), a.block_size)?;
    let params = ShuffleParams {
        algorithm: a.algo.into(),
        max_iterations: a.beta,
        gain_threshold: a.tau,
        init: a.init.into(),
    };
    let (layout, report) = shuffle(&graph, &geometry, &params)?;
    write_layout(with_suffix(&a.index, ".layout"), &layout)?;
    let report_json = serde_json::to_value(&report)?;
    std::fs::write(with_suffix(&a.index, ".layout.json"), serde_json::to_vec_pretty(&report_json)?)?;
    print_json(&report_json)
}

fn pack(a: PackArgs) -> Result<()> {
    let data = a.format.load(&a.data)?;
    let graph = read_graph(&a.graph)?;
    let layout = if a.layout == "seq" {
        BlockLayout::sequential(geometry_for(&data, graph.max_degree(), a.block_size)?)
    } else {
        let layout = read_layout(&a.layout)?;
        if layout.geometry().block_size != a.block_size {
            bail!(
                "layout was computed for {}-byte blocks, not {}",
                layout.geometry().block_size,
                a.block_size
            );
        }
        layout
    };
    let header = write_index(&data, &graph, &layout, &a.out)?;
    print_json(&json!({
        "index": with_suffix(&a.out, ".idx"),
        "slots_per_block": header.slots_per_block,
        "block_count": header.block_count,
        "disk_bytes": header.file_bytes(),
        "overlap_ratio": or_graph(&layout, &graph),
    }))
}

fn nav(a: NavArgs) -> Result<()> {
    let data = a.format.load(&a.data)?;
    let params = BuildParams {
        max_degree: a.max_degree,
        list_size: a.build_list,
        alpha: a.alpha,
        seed: a.seed,
        threads: a.threads,
        saturate: a.saturate,
    };
    let start = Instant::now();
    let nav = build_navigation(&data, a.mu, &params)?;
    let t_memory_graph = start.elapsed().as_secs_f64();
    let path = with_suffix(&a.out, ".nav");
    write_navigation(&path, &nav)?;
    print_json(&json!({
        "nav": path,
        "vertices": nav.ids().len(),
        "memory_bytes": nav.memory_bytes(),
        "t_memory_graph": t_memory_graph,
    }))
}

fn pq(a: PqArgs) -> Result<()> {
    let data = a.format.load(&a.data)?;
    let start = Instant::now();
    let pq = PqIndex::build(&data, a.budget_bytes, a.seed)?;
    let t_pq = start.elapsed().as_secs_f64();
    let path = with_suffix(&a.out, ".pq");
    pq.save(&path)?;
    print_json(&json!({
        "pq": path,
        "m": pq.codebook.m(),
        "memory_bytes": pq.memory_bytes(),
        "t_pq": t_pq,
    }))
}

fn search(a: SearchArgs) -> Result<()> {
    let index = DiskIndex::open(&a.index)?;
    let pq = PqIndex::load(with_suffix(&a.index, ".pq"))?;
    let nav_path = with_suffix(&a.index, ".nav");
    let nav = if !a.no_nav && nav_path.exists() { Some(read_navigation(&nav_path)?) } else { None };
    let engine = Engine::new(&index, &pq, nav.as_ref())?;
    let queries = load_vectors(&a.queries, index.elem(), index.metric())
        .with_context(|| format!("loading {}", a.queries.display()))?;
    let mode = match a.mode {
        ModeArg::Knn => SearchMode::Knn,
        ModeArg::Range => SearchMode::Range,
    };
    let radius = match mode {
        SearchMode::Range => a.r.context("--r is required for range")?,
        SearchMode::Knn => 0.0,
    };
    let params = SearchParams {
        k: a.k,
        gamma: a.gamma,
        sigma: if a.sigma == 0.0 { TARGET_ONLY_SIGMA } else { a.sigma },
        entries: a.entries,
        beam_width: a.beam_width,
        radius,
        phi: a.phi,
        initial_capacity: a.initial_capacity,
        max_doublings: a.max_doublings,
        pipeline: matches!(a.pipeline, Switch::On),
        ..SearchParams::default()
    };
    let truth = match &a.truth {
        Some(p) => Some(GroundTruth { ids: read_ivecs(p)?, dists: Vec::new() }),
        None => None,
    };
    let config = BenchmarkConfig { mode, threads: a.threads, repetitions: a.repetitions, seed: a.seed };
    let (report, run) = run_benchmark(&engine, &queries, &params, truth.as_ref(), &config)?;
    if let Some(p) = &a.results_out {
        write_ivecs(p, &run.ids())?;
    }
    let value = serde_json::to_value(&report)?;
    if let Some(p) = &a.stats_out {
        std::fs::write(p, serde_json::to_vec_pretty(&value)?)?;
    }
    let mut summary = value;
    if let Some(obj) = summary.as_object_mut() {
        obj.remove("per_query_accuracy");
    }
    print_json(&summary)
}

fn layout_stats(a: LayoutStatsArgs) -> Result<()> {
    let index = DiskIndex::open_buffered(&a.index)?;
    let graph = read_graph(&a.graph)?;
    if graph.len() != index.len() {
        bail!("graph has {} vertices, index has {}", graph.len(), index.len());
    }
    let layout = index.layout()?;
    let or = or_graph(&layout, &graph);
    let report_path = with_suffix(&a.index, ".layout.json");
    let report: Option<ShuffleReport> = match std::fs::read(&report_path) {
        Ok(bytes) => Some(serde_json::from_slice(&bytes).context("reading the shuffle report")?),
        Err(_) => None,
    };
    let g = layout.geometry();
    let value = json!({
        "algorithm": report.as_ref().map(|r| r.algorithm.to_string()).unwrap_or_else(|| "unknown".into()),
        "beta_used": report.as_ref().map(|r| r.beta_used),
        "tau": report.as_ref().map(|r| r.tau),
        "or_per_iteration": report.as_ref().map(|r| r.or_per_iteration.clone()),
        "overlap_ratio": or,
        "slots_per_block": g.slots_per_block,
        "block_count": g.block_count,
        "elapsed_secs": report.as_ref().map(|r| r.elapsed_secs),
    });
    if a.json {
        print_json(&value)
    } else {
        println!("slots per block  {}", g.slots_per_block);
        println!("blocks           {}", g.block_count);
        println!("overlap ratio    {or:.4}");
        if let Some(r) = report {
            println!("algorithm        {} ({} of {} iterations)", r.algorithm, r.beta_used, r.beta);
        }
        Ok(())
    }
}

fn verify(a: VerifyArgs) -> Result<()> {
    let report = verify_index(&a.index)?;
    print_json(&serde_json::to_value(&report)?)?;
    if !report.ok {
        bail!("index is inconsistent: {}", report.violation.unwrap_or_default());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let data = synthetic::ClusteredU8::new(a.dim, a.centers_seed).generate(a.n, a.seed);
    save_vectors(&a.out, &data)?;
    print_json(&json!({ "vectors": a.n, "dim": a.dim, "out": a.out }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gt(a) => gt(a),
        Command::Build(a) => build(a),
        Command::Shuffle(a) => shuffle_cmd(a),
        Command::Pack(a) => pack(a),
        Command::Nav(a) => nav(a),
        Command::Pq(a) => pq(a),
        Command::Search(a) => search(a),
        Command::LayoutStats(a) => layout_stats(a),
        Command::Verify(a) => verify(a),
        Command::Synth(a) => synth(a),
    }
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line("failed", &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
