use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dlflow::datalog::{parse_program, Program};
use dlflow::dataset::PartitionedDataset;
use dlflow::driver::{bench, run_bgd, run_pagerank, BenchInput, BenchMatrix, TASKS};
use dlflow::logical::{canonical_serialize, compile_program};
use dlflow::physical::{optimize, validate_plan, AggTree, ClusterConfig, ConnectorChoice};
use dlflow::runtime::{IterationMetrics, RunOptions, RunResult, SpillPolicy};
use dlflow::strat::check;
use dlflow::tasks::bgd::BgdParams;
use dlflow::tasks::ingest::{
    dimension, graph_from_dataset, ingest_graph, ingest_points, parse_graph, parse_points, points_from_dataset, Point,
};
use dlflow::tasks::TaskBinding;

#[derive(Parser)]
#[command(name = "dlflow", version, about = "Declarative iterative dataflow engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition an adjacency list (`src dst1 dst2 ...` per line).
    IngestGraph(Ingest),
    /// Partition labeled sparse points (`label idx:val ...` per line).
    IngestPoints(Ingest),
    /// Inspect a program or a shipped task without running it.
    Plan(PlanCmd),
    /// Run a task to its fixpoint.
    Run(RunCmd),
    /// Time a task over a matrix of configurations.
    Bench(BenchCmd),
}

#[derive(Args)]
struct Ingest {
    input: PathBuf,
    /// Directory receiving the manifest and partition files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    partitions: usize,
}

#[derive(Args)]
#[group(id = "view", required = true, multiple = false)]
struct PlanView {
    #[arg(long)]
    logical: bool,
    #[arg(long)]
    physical: bool,
    #[arg(long)]
    check_strat: bool,
}

#[derive(Args)]
struct PlanCmd {
    #[command(flatten)]
    view: PlanView,
    /// Shipped task: pagerank or bgd-logistic.
    #[arg(long, conflicts_with = "program")]
    task: Option<String>,
    /// Program text file.
    #[arg(long)]
    program: Option<PathBuf>,
    #[command(flatten)]
    cluster: ClusterArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Clone)]
struct ClusterArgs {
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 2)]
    partitions_per_worker: usize,
    /// merge or hash-sort.
    #[arg(long, default_value = "merge")]
    connector: ConnectorChoice,
    /// flat, sqrt or fanin:K.
    #[arg(long, default_value = "fanin:4")]
    agg_tree: AggTree,
    #[arg(long, value_enum, default_value = "on")]
    combiner: Switch,
}

impl ClusterArgs {
    fn config(&self) -> Result<ClusterConfig> {
        let c = ClusterConfig {
            workers: self.workers,
            partitions_per_worker: self.partitions_per_worker,
            connector: self.connector,
            agg_tree: self.agg_tree,
            combiner: matches!(self.combiner, Switch::On),
        };
        c.check().map_err(anyhow::Error::msg)?;
        Ok(c)
    }
}

#[derive(Args, Clone)]
struct TaskArgs {
    /// PageRank supersteps.
    #[arg(long, default_value_t = 30)]
    supersteps: u32,
    /// Gradient step size.
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// L2 regularization weight.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Gradient steps before the update returns its input model.
    #[arg(long, default_value_t = 100)]
    steps: u32,
    /// Smallest weight change that still counts as a step.
    #[arg(long, default_value_t = 0.0)]
    step_tolerance: f64,
}

#[derive(Args)]
struct RunCmd {
    /// pagerank or bgd-logistic.
    task: String,
    /// Text input or a directory written by an ingest command.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[command(flatten)]
    params: TaskArgs,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Model distance at or below which iteration stops.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    /// Ordered reductions, for bitwise reproducible output.
    #[arg(long)]
    deterministic: bool,
    /// In-memory bytes per buffer before spilling to disk.
    #[arg(long)]
    spill_budget: Option<usize>,
}

#[derive(Args)]
struct BenchCmd {
    /// pagerank or bgd-logistic.
    task: String,
    /// Text input or ingested directory. Without it a synthetic graph is used.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Edges of the synthetic graph.
    #[arg(long, default_value_t = 100_000)]
    edges: usize,
    #[arg(long, default_value_t = 20_000)]
    vertices: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    workers: Vec<usize>,
    /// Total partitions, fixed across worker counts.
    #[arg(long, default_value_t = 8)]
    partitions: usize,
    #[arg(long, value_delimiter = ',', default_value = "merge")]
    connector: Vec<ConnectorChoice>,
    #[arg(long, value_delimiter = ',', default_value = "fanin:4")]
    agg_tree: Vec<AggTree>,
    #[arg(long, value_delimiter = ',', value_enum, default_value = "on")]
    combiner: Vec<Switch>,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[command(flatten)]
    params: TaskArgs,
    /// Also write the JSON lines to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::IngestGraph(a) => {
            let (graph, ds) = ingest_graph(&a.input, a.partitions)?;
            ds.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
            let edges: usize = graph.iter().map(|(_, d)| d.len()).sum();
            let dangling = graph.iter().filter(|(_, d)| d.is_empty()).count();
            print_ingest(&ds, &[("vertices", graph.len()), ("edges", edges), ("dangling", dangling)]);
        }
        Command::IngestPoints(a) => {
            let (points, ds) = ingest_points(&a.input, a.partitions)?;
            ds.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
            print_ingest(&ds, &[("records", points.len()), ("dimension", dimension(&points))]);
        }
        Command::Plan(p) => return plan(p),
        Command::Run(r) => run(r)?,
        Command::Bench(b) => run_bench(b)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn print_ingest(ds: &PartitionedDataset, counts: &[(&str, usize)]) {
    let mut m = serde_json::Map::new();
    m.insert("dataset".into(), ds.name.clone().into());
    for (k, v) in counts {
        m.insert((*k).into(), (*v).into());
    }
    m.insert("partition_sizes".into(), ds.partitions.iter().map(Vec::len).collect::<Vec<_>>().into());
    println!("{}", serde_json::Value::Object(m));
}

fn task_program(task: &str) -> Result<Program> {
    match TaskBinding::by_name(task) {
        Some(b) => Ok(b.program),
        None => bail!("unknown task `{task}`; known tasks: {}", TASKS.join(", ")),
    }
}

fn plan(p: PlanCmd) -> Result<ExitCode> {
    let program = match (&p.task, &p.program) {
        (_, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_program(&text)?
        }
        (Some(t), None) => task_program(t)?,
        (None, None) => bail!("pass --task or --program"),
    };
    if p.view.check_strat {
        let v = check(&program);
        print!("{v}");
        return Ok(if v.xy_stratified { ExitCode::SUCCESS } else { ExitCode::from(2) });
    }
    let lp = compile_program(&program)?;
    if p.view.logical {
        print!("{}", canonical_serialize(&lp));
        return Ok(ExitCode::SUCCESS);
    }
    let pp = optimize(&lp, &p.cluster.config()?)?;
    print!("{pp}");
    let report = validate_plan(&pp);
    for v in &report.violations {
        eprintln!("plan violation: {v:?}");
    }
    Ok(if report.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

enum Input {
    Graph(Vec<(i64, Vec<i64>)>),
    Points(Vec<Point>),
}

fn load_input(task: &str, path: &Path) -> Result<Input> {
    let ds = if path.is_dir() {
        Some(PartitionedDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))?)
    } else {
        None
    };
    let text = || fs::read_to_string(path).with_context(|| format!("reading {}", path.display()));
    Ok(match task {
        "pagerank" => Input::Graph(match ds {
            Some(ds) => graph_from_dataset(&ds)?,
            None => parse_graph(&text()?)?,
        }),
        "bgd-logistic" => Input::Points(match ds {
            Some(ds) => points_from_dataset(&ds)?,
            None => parse_points(&text()?)?,
        }),
        other => bail!("unknown task `{other}`; known tasks: {}", TASKS.join(", ")),
    })
}

fn bgd_params(points: &[Point], a: &TaskArgs) -> BgdParams {
    BgdParams { eta: a.eta, lambda: a.lambda, max_iters: a.steps, tolerance: a.step_tolerance, ..BgdParams::new(dimension(points)) }
}

fn write_metrics(path: &Path, r: &RunResult) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let all: Vec<&IterationMetrics> = std::iter::once(&r.init_metrics).chain(&r.metrics).collect();
    for m in all {
        writeln!(f, "{}", m.json_line())?;
    }
    f.flush()?;
    Ok(())
}

fn run(r: RunCmd) -> Result<()> {
    let cfg = r.cluster.config()?;
    let input = load_input(&r.task, &r.input)?;
    fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    let mut spill = SpillPolicy::default();
    if let Some(b) = r.spill_budget {
        spill.budget = b;
    }
    let opts = RunOptions {
        max_iters: r.max_iters,
        float_tolerance: r.tolerance,
        deterministic: r.deterministic,
        spill,
        run_dir: Some(r.out.join("state")),
        ..RunOptions::default()
    };
    let result = match input {
        Input::Graph(g) => {
            let run = run_pagerank(&g, r.params.supersteps, &cfg, &opts)?;
            let mut text = String::new();
            for (v, rank) in &run.ranks {
                text.push_str(&format!("{v}\t{rank:e}\n"));
            }
            fs::write(r.out.join("ranks.tsv"), text)?;
            run.result
        }
        Input::Points(p) => {
            let run = run_bgd(&p, &bgd_params(&p, &r.params), &cfg, &opts)?;
            let text: String = run.model.iter().map(|w| format!("{w:e}\n")).collect();
            fs::write(r.out.join("model.txt"), text)?;
            run.result
        }
    };
    write_metrics(&r.out.join("metrics.jsonl"), &result)?;
    let summary = serde_json::json!({
        "task": r.task,
        "iterations": result.iterations,
        "halted": result.halted,
        "wall_ms": result.wall_ms,
        "avg_iteration_ms": result.avg_iteration_ms(),
        "workers": cfg.workers,
        "partitions": cfg.partitions(),
        "worker_seconds": cfg.workers as f64 * result.wall_ms / 1000.0,
    });
    fs::write(r.out.join("summary.json"), format!("{summary}\n"))?;
    println!("{summary}");
    if !result.halted {
        bail!("no fixpoint within {} iterations", r.max_iters);
    }
    Ok(())
}

/// Seeded graph with `edges` edges: every vertex gets one, the rest land on
/// random sources.
fn synthetic_graph(vertices: usize, edges: usize, seed: u64) -> Vec<(i64, Vec<i64>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::SmallRng::seed_from_u64(seed);
    let n = vertices.max(1);
    let mut adj = vec![Vec::new(); n];
    for e in 0..edges {
        let src = if e < n { e } else { rng.gen_range(0..n) };
        adj[src].push(rng.gen_range(0..n as i64));
    }
    adj.into_iter().enumerate().map(|(v, d)| (v as i64, d)).collect()
}

fn run_bench(b: BenchCmd) -> Result<()> {
    let input = match &b.input {
        Some(p) => load_input(&b.task, p)?,
        None if b.task == "pagerank" => Input::Graph(synthetic_graph(b.vertices, b.edges, b.seed)),
        None => bail!("{} needs --input", b.task),
    };
    let matrix = BenchMatrix {
        workers: b.workers.clone(),
        partitions: b.partitions,
        connectors: b.connector.clone(),
        agg_trees: b.agg_tree.clone(),
        combiner: b.combiner.iter().map(|s| matches!(s, Switch::On)).collect(),
        repetitions: b.repetitions,
    };
    let rows = match &input {
        Input::Graph(g) => bench(&BenchInput::Graph { graph: g, supersteps: b.params.supersteps }, &matrix)?,
        Input::Points(p) => bench(&BenchInput::Points { points: p, params: bgd_params(p, &b.params) }, &matrix)?,
    };
    let lines: Vec<String> = rows.iter().map(|r| r.json_line()).collect();
    for l in &lines {
        println!("{l}");
    }
    if let Some(out) = &b.out {
        fs::write(out, lines.join("\n") + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
