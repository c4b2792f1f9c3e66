//! Command-line frontend binding the exploration engine together:
//! explore, crawl-baseline, metrics, compare, export, testgen, replay.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use statewalk::baseline::{crawl, CrawlStrategy};
use statewalk::config::Config;
use statewalk::driver::AppDriver;
use statewalk::explorer::{explore, ExplorationLog};
use statewalk::graph_io::{self, GraphFormat};
use statewalk::inference::HeuristicReasoner;
use statewalk::metrics::{self, MetricsReport};
use statewalk::obs_store::{FsObsStore, MemObsStore, ObservationStore};
use statewalk::remote::{CompositeReasoner, RemoteConfig, RemoteReasoner};
use statewalk::simapp::{load_target, SimDriver};
use statewalk::testgen::{self, Verdict};
use statewalk::webdriver::{WebDriverConfig, WebDriverSession};
use statewalk::KnowledgeGraph;

#[derive(Parser)]
#[command(
    name = "statewalk",
    version,
    about = "Explore a web application into a knowledge graph of states and actions"
)]
struct Cli {
    /// Config file; defaults to $STATEWALK_CONFIG when set.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a knowledge graph by reward-guided exploration.
    Explore(ExploreArgs),
    /// Build a comparison graph with the traditional hyperlink crawler.
    CrawlBaseline(CrawlArgs),
    /// Compute the evaluation metrics for one run.
    Metrics(MetricsArgs),
    /// Compare two runs metric by metric.
    Compare(CompareArgs),
    /// Convert a graph file to DOT or GraphML.
    Export(ExportArgs),
    /// Generate test cases from root-to-leaf paths.
    Testgen(TestgenArgs),
    /// Replay one generated test case against a target.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TargetArgs {
    /// Target application: `sim:<fixture-or-spec-file>` or `web:<url>`.
    #[arg(long, value_name = "TARGET")]
    target: String,

    /// WebDriver endpoint; required for `web:` targets.
    #[arg(long, value_name = "URL")]
    webdriver_url: Option<String>,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    target: TargetArgs,

    /// Output graph file (JSONGraph).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Run log destination; defaults to the graph path with a .log.jsonl
    /// extension.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,

    /// Persist observations into this directory instead of memory.
    #[arg(long, value_name = "DIR")]
    obs_dir: Option<PathBuf>,

    /// RNG seed for the run [default: 0]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Minimum threshold for reward-based transitions [default: 0]
    #[arg(long, value_name = "X")]
    min_reward: Option<f64>,

    /// Branches a state may grow before being pruned [default: 999]
    #[arg(long, value_name = "N")]
    max_leaf_branches: Option<u32>,

    /// Consecutive actions within a state before forcing a transition
    /// [default: 5]
    #[arg(long, value_name = "N")]
    max_consecutive_actions: Option<u32>,

    /// Maximum attempts for each action [default: 3]
    #[arg(long, value_name = "N")]
    max_retries: Option<u32>,

    /// Cap on total executed actions.
    #[arg(long, value_name = "N")]
    budget: Option<u64>,

    /// Candidate source: `heuristic`, or `remote` to merge suggestions
    /// from the configured endpoint [default: heuristic]
    #[arg(long, value_name = "KIND")]
    reasoner: Option<String>,
}

#[derive(Args)]
struct CrawlArgs {
    #[command(flatten)]
    target: TargetArgs,

    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,

    /// Maximum crawl depth [default: 3]
    #[arg(long, value_name = "N")]
    max_depth: Option<u32>,

    /// Queue discipline: bfs or dfs [default: bfs]
    #[arg(long, value_name = "KIND")]
    strategy: Option<CrawlStrategy>,

    /// Concurrent request bound [default: 8]
    #[arg(long, value_name = "N")]
    concurrency: Option<u32>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,

    /// Run log for recovery-rate and timing metrics.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,

    /// Output format: text, csv, or json [default: text]
    #[arg(long, value_name = "FMT")]
    format: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// First run's graph (conventionally the baseline).
    #[arg(long, value_name = "FILE")]
    a: PathBuf,

    /// Second run's graph (conventionally the explorer).
    #[arg(long, value_name = "FILE")]
    b: PathBuf,

    #[arg(long, value_name = "FILE")]
    log_a: Option<PathBuf>,

    #[arg(long, value_name = "FILE")]
    log_b: Option<PathBuf>,

    /// Output format: text, csv, or json [default: text]
    #[arg(long, value_name = "FMT")]
    format: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,

    /// Export format: dot or graphml.
    #[arg(long, value_name = "FMT")]
    format: String,

    /// Destination file; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestgenArgs {
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,

    /// Directory receiving one `<id>.case` file per test.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Test case file produced by `testgen`.
    #[arg(long, value_name = "FILE")]
    case: PathBuf,

    #[command(flatten)]
    target: TargetArgs,

    /// RNG seed for simulated targets [default: 0]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug)]
struct CliError(String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match Config::resolve(cli.config.as_deref()) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    let result = match cli.command {
        Command::Explore(args) => cmd_explore(&config, args),
        Command::CrawlBaseline(args) => cmd_crawl(&config, args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Export(args) => cmd_export(args),
        Command::Testgen(args) => cmd_testgen(&config, args),
        Command::Replay(args) => cmd_replay(&config, args),
    };
    if let Err(CliError(message)) = result {
        eprintln!("error: {message}");
        std::process::exit(1);
    }
}

enum Target {
    Sim(String),
    Web(String),
}

fn parse_target(raw: &str) -> Result<Target, CliError> {
    if let Some(name) = raw.strip_prefix("sim:") {
        Ok(Target::Sim(name.to_string()))
    } else if let Some(url) = raw.strip_prefix("web:") {
        Ok(Target::Web(url.to_string()))
    } else {
        Err(CliError(format!(
            "target {raw:?} must be sim:<fixture> or web:<url>"
        )))
    }
}

fn build_driver(
    target: &TargetArgs,
    seed: u64,
) -> Result<(Box<dyn AppDriver>, String), CliError> {
    match parse_target(&target.target)? {
        Target::Sim(name) => {
            let spec = load_target(&name)?;
            let driver = SimDriver::new(spec, seed);
            let start_url = driver.start_url();
            Ok((Box::new(driver), start_url))
        }
        Target::Web(url) => {
            let endpoint = target.webdriver_url.as_deref().ok_or_else(|| {
                CliError("web: targets require --webdriver-url".to_string())
            })?;
            let session = WebDriverSession::connect(WebDriverConfig::new(endpoint, url.clone()))?;
            Ok((Box::new(session), url))
        }
    }
}

fn make_obs_store(dir: Option<&Path>) -> Result<Box<dyn ObservationStore>, CliError> {
    Ok(match dir {
        Some(dir) => Box::new(FsObsStore::open(dir)?),
        None => Box::new(MemObsStore::new()),
    })
}

fn default_log_path(out: &Path) -> PathBuf {
    out.with_extension("log.jsonl")
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError(format!("cannot read {}: {e}", path.display())))?;
    Ok(graph_io::from_json(&text)?)
}

fn load_log(path: &Path) -> Result<ExplorationLog, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError(format!("cannot read {}: {e}", path.display())))?;
    Ok(ExplorationLog::from_jsonl(&text)?)
}

fn cmd_explore(config: &Config, args: ExploreArgs) -> Result<(), CliError> {
    let seed = args.seed.unwrap_or(config.explore.seed);
    let (mut driver, start_url) = build_driver(&args.target, seed)?;

    let mut exploration = config.exploration(&start_url);
    exploration.seed = seed;
    if let Some(v) = args.min_reward {
        exploration.min_reward = v;
    }
    if let Some(v) = args.max_leaf_branches {
        exploration.max_leaf_branches = v;
    }
    if let Some(v) = args.max_consecutive_actions {
        exploration.max_consecutive_actions = v;
    }
    if let Some(v) = args.max_retries {
        exploration.max_retries = v;
    }
    if let Some(v) = args.budget {
        exploration.budget = Some(v);
    }

    let heuristic = HeuristicReasoner::new(config.values.clone());
    let reasoner_kind = args.reasoner.as_deref().unwrap_or("heuristic");
    let remote = match reasoner_kind {
        "heuristic" => None,
        "remote" => {
            let remote_config = match config.remote.clone() {
                Some(section) => section.with_env_overrides(),
                None => RemoteConfig::from_env().ok_or_else(|| {
                    CliError(format!(
                        "remote reasoner requested but neither [remote] config nor {} is set",
                        statewalk::remote::ENV_URL
                    ))
                })?,
            };
            Some(RemoteReasoner::new(remote_config))
        }
        other => return Err(CliError(format!("unknown reasoner {other:?}"))),
    };
    let reasoner = CompositeReasoner::new(heuristic, remote);

    let mut obs_store = make_obs_store(args.obs_dir.as_deref())?;
    let (graph, log, _) = explore(driver.as_mut(), &reasoner, &exploration, obs_store.as_mut())?;

    graph_io::write_atomic(&args.out, &graph_io::to_json(&graph))?;
    let log_path = args.log.unwrap_or_else(|| default_log_path(&args.out));
    graph_io::write_atomic(&log_path, &log.to_jsonl())?;

    println!(
        "explored {} states, {} transitions in {} steps ({:.2}s app time)",
        graph.node_count(),
        graph.edge_count(),
        log.records.len(),
        log.total_wall_ms() as f64 / 1000.0
    );
    println!("graph: {}", args.out.display());
    println!("log:   {}", log_path.display());
    for warning in &log.warnings {
        log::warn!("{warning}");
    }
    Ok(())
}

fn cmd_crawl(config: &Config, args: CrawlArgs) -> Result<(), CliError> {
    let (mut driver, start_url) = build_driver(&args.target, 0)?;
    let mut crawl_config = config.crawl();
    if let Some(v) = args.max_depth {
        crawl_config.max_depth = v;
    }
    if let Some(v) = args.strategy {
        crawl_config.strategy = v;
    }
    if let Some(v) = args.concurrency {
        crawl_config.max_concurrent = v;
    }
    let mut obs_store = MemObsStore::new();
    let (graph, log, stats) = crawl(driver.as_mut(), &start_url, &crawl_config, &mut obs_store)?;

    graph_io::write_atomic(&args.out, &graph_io::to_json(&graph))?;
    let log_path = args.log.unwrap_or_else(|| default_log_path(&args.out));
    graph_io::write_atomic(&log_path, &log.to_jsonl())?;

    println!(
        "crawled {} pages ({} errors): {} states, {} links ({:.2}s app time)",
        stats.pages_fetched,
        stats.fetch_errors,
        graph.node_count(),
        graph.edge_count(),
        stats.wall_ms as f64 / 1000.0
    );
    println!("graph: {}", args.out.display());
    Ok(())
}

fn render_report(report: &MetricsReport, format: &str) -> Result<String, CliError> {
    match format {
        "text" => {
            let fmt_opt = |v: Option<f64>| match v {
                None => "n/a".to_string(),
                Some(x) => format!("{x:.4}"),
            };
            Ok(format!(
                "state_coverage         {}\n\
                 edge_complexity        {}\n\
                 failure_recovery_rate  {}\n\
                 time_to_completion_s   {:.4}\n\
                 graph_density          {:.4}\n\
                 avg_shortest_path      {:.4}\n\
                 avg_betweenness        {:.4}\n",
                report.state_coverage,
                report.edge_complexity,
                fmt_opt(report.failure_recovery_rate),
                report.time_to_completion_s,
                report.graph_density,
                report.avg_shortest_path,
                report.avg_betweenness,
            ))
        }
        "csv" => {
            let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            Ok(format!(
                "metric,value\nstate_coverage,{}\nedge_complexity,{}\nfailure_recovery_rate,{}\ntime_to_completion_s,{}\ngraph_density,{}\navg_shortest_path,{}\navg_betweenness,{}\n",
                report.state_coverage,
                report.edge_complexity,
                fmt_opt(report.failure_recovery_rate),
                report.time_to_completion_s,
                report.graph_density,
                report.avg_shortest_path,
                report.avg_betweenness,
            ))
        }
        "json" => Ok(format!(
            "{}\n",
            serde_json::to_string_pretty(report).expect("report serializes")
        )),
        other => Err(CliError(format!("unknown format {other:?}"))),
    }
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.graph)?;
    let log = args.log.as_deref().map(load_log).transpose()?;
    let report = metrics::compute(&graph, log.as_ref());
    print!(
        "{}",
        render_report(&report, args.format.as_deref().unwrap_or("text"))?
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let label = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string())
    };
    let graph_a = load_graph(&args.a)?;
    let graph_b = load_graph(&args.b)?;
    let log_a = args.log_a.as_deref().map(load_log).transpose()?;
    let log_b = args.log_b.as_deref().map(load_log).transpose()?;
    let report_a = metrics::compute(&graph_a, log_a.as_ref());
    let report_b = metrics::compute(&graph_b, log_b.as_ref());
    let table = metrics::compare_labeled(&report_a, &report_b, &label(&args.a), &label(&args.b));
    match args.format.as_deref().unwrap_or("text") {
        "text" => print!("{}", table.to_text()),
        "csv" => print!("{}", table.to_csv()),
        "json" => println!(
            "{}",
            serde_json::to_string_pretty(&table).expect("table serializes")
        ),
        other => return Err(CliError(format!("unknown format {other:?}"))),
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.graph)?;
    let format: GraphFormat = args.format.parse()?;
    if format == GraphFormat::JsonGraph {
        return Err(CliError(
            "the graph file already is JSONGraph; choose dot or graphml".to_string(),
        ));
    }
    let rendered = graph_io::export(&graph, format);
    match args.out {
        Some(path) => {
            graph_io::write_atomic(&path, &rendered)?;
            println!("wrote {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_testgen(config: &Config, args: TestgenArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.graph)?;
    let cases = testgen::generate(&graph, &config.testgen);
    let written = testgen::write_cases(&cases, &args.out_dir)?;
    println!(
        "generated {} test cases into {}",
        written.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_replay(config: &Config, args: ReplayArgs) -> Result<(), CliError> {
    let case = testgen::read_case(&args.case)?;
    let (mut driver, _) = build_driver(&args.target, args.seed.unwrap_or(config.explore.seed))?;
    let executor_config = statewalk::executor::ExecutorConfig {
        max_retries: config.explore.max_retries,
        fingerprint: config.fingerprint.clone(),
    };
    let mut obs_store = MemObsStore::new();
    let verdict = testgen::replay(driver.as_mut(), &case, &executor_config, &mut obs_store)?;
    match verdict {
        Verdict::Pass => {
            println!("PASS {} ({})", case.id, case.title);
            Ok(())
        }
        Verdict::FailAt { step, reason } => {
            println!("FAIL {} at step {}: {}", case.id, step + 1, reason);
            Err(CliError(format!("replay failed at step {}", step + 1)))
        }
    }
}
