//! `hh` — benchmark harness for the hierarchical-heap runtime.
//!
//! Exit codes: 0 success with all audits passed, 1 audit or verification
//! failure, 2 usage error. `HH_LOG` (error|info|debug) controls diagnostics.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hh_core::bench::{BenchmarkConfig, BENCHMARKS};
use hh_core::AuditMode;

#[derive(Parser)]
#[command(name = "hh", version, about = "Hierarchical heaps for mutable state")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark on the runtime, with optional audits, stats and trace.
    Run(RunArgs),
    /// List the available benchmarks.
    List,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AuditArg {
    Off,
    Joins,
    #[value(name = "every-op")]
    EveryOp,
}

impl From<AuditArg> for AuditMode {
    fn from(a: AuditArg) -> AuditMode {
        match a {
            AuditArg::Off => AuditMode::Off,
            AuditArg::Joins => AuditMode::AtJoins,
            AuditArg::EveryOp => AuditMode::EveryOp,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Benchmark name (see `hh list`).
    #[arg(long)]
    bench: String,
    /// Input size n; graph benchmarks read it as the vertex count.
    #[arg(long)]
    size: Option<u64>,
    /// Sequential threshold.
    #[arg(long)]
    grain: Option<u64>,
    /// Worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Scheduler seed; also seeds benchmark input generation.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// When to audit the store.
    #[arg(long, value_enum, default_value_t = AuditArg::Joins)]
    audit: AuditArg,
    /// Leaf-heap occupancy (bytes) that triggers automatic collection at the
    /// next allocation; 0 disables automatic collection.
    #[arg(long)]
    gc_threshold: Option<usize>,
    /// Serialize scheduling into seeded turns for replayable steal logs.
    #[arg(long)]
    deterministic: bool,
    /// Write the event trace to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the stats report here (`.json` for JSON, text otherwise).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Load the input graph from an edge-list file (`u v` per line) instead
    /// of generating one.
    #[arg(long)]
    graph: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HH_LOG", "error")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for b in BENCHMARKS {
                println!("{b}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => run(args),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let mut cfg = BenchmarkConfig::new(&args.bench);
    if let Some(n) = args.size {
        cfg.n = n;
    }
    if let Some(g) = args.grain {
        cfg.grain = g;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.seed = args.seed;
    cfg.audit_mode = args.audit.into();
    if let Some(t) = args.gc_threshold {
        cfg.gc_threshold = t;
    }
    cfg.deterministic = args.deterministic;
    cfg.trace = args.trace.is_some();
    cfg.graph_path = args.graph.clone();
    if let Err(e) = cfg.validate() {
        eprintln!("hh: {e}");
        return ExitCode::from(2);
    }

    log::info!(
        "running {} (n={}, grain={}, workers={}, seed={})",
        cfg.name,
        cfg.n,
        cfg.grain,
        cfg.workers,
        cfg.seed
    );
    // The trace buffer lives in the runtime's memory system; run_benchmark
    // owns the runtime, so tracing to a file routes through it.
    let outcome = match hh_core::bench::run_benchmark_traced(&cfg, args.trace.as_deref()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("hh: {e}");
            return ExitCode::from(2);
        }
    };

    let text = outcome.report.render_text();
    print!("{text}");
    if let Some(path) = &args.stats {
        let body = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            outcome.report.to_json()
        } else {
            text.clone()
        };
        if let Err(e) = std::fs::write(path, body) {
            eprintln!("hh: writing {}: {e}", path.display());
            return ExitCode::from(1);
        }
    }

    let mut failed = false;
    if let Err(e) = &outcome.check {
        eprintln!("hh: verification failed: {e}");
        failed = true;
    }
    if !outcome.audits_passed {
        for report in &outcome.audit_failures {
            eprintln!(
                "hh: audit failure: {} down-refs, {} cross-refs, {} broken chains",
                report.down_refs.len(),
                report.cross_refs.len(),
                report.broken_chains.len()
            );
        }
        failed = true;
    }
    writeln!(
        std::io::stdout(),
        "audits = {}",
        if outcome.audits_passed { "passed" } else { "FAILED" }
    )
    .ok();
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
