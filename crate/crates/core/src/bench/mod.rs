//! The benchmark corpus and harness entry point.
//!
//! Twelve desk-scale benchmarks run on the runtime through the public memory
//! operations: pure ones (`fib`, `tabulate`, `map`, `reduce`, `filter`,
//! `msort-pure`) and imperative ones (`msort`, `dedup`, `tourney`,
//! `reachability`, `usp`, `usp-tree`). Each benchmark verifies its own
//! output against an independent oracle; the harness reports per-class
//! operation counters, promotion/collection volumes, and timings for the
//! work phase (input construction is excluded from timing).

pub mod basic;
pub mod graph;
pub mod sort;
pub mod util;

use std::path::PathBuf;
use std::time::Instant;

use crate::audit::{AuditMode, AuditReport};
use crate::mem::MemConfig;
use crate::report::StatsReport;
use crate::runtime::{Runtime, RuntimeConfig};
use crate::task::TaskValue;

pub const BENCHMARKS: &[&str] = &[
    "fib",
    "tabulate",
    "map",
    "reduce",
    "filter",
    "msort-pure",
    "msort",
    "dedup",
    "tourney",
    "reachability",
    "usp",
    "usp-tree",
];

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub name: String,
    pub n: u64,
    pub grain: u64,
    pub workers: usize,
    pub seed: u64,
    pub audit_mode: AuditMode,
    pub gc_threshold: usize,
    pub deterministic: bool,
    pub trace: bool,
    pub graph_path: Option<PathBuf>,
}

impl BenchmarkConfig {
    /// Desk-scale defaults for one benchmark.
    pub fn new(name: &str) -> BenchmarkConfig {
        let (n, grain) = match name {
            "fib" => (25, 12),
            "reachability" | "usp" | "usp-tree" => (10_000, 64),
            _ => (100_000, 1_000),
        };
        BenchmarkConfig {
            name: name.to_string(),
            n,
            grain,
            workers: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(2)
                .min(8),
            seed: 42,
            audit_mode: AuditMode::AtJoins,
            gc_threshold: MemConfig::default().gc_threshold,
            deterministic: false,
            trace: false,
            graph_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !BENCHMARKS.contains(&self.name.as_str()) {
            return Err(format!(
                "unknown benchmark {:?}; known: {}",
                self.name,
                BENCHMARKS.join(", ")
            ));
        }
        if self.n < 1 {
            return Err("size must be >= 1".into());
        }
        if self.grain < 1 {
            return Err("grain must be >= 1".into());
        }
        if self.workers < 1 {
            return Err("workers must be >= 1".into());
        }
        Ok(())
    }
}

pub struct BenchOutcome {
    pub report: StatsReport,
    pub audits_passed: bool,
    pub audit_failures: Vec<AuditReport>,
    /// The benchmark's own output verification.
    pub check: Result<(), String>,
}

/// Builds a runtime for `cfg`, runs the named benchmark, and assembles the
/// stats report. Returns Err only for configuration problems.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchOutcome, String> {
    run_benchmark_inner(cfg).map(|(outcome, _rt)| outcome)
}

/// Like [`run_benchmark`], additionally writing the event trace to
/// `trace_path` after the run.
pub fn run_benchmark_traced(
    cfg: &BenchmarkConfig,
    trace_path: Option<&std::path::Path>,
) -> Result<BenchOutcome, String> {
    let (outcome, rt) = run_benchmark_inner(cfg)?;
    if let Some(path) = trace_path {
        let file = std::fs::File::create(path).map_err(|e| format!("trace sink: {e}"))?;
        let mut sink = std::io::BufWriter::new(file);
        rt.mem()
            .emit_trace(&mut sink)
            .map_err(|e| format!("trace sink: {e}"))?;
    }
    Ok(outcome)
}

fn run_benchmark_inner(cfg: &BenchmarkConfig) -> Result<(BenchOutcome, Runtime), String> {
    cfg.validate()?;
    let rt = Runtime::new(RuntimeConfig {
        workers: cfg.workers,
        seed: cfg.seed,
        deterministic: cfg.deterministic,
        mem: MemConfig {
            gc_threshold: cfg.gc_threshold,
            trace: cfg.trace,
            audit_mode: cfg.audit_mode,
            ..MemConfig::default()
        },
    });

    let (work_secs, check) = match cfg.name.as_str() {
        "fib" => basic::run_fib(cfg, &rt),
        "tabulate" => basic::run_tabulate(cfg, &rt),
        "map" => basic::run_map(cfg, &rt),
        "reduce" => basic::run_reduce(cfg, &rt),
        "filter" => basic::run_filter(cfg, &rt),
        "tourney" => basic::run_tourney(cfg, &rt),
        "msort" => sort::run_msort(cfg, &rt, false),
        "msort-pure" => sort::run_msort(cfg, &rt, true),
        "dedup" => sort::run_dedup(cfg, &rt),
        "reachability" => graph::run_bfs(cfg, &rt, graph::BfsKind::Reachability),
        "usp" => graph::run_bfs(cfg, &rt, graph::BfsKind::Usp),
        "usp-tree" => graph::run_bfs(cfg, &rt, graph::BfsKind::UspTree),
        other => return Err(format!("unknown benchmark {other:?}")),
    }?;

    let mut audit_failures = rt.mem().audit_failures();
    if cfg.audit_mode != AuditMode::Off {
        let dis = rt.mem().audit_disentanglement();
        if !dis.passed {
            audit_failures.push(dis);
        }
        let fwd = rt.mem().audit_forwarding_chains();
        if !fwd.passed {
            audit_failures.push(fwd);
        }
    }
    let audits_passed = audit_failures.is_empty();
    let report = StatsReport::from_snapshot(
        &cfg.name,
        cfg.n,
        cfg.grain,
        cfg.workers,
        cfg.seed,
        rt.mem().stats_snapshot(),
        work_secs,
    );
    Ok((
        BenchOutcome {
            report,
            audits_passed,
            audit_failures,
            check,
        },
        rt,
    ))
}

/// Times one `Runtime::run` call.
pub(crate) fn timed_run<F>(rt: &Runtime, f: F) -> (TaskValue, f64)
where
    F: FnOnce() -> TaskValue + Send + 'static,
{
    let t0 = Instant::now();
    let v = rt.run(f);
    (v, t0.elapsed().as_secs_f64())
}

/// Shared element generator: the i-th input element for a seed.
pub fn element(seed: u64, i: u64) -> u64 {
    crate::util::splitmix64(seed.wrapping_add(i))
}
