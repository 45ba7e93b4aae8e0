//! The statistics report emitted after a benchmark run.
//!
//! Two renderings: a structured-text form (one `key = value` per line) and a
//! JSON document with the same fields. Field meanings:
//!
//! - `count.<op>.<locality>`: memory operations per (class, locality) cell
//! - `lock_acquisitions.<op>`: heap-lock acquisitions attributed to a class
//! - `promotions` / `objects_promoted` / `bytes_promoted`: promoting writes,
//!   objects copied upward, and their bytes
//! - `collections` / `bytes_collected` / `duplicates_elided`: collections
//!   run, live bytes copied by them, and promotion duplicates elided
//! - `max_occupancy`: high-water mark of live bytes across all heaps
//! - `wall_time_s` / `collection_time_fraction`: timed work-phase wall time
//!   and the fraction of it spent collecting (clamped to [0, 1])
//! - `allocs` / `alloc_bytes` / `forks` / `steals`: volume counters

use std::collections::BTreeMap;

use serde::Serialize;

use crate::stats::{Locality, OpClass, OpClassKey, StatsSnapshot};

#[derive(Clone, Debug, Serialize)]
pub struct StatsReport {
    pub bench: String,
    pub n: u64,
    pub grain: u64,
    pub workers: usize,
    pub seed: u64,
    pub counters: BTreeMap<String, u64>,
    pub lock_acquisitions: BTreeMap<String, u64>,
    pub memops_total: u64,
    pub promotions: u64,
    pub objects_promoted: u64,
    pub bytes_promoted: u64,
    pub collections: u64,
    pub bytes_collected: u64,
    pub duplicates_elided: u64,
    pub max_occupancy: u64,
    pub allocs: u64,
    pub alloc_bytes: u64,
    pub forks: u64,
    pub steals: u64,
    pub lock_order_violations: u64,
    pub wall_time_s: f64,
    pub collection_time_fraction: f64,
    #[serde(skip)]
    pub snapshot: Option<StatsSnapshot>,
}

impl StatsReport {
    pub fn from_snapshot(
        bench: &str,
        n: u64,
        grain: u64,
        workers: usize,
        seed: u64,
        snap: StatsSnapshot,
        wall_time_s: f64,
    ) -> StatsReport {
        let mut counters = BTreeMap::new();
        for op in OpClass::ALL {
            for loc in Locality::ALL {
                counters.insert(
                    format!("count.{}", OpClassKey::new(op, loc).label()),
                    snap.count(op, loc),
                );
            }
        }
        let mut lock_acquisitions = BTreeMap::new();
        for op in OpClass::ALL {
            lock_acquisitions.insert(
                format!("lock_acquisitions.{}", op.label()),
                snap.lock_acquisitions(op),
            );
        }
        let fraction = if wall_time_s > 0.0 {
            (snap.collection_ns as f64 / 1e9 / wall_time_s).clamp(0.0, 1.0)
        } else {
            0.0
        };
        StatsReport {
            bench: bench.to_string(),
            n,
            grain,
            workers,
            seed,
            counters,
            lock_acquisitions,
            memops_total: snap.memops_total,
            promotions: snap.promotions,
            objects_promoted: snap.objects_promoted,
            bytes_promoted: snap.bytes_promoted,
            collections: snap.collections,
            bytes_collected: snap.bytes_collected,
            duplicates_elided: snap.duplicates_elided,
            max_occupancy: snap.max_occupancy,
            allocs: snap.allocs,
            alloc_bytes: snap.alloc_bytes,
            forks: snap.forks,
            steals: snap.steals,
            lock_order_violations: snap.lock_order_violations,
            wall_time_s,
            collection_time_fraction: fraction,
            snapshot: Some(snap),
        }
    }

    /// One `key = value` per line, keys sorted within each section.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("bench", self.bench.clone());
        line("n", self.n.to_string());
        line("grain", self.grain.to_string());
        line("workers", self.workers.to_string());
        line("seed", self.seed.to_string());
        for (k, v) in &self.counters {
            line(k, v.to_string());
        }
        line("memops_total", self.memops_total.to_string());
        for (k, v) in &self.lock_acquisitions {
            line(k, v.to_string());
        }
        line("promotions", self.promotions.to_string());
        line("objects_promoted", self.objects_promoted.to_string());
        line("bytes_promoted", self.bytes_promoted.to_string());
        line("collections", self.collections.to_string());
        line("bytes_collected", self.bytes_collected.to_string());
        line("duplicates_elided", self.duplicates_elided.to_string());
        line("max_occupancy", self.max_occupancy.to_string());
        line("allocs", self.allocs.to_string());
        line("alloc_bytes", self.alloc_bytes.to_string());
        line("forks", self.forks.to_string());
        line("steals", self.steals.to_string());
        line(
            "lock_order_violations",
            self.lock_order_violations.to_string(),
        );
        line("wall_time_s", format!("{:.6}", self.wall_time_s));
        line(
            "collection_time_fraction",
            format!("{:.6}", self.collection_time_fraction),
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_report_has_one_key_per_line() {
        let snap = crate::mem::Mem::new(crate::mem::MemConfig::default()).stats_snapshot();
        let report = StatsReport::from_snapshot("fib", 25, 12, 2, 42, snap, 0.5);
        let text = report.render_text();
        for l in text.lines() {
            assert!(l.contains(" = "), "bad line {l:?}");
        }
        assert!(text.contains("bench = fib"));
        assert!(text.contains("count.read_immutable.local = 0"));
        assert!(text.contains("lock_acquisitions.read_immutable = 0"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["bench"], "fib");
        assert_eq!(json["workers"], 2);
    }
}
