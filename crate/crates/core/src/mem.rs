//! The memory system: object store, heap hierarchy, roots, statistics, and
//! trace buffer behind one handle.
//!
//! A [`Mem`] is usable on its own for scripted single-context work (tests,
//! the collector oracles); the work-stealing runtime layers task execution
//! on top of it.

use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};

use crate::audit::{AuditMode, AuditReport};
use crate::collector::RootTable;
use crate::hierarchy::{HeapId, HeapRole, Hierarchy};
use crate::stats::{Stats, StatsSnapshot};
use crate::store::Store;
use crate::trace::TraceBuf;

/// Memory-system configuration.
#[derive(Clone, Debug)]
pub struct MemConfig {
    /// First chunk size for a fresh heap; later chunks double up to the cap.
    pub min_chunk_bytes: usize,
    /// Chunk size cap; larger objects get a dedicated exact-size chunk.
    pub max_chunk_bytes: usize,
    /// Leaf-heap occupancy that triggers an automatic collection at the next
    /// allocation. Zero disables automatic collection.
    pub gc_threshold: usize,
    /// Record trace events.
    pub trace: bool,
    /// When the runtime audits the store.
    pub audit_mode: AuditMode,
}

impl Default for MemConfig {
    fn default() -> Self {
        let min_chunk_bytes = 4096;
        MemConfig {
            min_chunk_bytes,
            max_chunk_bytes: 64 * min_chunk_bytes,
            gc_threshold: 64 * min_chunk_bytes,
            trace: false,
            audit_mode: AuditMode::Off,
        }
    }
}

pub struct Mem {
    pub(crate) store: Store,
    pub(crate) hier: Hierarchy,
    pub(crate) stats: Stats,
    pub(crate) trace: TraceBuf,
    pub(crate) roots: RootTable,
    pub(crate) cfg: MemConfig,
    pub(crate) audit_failures: Mutex<Vec<AuditReport>>,
    global_heap: HeapId,
}

impl Mem {
    pub fn new(cfg: MemConfig) -> Arc<Mem> {
        let hier = Hierarchy::new();
        let global_heap = hier.new_heap(
            None,
            0,
            HeapRole::FromSpace,
            true,
            cfg.min_chunk_bytes,
            0,
            false,
        );
        Arc::new(Mem {
            store: Store::new(),
            hier,
            stats: Stats::new(),
            trace: TraceBuf::new(cfg.trace),
            roots: RootTable::new(),
            cfg,
            audit_failures: Mutex::new(Vec::new()),
            global_heap,
        })
    }

    /// The heap for scheduler-internal allocations; outside every hierarchy.
    pub fn global_heap(&self) -> HeapId {
        self.global_heap
    }

    pub fn config(&self) -> &MemConfig {
        &self.cfg
    }

    pub fn stats_snapshot(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn lock_order_violations(&self) -> u64 {
        self.stats.lock_order_violations.load(Ordering::Relaxed)
    }

    /// Audit reports that failed during a run (collected, not thrown).
    pub fn audit_failures(&self) -> Vec<AuditReport> {
        self.audit_failures.lock().unwrap().clone()
    }

    pub(crate) fn record_audit(&self, report: AuditReport) {
        if !report.passed {
            let mut f = self.audit_failures.lock().unwrap();
            if f.len() < 64 {
                f.push(report);
            }
        }
    }
}
