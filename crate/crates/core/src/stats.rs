//! Operation-class instrumentation.
//!
//! Every memory operation lands in exactly one (class, locality) counter.
//! Locality is sampled at entry: `Promoted` if the object already has a
//! forwarding reference, `Local` if it is unforwarded and owned by the
//! current task's heap, `Distant` otherwise. The Local×Promoting cell is
//! structurally impossible: a write to an unforwarded object in the writer's
//! own leaf never promotes.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize)]
pub enum OpClass {
    ReadImmutable = 0,
    ReadMutable = 1,
    WriteScalar = 2,
    WriteRefNonPromoting = 3,
    WriteRefPromoting = 4,
}

impl OpClass {
    pub const ALL: [OpClass; 5] = [
        OpClass::ReadImmutable,
        OpClass::ReadMutable,
        OpClass::WriteScalar,
        OpClass::WriteRefNonPromoting,
        OpClass::WriteRefPromoting,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OpClass::ReadImmutable => "read_immutable",
            OpClass::ReadMutable => "read_mutable",
            OpClass::WriteScalar => "write_scalar",
            OpClass::WriteRefNonPromoting => "write_ref_non_promoting",
            OpClass::WriteRefPromoting => "write_ref_promoting",
        }
    }

    /// True for the classes that touch mutable data; used when computing a
    /// benchmark's dominant write class.
    pub fn is_write(self) -> bool {
        matches!(
            self,
            OpClass::WriteScalar | OpClass::WriteRefNonPromoting | OpClass::WriteRefPromoting
        )
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize)]
pub enum Locality {
    Local = 0,
    Distant = 1,
    Promoted = 2,
}

impl Locality {
    pub const ALL: [Locality; 3] = [Locality::Local, Locality::Distant, Locality::Promoted];

    pub fn label(self) -> &'static str {
        match self {
            Locality::Local => "local",
            Locality::Distant => "distant",
            Locality::Promoted => "promoted",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize)]
pub struct OpClassKey {
    pub op: OpClass,
    pub locality: Locality,
}

impl OpClassKey {
    pub fn new(op: OpClass, locality: Locality) -> Self {
        OpClassKey { op, locality }
    }

    pub fn label(self) -> String {
        format!("{}.{}", self.op.label(), self.locality.label())
    }
}

/// Runtime-wide counters; one instance per [`crate::mem::Mem`].
pub(crate) struct Stats {
    pub(crate) counters: [[AtomicU64; 3]; 5],
    pub(crate) memops_total: AtomicU64,
    pub(crate) lock_acqs: [AtomicU64; 5],
    pub(crate) total_lock_acqs: AtomicU64,
    pub(crate) lock_order_violations: AtomicU64,
    pub(crate) chain_steps: AtomicU64,
    pub(crate) promotions: AtomicU64,
    pub(crate) objects_promoted: AtomicU64,
    pub(crate) bytes_promoted: AtomicU64,
    pub(crate) collections: AtomicU64,
    pub(crate) bytes_collected: AtomicU64,
    pub(crate) duplicates_elided: AtomicU64,
    pub(crate) collection_ns: AtomicU64,
    pub(crate) allocs: AtomicU64,
    pub(crate) alloc_bytes: AtomicU64,
    pub(crate) occupancy: AtomicU64,
    pub(crate) max_occupancy: AtomicU64,
    pub(crate) forks: AtomicU64,
    pub(crate) steals: AtomicU64,
}

impl Stats {
    pub(crate) fn new() -> Stats {
        Stats {
            counters: Default::default(),
            memops_total: AtomicU64::new(0),
            lock_acqs: Default::default(),
            total_lock_acqs: AtomicU64::new(0),
            lock_order_violations: AtomicU64::new(0),
            chain_steps: AtomicU64::new(0),
            promotions: AtomicU64::new(0),
            objects_promoted: AtomicU64::new(0),
            bytes_promoted: AtomicU64::new(0),
            collections: AtomicU64::new(0),
            bytes_collected: AtomicU64::new(0),
            duplicates_elided: AtomicU64::new(0),
            collection_ns: AtomicU64::new(0),
            allocs: AtomicU64::new(0),
            alloc_bytes: AtomicU64::new(0),
            occupancy: AtomicU64::new(0),
            max_occupancy: AtomicU64::new(0),
            forks: AtomicU64::new(0),
            steals: AtomicU64::new(0),
        }
    }

    pub(crate) fn record_op(&self, key: OpClassKey) {
        self.counters[key.op as usize][key.locality as usize].fetch_add(1, Ordering::Relaxed);
        self.memops_total.fetch_add(1, Ordering::Relaxed);
    }
}

/// Point-in-time copy of the counters.
#[derive(Clone, Debug, Serialize)]
pub struct StatsSnapshot {
    pub counters: [[u64; 3]; 5],
    pub memops_total: u64,
    pub lock_acqs: [u64; 5],
    pub total_lock_acqs: u64,
    pub lock_order_violations: u64,
    pub chain_steps: u64,
    pub promotions: u64,
    pub objects_promoted: u64,
    pub bytes_promoted: u64,
    pub collections: u64,
    pub bytes_collected: u64,
    pub duplicates_elided: u64,
    pub collection_ns: u64,
    pub allocs: u64,
    pub alloc_bytes: u64,
    pub max_occupancy: u64,
    pub forks: u64,
    pub steals: u64,
}

impl StatsSnapshot {
    pub fn count(&self, op: OpClass, locality: Locality) -> u64 {
        self.counters[op as usize][locality as usize]
    }

    pub fn op_total(&self, op: OpClass) -> u64 {
        self.counters[op as usize].iter().sum()
    }

    pub fn counter_sum(&self) -> u64 {
        self.counters.iter().flatten().sum()
    }

    pub fn lock_acquisitions(&self, op: OpClass) -> u64 {
        self.lock_acqs[op as usize]
    }

    /// The (write-class, locality) cell with the highest count.
    pub fn dominant_write_class(&self) -> Option<(OpClassKey, u64)> {
        let mut best: Option<(OpClassKey, u64)> = None;
        for op in OpClass::ALL {
            if !op.is_write() {
                continue;
            }
            for loc in Locality::ALL {
                let n = self.count(op, loc);
                if n > 0 && best.map(|(_, b)| n > b).unwrap_or(true) {
                    best = Some((OpClassKey::new(op, loc), n));
                }
            }
        }
        best
    }
}

impl Stats {
    pub(crate) fn snapshot(&self) -> StatsSnapshot {
        let mut counters = [[0u64; 3]; 5];
        for (i, row) in self.counters.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                counters[i][j] = c.load(Ordering::Relaxed);
            }
        }
        let mut lock_acqs = [0u64; 5];
        for (i, c) in self.lock_acqs.iter().enumerate() {
            lock_acqs[i] = c.load(Ordering::Relaxed);
        }
        StatsSnapshot {
            counters,
            memops_total: self.memops_total.load(Ordering::Relaxed),
            lock_acqs,
            total_lock_acqs: self.total_lock_acqs.load(Ordering::Relaxed),
            lock_order_violations: self.lock_order_violations.load(Ordering::Relaxed),
            chain_steps: self.chain_steps.load(Ordering::Relaxed),
            promotions: self.promotions.load(Ordering::Relaxed),
            objects_promoted: self.objects_promoted.load(Ordering::Relaxed),
            bytes_promoted: self.bytes_promoted.load(Ordering::Relaxed),
            collections: self.collections.load(Ordering::Relaxed),
            bytes_collected: self.bytes_collected.load(Ordering::Relaxed),
            duplicates_elided: self.duplicates_elided.load(Ordering::Relaxed),
            collection_ns: self.collection_ns.load(Ordering::Relaxed),
            allocs: self.allocs.load(Ordering::Relaxed),
            alloc_bytes: self.alloc_bytes.load(Ordering::Relaxed),
            max_occupancy: self.max_occupancy.load(Ordering::Relaxed),
            forks: self.forks.load(Ordering::Relaxed),
            steals: self.steals.load(Ordering::Relaxed),
        }
    }
}

thread_local! {
    static CURRENT_OP: Cell<Option<OpClass>> = const { Cell::new(None) };
}

/// The operation class the current thread is executing, if any. Lock
/// acquisitions are attributed to this class.
pub(crate) fn current_op() -> Option<OpClass> {
    CURRENT_OP.with(|c| c.get())
}

/// Scoped marker for "the current thread is inside this memop".
pub(crate) struct OpScope {
    prev: Option<OpClass>,
}

impl OpScope {
    pub(crate) fn enter(op: OpClass) -> OpScope {
        let prev = CURRENT_OP.with(|c| c.replace(Some(op)));
        OpScope { prev }
    }

    /// Reclassifies the scope mid-operation (a pointer write that turns out
    /// to promote).
    pub(crate) fn reclassify(&self, op: OpClass) {
        CURRENT_OP.with(|c| c.set(Some(op)));
    }
}

impl Drop for OpScope {
    fn drop(&mut self) {
        CURRENT_OP.with(|c| c.set(self.prev));
    }
}
