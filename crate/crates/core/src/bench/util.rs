//! Kernel plumbing: pinned references and parallel range drivers.
//!
//! Allocation is a collection point for the allocating task's own heap, so a
//! kernel that holds references to its own earlier allocations across an
//! allocation must pin them in root cells and re-read them afterwards.
//! References into ancestor heaps are stable while the task runs (ancestors
//! only collect themselves) — unless the kernel is executing inline on the
//! task that owns that heap, which is why drivers hand long-lived arrays to
//! leaves as cells rather than raw refs.

use std::sync::Arc;

use crate::collector::{RootCell, RootId};
use crate::mem::Mem;
use crate::memops;
use crate::runtime::forkjoin;
use crate::store::{Mutability, ObjRef, ObjectLayout, Value};
use crate::task::{self, TaskValue};

/// A set of collection-safe handles owned by one task. Dropping unpins.
pub struct Pins {
    mem: Arc<Mem>,
    entries: Vec<(RootId, Arc<RootCell>)>,
}

impl Pins {
    pub fn new() -> Pins {
        let (mem, task, _, _) = task::current();
        let _ = task;
        Pins {
            mem,
            entries: Vec::new(),
        }
    }

    pub fn pin(&mut self, obj: ObjRef) -> usize {
        let cell = RootCell::new(Value::Ref(obj));
        let id = self.mem.register_root(task::current_task(), cell.clone());
        self.entries.push((id, cell));
        self.entries.len() - 1
    }

    /// Current location of a pinned object (collections rewrite the cell).
    pub fn get(&self, idx: usize) -> ObjRef {
        self.entries[idx].1.get_obj()
    }

    /// Allocates a scalar array with all live pins protected, pins the
    /// result, and returns its pin index.
    pub fn alloc_words(&mut self, len: usize) -> usize {
        memops::gc_safepoint();
        let layout = ObjectLayout::scalar_array(len, Mutability::Mutable);
        let r = memops::alloc(&layout, &vec![Value::Word(0); len]);
        self.pin(r)
    }
}

impl Default for Pins {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Pins {
    fn drop(&mut self) {
        for (id, _) in self.entries.drain(..) {
            self.mem.unregister_root(id);
        }
    }
}

/// Registers a cell for `obj` that outlives the borrow; the caller keeps the
/// cell and must unregister via the id.
pub fn pin_cell(mem: &Arc<Mem>, obj: ObjRef) -> (RootId, Arc<RootCell>) {
    let cell = RootCell::new(Value::Ref(obj));
    let id = mem.register_root(task::current_task(), cell.clone());
    (id, cell)
}

pub fn alloc_words(len: usize) -> ObjRef {
    let layout = ObjectLayout::scalar_array(len, Mutability::Mutable);
    memops::alloc(&layout, &vec![Value::Word(0); len])
}

/// Splits `[lo, hi)` into grain-sized leaves executed in parallel.
pub fn par_ranges(lo: u64, hi: u64, grain: u64, leaf: Arc<dyn Fn(u64, u64) + Send + Sync>) {
    if hi - lo <= grain {
        leaf(lo, hi);
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let left = leaf.clone();
    let right = leaf;
    forkjoin(
        move || {
            par_ranges(lo, mid, grain, left);
            TaskValue::Unit
        },
        move || {
            par_ranges(mid, hi, grain, right);
            TaskValue::Unit
        },
    );
}

/// Parallel reduction of `[lo, hi)` with a per-leaf fold and a wrapping sum
/// combine.
pub fn par_reduce(lo: u64, hi: u64, grain: u64, leaf: Arc<dyn Fn(u64, u64) -> u64 + Send + Sync>) -> u64 {
    if hi - lo <= grain {
        return leaf(lo, hi);
    }
    let mid = lo + (hi - lo) / 2;
    let left = leaf.clone();
    let right = leaf;
    let (a, b) = forkjoin(
        move || TaskValue::Word(par_reduce(lo, mid, grain, left)),
        move || TaskValue::Word(par_reduce(mid, hi, grain, right)),
    );
    a.word().wrapping_add(b.word())
}

/// Parallel tree whose leaves produce ObjRef results; internal nodes pair
/// them into two-reference nodes. Walk with [`collect_tree_leaves`].
pub fn par_ref_tree(
    lo: u64,
    hi: u64,
    grain: u64,
    leaf: Arc<dyn Fn(u64, u64) -> ObjRef + Send + Sync>,
) -> ObjRef {
    if hi - lo <= grain {
        return leaf(lo, hi);
    }
    let mid = lo + (hi - lo) / 2;
    let left = leaf.clone();
    let right = leaf;
    let (a, b) = forkjoin(
        move || TaskValue::Ref(par_ref_tree(lo, mid, grain, left)),
        move || TaskValue::Ref(par_ref_tree(mid, hi, grain, right)),
    );
    // The children's objects were joined into this task's heap; pin them
    // across the pair allocation.
    let mut pins = Pins::new();
    let ia = pins.pin(a.obj());
    let ib = pins.pin(b.obj());
    memops::gc_safepoint();
    let layout = ObjectLayout::new(vec![
        crate::store::FieldDescriptor::ref_imm(),
        crate::store::FieldDescriptor::ref_imm(),
    ]);
    memops::alloc(
        &layout,
        &[Value::Ref(pins.get(ia)), Value::Ref(pins.get(ib))],
    )
}

/// Leaves of a [`par_ref_tree`] result, left to right.
pub fn collect_tree_leaves(mem: &Mem, root: ObjRef, out: &mut Vec<ObjRef>) {
    if mem.layout_of(root).ptr_fields().is_empty() {
        out.push(root);
        return;
    }
    let l = memops::read_immutable(root, 0).as_obj();
    let r = memops::read_immutable(root, 1).as_obj();
    collect_tree_leaves(mem, l, out);
    collect_tree_leaves(mem, r, out);
}
