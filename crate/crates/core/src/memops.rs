//! The high-level memory operations over hierarchical heaps.
//!
//! Reads of immutable fields never look at the forwarding slot and never
//! lock. Mutable reads and scalar writes go straight to the object when it
//! has no forwarding reference; otherwise they resolve the master copy (the
//! end of the forwarding chain) under that heap's READ lock. Pointer writes
//! preserve disentanglement: a reference may be stored only same-level or
//! upward, and storing a deeper reference first promotes (copies) the
//! referent and everything reachable from it into the target heap under a
//! bottom-up WRITE-locked path.

use std::sync::atomic::{fence, Ordering};
use std::sync::Arc;

use crate::hierarchy::HeapId;
use crate::mem::Mem;
use crate::rwlock::LockMode;
use crate::stats::{Locality, OpClass, OpClassKey, OpScope};
use crate::store::{FieldKind, Mutability, ObjRef, ObjectLayout, Value};
use crate::task;
use crate::trace::{Subject, TraceKind};

/// A pointer write whose referent is not on the writing task's
/// heap-ancestor chain; storing it would entangle the hierarchy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntanglementError {
    pub obj: ObjRef,
    pub field: u32,
    pub target: ObjRef,
    pub target_heap: HeapId,
    pub task_heap: HeapId,
}

impl std::fmt::Display for EntanglementError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "entangling write of {} (heap {:?}) into {}.{} from task heap {:?}",
            self.target, self.target_heap, self.obj, self.field, self.task_heap
        )
    }
}

impl std::error::Error for EntanglementError {}

/// The master copy of an object, pinned by a READ hold on its heap.
///
/// While the handle is held the object cannot acquire a forwarding
/// reference: promotions into that heap need its WRITE lock. Dropping the
/// handle (or calling [`release`](MasterHandle::release)) unlocks exactly
/// once.
pub struct MasterHandle {
    mem: Arc<Mem>,
    obj: ObjRef,
    held: Option<HeapId>,
}

impl MasterHandle {
    pub fn obj(&self) -> ObjRef {
        self.obj
    }

    pub fn held_heap(&self) -> HeapId {
        self.held.expect("handle already released")
    }

    pub fn release(mut self) {
        if let Some(h) = self.held.take() {
            self.mem.unlock(h);
        }
    }
}

impl Drop for MasterHandle {
    fn drop(&mut self) {
        if let Some(h) = self.held.take() {
            self.mem.unlock(h);
        }
    }
}

fn classify(mem: &Mem, cur_heap: HeapId, obj: ObjRef) -> Locality {
    if mem.has_fwd(obj) {
        Locality::Promoted
    } else if mem.heap_of(obj) == cur_heap {
        Locality::Local
    } else {
        Locality::Distant
    }
}

fn every_op_hook(mem: &Arc<Mem>, sched: &Option<Arc<crate::runtime::SchedShared>>, worker: Option<u16>) {
    if mem.cfg.audit_mode != crate::audit::AuditMode::EveryOp {
        return;
    }
    match (sched, worker) {
        (Some(s), Some(w)) => s.stop_world_audit(mem, w),
        _ => {
            mem.record_audit(mem.audit_disentanglement());
            mem.record_audit(mem.audit_forwarding_chains());
        }
    }
}

/// Runs the automatic-collection check the allocator performs at every
/// allocation site. Callers that hold unregistered ObjRefs across an
/// allocation should pin them in root cells, call this, and re-read the
/// cells before building the allocation's initial values.
pub fn gc_safepoint() {
    let (mem, t, _, _) = task::current();
    maybe_auto_collect(&mem, t.ul.top().1);
}

fn maybe_auto_collect(mem: &Mem, cur: HeapId) {
    if mem.cfg.gc_threshold == 0 {
        return;
    }
    let rec = mem.hier.heap(cur);
    if rec.global
        || rec.occupancy.load(Ordering::Acquire) < rec.gc_watermark.load(Ordering::Acquire)
    {
        return;
    }
    // Only a leaf collects itself; mid-forkjoin allocations (none in
    // practice) skip the trigger rather than violate quiescence.
    if !mem.children_of(cur).is_empty() {
        return;
    }
    mem.collect(cur);
    let live = mem.occupancy(cur);
    rec.gc_watermark.store(
        mem.cfg.gc_threshold.max(2 * live),
        Ordering::Release,
    );
}

/// Allocates a new object in the current task's heap. No locks.
pub fn alloc(layout: &Arc<ObjectLayout>, init: &[Value]) -> ObjRef {
    let (mem, t, sched, worker) = task::current();
    every_op_hook(&mem, &sched, worker);
    let cur = t.ul.top().1;
    maybe_auto_collect(&mem, cur);
    let r = mem.fresh_obj(cur, layout, init);
    mem.trace.push(&mem, TraceKind::Alloc, Subject::Obj(r), None);
    r
}

/// Reads an immutable field directly from `obj`, ignoring the forwarding
/// slot: all copies of an object hold the same immutable values. Zero locks,
/// constant work.
pub fn read_immutable(obj: ObjRef, field: u32) -> Value {
    let (mem, t, sched, worker) = task::current();
    every_op_hook(&mem, &sched, worker);
    debug_assert_eq!(
        mem.layout_of(obj).descriptor(field).mutability,
        Mutability::Immutable,
        "readImmutable on mutable field {field} of {obj}"
    );
    let key = OpClassKey::new(OpClass::ReadImmutable, classify(&mem, t.ul.top().1, obj));
    let _scope = OpScope::enter(OpClass::ReadImmutable);
    mem.stats.record_op(key);
    mem.trace
        .push(&mem, TraceKind::ReadImm, Subject::Obj(obj), Some(key));
    mem.get_field_raw(obj, field)
}

/// Walks the forwarding chain to its end and returns it READ-locked,
/// re-checking the slot after acquiring the lock (double-checked locking).
pub(crate) fn find_master_locked(mem: &Mem, obj: ObjRef) -> (ObjRef, HeapId) {
    let mut cur = obj;
    loop {
        while mem.has_fwd(cur) {
            mem.stats.chain_steps.fetch_add(1, Ordering::Relaxed);
            cur = mem.read_fwd(cur);
        }
        let h = mem.heap_of(cur);
        mem.lock(h, LockMode::Read);
        if !mem.has_fwd(cur) {
            return (cur, h);
        }
        // A promotion installed a forwarding reference before we got the
        // lock; release and walk again.
        mem.unlock(h);
    }
}

/// Returns the master copy of `obj` with its heap READ-locked.
pub fn find_master(obj: ObjRef) -> MasterHandle {
    let (mem, _, sched, worker) = task::current();
    every_op_hook(&mem, &sched, worker);
    let (m, held) = find_master_locked(&mem, obj);
    debug_assert!(mem.hier.heap(held).lock.read_held_by_current());
    MasterHandle {
        mem,
        obj: m,
        held: Some(held),
    }
}

/// Reads a mutable field. Fast path: if `obj` has no forwarding reference
/// after an optimistic read, that read came from the master — return it with
/// zero locks. Slow path: read from the master under its heap's READ lock.
pub fn read_mutable(obj: ObjRef, field: u32) -> Value {
    let (mem, t, sched, worker) = task::current();
    every_op_hook(&mem, &sched, worker);
    debug_assert_eq!(
        mem.layout_of(obj).descriptor(field).mutability,
        Mutability::Mutable,
        "readMutable on immutable field {field} of {obj}"
    );
    let key = OpClassKey::new(OpClass::ReadMutable, classify(&mem, t.ul.top().1, obj));
    let _scope = OpScope::enter(OpClass::ReadMutable);
    mem.stats.record_op(key);
    mem.trace
        .push(&mem, TraceKind::ReadMut, Subject::Obj(obj), Some(key));

    let res = mem.get_field_raw(obj, field);
    if !mem.has_fwd(obj) {
        // The slot is write-once per generation: empty now means it was
        // empty at the earlier field read, so obj was the master then.
        return res;
    }
    let (m, held) = find_master_locked(&mem, obj);
    let res = mem.get_field_raw(m, field);
    mem.unlock(held);
    res
}

/// Writes a scalar word. The optimistic store hits `obj`'s copy first; if a
/// forwarding reference is then visible, the master is written too under its
/// heap's READ lock. The master is the authoritative value for reads.
pub fn write_nonptr(obj: ObjRef, field: u32, val: u64) {
    let (mem, t, sched, worker) = task::current();
    every_op_hook(&mem, &sched, worker);
    debug_assert_eq!(
        mem.layout_of(obj).descriptor(field).mutability,
        Mutability::Mutable,
        "writeNonptr on immutable field {field} of {obj}"
    );
    let key = OpClassKey::new(OpClass::WriteScalar, classify(&mem, t.ul.top().1, obj));
    let _scope = OpScope::enter(OpClass::WriteScalar);
    mem.stats.record_op(key);
    mem.trace
        .push(&mem, TraceKind::WriteScalar, Subject::Obj(obj), Some(key));

    mem.set_field_raw(obj, field, Value::Word(val));
    // Orders the optimistic store against the forwarding-slot check; pairs
    // with the fence between fwd-publish and field copying in promotion, so
    // either we observe the forwarding reference or the promoter observes
    // our store.
    fence(Ordering::SeqCst);
    if !mem.has_fwd(obj) {
        return;
    }
    let (m, held) = find_master_locked(&mem, obj);
    mem.set_field_raw(m, field, Value::Word(val));
    mem.unlock(held);
}

/// Writes an object reference, preserving disentanglement.
///
/// Requires the referent's heap to lie on the current task's heap-ancestor
/// chain; anything else is an [`EntanglementError`]. Three routes: a direct
/// store when `obj` is unforwarded in the task's own heap; a direct store
/// into the master when it sits at or below the referent's depth; otherwise
/// a promoting write.
pub fn write_ptr(obj: ObjRef, field: u32, target: ObjRef) -> Result<(), EntanglementError> {
    let (mem, t, sched, worker) = task::current();
    every_op_hook(&mem, &sched, worker);
    debug_assert_eq!(
        mem.layout_of(obj).descriptor(field).kind,
        FieldKind::Reference,
        "writePtr on scalar field {field} of {obj}"
    );
    debug_assert_eq!(
        mem.layout_of(obj).descriptor(field).mutability,
        Mutability::Mutable,
        "writePtr on immutable field {field} of {obj}"
    );
    let cur_heap = t.ul.top().1;
    let target_heap = mem.heap_of(target);
    if !mem.ancestor_or_self(target_heap, cur_heap) {
        return Err(EntanglementError {
            obj,
            field,
            target,
            target_heap,
            task_heap: cur_heap,
        });
    }

    let entry_loc = classify(&mem, cur_heap, obj);
    let scope = OpScope::enter(OpClass::WriteRefNonPromoting);

    // Fast path: unforwarded and in the current task's own heap. That heap
    // is a leaf, so the store can never need a promotion.
    if mem.heap_of(obj) == cur_heap && !mem.has_fwd(obj) {
        let key = OpClassKey::new(OpClass::WriteRefNonPromoting, Locality::Local);
        mem.stats.record_op(key);
        mem.trace
            .push(&mem, TraceKind::WriteRef, Subject::Obj(obj), Some(key));
        mem.set_field_raw(obj, field, Value::Ref(target));
        return Ok(());
    }

    let (master, held) = find_master_locked(&mem, obj);
    if mem.depth(held) >= mem.depth(target_heap) {
        let key = OpClassKey::new(OpClass::WriteRefNonPromoting, entry_loc);
        mem.stats.record_op(key);
        mem.trace
            .push(&mem, TraceKind::WriteRef, Subject::Obj(master), Some(key));
        mem.set_field_raw(master, field, Value::Ref(target));
        mem.unlock(held);
        return Ok(());
    }
    mem.unlock(held);

    scope.reclassify(OpClass::WriteRefPromoting);
    let key = OpClassKey::new(OpClass::WriteRefPromoting, entry_loc);
    mem.stats.record_op(key);
    mem.trace
        .push(&mem, TraceKind::WriteRef, Subject::Obj(master), Some(key));
    write_promote(&mem, master, field, target);
    Ok(())
}

/// Parent chain from `from` (exclusive) up to `to` (inclusive).
fn path_up_exclusive(mem: &Mem, from: HeapId, to: HeapId) -> Vec<HeapId> {
    let mut path = Vec::new();
    let mut cur = from;
    while cur != to {
        cur = mem
            .parent_of(cur)
            .unwrap_or_else(|| panic!("{to:?} not an ancestor of {from:?}"));
        path.push(cur);
    }
    path
}

/// The promoting write: WRITE-locks the path from the referent's heap up to
/// the (re-resolved) master's heap bottom-up, chasing any forwarding the
/// master acquired since it was last observed, then promotes and installs
/// the promoted reference. Each chase iteration strictly decreases the
/// candidate master's depth, so the loop is bounded by the root.
pub(crate) fn write_promote(mem: &Mem, obj: ObjRef, field: u32, target: ObjRef) {
    debug_assert!(
        mem.depth(mem.heap_of(obj)) < mem.depth(mem.heap_of(target)),
        "writePromote with non-promoting depths"
    );
    mem.trace
        .push(mem, TraceKind::PromoteStart, Subject::Obj(target), None);
    mem.stats.promotions.fetch_add(1, Ordering::Relaxed);

    let mut locked: Vec<HeapId> = Vec::new();
    let mut prev_heap = mem.heap_of(target);
    mem.lock(prev_heap, LockMode::Write);
    locked.push(prev_heap);
    let mut obj = obj;
    loop {
        let obj_heap = mem.heap_of(obj);
        for h in path_up_exclusive(mem, prev_heap, obj_heap) {
            mem.lock(h, LockMode::Write);
            locked.push(h);
        }
        if !mem.has_fwd(obj) {
            break;
        }
        prev_heap = obj_heap;
        obj = mem.read_fwd(obj);
    }

    let promoted = promote_into(mem, mem.heap_of(obj), target);
    mem.set_field_raw(obj, field, Value::Ref(promoted));

    for h in locked.iter().rev() {
        mem.unlock(*h);
    }
    mem.trace
        .push(mem, TraceKind::PromoteEnd, Subject::Obj(promoted), None);
}

/// Returns a copy of `obj` residing in `heap` or an ancestor. Objects whose
/// forwarding chains already lead to or above `heap` are reused, never
/// recopied; every newly copied original gets its forwarding slot set to its
/// copy before the copy's reference fields are filled, which keeps cycles
/// and sharing isomorphic. The caller holds the promotion WRITE locks.
pub fn promote(heap: HeapId, obj: ObjRef) -> ObjRef {
    let (mem, _, _, _) = task::current();
    #[cfg(debug_assertions)]
    {
        let oh = mem.heap_of(obj);
        if mem.depth(oh) > mem.depth(heap) {
            debug_assert!(
                mem.hier.heap(oh).lock.write_held_by_current(),
                "promote without WRITE lock on {oh:?}"
            );
            debug_assert!(
                mem.hier.heap(heap).lock.write_held_by_current(),
                "promote without WRITE lock on target {heap:?}"
            );
        }
    }
    promote_into(&mem, heap, obj)
}

pub(crate) fn promote_into(mem: &Mem, heap: HeapId, obj: ObjRef) -> ObjRef {
    let target_depth = mem.depth(heap);
    let mut worklist: Vec<(ObjRef, ObjRef)> = Vec::new();
    let result = promote_step(mem, heap, target_depth, obj, &mut worklist);
    while let Some((src, dst)) = worklist.pop() {
        for f in mem.layout_of(src).ptr_fields() {
            match mem.get_field_raw(src, *f) {
                Value::Null => {}
                Value::Ref(r) => {
                    let nr = promote_step(mem, heap, target_depth, r, &mut worklist);
                    mem.set_field_raw(dst, *f, Value::Ref(nr));
                }
                Value::Word(_) => unreachable!("scalar in reference field"),
            }
        }
    }
    result
}

fn promote_step(
    mem: &Mem,
    heap: HeapId,
    target_depth: u32,
    obj: ObjRef,
    worklist: &mut Vec<(ObjRef, ObjRef)>,
) -> ObjRef {
    let mut cur = obj;
    loop {
        if mem.depth(mem.heap_of(cur)) <= target_depth {
            return cur;
        }
        if mem.has_fwd(cur) {
            cur = mem.read_fwd(cur);
            continue;
        }
        break;
    }

    let layout = mem.layout_of(cur);
    let blank: Vec<Value> = (0..layout.arity() as u32)
        .map(|i| match layout.descriptor(i).kind {
            FieldKind::Scalar => Value::Word(0),
            FieldKind::Reference => Value::Null,
        })
        .collect();
    let copy = mem.fresh_obj(heap, &layout, &blank);
    mem.set_fwd(cur, copy);
    // Publish-before-copy: pairs with the fence in writeNonptr's fast path.
    fence(Ordering::SeqCst);
    for f in layout.nonptr_fields() {
        mem.set_field_raw(copy, *f, mem.get_field_raw(cur, *f));
    }
    mem.stats.objects_promoted.fetch_add(1, Ordering::Relaxed);
    mem.stats
        .bytes_promoted
        .fetch_add(layout.size_bytes() as u64, Ordering::Relaxed);
    worklist.push((cur, copy));
    copy
}
