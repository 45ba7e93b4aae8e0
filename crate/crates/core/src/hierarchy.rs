//! Heap hierarchy: the tree of heaps mirroring the task tree.
//!
//! Heaps are lists of chunks. `joinHeap` moves a completed child's chunks to
//! its parent by repointing each chunk's owner word — object bytes never
//! move and ObjRefs stay valid. Each heap carries a readers-writer lock; the
//! WRITE side serializes promotions into the heap, the READ side pins master
//! copies for mutable access. During a collection a heap is paired with a
//! same-depth to-space; `switchSemispaces` adopts the to-space's chunks and
//! retires the old ones.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::mem::Mem;
use crate::rwlock::{HeapLock, LockMode};
use crate::store::ChunkId;
use crate::trace::{Subject, TraceKind};
use crate::util::AppendVec;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct HeapId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HeapRole {
    FromSpace,
    ToSpace,
}

const PAIR_NONE: u64 = u64::MAX;

pub(crate) struct HeapAlloc {
    pub(crate) chunks: Vec<ChunkId>,
    pub(crate) next_chunk_bytes: usize,
}

pub(crate) struct HeapRecord {
    pub(crate) id: HeapId,
    pub(crate) depth: u32,
    pub(crate) parent: Option<HeapId>,
    pub(crate) global: bool,
    pub(crate) lock: HeapLock,
    pub(crate) alloc: Mutex<HeapAlloc>,
    pub(crate) children: Mutex<Vec<HeapId>>,
    pub(crate) occupancy: AtomicUsize,
    retired: AtomicBool,
    role: AtomicU8,
    paired: AtomicU64,
    /// Occupancy watermark for the automatic leaf-collection trigger.
    pub(crate) gc_watermark: AtomicUsize,
}

impl HeapRecord {
    pub(crate) fn is_retired(&self) -> bool {
        self.retired.load(Ordering::Acquire)
    }

    pub(crate) fn retire(&self) {
        self.retired.store(true, Ordering::Release);
    }

    pub(crate) fn role(&self) -> HeapRole {
        if self.role.load(Ordering::Acquire) == 0 {
            HeapRole::FromSpace
        } else {
            HeapRole::ToSpace
        }
    }

    pub(crate) fn set_role(&self, role: HeapRole) {
        self.role
            .store(if role == HeapRole::FromSpace { 0 } else { 1 }, Ordering::Release);
    }

    pub(crate) fn paired_space(&self) -> Option<HeapId> {
        let bits = self.paired.load(Ordering::Acquire);
        if bits == PAIR_NONE {
            None
        } else {
            Some(HeapId(bits as u32))
        }
    }

    pub(crate) fn set_paired(&self, pair: Option<HeapId>) {
        self.paired.store(
            pair.map(|h| h.0 as u64).unwrap_or(PAIR_NONE),
            Ordering::Release,
        );
    }
}

pub(crate) struct Hierarchy {
    heaps: AppendVec<Arc<HeapRecord>>,
    /// Guards structural mutation (children lists, retirement, pairing).
    /// Critical sections are short; queries never take it.
    pub(crate) registry: Mutex<()>,
}

impl Hierarchy {
    pub(crate) fn new() -> Hierarchy {
        Hierarchy {
            heaps: AppendVec::new(),
            registry: Mutex::new(()),
        }
    }

    pub(crate) fn heap(&self, id: HeapId) -> &Arc<HeapRecord> {
        let rec = self
            .heaps
            .get(id.0 as usize)
            .unwrap_or_else(|| panic!("unknown heap {id:?}"));
        debug_assert_eq!(rec.id, id);
        rec
    }

    pub(crate) fn new_heap(
        &self,
        parent: Option<HeapId>,
        depth: u32,
        role: HeapRole,
        global: bool,
        min_chunk: usize,
        gc_watermark: usize,
        register_child: bool,
    ) -> HeapId {
        let idx = self.heaps.push_with(|idx| {
            Arc::new(HeapRecord {
                id: HeapId(idx as u32),
                depth,
                parent,
                global,
                lock: HeapLock::new(),
                alloc: Mutex::new(HeapAlloc {
                    chunks: Vec::new(),
                    next_chunk_bytes: min_chunk,
                }),
                children: Mutex::new(Vec::new()),
                occupancy: AtomicUsize::new(0),
                retired: AtomicBool::new(false),
                role: AtomicU8::new(if role == HeapRole::FromSpace { 0 } else { 1 }),
                paired: AtomicU64::new(PAIR_NONE),
                gc_watermark: AtomicUsize::new(gc_watermark),
            })
        });
        let id = HeapId(idx as u32);
        if register_child {
            if let Some(p) = parent {
                self.heap(p).children.lock().unwrap().push(id);
            }
        }
        id
    }
}

impl Mem {
    /// Creates a hierarchy root heap (depth 0, no parent).
    pub fn new_root_heap(&self) -> HeapId {
        let _g = self.hier.registry.lock().unwrap();
        self.hier.new_heap(
            None,
            0,
            HeapRole::FromSpace,
            false,
            self.cfg.min_chunk_bytes,
            self.cfg.gc_threshold,
            false,
        )
    }

    /// Creates a fresh empty child heap at depth(parent) + 1.
    pub fn new_child_heap(&self, parent: HeapId) -> HeapId {
        let p = self.hier.heap(parent);
        assert!(!p.is_retired(), "newChildHeap under retired heap {parent:?}");
        assert_eq!(
            p.role(),
            HeapRole::FromSpace,
            "newChildHeap under a to-space"
        );
        let _g = self.hier.registry.lock().unwrap();
        self.hier.new_heap(
            Some(parent),
            p.depth + 1,
            HeapRole::FromSpace,
            false,
            self.cfg.min_chunk_bytes,
            self.cfg.gc_threshold,
            true,
        )
    }

    /// Merges a completed child heap into its parent. Every chunk of the
    /// child is repointed to the parent; no object bytes move, so all
    /// ObjRefs and field values are unchanged. The child is retired.
    pub fn join_heap(&self, parent: HeapId, child: HeapId) {
        let p = self.hier.heap(parent);
        let c = self.hier.heap(child);
        assert_eq!(c.parent, Some(parent), "joinHeap of a non-child heap");
        assert!(!c.is_retired(), "joinHeap of a retired heap");
        assert!(
            c.children.lock().unwrap().iter().all(|h| self.hier.heap(*h).is_retired()),
            "joinHeap of a heap with live children"
        );
        debug_assert!(c.lock.is_unheld(), "joinHeap while child lock held");

        let _g = self.hier.registry.lock().unwrap();
        let moved: Vec<ChunkId> = {
            let mut ca = c.alloc.lock().unwrap();
            ca.chunks.drain(..).collect()
        };
        {
            let mut pa = p.alloc.lock().unwrap();
            for id in &moved {
                self.store.chunk(*id).set_owner(parent);
                pa.chunks.push(*id);
            }
        }
        let bytes = c.occupancy.swap(0, Ordering::AcqRel);
        p.occupancy.fetch_add(bytes, Ordering::AcqRel);
        c.retire();
        p.children.lock().unwrap().retain(|h| *h != child);
        self.trace.push(self, TraceKind::Join, Subject::Heap(child), None);
    }

    pub fn depth(&self, heap: HeapId) -> u32 {
        self.hier.heap(heap).depth
    }

    pub fn parent_of(&self, heap: HeapId) -> Option<HeapId> {
        self.hier.heap(heap).parent
    }

    /// Live (unretired) children of a heap.
    pub fn children_of(&self, heap: HeapId) -> Vec<HeapId> {
        self.hier
            .heap(heap)
            .children
            .lock()
            .unwrap()
            .iter()
            .copied()
            .filter(|h| !self.hier.heap(*h).is_retired())
            .collect()
    }

    /// True iff `a` is on `b`'s parent chain or `a == b`.
    pub fn ancestor_or_self(&self, a: HeapId, b: HeapId) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.hier.heap(cur).parent {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    pub fn is_retired_heap(&self, heap: HeapId) -> bool {
        self.hier.heap(heap).is_retired()
    }

    pub fn is_global_heap(&self, heap: HeapId) -> bool {
        self.hier.heap(heap).global
    }

    pub fn occupancy(&self, heap: HeapId) -> usize {
        self.hier.heap(heap).occupancy.load(Ordering::Acquire)
    }

    pub fn chunk_count(&self, heap: HeapId) -> usize {
        self.hier.heap(heap).alloc.lock().unwrap().chunks.len()
    }

    /// Acquires a heap's readers-writer lock. Lock acquisitions are counted
    /// per operation class, and WRITE acquisitions inside a memory operation
    /// are checked for strictly decreasing depth.
    pub fn lock(&self, heap: HeapId, mode: LockMode) {
        let rec = self.hier.heap(heap);
        self.stats
            .total_lock_acqs
            .fetch_add(1, Ordering::Relaxed);
        if let Some(op) = crate::stats::current_op() {
            self.stats.lock_acqs[op as usize].fetch_add(1, Ordering::Relaxed);
            if mode == LockMode::Write {
                WRITE_DEPTHS.with(|s| {
                    let mut s = s.borrow_mut();
                    if let Some(&(_, last)) = s.last() {
                        if rec.depth >= last {
                            self.stats
                                .lock_order_violations
                                .fetch_add(1, Ordering::Relaxed);
                            debug_assert!(
                                false,
                                "WRITE lock depth {} not below previous {} within one memop",
                                rec.depth, last
                            );
                        }
                    }
                    s.push((heap, rec.depth));
                });
            }
        }
        self.trace.push(self, TraceKind::Lock, Subject::Heap(heap), None);
        rec.lock.lock(mode);
    }

    /// Releases the calling context's hold on a heap's lock.
    pub fn unlock(&self, heap: HeapId) {
        let rec = self.hier.heap(heap);
        let mode = rec.lock.unlock();
        if mode == LockMode::Write && crate::stats::current_op().is_some() {
            WRITE_DEPTHS.with(|s| {
                let mut s = s.borrow_mut();
                if let Some(pos) = s.iter().rposition(|(h, _)| *h == heap) {
                    s.remove(pos);
                }
            });
        }
        self.trace
            .push(self, TraceKind::Unlock, Subject::Heap(heap), None);
    }

    /// The paired to-space; only valid during an active collection.
    pub fn to_space_of(&self, heap: HeapId) -> HeapId {
        self.hier
            .heap(heap)
            .paired_space()
            .unwrap_or_else(|| panic!("toSpaceOf({heap:?}) outside a collection"))
    }

    pub fn is_to_space(&self, heap: HeapId) -> bool {
        self.hier.heap(heap).role() == HeapRole::ToSpace
    }

    /// Adopts the paired to-space's chunks as the heap's new contents and
    /// retires the old from-space chunks. Collector-only; callers hold the
    /// quiescence obligation of `collect`.
    pub fn switch_semispaces(&self, heap: HeapId) {
        let h = self.hier.heap(heap);
        let to_id = h
            .paired_space()
            .unwrap_or_else(|| panic!("switchSemispaces({heap:?}) outside a collection"));
        let to = self.hier.heap(to_id);

        let _g = self.hier.registry.lock().unwrap();
        let old_bytes = h.occupancy.load(Ordering::Acquire);
        let new_bytes = to.occupancy.load(Ordering::Acquire);
        {
            let mut ha = h.alloc.lock().unwrap();
            let mut ta = to.alloc.lock().unwrap();
            for id in ha.chunks.drain(..) {
                self.store.chunk(id).retire();
            }
            for id in ta.chunks.drain(..) {
                self.store.chunk(id).set_owner(heap);
                ha.chunks.push(id);
            }
            ha.next_chunk_bytes = ta.next_chunk_bytes;
        }
        h.occupancy.store(new_bytes, Ordering::Release);
        to.occupancy.store(0, Ordering::Release);
        self.stats
            .occupancy
            .fetch_sub(old_bytes as u64, Ordering::Relaxed);
        h.set_paired(None);
        h.set_role(HeapRole::FromSpace);
        to.set_paired(None);
        to.retire();
    }
}

thread_local! {
    /// WRITE-lock depths held by the current memop, used for the
    /// decreasing-depth lock-order ledger.
    static WRITE_DEPTHS: std::cell::RefCell<Vec<(HeapId, u32)>> =
        const { std::cell::RefCell::new(Vec::new()) };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::{Mem, MemConfig};
    use crate::store::{FieldDescriptor, ObjectLayout, Value};
    use std::collections::HashSet;

    fn mem() -> Arc<Mem> {
        Mem::new(MemConfig::default())
    }

    #[test]
    fn child_depth_increments() {
        let m = mem();
        let root = m.new_root_heap();
        assert_eq!(m.depth(root), 0);
        assert_eq!(m.depth(m.new_child_heap(root)), 1);
    }

    #[test]
    fn chain_of_children_reaches_depth_k() {
        let m = mem();
        let mut h = m.new_root_heap();
        for k in 1..=16 {
            h = m.new_child_heap(h);
            assert_eq!(m.depth(h), k);
        }
        // Parent links walk back to the root in exactly depth(h) steps.
        let mut steps = 0;
        let mut cur = h;
        while let Some(p) = m.parent_of(cur) {
            cur = p;
            steps += 1;
        }
        assert_eq!(steps, 16);
    }

    #[test]
    fn siblings_are_not_ancestors() {
        let m = mem();
        let root = m.new_root_heap();
        let a = m.new_child_heap(root);
        let b = m.new_child_heap(root);
        assert!(!m.ancestor_or_self(a, b));
        assert!(!m.ancestor_or_self(b, a));
        assert!(m.ancestor_or_self(root, a));
        assert!(m.ancestor_or_self(root, b));
        assert!(!m.ancestor_or_self(a, root));
    }

    #[test]
    fn join_moves_ownership_and_occupancy() {
        let m = mem();
        let root = m.new_root_heap();
        let child = m.new_child_heap(root);
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        let r = m.fresh_obj(child, &layout, &[Value::Word(3)]);
        let before = m.occupancy(child);
        assert!(before > 0);
        m.join_heap(root, child);
        assert_eq!(m.heap_of(r), root);
        assert_eq!(m.get_field_raw(r, 0), Value::Word(3));
        assert_eq!(m.occupancy(root), before);
        assert!(m.is_retired_heap(child));
    }

    #[test]
    fn join_moves_every_chunk() {
        // Counting oracle over the chunk table.
        let m = Mem::new(MemConfig {
            min_chunk_bytes: 64,
            max_chunk_bytes: 64,
            ..MemConfig::default()
        });
        let root = m.new_root_heap();
        let child = m.new_child_heap(root);
        let layout = ObjectLayout::scalar_array(4, crate::store::Mutability::Mutable);
        // 64-byte chunks hold one 48-byte object each.
        for i in 0..100u64 {
            m.fresh_obj(child, &layout, &[Value::Word(i); 4]);
        }
        let child_chunks = m.chunk_count(child);
        assert_eq!(child_chunks, 100);
        let parent_before = m.chunk_count(root);
        m.join_heap(root, child);
        assert_eq!(m.chunk_count(root), parent_before + 100);
        assert_eq!(m.chunk_count(child), 0);
    }

    #[test]
    #[should_panic(expected = "non-child")]
    fn join_rejects_non_child() {
        let m = mem();
        let root = m.new_root_heap();
        let a = m.new_child_heap(root);
        let grandchild = m.new_child_heap(a);
        m.join_heap(root, grandchild);
    }

    #[test]
    #[should_panic(expected = "live children")]
    fn join_rejects_child_with_live_children() {
        let m = mem();
        let root = m.new_root_heap();
        let a = m.new_child_heap(root);
        let _b = m.new_child_heap(a);
        m.join_heap(root, a);
    }

    #[test]
    fn ancestor_or_self_matches_closure_oracle() {
        // Random trees; oracle precomputes the transitive closure by walking
        // parent edges.
        let m = mem();
        let root = m.new_root_heap();
        let mut heaps = vec![root];
        let mut parent_idx = vec![usize::MAX];
        let mut state = 1234u64;
        for _ in 0..60 {
            state = crate::util::splitmix64(state);
            let p = (state % heaps.len() as u64) as usize;
            heaps.push(m.new_child_heap(heaps[p]));
            parent_idx.push(p);
        }
        let mut closure = vec![HashSet::new(); heaps.len()];
        for i in 0..heaps.len() {
            let mut cur = i;
            loop {
                closure[i].insert(cur);
                if parent_idx[cur] == usize::MAX {
                    break;
                }
                cur = parent_idx[cur];
            }
        }
        for a in 0..heaps.len() {
            for b in 0..heaps.len() {
                assert_eq!(
                    m.ancestor_or_self(heaps[a], heaps[b]),
                    closure[b].contains(&a),
                    "ancestorOrSelf({a},{b}) disagrees with closure oracle"
                );
            }
        }
    }

    #[test]
    fn identity_stable_across_join() {
        let m = mem();
        let root = m.new_root_heap();
        let child = m.new_child_heap(root);
        let layout = ObjectLayout::new(vec![
            FieldDescriptor::scalar_mut(),
            FieldDescriptor::ref_mut(),
        ]);
        let a = m.fresh_obj(child, &layout, &[Value::Word(11), Value::Null]);
        let b = m.fresh_obj(child, &layout, &[Value::Word(22), Value::Ref(a)]);
        let (a_bits, b_bits) = (a.to_bits(), b.to_bits());
        m.join_heap(root, child);
        assert_eq!(a.to_bits(), a_bits);
        assert_eq!(b.to_bits(), b_bits);
        assert_eq!(m.get_field_raw(a, 0), Value::Word(11));
        assert_eq!(m.get_field_raw(b, 0), Value::Word(22));
        assert_eq!(m.get_field_raw(b, 1), Value::Ref(a));
    }

    #[test]
    fn locks_route_through_mem() {
        let m = mem();
        let root = m.new_root_heap();
        m.lock(root, LockMode::Read);
        m.unlock(root);
        m.lock(root, LockMode::Write);
        m.unlock(root);
        assert_eq!(m.total_lock_acquisitions(), 2);
    }
}
