//! Object store: chunks, object records, raw field access, forwarding slots,
//! and constant-time owner-heap lookup.
//!
//! Objects are flat records of 64-bit fields described by an [`ObjectLayout`].
//! Every record carries one out-of-band forwarding slot that links copies made
//! by promotion or collection into a chain; the slot never overlaps field
//! data. An [`ObjRef`] is a (chunk, slot) pair and is stable across heap
//! joins: joining repoints the chunk's owner, the record itself never moves.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use crate::hierarchy::HeapId;
use crate::mem::Mem;
use crate::stats::OpClass;
use crate::util::AppendVec;

/// Logical size of the per-record header (forwarding slot + layout word).
pub const HEADER_BYTES: usize = 16;
/// Logical size of one field.
pub const FIELD_BYTES: usize = 8;

/// Bit pattern for "no reference" in reference fields and forwarding slots.
const NULL_BITS: u64 = u64::MAX;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, serde::Serialize)]
pub struct ChunkId(pub u32);

/// Stable opaque reference to an allocated object.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, serde::Serialize)]
pub struct ObjRef {
    pub chunk: ChunkId,
    pub slot: u32,
}

impl fmt::Display for ObjRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}.{}", self.chunk.0, self.slot)
    }
}

impl ObjRef {
    pub(crate) fn to_bits(self) -> u64 {
        ((self.chunk.0 as u64) << 32) | self.slot as u64
    }

    pub(crate) fn from_bits(bits: u64) -> ObjRef {
        ObjRef {
            chunk: ChunkId((bits >> 32) as u32),
            slot: bits as u32,
        }
    }
}

/// A field value: a 64-bit scalar word, an object reference, or Null.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Value {
    Word(u64),
    Ref(ObjRef),
    Null,
}

impl Value {
    pub fn as_word(self) -> u64 {
        match self {
            Value::Word(w) => w,
            v => panic!("expected scalar word, got {v:?}"),
        }
    }

    pub fn as_obj(self) -> ObjRef {
        match self {
            Value::Ref(r) => r,
            v => panic!("expected object reference, got {v:?}"),
        }
    }

    pub fn is_null(self) -> bool {
        matches!(self, Value::Null)
    }

    pub(crate) fn encode_ref(self) -> u64 {
        match self {
            Value::Ref(r) => r.to_bits(),
            Value::Null => NULL_BITS,
            Value::Word(_) => panic!("scalar word stored into reference field"),
        }
    }

    pub(crate) fn decode_ref(bits: u64) -> Value {
        if bits == NULL_BITS {
            Value::Null
        } else {
            Value::Ref(ObjRef::from_bits(bits))
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FieldKind {
    Scalar,
    Reference,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mutability {
    Immutable,
    Mutable,
}

/// Field classification, fixed at allocation for the object's lifetime.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FieldDescriptor {
    pub kind: FieldKind,
    pub mutability: Mutability,
}

impl FieldDescriptor {
    pub const fn new(kind: FieldKind, mutability: Mutability) -> Self {
        FieldDescriptor { kind, mutability }
    }

    pub const fn scalar_mut() -> Self {
        Self::new(FieldKind::Scalar, Mutability::Mutable)
    }

    pub const fn scalar_imm() -> Self {
        Self::new(FieldKind::Scalar, Mutability::Immutable)
    }

    pub const fn ref_mut() -> Self {
        Self::new(FieldKind::Reference, Mutability::Mutable)
    }

    pub const fn ref_imm() -> Self {
        Self::new(FieldKind::Reference, Mutability::Immutable)
    }
}

/// Ordered list of field descriptors; arity is fixed for the object's
/// lifetime. Pointer/non-pointer index lists are precomputed.
pub struct ObjectLayout {
    descriptors: Vec<FieldDescriptor>,
    ptr_fields: Vec<u32>,
    nonptr_fields: Vec<u32>,
}

impl ObjectLayout {
    pub fn new(descriptors: Vec<FieldDescriptor>) -> Arc<ObjectLayout> {
        let ptr_fields = descriptors
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == FieldKind::Reference)
            .map(|(i, _)| i as u32)
            .collect();
        let nonptr_fields = descriptors
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == FieldKind::Scalar)
            .map(|(i, _)| i as u32)
            .collect();
        Arc::new(ObjectLayout {
            descriptors,
            ptr_fields,
            nonptr_fields,
        })
    }

    /// N homogeneous scalar fields.
    pub fn scalar_array(len: usize, mutability: Mutability) -> Arc<ObjectLayout> {
        Self::new(vec![
            FieldDescriptor::new(FieldKind::Scalar, mutability);
            len
        ])
    }

    /// N homogeneous reference fields.
    pub fn ref_array(len: usize, mutability: Mutability) -> Arc<ObjectLayout> {
        Self::new(vec![
            FieldDescriptor::new(FieldKind::Reference, mutability);
            len
        ])
    }

    pub fn arity(&self) -> usize {
        self.descriptors.len()
    }

    pub fn descriptor(&self, field: u32) -> FieldDescriptor {
        self.descriptors[field as usize]
    }

    /// Indices of reference-kind fields, ascending.
    pub fn ptr_fields(&self) -> &[u32] {
        &self.ptr_fields
    }

    /// Indices of scalar-kind fields, ascending.
    pub fn nonptr_fields(&self) -> &[u32] {
        &self.nonptr_fields
    }

    /// Logical byte size of an object with this layout (header + fields).
    pub fn size_bytes(&self) -> usize {
        HEADER_BYTES + FIELD_BYTES * self.arity()
    }
}

/// One allocated object: layout, field words, and the forwarding slot.
pub(crate) struct ObjectRecord {
    layout: Arc<ObjectLayout>,
    fields: Box<[AtomicU64]>,
    fwd: AtomicU64,
}

impl ObjectRecord {
    fn new(layout: Arc<ObjectLayout>, init: &[Value]) -> ObjectRecord {
        assert_eq!(
            init.len(),
            layout.arity(),
            "init/layout mismatch: {} values for arity {}",
            init.len(),
            layout.arity()
        );
        let fields = init
            .iter()
            .enumerate()
            .map(|(i, v)| AtomicU64::new(encode_field(layout.descriptor(i as u32).kind, *v)))
            .collect();
        ObjectRecord {
            layout,
            fields,
            fwd: AtomicU64::new(NULL_BITS),
        }
    }

    pub(crate) fn layout(&self) -> &Arc<ObjectLayout> {
        &self.layout
    }

    pub(crate) fn load_field(&self, field: u32) -> Value {
        let desc = self.layout.descriptor(field);
        let bits = self.fields[field as usize].load(Ordering::Acquire);
        match desc.kind {
            FieldKind::Scalar => Value::Word(bits),
            FieldKind::Reference => Value::decode_ref(bits),
        }
    }

    pub(crate) fn store_field(&self, field: u32, value: Value) {
        let desc = self.layout.descriptor(field);
        self.fields[field as usize].store(encode_field(desc.kind, value), Ordering::Release);
    }

    pub(crate) fn has_fwd(&self) -> bool {
        self.fwd.load(Ordering::Acquire) != NULL_BITS
    }

    pub(crate) fn read_fwd(&self) -> Option<ObjRef> {
        let bits = self.fwd.load(Ordering::Acquire);
        if bits == NULL_BITS {
            None
        } else {
            Some(ObjRef::from_bits(bits))
        }
    }

    /// Publishes the forwarding target. Write-once per generation: the slot
    /// must be empty, enforced atomically.
    pub(crate) fn set_fwd(&self, target: ObjRef) {
        if self
            .fwd
            .compare_exchange(NULL_BITS, target.to_bits(), Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            panic!("forwarding slot already set (write-once per generation)");
        }
    }
}

fn encode_field(kind: FieldKind, value: Value) -> u64 {
    match (kind, value) {
        (FieldKind::Scalar, Value::Word(w)) => w,
        (FieldKind::Scalar, v) => panic!("reference value {v:?} stored into scalar field"),
        (FieldKind::Reference, v) => v.encode_ref(),
    }
}

/// A contiguous allocation region owned by exactly one heap at a time.
pub(crate) struct Chunk {
    pub(crate) id: ChunkId,
    owner: AtomicU32,
    retired: AtomicBool,
    capacity_bytes: usize,
    used_bytes: AtomicUsize,
    used_slots: AtomicU32,
    slots: Box<[OnceLock<ObjectRecord>]>,
}

impl Chunk {
    pub(crate) fn owner(&self) -> HeapId {
        HeapId(self.owner.load(Ordering::Acquire))
    }

    pub(crate) fn set_owner(&self, heap: HeapId) {
        self.owner.store(heap.0, Ordering::Release);
    }

    pub(crate) fn is_retired(&self) -> bool {
        self.retired.load(Ordering::Acquire)
    }

    pub(crate) fn retire(&self) {
        self.retired.store(true, Ordering::Release);
    }

    pub(crate) fn used_slots(&self) -> u32 {
        self.used_slots.load(Ordering::Acquire)
    }

    pub(crate) fn record(&self, slot: u32) -> Option<&ObjectRecord> {
        self.slots.get(slot as usize)?.get()
    }

    /// Places a record if it fits, handing it back otherwise. Single-owner:
    /// callers serialize per heap.
    fn try_place(&self, record: ObjectRecord, size: usize) -> Result<u32, ObjectRecord> {
        let used = self.used_bytes.load(Ordering::Relaxed);
        let slot = self.used_slots.load(Ordering::Relaxed);
        if used + size > self.capacity_bytes || (slot as usize) >= self.slots.len() {
            return Err(record);
        }
        self.slots[slot as usize]
            .set(record)
            .unwrap_or_else(|_| panic!("chunk slot reused"));
        self.used_bytes.store(used + size, Ordering::Relaxed);
        // Publishes the record: readers acquire used_slots or reach the slot
        // through an ObjRef handed out after this store.
        self.used_slots.store(slot + 1, Ordering::Release);
        Ok(slot)
    }
}

/// The chunk table. Chunk ids are global and never reused.
pub(crate) struct Store {
    chunks: AppendVec<Arc<Chunk>>,
}

impl Store {
    pub(crate) fn new() -> Store {
        Store {
            chunks: AppendVec::new(),
        }
    }

    pub(crate) fn new_chunk(
        &self,
        owner: HeapId,
        capacity_bytes: usize,
        max_slots: usize,
    ) -> ChunkId {
        let slots = (capacity_bytes / HEADER_BYTES).min(max_slots);
        let idx = self.chunks.push_with(|idx| {
            Arc::new(Chunk {
                id: ChunkId(idx as u32),
                owner: AtomicU32::new(owner.0),
                retired: AtomicBool::new(false),
                capacity_bytes,
                used_bytes: AtomicUsize::new(0),
                used_slots: AtomicU32::new(0),
                slots: (0..slots.max(1)).map(|_| OnceLock::new()).collect(),
            })
        });
        ChunkId(idx as u32)
    }

    pub(crate) fn chunk(&self, id: ChunkId) -> &Arc<Chunk> {
        self.chunks
            .get(id.0 as usize)
            .unwrap_or_else(|| panic!("unknown chunk {id:?}"))
    }

    pub(crate) fn record(&self, obj: ObjRef) -> &ObjectRecord {
        let chunk = self.chunk(obj.chunk);
        debug_assert!(
            !chunk.is_retired(),
            "dangling ObjRef {obj}: chunk retired by collection"
        );
        chunk
            .record(obj.slot)
            .unwrap_or_else(|| panic!("unknown object {obj}"))
    }

    pub(crate) fn iter_chunks(&self) -> impl Iterator<Item = &Arc<Chunk>> {
        self.chunks.iter()
    }
}

impl Mem {
    /// Allocates a new object in `heap`. The forwarding slot starts empty and
    /// the heap's occupancy grows by the record size.
    pub fn fresh_obj(&self, heap: HeapId, layout: &Arc<ObjectLayout>, init: &[Value]) -> ObjRef {
        let rec = self.hier.heap(heap);
        assert!(!rec.is_retired(), "freshObj into retired heap {heap:?}");
        let size = layout.size_bytes();
        let mut record = ObjectRecord::new(layout.clone(), init);

        let mut alloc = rec.alloc.lock().unwrap();
        let obj = loop {
            if let Some(&tail) = alloc.chunks.last() {
                let chunk = self.store.chunk(tail);
                if !chunk.is_retired() {
                    match chunk.try_place(record, size) {
                        Ok(slot) => break ObjRef { chunk: tail, slot },
                        Err(r) => record = r,
                    }
                }
            }
            // Start a new chunk: doubling policy up to the cap, oversized
            // objects get a dedicated exact-size chunk.
            let (cap, max_slots) = if size > self.cfg.max_chunk_bytes {
                (size, 1)
            } else {
                let c = alloc.next_chunk_bytes;
                alloc.next_chunk_bytes = (c * 2).min(self.cfg.max_chunk_bytes);
                (c.max(size), usize::MAX)
            };
            let id = self.store.new_chunk(heap, cap, max_slots);
            alloc.chunks.push(id);
        };
        drop(alloc);

        rec.occupancy.fetch_add(size, Ordering::Relaxed);
        let now = self.stats.occupancy.fetch_add(size as u64, Ordering::Relaxed) + size as u64;
        self.stats.max_occupancy.fetch_max(now, Ordering::Relaxed);
        self.stats.allocs.fetch_add(1, Ordering::Relaxed);
        self.stats
            .alloc_bytes
            .fetch_add(size as u64, Ordering::Relaxed);
        obj
    }

    /// Raw field read; bypasses forwarding and mutability.
    pub fn get_field_raw(&self, obj: ObjRef, field: u32) -> Value {
        self.store.record(obj).load_field(field)
    }

    /// Raw field write; bypasses mutability and disentanglement checks.
    /// Used by promotion/collection internals and negative-control tests.
    pub fn set_field_raw(&self, obj: ObjRef, field: u32, value: Value) {
        self.store.record(obj).store_field(field, value);
    }

    pub fn layout_of(&self, obj: ObjRef) -> Arc<ObjectLayout> {
        self.store.record(obj).layout().clone()
    }

    /// Indices of reference-kind fields of `obj`, ascending.
    pub fn ptr_fields(&self, obj: ObjRef) -> Vec<u32> {
        self.store.record(obj).layout().ptr_fields().to_vec()
    }

    /// Indices of scalar-kind fields of `obj`, ascending.
    pub fn nonptr_fields(&self, obj: ObjRef) -> Vec<u32> {
        self.store.record(obj).layout().nonptr_fields().to_vec()
    }

    pub fn object_size(&self, obj: ObjRef) -> usize {
        self.store.record(obj).layout().size_bytes()
    }

    pub fn has_fwd(&self, obj: ObjRef) -> bool {
        self.store.record(obj).has_fwd()
    }

    /// Reads the forwarding target; the slot must be set.
    pub fn read_fwd(&self, obj: ObjRef) -> ObjRef {
        self.store
            .record(obj)
            .read_fwd()
            .unwrap_or_else(|| panic!("readFwd on empty forwarding slot of {obj}"))
    }

    /// Sets the forwarding slot (write-once). Outside a collection the caller
    /// must hold the WRITE lock of the owner heap; checked in debug builds.
    pub fn set_fwd(&self, obj: ObjRef, target: ObjRef) {
        #[cfg(debug_assertions)]
        {
            let h = self.heap_of(obj);
            let rec = self.hier.heap(h);
            debug_assert!(
                rec.lock.write_held_by_current() || rec.paired_space().is_some(),
                "setFwd without WRITE lock on {h:?} outside a collection"
            );
        }
        self.store.record(obj).set_fwd(target);
    }

    /// Current owner heap of the object's chunk; constant-time.
    pub fn heap_of(&self, obj: ObjRef) -> HeapId {
        let chunk = self.store.chunk(obj.chunk);
        debug_assert!(
            !chunk.is_retired(),
            "heapOf on dangling ObjRef {obj} (from-space discarded)"
        );
        chunk.owner()
    }

    /// Forwarding-chain hops taken by master lookups so far.
    pub fn chain_steps(&self) -> u64 {
        self.stats.chain_steps.load(Ordering::Relaxed)
    }

    /// Total heap-lock acquisitions so far, across all operation classes.
    pub fn total_lock_acquisitions(&self) -> u64 {
        self.stats.total_lock_acqs.load(Ordering::Relaxed)
    }

    /// Lock acquisitions attributed to one operation class.
    pub fn lock_acquisitions(&self, op: OpClass) -> u64 {
        self.stats.lock_acqs[op as usize].load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::{Mem, MemConfig};
    use std::collections::HashSet;

    fn mem() -> Arc<Mem> {
        Mem::new(MemConfig::default())
    }

    #[test]
    fn fresh_obj_read_back() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        let r = m.fresh_obj(root, &layout, &[Value::Word(42)]);
        assert_eq!(m.heap_of(r), root);
        assert_eq!(m.get_field_raw(r, 0), Value::Word(42));
        assert!(!m.has_fwd(r));
    }

    #[test]
    fn fresh_obj_empty_layout() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![]);
        let r = m.fresh_obj(root, &layout, &[]);
        assert_eq!(m.layout_of(r).arity(), 0);
        assert_eq!(m.ptr_fields(r), Vec::<u32>::new());
        assert_eq!(m.nonptr_fields(r), Vec::<u32>::new());
    }

    #[test]
    fn fresh_obj_distinct_refs() {
        // Oracle: insert into a set, assert cardinality.
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        let mut seen = HashSet::new();
        for i in 0..10_000u64 {
            let r = m.fresh_obj(root, &layout, &[Value::Word(i)]);
            assert!(seen.insert(r), "duplicate ObjRef {r}");
        }
        assert_eq!(seen.len(), 10_000);
    }

    #[test]
    #[should_panic(expected = "init/layout mismatch")]
    fn fresh_obj_arity_mismatch() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        m.fresh_obj(root, &layout, &[]);
    }

    #[test]
    #[should_panic(expected = "unknown heap")]
    fn fresh_obj_unknown_heap() {
        let m = mem();
        let layout = ObjectLayout::new(vec![]);
        m.fresh_obj(HeapId(9999), &layout, &[]);
    }

    #[test]
    fn set_get_raw() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        let r = m.fresh_obj(root, &layout, &[Value::Word(0)]);
        m.set_field_raw(r, 0, Value::Word(7));
        assert_eq!(m.get_field_raw(r, 0), Value::Word(7));
    }

    #[test]
    fn interleaved_set_get_matches_array_model() {
        let m = mem();
        let root = m.new_root_heap();
        let n = 16;
        let layout = ObjectLayout::scalar_array(n, Mutability::Mutable);
        let init: Vec<Value> = (0..n as u64).map(Value::Word).collect();
        let r = m.fresh_obj(root, &layout, &init);
        let mut model: Vec<u64> = (0..n as u64).collect();
        let mut state = 99u64;
        for _ in 0..2_000 {
            state = crate::util::splitmix64(state);
            let i = (state % n as u64) as u32;
            if state & 1 == 0 {
                let v = state >> 8;
                m.set_field_raw(r, i, Value::Word(v));
                model[i as usize] = v;
            } else {
                assert_eq!(m.get_field_raw(r, i), Value::Word(model[i as usize]));
            }
        }
    }

    #[test]
    #[should_panic]
    fn get_out_of_range() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        let r = m.fresh_obj(root, &layout, &[Value::Word(0)]);
        m.get_field_raw(r, 1);
    }

    #[test]
    #[should_panic(expected = "scalar field")]
    fn kind_safety_on_set() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        let r = m.fresh_obj(root, &layout, &[Value::Word(0)]);
        m.set_field_raw(r, 0, Value::Ref(r));
    }

    #[test]
    fn ptr_field_partition() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![
            FieldDescriptor::scalar_mut(),
            FieldDescriptor::ref_mut(),
            FieldDescriptor::scalar_imm(),
        ]);
        let r = m.fresh_obj(root, &layout, &[Value::Word(0), Value::Null, Value::Word(1)]);
        assert_eq!(m.ptr_fields(r), vec![1]);
        assert_eq!(m.nonptr_fields(r), vec![0, 2]);
    }

    #[test]
    fn fwd_slot_lifecycle() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![]);
        let a = m.fresh_obj(root, &layout, &[]);
        let b = m.fresh_obj(root, &layout, &[]);
        assert!(!m.has_fwd(a));
        m.lock(root, crate::rwlock::LockMode::Write);
        m.set_fwd(a, b);
        m.unlock(root);
        assert!(m.has_fwd(a));
        assert_eq!(m.read_fwd(a), b);
    }

    #[test]
    #[should_panic(expected = "write-once")]
    fn fwd_write_once() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![]);
        let a = m.fresh_obj(root, &layout, &[]);
        let b = m.fresh_obj(root, &layout, &[]);
        m.lock(root, crate::rwlock::LockMode::Write);
        m.set_fwd(a, b);
        m.set_fwd(a, b);
    }

    #[test]
    #[should_panic(expected = "empty forwarding slot")]
    fn read_fwd_empty() {
        let m = mem();
        let root = m.new_root_heap();
        let layout = ObjectLayout::new(vec![]);
        let a = m.fresh_obj(root, &layout, &[]);
        m.read_fwd(a);
    }

    #[test]
    fn heap_of_matches_allocation_log_across_joins() {
        // Log every (obj, heap) at allocation, replay the joins on the log.
        let m = mem();
        let root = m.new_root_heap();
        let mut heaps = vec![root];
        for _ in 0..4 {
            let h = m.new_child_heap(*heaps.last().unwrap());
            heaps.push(h);
        }
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        let mut log = Vec::new();
        let mut state = 7u64;
        for i in 0..1_000u64 {
            state = crate::util::splitmix64(state);
            let h = heaps[(state % heaps.len() as u64) as usize];
            let r = m.fresh_obj(h, &layout, &[Value::Word(i)]);
            log.push((r, h));
        }
        for (r, h) in &log {
            assert_eq!(m.heap_of(*r), *h);
        }
        // Join the chain bottom-up and replay on the log.
        for k in (1..heaps.len()).rev() {
            m.join_heap(heaps[k - 1], heaps[k]);
            for entry in log.iter_mut() {
                if entry.1 == heaps[k] {
                    entry.1 = heaps[k - 1];
                }
            }
            for (r, h) in &log {
                assert_eq!(m.heap_of(*r), *h);
            }
        }
    }

    #[test]
    fn oversized_object_gets_dedicated_chunk() {
        let m = mem();
        let root = m.new_root_heap();
        let n = 100_000;
        let layout = ObjectLayout::scalar_array(n, Mutability::Mutable);
        let init = vec![Value::Word(0); n];
        let r = m.fresh_obj(root, &layout, &init);
        m.set_field_raw(r, (n - 1) as u32, Value::Word(5));
        assert_eq!(m.get_field_raw(r, (n - 1) as u32), Value::Word(5));
    }
}
