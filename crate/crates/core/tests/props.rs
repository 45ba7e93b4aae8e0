//! Property tests over the store and hierarchy invariants.

use proptest::prelude::*;

use hh_core::collector::RootCell;
use hh_core::store::{FieldDescriptor, FieldKind, Mutability, ObjectLayout};
use hh_core::task::TaskId;
use hh_core::{Mem, MemConfig, Value};

fn field_strategy() -> impl Strategy<Value = FieldDescriptor> {
    (any::<bool>(), any::<bool>()).prop_map(|(r, m)| {
        FieldDescriptor::new(
            if r { FieldKind::Reference } else { FieldKind::Scalar },
            if m { Mutability::Mutable } else { Mutability::Immutable },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// ptrFields/nonptrFields partition [0, arity): union complete,
    /// intersection empty, both ascending.
    #[test]
    fn ptr_and_nonptr_fields_partition(descs in proptest::collection::vec(field_strategy(), 0..24)) {
        let layout = ObjectLayout::new(descs.clone());
        let ptr = layout.ptr_fields();
        let nonptr = layout.nonptr_fields();
        prop_assert_eq!(ptr.len() + nonptr.len(), descs.len());
        let mut all: Vec<u32> = ptr.iter().chain(nonptr.iter()).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..descs.len() as u32).collect::<Vec<_>>());
        prop_assert!(ptr.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(nonptr.windows(2).all(|w| w[0] < w[1]));
        for &f in ptr {
            prop_assert_eq!(descs[f as usize].kind, FieldKind::Reference);
        }
    }

    /// joinHeap preserves content: every (object, field values) pair
    /// observed before the join is observed unchanged after it, and
    /// ownership moves wholesale to the parent.
    #[test]
    fn join_preserves_content(values in proptest::collection::vec(any::<u64>(), 1..80)) {
        let mem = Mem::new(MemConfig::default());
        let root = mem.new_root_heap();
        let child = mem.new_child_heap(root);
        let layout = ObjectLayout::new(vec![
            FieldDescriptor::scalar_mut(),
            FieldDescriptor::ref_mut(),
        ]);
        let mut objs = Vec::new();
        let mut prev = Value::Null;
        for (i, v) in values.iter().enumerate() {
            let h = if i % 3 == 0 { root } else { child };
            // Links may only point upward or sideways-in-time within the
            // same heap; linking to the previous object is safe because the
            // previous heap is child or root, both ancestors-or-self only
            // when compatible.
            let link = match (h == child, &prev) {
                (true, Value::Ref(_)) => prev,
                (false, Value::Ref(p)) if mem.heap_of(*p) == root => prev,
                _ => Value::Null,
            };
            let o = mem.fresh_obj(h, &layout, &[Value::Word(*v), link]);
            objs.push(o);
            prev = Value::Ref(o);
        }
        let before: Vec<(u64, Value)> = objs
            .iter()
            .map(|o| (mem.get_field_raw(*o, 0).as_word(), mem.get_field_raw(*o, 1)))
            .collect();
        mem.join_heap(root, child);
        for (o, (w, l)) in objs.iter().zip(before) {
            prop_assert_eq!(mem.heap_of(*o), root);
            prop_assert_eq!(mem.get_field_raw(*o, 0).as_word(), w);
            prop_assert_eq!(mem.get_field_raw(*o, 1), l);
        }
    }

    /// Leaf collection is content-preserving for list-shaped graphs: the
    /// rebuilt list holds the same values and the subtree has no reachable
    /// forwarding slots.
    #[test]
    fn leaf_collection_preserves_lists(values in proptest::collection::vec(any::<u64>(), 0..64)) {
        let mem = Mem::new(MemConfig::default());
        let root = mem.new_root_heap();
        let leaf = mem.new_child_heap(root);
        let layout = ObjectLayout::new(vec![
            FieldDescriptor::scalar_mut(),
            FieldDescriptor::ref_mut(),
        ]);
        let mut head = Value::Null;
        for v in &values {
            let o = mem.fresh_obj(leaf, &layout, &[Value::Word(*v), head]);
            head = Value::Ref(o);
        }
        let cell = RootCell::new(head);
        mem.register_root(TaskId(0), cell.clone());
        // Garbage to make the collection do real work.
        for i in 0..50u64 {
            mem.fresh_obj(leaf, &layout, &[Value::Word(i), Value::Null]);
        }
        let report = mem.collect(leaf);
        prop_assert_eq!(report.objects_copied, values.len() as u64);
        let mut cur = cell.get();
        for v in values.iter().rev() {
            let o = match cur {
                Value::Ref(r) => r,
                other => return Err(TestCaseError::fail(format!("list truncated at {other:?}"))),
            };
            prop_assert!(!mem.has_fwd(o));
            prop_assert_eq!(mem.get_field_raw(o, 0).as_word(), *v);
            cur = mem.get_field_raw(o, 1);
        }
        prop_assert!(cur.is_null());
    }
}

/// Identity stability, as a plain randomized check: ObjRef bits never change
/// across joins.
#[test]
fn objref_bits_stable_across_join_chain() {
    let mem = Mem::new(MemConfig::default());
    let root = mem.new_root_heap();
    let mut heaps = vec![root];
    for _ in 0..5 {
        heaps.push(mem.new_child_heap(*heaps.last().unwrap()));
    }
    let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
    let objs: Vec<_> = (0..200u64)
        .map(|i| {
            let h = heaps[(i % heaps.len() as u64) as usize];
            (mem.fresh_obj(h, &layout, &[Value::Word(i)]), i)
        })
        .collect();
    let snapshot: Vec<_> = objs.iter().map(|(o, _)| (*o, o.chunk, o.slot)).collect();
    for k in (1..heaps.len()).rev() {
        mem.join_heap(heaps[k - 1], heaps[k]);
    }
    for ((o, i), (o2, chunk, slot)) in objs.iter().zip(snapshot) {
        assert_eq!(*o, o2);
        assert_eq!(o.chunk, chunk);
        assert_eq!(o.slot, slot);
        assert_eq!(mem.get_field_raw(*o, 0).as_word(), *i);
    }
}
