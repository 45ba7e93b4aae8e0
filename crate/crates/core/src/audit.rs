//! Invariant auditors.
//!
//! The disentanglement audit scans every live object's reference fields and
//! reports each stored target whose heap is neither the source's heap nor an
//! ancestor of it: down-references (target strictly below the source) and
//! cross-references (unrelated heaps, including any edge crossing the
//! global-heap boundary). The forwarding audit checks that every chain is
//! finite and acyclic, strictly ascends the hierarchy, and ends at an object
//! with an empty slot. Both run at quiescent points.

use std::collections::HashSet;

use serde::Serialize;

use crate::hierarchy::HeapId;
use crate::mem::Mem;
use crate::store::{ObjRef, Value};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum AuditMode {
    Off,
    AtJoins,
    EveryOp,
}

/// One offending stored reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RefEdge {
    pub source: ObjRef,
    pub field: u32,
    pub target: ObjRef,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditReport {
    pub down_refs: Vec<RefEdge>,
    pub cross_refs: Vec<RefEdge>,
    pub broken_chains: Vec<ObjRef>,
    pub passed: bool,
}

impl AuditReport {
    fn finish(mut self) -> AuditReport {
        self.passed =
            self.down_refs.is_empty() && self.cross_refs.is_empty() && self.broken_chains.is_empty();
        self
    }
}

impl Mem {
    fn live_objects(&self) -> impl Iterator<Item = (ObjRef, HeapId)> + '_ {
        self.store.iter_chunks().filter(|c| !c.is_retired()).flat_map(|chunk| {
            let owner = chunk.owner();
            (0..chunk.used_slots()).map(move |slot| {
                (
                    ObjRef {
                        chunk: chunk.id,
                        slot,
                    },
                    owner,
                )
            })
        })
    }

    /// Full scan of all non-forwarding reference fields. An edge passes iff
    /// its target's heap equals or is an ancestor of the source's heap.
    pub fn audit_disentanglement(&self) -> AuditReport {
        let mut report = AuditReport::default();
        for (obj, source_heap) in self.live_objects() {
            let source_global = self.is_global_heap(source_heap);
            for f in self.layout_of(obj).ptr_fields() {
                let target = match self.get_field_raw(obj, *f) {
                    Value::Ref(r) => r,
                    _ => continue,
                };
                let target_heap = self.heap_of(target);
                let edge = RefEdge {
                    source: obj,
                    field: *f,
                    target,
                };
                if self.is_global_heap(target_heap) != source_global {
                    report.cross_refs.push(edge);
                } else if !self.ancestor_or_self(target_heap, source_heap) {
                    if self.ancestor_or_self(source_heap, target_heap) {
                        report.down_refs.push(edge);
                    } else {
                        report.cross_refs.push(edge);
                    }
                }
            }
        }
        report.finish()
    }

    /// Verifies every forwarding chain: acyclic, finite, ascending, and
    /// ending at an object with an empty slot.
    ///
    /// A promotion link strictly decreases depth when it is installed; later
    /// heap joins raise the stale copy until it shares its target's heap, so
    /// the quiescent-state check is: the target is never deeper, and an
    /// equal-depth link is legal only within one heap.
    pub fn audit_forwarding_chains(&self) -> AuditReport {
        let mut report = AuditReport::default();
        for (obj, heap) in self.live_objects() {
            if !self.has_fwd(obj) {
                continue;
            }
            let mut visited = HashSet::new();
            let mut cur = obj;
            let mut cur_heap = heap;
            let mut broken = false;
            while self.has_fwd(cur) {
                if !visited.insert(cur) {
                    broken = true;
                    break;
                }
                let next = self.read_fwd(cur);
                let next_heap = self.heap_of(next);
                let (d_cur, d_next) = (self.depth(cur_heap), self.depth(next_heap));
                if d_next > d_cur || (d_next == d_cur && next_heap != cur_heap) {
                    broken = true;
                    break;
                }
                cur = next;
                cur_heap = next_heap;
            }
            if broken {
                report.broken_chains.push(obj);
            }
        }
        report.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::{Mem, MemConfig};
    use crate::memops;
    use crate::store::{FieldDescriptor, ObjectLayout, Value};
    use crate::task::with_task_at;
    use std::sync::Arc;

    fn mem() -> Arc<Mem> {
        Mem::new(MemConfig::default())
    }

    fn cell() -> Arc<ObjectLayout> {
        ObjectLayout::new(vec![
            FieldDescriptor::scalar_mut(),
            FieldDescriptor::ref_mut(),
        ])
    }

    #[test]
    fn clean_hierarchy_passes() {
        let m = mem();
        let root = m.new_root_heap();
        let leaf = m.new_child_heap(root);
        let up = m.fresh_obj(root, &cell(), &[Value::Word(1), Value::Null]);
        let _ok = m.fresh_obj(leaf, &cell(), &[Value::Word(2), Value::Ref(up)]);
        let report = m.audit_disentanglement();
        assert!(report.passed, "{report:?}");
        assert!(m.audit_forwarding_chains().passed);
    }

    #[test]
    fn injected_down_reference_is_reported() {
        let m = mem();
        let root = m.new_root_heap();
        let leaf = m.new_child_heap(root);
        let below = m.fresh_obj(leaf, &cell(), &[Value::Word(2), Value::Null]);
        let holder = m.fresh_obj(root, &cell(), &[Value::Word(1), Value::Null]);
        // Bypass writePtr to inject the forbidden edge.
        m.set_field_raw(holder, 1, Value::Ref(below));
        let report = m.audit_disentanglement();
        assert!(!report.passed);
        assert_eq!(report.down_refs.len(), 1);
        assert_eq!(report.down_refs[0].source, holder);
        assert_eq!(report.down_refs[0].target, below);
        assert!(report.cross_refs.is_empty());
    }

    #[test]
    fn injected_cross_reference_is_reported() {
        let m = mem();
        let root = m.new_root_heap();
        let a = m.new_child_heap(root);
        let b = m.new_child_heap(root);
        let in_a = m.fresh_obj(a, &cell(), &[Value::Word(1), Value::Null]);
        let in_b = m.fresh_obj(b, &cell(), &[Value::Word(2), Value::Null]);
        m.set_field_raw(in_a, 1, Value::Ref(in_b));
        let report = m.audit_disentanglement();
        assert!(!report.passed);
        assert_eq!(report.cross_refs.len(), 1);
        assert!(report.down_refs.is_empty());
    }

    #[test]
    fn global_heap_crossing_is_reported() {
        let m = mem();
        let root = m.new_root_heap();
        let user = m.fresh_obj(root, &cell(), &[Value::Word(1), Value::Null]);
        let global = m.fresh_obj(m.global_heap(), &cell(), &[Value::Word(2), Value::Null]);
        m.set_field_raw(user, 1, Value::Ref(global));
        let report = m.audit_disentanglement();
        assert!(!report.passed);
        assert_eq!(report.cross_refs.len(), 1);
    }

    #[test]
    fn audit_matches_bruteforce_oracle_on_random_hierarchies() {
        let mut state = 31u64;
        for round in 0..20 {
            let m = mem();
            let root = m.new_root_heap();
            let mut heaps = vec![root];
            for _ in 0..8 {
                state = crate::util::splitmix64(state);
                let p = heaps[(state % heaps.len() as u64) as usize];
                heaps.push(m.new_child_heap(p));
            }
            let mut objs = Vec::new();
            for i in 0..40u64 {
                state = crate::util::splitmix64(state);
                let h = heaps[(state % heaps.len() as u64) as usize];
                objs.push(m.fresh_obj(h, &cell(), &[Value::Word(i), Value::Null]));
            }
            // Random edges, injected raw.
            let mut expected_bad = Vec::new();
            for i in 0..objs.len() {
                state = crate::util::splitmix64(state);
                if state % 3 == 0 {
                    let j = (state >> 8) as usize % objs.len();
                    m.set_field_raw(objs[i], 1, Value::Ref(objs[j]));
                    let hs = m.heap_of(objs[i]);
                    let ht = m.heap_of(objs[j]);
                    // Brute-force ancestry via parent walk.
                    let mut anc = false;
                    let mut cur = Some(hs);
                    while let Some(h) = cur {
                        if h == ht {
                            anc = true;
                            break;
                        }
                        cur = m.parent_of(h);
                    }
                    if !anc {
                        expected_bad.push((objs[i], objs[j]));
                    }
                }
            }
            let report = m.audit_disentanglement();
            let mut found: Vec<(ObjRef, ObjRef)> = report
                .down_refs
                .iter()
                .chain(report.cross_refs.iter())
                .map(|e| (e.source, e.target))
                .collect();
            found.sort();
            expected_bad.sort();
            assert_eq!(found, expected_bad, "round {round}");
        }
    }

    #[test]
    fn forwarding_chain_audit_sees_promotion_chains() {
        let m = mem();
        let root = m.new_root_heap();
        let mid = m.new_child_heap(root);
        let leaf = m.new_child_heap(mid);
        let h_mid = m.fresh_obj(mid, &cell(), &[Value::Word(0), Value::Null]);
        let h_root = m.fresh_obj(root, &cell(), &[Value::Word(0), Value::Null]);
        let obj = m.fresh_obj(leaf, &cell(), &[Value::Word(1), Value::Null]);
        with_task_at(&m, leaf, || {
            memops::write_ptr(h_mid, 1, obj).unwrap();
            memops::write_ptr(h_root, 1, obj).unwrap();
        });
        let report = m.audit_forwarding_chains();
        assert!(report.passed, "{report:?}");

        // Sabotage: a link that descends the hierarchy.
        let deeper_heap = m.new_child_heap(leaf);
        let fresh = m.fresh_obj(leaf, &cell(), &[Value::Word(2), Value::Null]);
        let deeper = m.fresh_obj(deeper_heap, &cell(), &[Value::Word(3), Value::Null]);
        m.lock(leaf, crate::rwlock::LockMode::Write);
        m.set_fwd(fresh, deeper);
        m.unlock(leaf);
        let report = m.audit_forwarding_chains();
        assert!(!report.passed);
        assert!(report.broken_chains.contains(&fresh));
    }
}
