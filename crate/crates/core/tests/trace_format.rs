//! Trace schema checks: record shape, per-heap lock/unlock balance, and
//! promote bracketing, verified by parsing the emitted text.

use std::collections::HashMap;

use hh_core::memops;
use hh_core::runtime::{Runtime, RuntimeConfig};
use hh_core::store::{FieldDescriptor, ObjectLayout};
use hh_core::task::TaskValue;
use hh_core::{MemConfig, Value};

fn traced_runtime(workers: usize) -> Runtime {
    Runtime::new(RuntimeConfig {
        workers,
        mem: MemConfig {
            trace: true,
            ..MemConfig::default()
        },
        ..RuntimeConfig::default()
    })
}

fn emit(rt: &Runtime) -> String {
    let mut buf = Vec::new();
    rt.mem().emit_trace(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[derive(Debug)]
struct Rec<'a> {
    ts: u64,
    event: &'a str,
    subject: &'a str,
}

fn parse(text: &str) -> Vec<Rec<'_>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# hh trace v1"));
    assert_eq!(
        lines.next(),
        Some("# fields: ts_ns worker task event subject class")
    );
    lines
        .map(|l| {
            let parts: Vec<&str> = l.split(' ').collect();
            assert_eq!(parts.len(), 6, "bad record {l:?}");
            Rec {
                ts: parts[0].parse().unwrap(),
                event: parts[3],
                subject: parts[4],
            }
        })
        .collect()
}

#[test]
fn one_alloc_emits_one_alloc_record() {
    let rt = traced_runtime(1);
    let v = rt.run(|| {
        let layout = ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]);
        TaskValue::Ref(memops::alloc(&layout, &[Value::Word(1)]))
    });
    let text = emit(&rt);
    let recs = parse(&text);
    let allocs: Vec<_> = recs.iter().filter(|r| r.event == "alloc").collect();
    assert_eq!(allocs.len(), 1);
    assert_eq!(allocs[0].subject, format!("obj:{}", v.obj()));
}

#[test]
fn lock_and_unlock_records_balance_per_heap() {
    let rt = traced_runtime(2);
    rt.run(|| {
        let holder_layout = ObjectLayout::new(vec![FieldDescriptor::ref_mut()]);
        let holder = memops::alloc(&holder_layout, &[Value::Null]);
        let (a, _) = hh_core::runtime::forkjoin(
            move || {
                let obj = memops::alloc(
                    &ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]),
                    &[Value::Word(3)],
                );
                memops::write_ptr(holder, 0, obj).unwrap();
                TaskValue::Ref(obj)
            },
            || TaskValue::Unit,
        );
        memops::read_mutable(a.obj(), 0);
        TaskValue::Unit
    });
    let text = emit(&rt);
    let recs = parse(&text);
    let mut balance: HashMap<&str, i64> = HashMap::new();
    for r in &recs {
        match r.event {
            "lock" => *balance.entry(r.subject).or_default() += 1,
            "unlock" => *balance.entry(r.subject).or_default() -= 1,
            _ => {}
        }
    }
    for (heap, b) in &balance {
        assert_eq!(*b, 0, "unbalanced lock records for {heap}");
    }
    assert!(
        recs.iter().any(|r| r.event == "lock"),
        "promoting program never locked"
    );
}

#[test]
fn promote_brackets_contain_their_lock_records() {
    let rt = traced_runtime(1);
    rt.run(|| {
        let holder_layout = ObjectLayout::new(vec![FieldDescriptor::ref_mut()]);
        let holder = memops::alloc(&holder_layout, &[Value::Null]);
        let (_, _) = hh_core::runtime::forkjoin(
            move || {
                let obj = memops::alloc(
                    &ObjectLayout::new(vec![FieldDescriptor::scalar_mut()]),
                    &[Value::Word(3)],
                );
                memops::write_ptr(holder, 0, obj).unwrap();
                TaskValue::Unit
            },
            || TaskValue::Unit,
        );
        TaskValue::Unit
    });
    let text = emit(&rt);
    let recs = parse(&text);
    // Single worker: the promotion's lock/unlock records fall strictly
    // between its start and end timestamps.
    let start = recs
        .iter()
        .find(|r| r.event == "promoteStart")
        .expect("promotion happened")
        .ts;
    let end = recs.iter().find(|r| r.event == "promoteEnd").unwrap().ts;
    assert!(start < end);
    // The promotion's WRITE path is locked and released entirely inside the
    // bracket: the records within it balance and cover the full path (the
    // referent's heap and its ancestor). Locks outside the bracket belong to
    // the preceding master lookup and must balance before the bracket opens.
    let inside: Vec<_> = recs
        .iter()
        .filter(|r| r.ts >= start && r.ts <= end)
        .collect();
    let locks = inside.iter().filter(|r| r.event == "lock").count();
    let unlocks = inside.iter().filter(|r| r.event == "unlock").count();
    assert_eq!(locks, unlocks, "promotion bracket leaks a lock hold");
    assert!(locks >= 2, "path locking should cover at least two heaps");
    let before: Vec<_> = recs.iter().filter(|r| r.ts < start).collect();
    let pre_locks = before.iter().filter(|r| r.event == "lock").count();
    let pre_unlocks = before.iter().filter(|r| r.event == "unlock").count();
    assert_eq!(pre_locks, pre_unlocks, "a lock hold crosses into the promotion");
}

#[test]
fn fork_join_and_steal_records_appear() {
    let rt = traced_runtime(2);
    rt.run(|| {
        fn spin(n: u64) -> TaskValue {
            if n == 0 {
                return TaskValue::Word(1);
            }
            let (a, b) = hh_core::runtime::forkjoin(move || spin(n - 1), move || spin(n - 1));
            TaskValue::Word(a.word() + b.word())
        }
        spin(6)
    });
    let text = emit(&rt);
    let recs = parse(&text);
    let count = |ev: &str| recs.iter().filter(|r| r.event == ev).count();
    assert_eq!(count("fork"), 63);
    // Each forkjoin joins its level heap, plus one extra join per steal.
    assert_eq!(count("join"), 63 + count("steal"));
}
