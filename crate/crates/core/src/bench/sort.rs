//! msort, msort-pure, dedup.
//!
//! Imperative leaves copy their segment to a local array and quicksort it in
//! place; pure leaves run a functional quicksort that allocates fresh
//! partition arrays per level. Merges allocate their output in the merging
//! task's own heap, so all sort writes are local.

use std::sync::Arc;

use super::util::Pins;
use super::{element, timed_run, BenchmarkConfig};
use crate::collector::RootCell;
use crate::memops;
use crate::runtime::{forkjoin, Runtime};
use crate::store::ObjRef;
use crate::task::TaskValue;

type BenchResult = Result<(f64, Result<(), String>), String>;

fn dedup_element(seed: u64, i: u64, n: u64) -> u64 {
    // ~10% unique keys; keep the top bit clear so u64::MAX stays free for
    // the hash-table empty sentinel.
    element(seed, i % (n / 10).max(1)) >> 1
}

fn read(arr: ObjRef, i: u64) -> u64 {
    memops::read_mutable(arr, i as u32).as_word()
}

fn write(arr: ObjRef, i: u64, v: u64) {
    memops::write_nonptr(arr, i as u32, v);
}

/// In-place quicksort over a local array segment; Hoare partition with a
/// middle-element pivot. `[lo, hi)` bounds.
fn quicksort(arr: ObjRef, lo: u64, hi: u64) {
    if hi > lo {
        quicksort_inclusive(arr, lo as i64, hi as i64 - 1);
    }
}

fn quicksort_inclusive(arr: ObjRef, lo: i64, hi: i64) {
    if lo >= hi {
        return;
    }
    let pivot = read(arr, ((lo + hi) / 2) as u64);
    let (mut i, mut j) = (lo - 1, hi + 1);
    loop {
        loop {
            i += 1;
            if read(arr, i as u64) >= pivot {
                break;
            }
        }
        loop {
            j -= 1;
            if read(arr, j as u64) <= pivot {
                break;
            }
        }
        if i >= j {
            break;
        }
        let (a, b) = (read(arr, i as u64), read(arr, j as u64));
        write(arr, i as u64, b);
        write(arr, j as u64, a);
    }
    quicksort_inclusive(arr, lo, j);
    quicksort_inclusive(arr, j + 1, hi);
}

/// Imperative leaf: copy the segment into a fresh local array and sort it in
/// place.
fn leaf_sort_imperative(input: &Arc<RootCell>, lo: u64, hi: u64) -> ObjRef {
    let len = hi - lo;
    let mut pins = Pins::new();
    let out_idx = pins.alloc_words(len as usize);
    let out = pins.get(out_idx);
    let src = input.get_obj();
    for i in 0..len {
        write(out, i, read(src, lo + i));
    }
    quicksort(out, 0, len);
    out
}

/// Pure leaf: functional quicksort building fresh arrays per partition.
fn leaf_sort_pure(input: &Arc<RootCell>, lo: u64, hi: u64) -> ObjRef {
    let len = hi - lo;
    let mut pins = Pins::new();
    let seg_idx = pins.alloc_words(len as usize);
    {
        let seg = pins.get(seg_idx);
        let src = input.get_obj();
        for i in 0..len {
            write(seg, i, read(src, lo + i));
        }
    }
    fquicksort(&mut pins, seg_idx, len)
}

fn fquicksort(pins: &mut Pins, src_idx: usize, len: u64) -> ObjRef {
    if len < 2 {
        return pins.get(src_idx);
    }
    let pivot = read(pins.get(src_idx), len / 2);
    let (mut n_lt, mut n_eq, mut n_gt) = (0u64, 0u64, 0u64);
    {
        let src = pins.get(src_idx);
        for i in 0..len {
            let v = read(src, i);
            if v < pivot {
                n_lt += 1;
            } else if v == pivot {
                n_eq += 1;
            } else {
                n_gt += 1;
            }
        }
    }
    let lt_idx = pins.alloc_words(n_lt as usize);
    let gt_idx = pins.alloc_words(n_gt as usize);
    {
        let src = pins.get(src_idx);
        let (lt, gt) = (pins.get(lt_idx), pins.get(gt_idx));
        let (mut a, mut b) = (0u64, 0u64);
        for i in 0..len {
            let v = read(src, i);
            if v < pivot {
                write(lt, a, v);
                a += 1;
            } else if v > pivot {
                write(gt, b, v);
                b += 1;
            }
        }
    }
    let lt_sorted = fquicksort(pins, lt_idx, n_lt);
    let lt_sorted_idx = pins.pin(lt_sorted);
    let gt_sorted = fquicksort(pins, gt_idx, n_gt);
    let gt_sorted_idx = pins.pin(gt_sorted);
    let out_idx = pins.alloc_words(len as usize);
    let out = pins.get(out_idx);
    let mut at = 0u64;
    {
        let lt = pins.get(lt_sorted_idx);
        for i in 0..n_lt {
            write(out, at, read(lt, i));
            at += 1;
        }
    }
    for _ in 0..n_eq {
        write(out, at, pivot);
        at += 1;
    }
    {
        let gt = pins.get(gt_sorted_idx);
        for i in 0..n_gt {
            write(out, at, read(gt, i));
            at += 1;
        }
    }
    out
}

fn arity_of(arr: ObjRef) -> u64 {
    let (mem, _, _, _) = crate::task::current();
    mem.layout_of(arr).arity() as u64
}

/// Merges two sorted arrays (owned by this task's heap after the join) into
/// a fresh local output.
fn merge(left: ObjRef, right: ObjRef) -> ObjRef {
    let mut pins = Pins::new();
    let li = pins.pin(left);
    let ri = pins.pin(right);
    let (ll, rl) = (arity_of(left), arity_of(right));
    let out_idx = pins.alloc_words((ll + rl) as usize);
    let out = pins.get(out_idx);
    let (l, r) = (pins.get(li), pins.get(ri));
    let (mut i, mut j, mut at) = (0u64, 0u64, 0u64);
    while i < ll && j < rl {
        let (a, b) = (read(l, i), read(r, j));
        if a <= b {
            write(out, at, a);
            i += 1;
        } else {
            write(out, at, b);
            j += 1;
        }
        at += 1;
    }
    while i < ll {
        write(out, at, read(l, i));
        i += 1;
        at += 1;
    }
    while j < rl {
        write(out, at, read(r, j));
        j += 1;
        at += 1;
    }
    out
}

fn msort_tree(input: Arc<RootCell>, lo: u64, hi: u64, grain: u64, pure: bool) -> ObjRef {
    if hi - lo <= grain {
        return if pure {
            leaf_sort_pure(&input, lo, hi)
        } else {
            leaf_sort_imperative(&input, lo, hi)
        };
    }
    let mid = lo + (hi - lo) / 2;
    let (in_l, in_r) = (input.clone(), input);
    let (a, b) = forkjoin(
        move || TaskValue::Ref(msort_tree(in_l, lo, mid, grain, pure)),
        move || TaskValue::Ref(msort_tree(in_r, mid, hi, grain, pure)),
    );
    merge(a.obj(), b.obj())
}

pub fn run_msort(cfg: &BenchmarkConfig, rt: &Runtime, pure: bool) -> BenchResult {
    let (n, grain, seed) = (cfg.n, cfg.grain, cfg.seed);
    let input = super::basic::build_input(rt, n, grain, seed);
    let in_cell = input.clone();
    let (v, secs) = timed_run(rt, move || {
        TaskValue::Ref(msort_tree(in_cell, 0, n, grain, pure))
    });
    let out = v.obj();
    let mem = rt.mem();
    let mut got = Vec::with_capacity(n as usize);
    for i in 0..n {
        got.push(mem.get_field_raw(out, i as u32).as_word());
    }
    let mut expect: Vec<u64> = (0..n).map(|i| element(seed, i)).collect();
    expect.sort_unstable();
    let check = if got == expect {
        Ok(())
    } else {
        Err("msort output is not the sorted input".into())
    };
    Ok((secs, check))
}

// Dedup arrays carry their length in slot 0; data follows.

fn dedup_leaf(input: &Arc<RootCell>, lo: u64, hi: u64) -> ObjRef {
    const EMPTY: u64 = u64::MAX;
    let len = hi - lo;
    let table_len = (2 * len).next_power_of_two();
    let mut pins = Pins::new();
    let table_idx = pins.alloc_words(table_len as usize);
    let mut unique = 0u64;
    {
        let table = pins.get(table_idx);
        for i in 0..table_len {
            write(table, i, EMPTY);
        }
        let src = input.get_obj();
        let mask = table_len - 1;
        for i in lo..hi {
            let key = read(src, i);
            let mut slot = key.wrapping_mul(0x9E37_79B9_7F4A_7C15) & mask;
            loop {
                let cur = read(table, slot);
                if cur == EMPTY {
                    write(table, slot, key);
                    unique += 1;
                    break;
                }
                if cur == key {
                    break;
                }
                slot = (slot + 1) & mask;
            }
        }
    }
    let out_idx = pins.alloc_words((unique + 1) as usize);
    {
        let (table, out) = (pins.get(table_idx), pins.get(out_idx));
        write(out, 0, unique);
        let mut at = 1u64;
        for i in 0..table_len {
            let v = read(table, i);
            if v != EMPTY {
                write(out, at, v);
                at += 1;
            }
        }
        quicksort(out, 1, unique + 1);
    }
    pins.get(out_idx)
}

/// Merges two sorted unique arrays (length-headed), dropping duplicate keys.
fn merge_dedup(left: ObjRef, right: ObjRef) -> ObjRef {
    let mut pins = Pins::new();
    let li = pins.pin(left);
    let ri = pins.pin(right);
    let (ll, rl) = (read(left, 0), read(right, 0));
    let out_idx = pins.alloc_words((ll + rl + 1) as usize);
    let out = pins.get(out_idx);
    let (l, r) = (pins.get(li), pins.get(ri));
    let (mut i, mut j, mut at) = (1u64, 1u64, 1u64);
    let mut last: Option<u64> = None;
    let emit = |out: ObjRef, at: &mut u64, v: u64, last: &mut Option<u64>| {
        if *last != Some(v) {
            write(out, *at, v);
            *at += 1;
            *last = Some(v);
        }
    };
    while i <= ll && j <= rl {
        let (a, b) = (read(l, i), read(r, j));
        if a <= b {
            emit(out, &mut at, a, &mut last);
            i += 1;
        } else {
            emit(out, &mut at, b, &mut last);
            j += 1;
        }
    }
    while i <= ll {
        emit(out, &mut at, read(l, i), &mut last);
        i += 1;
    }
    while j <= rl {
        emit(out, &mut at, read(r, j), &mut last);
        j += 1;
    }
    write(out, 0, at - 1);
    out
}

fn dedup_tree(input: Arc<RootCell>, lo: u64, hi: u64, grain: u64) -> ObjRef {
    if hi - lo <= grain {
        return dedup_leaf(&input, lo, hi);
    }
    let mid = lo + (hi - lo) / 2;
    let (in_l, in_r) = (input.clone(), input);
    let (a, b) = forkjoin(
        move || TaskValue::Ref(dedup_tree(in_l, lo, mid, grain)),
        move || TaskValue::Ref(dedup_tree(in_r, mid, hi, grain)),
    );
    merge_dedup(a.obj(), b.obj())
}

pub fn run_dedup(cfg: &BenchmarkConfig, rt: &Runtime) -> BenchResult {
    let (n, grain, seed) = (cfg.n, cfg.grain, cfg.seed);
    // Duplicate-heavy input, built in parallel like the other sequences.
    let input = {
        use super::util::{alloc_words, par_ranges, pin_cell};
        let v = rt.run(move || {
            let arr = alloc_words(n as usize);
            let leaf = Arc::new(move |lo: u64, hi: u64| {
                for i in lo..hi {
                    memops::write_nonptr(arr, i as u32, dedup_element(seed, i, n));
                }
            });
            par_ranges(0, n, grain, leaf);
            TaskValue::Ref(arr)
        });
        let mem = rt.mem().clone();
        let root = rt.root_heap();
        crate::task::with_task_at(&mem, root, || pin_cell(&mem, v.obj())).1
    };
    let in_cell = input.clone();
    let (v, secs) = timed_run(rt, move || {
        TaskValue::Ref(dedup_tree(in_cell, 0, n, grain))
    });
    let out = v.obj();
    let mem = rt.mem();
    let count = mem.get_field_raw(out, 0).as_word();
    let mut got = Vec::with_capacity(count as usize);
    for i in 1..=count {
        got.push(mem.get_field_raw(out, i as u32).as_word());
    }
    let mut expect: Vec<u64> = (0..n)
        .map(|i| dedup_element(seed, i, n))
        .collect::<std::collections::HashSet<_>>()
        .into_iter()
        .collect();
    expect.sort_unstable();
    let check = if got == expect {
        Ok(())
    } else {
        Err(format!(
            "dedup kept {} keys, oracle has {}",
            got.len(),
            expect.len()
        ))
    };
    Ok((secs, check))
}
