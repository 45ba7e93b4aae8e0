//! fib, tabulate, map, reduce, filter, tourney.

use std::sync::Arc;

use super::util::{alloc_words, par_ranges, par_reduce, pin_cell, Pins};
use super::{element, timed_run, BenchmarkConfig};
use crate::memops;
use crate::runtime::{forkjoin, Runtime};
use crate::store::{FieldDescriptor, ObjRef, ObjectLayout, Value};
use crate::task::TaskValue;

type BenchResult = Result<(f64, Result<(), String>), String>;

fn fib_seq(n: u64) -> u64 {
    if n < 2 {
        n
    } else {
        fib_seq(n - 1) + fib_seq(n - 2)
    }
}

fn fib_par(n: u64, grain: u64) -> u64 {
    if n <= grain {
        return fib_seq(n);
    }
    let (a, b) = forkjoin(
        move || TaskValue::Word(fib_par(n - 1, grain)),
        move || TaskValue::Word(fib_par(n - 2, grain)),
    );
    a.word() + b.word()
}

pub fn run_fib(cfg: &BenchmarkConfig, rt: &Runtime) -> BenchResult {
    let (n, grain) = (cfg.n.min(32), cfg.grain);
    let (v, secs) = timed_run(rt, move || TaskValue::Word(fib_par(n, grain)));
    let check = if v.word() == fib_seq(n) {
        Ok(())
    } else {
        Err(format!("fib({n}) = {} != {}", v.word(), fib_seq(n)))
    };
    Ok((secs, check))
}

/// Builds the shared input sequence: a root-heap scalar array filled in
/// parallel with hashed elements. Returns the array pinned in a cell.
pub(crate) fn build_input(
    rt: &Runtime,
    n: u64,
    grain: u64,
    seed: u64,
) -> Arc<crate::collector::RootCell> {
    let v = rt.run(move || {
        let arr = alloc_words(n as usize);
        let leaf = Arc::new(move |lo: u64, hi: u64| {
            for i in lo..hi {
                memops::write_nonptr(arr, i as u32, element(seed, i));
            }
        });
        par_ranges(0, n, grain, leaf);
        TaskValue::Ref(arr)
    });
    let (_, cell) = {
        // Pin from outside any task: register against a synthetic task id.
        let mem = rt.mem().clone();
        crate::task::with_task_at(&mem, rt.root_heap(), || pin_cell(&mem, v.obj()))
    };
    cell
}

pub fn run_tabulate(cfg: &BenchmarkConfig, rt: &Runtime) -> BenchResult {
    let (n, grain, seed) = (cfg.n, cfg.grain, cfg.seed);
    let (v, secs) = timed_run(rt, move || {
        let arr = alloc_words(n as usize);
        let leaf = Arc::new(move |lo: u64, hi: u64| {
            for i in lo..hi {
                memops::write_nonptr(arr, i as u32, element(seed, i));
            }
        });
        par_ranges(0, n, grain, leaf);
        TaskValue::Ref(arr)
    });
    let arr = v.obj();
    let mem = rt.mem();
    let mut check = Ok(());
    for i in (0..n).step_by((n as usize / 64).max(1)) {
        let got = mem.get_field_raw(arr, i as u32).as_word();
        if got != element(seed, i) {
            check = Err(format!("tabulate[{i}] = {got}"));
            break;
        }
    }
    Ok((secs, check))
}

fn map_fn(v: u64) -> u64 {
    v.wrapping_mul(3).wrapping_add(1)
}

pub fn run_map(cfg: &BenchmarkConfig, rt: &Runtime) -> BenchResult {
    let (n, grain, seed) = (cfg.n, cfg.grain, cfg.seed);
    let input = build_input(rt, n, grain, seed);
    let in_cell = input.clone();
    let (v, secs) = timed_run(rt, move || {
        let out = alloc_words(n as usize);
        let leaf = Arc::new(move |lo: u64, hi: u64| {
            let src = in_cell.get_obj();
            for i in lo..hi {
                let x = memops::read_mutable(src, i as u32).as_word();
                memops::write_nonptr(out, i as u32, map_fn(x));
            }
        });
        par_ranges(0, n, grain, leaf);
        TaskValue::Ref(out)
    });
    let out = v.obj();
    let mem = rt.mem();
    let mut check = Ok(());
    for i in (0..n).step_by((n as usize / 64).max(1)) {
        let got = mem.get_field_raw(out, i as u32).as_word();
        if got != map_fn(element(seed, i)) {
            check = Err(format!("map[{i}] = {got}"));
            break;
        }
    }
    Ok((secs, check))
}

pub fn run_reduce(cfg: &BenchmarkConfig, rt: &Runtime) -> BenchResult {
    let (n, grain, seed) = (cfg.n, cfg.grain, cfg.seed);
    let input = build_input(rt, n, grain, seed);
    let in_cell = input.clone();
    let (v, secs) = timed_run(rt, move || {
        let leaf = Arc::new(move |lo: u64, hi: u64| {
            let src = in_cell.get_obj();
            let mut acc = 0u64;
            for i in lo..hi {
                acc = acc.wrapping_add(memops::read_mutable(src, i as u32).as_word());
            }
            acc
        });
        TaskValue::Word(par_reduce(0, n, grain, leaf))
    });
    // Oracle: sequential fold over the generator.
    let expect = (0..n).fold(0u64, |a, i| a.wrapping_add(element(seed, i)));
    let check = if v.word() == expect {
        Ok(())
    } else {
        Err(format!("reduce = {} != {expect}", v.word()))
    };
    Ok((secs, check))
}

fn keep(v: u64) -> bool {
    v & 1 == 0
}

pub fn run_filter(cfg: &BenchmarkConfig, rt: &Runtime) -> BenchResult {
    let (n, grain, seed) = (cfg.n, cfg.grain, cfg.seed);
    let input = build_input(rt, n, grain, seed);
    let in_cell = input.clone();
    let (v, secs) = timed_run(rt, move || {
        let blocks = n.div_ceil(grain);
        let mut pins = Pins::new();
        let counts_idx = pins.alloc_words(blocks as usize);
        // Pass 1: per-block survivor counts. Leaves are whole blocks so the
        // per-block slots line up with pass 2.
        {
            let counts = pins.get(counts_idx);
            let src_cell = in_cell.clone();
            let leaf = Arc::new(move |blo: u64, bhi: u64| {
                let src = src_cell.get_obj();
                for b in blo..bhi {
                    let mut c = 0u64;
                    for i in b * grain..((b + 1) * grain).min(n) {
                        if keep(memops::read_mutable(src, i as u32).as_word()) {
                            c += 1;
                        }
                    }
                    memops::write_nonptr(counts, b as u32, c);
                }
            });
            par_ranges(0, blocks, 1, leaf);
        }
        // Sequential prefix over the per-block counts.
        let offsets_idx = pins.alloc_words(blocks as usize);
        let mut total = 0u64;
        {
            let counts = pins.get(counts_idx);
            let offsets = pins.get(offsets_idx);
            for b in 0..blocks {
                memops::write_nonptr(offsets, b as u32, total);
                total += memops::read_mutable(counts, b as u32).as_word();
            }
        }
        // Pass 2: write survivors at their offsets.
        let out_idx = pins.alloc_words(total as usize);
        {
            let out = pins.get(out_idx);
            let offsets = pins.get(offsets_idx);
            let src_cell = in_cell.clone();
            let leaf = Arc::new(move |blo: u64, bhi: u64| {
                let src = src_cell.get_obj();
                for b in blo..bhi {
                    let mut at = memops::read_mutable(offsets, b as u32).as_word();
                    for i in b * grain..((b + 1) * grain).min(n) {
                        let x = memops::read_mutable(src, i as u32).as_word();
                        if keep(x) {
                            memops::write_nonptr(out, at as u32, x);
                            at += 1;
                        }
                    }
                }
            });
            par_ranges(0, blocks, 1, leaf);
        }
        TaskValue::Ref(pins.get(out_idx))
    });
    let out = v.obj();
    let mem = rt.mem();
    let expect: Vec<u64> = (0..n).map(|i| element(seed, i)).filter(|v| keep(*v)).collect();
    let len = mem.layout_of(out).arity();
    let mut check = if len == expect.len() {
        Ok(())
    } else {
        Err(format!("filter kept {len}, expected {}", expect.len()))
    };
    if check.is_ok() {
        for (i, e) in expect.iter().enumerate() {
            if mem.get_field_raw(out, i as u32).as_word() != *e {
                check = Err(format!("filter[{i}] mismatch"));
                break;
            }
        }
    }
    Ok((secs, check))
}

// Tournament nodes: immutable fitness, mutable parent pointer (set once the
// contestant is eliminated).
const FITNESS: u32 = 0;
const PARENT: u32 = 1;

fn contestant_layout() -> Arc<ObjectLayout> {
    ObjectLayout::new(vec![FieldDescriptor::scalar_imm(), FieldDescriptor::ref_mut()])
}

fn tourney_leaf(lo: u64, hi: u64, seed: u64) -> ObjRef {
    let mut pins = Pins::new();
    let spine_idx = {
        memops::gc_safepoint();
        let layout = ObjectLayout::ref_array((hi - lo) as usize, crate::store::Mutability::Mutable);
        let spine = memops::alloc(&layout, &vec![Value::Null; (hi - lo) as usize]);
        pins.pin(spine)
    };
    for k in lo..hi {
        memops::gc_safepoint();
        let node = memops::alloc(
            &contestant_layout(),
            &[Value::Word(element(seed, k)), Value::Null],
        );
        memops::write_ptr(pins.get(spine_idx), (k - lo) as u32, node).unwrap();
    }
    // Linear bracket: the running winner eliminates each challenger.
    let spine = pins.get(spine_idx);
    let mut winner = memops::read_mutable(spine, 0).as_obj();
    for k in 1..(hi - lo) {
        let challenger = memops::read_mutable(spine, k as u32).as_obj();
        winner = play(winner, challenger);
    }
    winner
}

/// Higher fitness wins; the loser's parent pointer names its eliminator.
fn play(a: ObjRef, b: ObjRef) -> ObjRef {
    let fa = memops::read_immutable(a, FITNESS).as_word();
    let fb = memops::read_immutable(b, FITNESS).as_word();
    let (winner, loser) = if fa >= fb { (a, b) } else { (b, a) };
    memops::write_ptr(loser, PARENT, winner).unwrap();
    winner
}

fn tourney_tree(lo: u64, hi: u64, grain: u64, seed: u64) -> ObjRef {
    if hi - lo <= grain {
        return tourney_leaf(lo, hi, seed);
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = forkjoin(
        move || TaskValue::Ref(tourney_tree(lo, mid, grain, seed)),
        move || TaskValue::Ref(tourney_tree(mid, hi, grain, seed)),
    );
    play(a.obj(), b.obj())
}

pub fn run_tourney(cfg: &BenchmarkConfig, rt: &Runtime) -> BenchResult {
    let (n, grain, seed) = (cfg.n, cfg.grain, cfg.seed);
    let (v, secs) = timed_run(rt, move || {
        TaskValue::Ref(tourney_tree(0, n, grain, seed))
    });
    let champion = v.obj();
    let mem = rt.mem();
    let max = (0..n).map(|k| element(seed, k)).max().unwrap();
    let got = mem.get_field_raw(champion, FITNESS).as_word();
    let mut check = if got == max {
        Ok(())
    } else {
        Err(format!("champion fitness {got} != max {max}"))
    };
    if check.is_ok() && !mem.get_field_raw(champion, PARENT).is_null() {
        check = Err("champion must have no eliminator".into());
    }
    Ok((secs, check))
}
