//! reachability, usp, usp-tree: round-based parallel BFS over a directed
//! graph in CSR form.
//!
//! Visited flags and distances live in root-heap arrays written by leaf
//! tasks (distant scalar writes). Visitation races are tolerated: a vertex
//! discovered twice in one round is written with the same round number, so
//! distances are exact regardless; usp-tree may overwrite one valid ancestor
//! list with another. usp-tree records `A[v] = cons(u, A[u])` through a
//! pointer write into the root array, which promotes the freshly allocated
//! cons cell — the benchmark's whole point.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use super::util::{alloc_words, collect_tree_leaves, par_ranges, par_ref_tree, pin_cell, Pins};
use super::{timed_run, BenchmarkConfig};
use crate::collector::RootCell;
use crate::memops;
use crate::runtime::Runtime;
use crate::store::{FieldDescriptor, Mutability, ObjRef, ObjectLayout, Value};
use crate::task::TaskValue;
use crate::util::splitmix64;

type BenchResult = Result<(f64, Result<(), String>), String>;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BfsKind {
    Reachability,
    Usp,
    UspTree,
}

/// Directed graph in compressed adjacency form.
pub struct Graph {
    pub n: usize,
    pub offsets: Vec<u32>,
    pub targets: Vec<u32>,
}

impl Graph {
    pub fn out_edges(&self, v: u32) -> &[u32] {
        &self.targets[self.offsets[v as usize] as usize..self.offsets[v as usize + 1] as usize]
    }
}

/// Seeded random digraph with a fixed average out-degree. A spine edge
/// v -> v+1 keeps most of the graph reachable from vertex 0.
pub fn synthetic(n: usize, avg_deg: usize, seed: u64) -> Graph {
    let mut offsets = Vec::with_capacity(n + 1);
    let mut targets = Vec::new();
    offsets.push(0u32);
    for v in 0..n {
        if v + 1 < n {
            targets.push((v + 1) as u32);
        }
        let deg = (splitmix64(seed ^ (v as u64) << 1) as usize) % (2 * avg_deg);
        for j in 0..deg {
            let t = splitmix64(seed ^ ((v as u64) << 20) ^ j as u64) as usize % n;
            targets.push(t as u32);
        }
        offsets.push(targets.len() as u32);
    }
    Graph {
        n,
        offsets,
        targets,
    }
}

/// Loads a directed graph from an adjacency-list text file, one `u v` edge
/// per line. Lines starting with `#` and blank lines are ignored. Vertex
/// count is one past the largest id seen.
pub fn load_edge_list(path: &Path) -> std::io::Result<Graph> {
    let file = std::fs::File::open(path)?;
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut max = 0u32;
    for line in BufReader::new(file).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |s: Option<&str>| -> std::io::Result<u32> {
            s.and_then(|x| x.parse().ok()).ok_or_else(|| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad edge line {line:?}"),
                )
            })
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        edges.push((u, v));
        max = max.max(u).max(v);
    }
    let n = if edges.is_empty() { 0 } else { max as usize + 1 };
    let mut offsets = vec![0u32; n + 1];
    for (u, _) in &edges {
        offsets[*u as usize + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut at = offsets.clone();
    let mut targets = vec![0u32; edges.len()];
    for (u, v) in &edges {
        targets[at[*u as usize] as usize] = *v;
        at[*u as usize] += 1;
    }
    Ok(Graph {
        n,
        offsets,
        targets,
    })
}

/// Sequential BFS distances from `src`; -1 for unreachable vertices.
pub fn bfs_oracle(g: &Graph, src: u32) -> Vec<i64> {
    let mut dist = vec![-1i64; g.n];
    let mut frontier = vec![src];
    dist[src as usize] = 0;
    let mut d = 0i64;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for v in frontier {
            for &u in g.out_edges(v) {
                if dist[u as usize] < 0 {
                    dist[u as usize] = d;
                    next.push(u);
                }
            }
        }
        frontier = next;
    }
    dist
}

struct BfsArrays {
    offsets: Arc<RootCell>,
    targets: Arc<RootCell>,
    visited: Arc<RootCell>,
    dist: Arc<RootCell>,
    ancestors: Option<Arc<RootCell>>,
}

fn cons_layout() -> Arc<ObjectLayout> {
    ObjectLayout::new(vec![FieldDescriptor::scalar_imm(), FieldDescriptor::ref_imm()])
}

/// Expands one frontier chunk, returning a length-headed local array of
/// newly visited vertices.
fn expand_chunk(
    arrays: &BfsArrays,
    frontier: &Arc<Vec<u32>>,
    lo: u64,
    hi: u64,
    round: u64,
    kind: BfsKind,
) -> ObjRef {
    let mut found: Vec<u32> = Vec::new();
    for k in lo..hi {
        let v = frontier[k as usize];
        let offsets = arrays.offsets.get_obj();
        let targets = arrays.targets.get_obj();
        let visited = arrays.visited.get_obj();
        let start = memops::read_mutable(offsets, v).as_word();
        let end = memops::read_mutable(offsets, v + 1).as_word();
        for e in start..end {
            let u = memops::read_mutable(targets, e as u32).as_word() as u32;
            if memops::read_mutable(visited, u).as_word() != 0 {
                continue;
            }
            memops::write_nonptr(visited, u, 1);
            if kind != BfsKind::Reachability {
                memops::write_nonptr(arrays.dist.get_obj(), u, round);
            }
            if kind == BfsKind::UspTree {
                // A[u] = cons(v, A[v]); the tail was promoted to the root
                // region when A[v] was written in an earlier round. The tail
                // is read after the safepoint so a collection cannot leave a
                // stale reference in the new cell.
                memops::gc_safepoint();
                let a = arrays.ancestors.as_ref().unwrap().get_obj();
                let tail = memops::read_mutable(a, v);
                let node = memops::alloc(&cons_layout(), &[Value::Word(v as u64), tail]);
                memops::write_ptr(a, u, node).unwrap();
            }
            found.push(u);
        }
    }
    // Length-headed result array: one allocation, nothing live to pin.
    memops::gc_safepoint();
    let out = alloc_words(found.len() + 1);
    memops::write_nonptr(out, 0, found.len() as u64);
    for (i, u) in found.iter().enumerate() {
        memops::write_nonptr(out, (i + 1) as u32, *u as u64);
    }
    out
}

fn bfs_round(
    arrays: &Arc<BfsArrays>,
    frontier: Vec<u32>,
    round: u64,
    grain: u64,
    kind: BfsKind,
) -> Vec<u32> {
    let len = frontier.len() as u64;
    let frontier = Arc::new(frontier);
    let arrays2 = arrays.clone();
    let f2 = frontier.clone();
    let leaf: Arc<dyn Fn(u64, u64) -> ObjRef + Send + Sync> =
        Arc::new(move |lo, hi| expand_chunk(&arrays2, &f2, lo, hi, round, kind));
    let tree = par_ref_tree(0, len, grain, leaf);
    // Gather the per-chunk results; the tree nodes were joined into this
    // task's heap.
    let (mem, _, _, _) = crate::task::current();
    let mut leaves = Vec::new();
    collect_tree_leaves(&mem, tree, &mut leaves);
    let mut next = Vec::new();
    for arr in leaves {
        let count = memops::read_mutable(arr, 0).as_word();
        for i in 1..=count {
            next.push(memops::read_mutable(arr, i as u32).as_word() as u32);
        }
    }
    next
}

pub fn run_bfs(cfg: &BenchmarkConfig, rt: &Runtime, kind: BfsKind) -> BenchResult {
    let graph = Arc::new(match &cfg.graph_path {
        Some(p) => load_edge_list(p).map_err(|e| format!("graph load: {e}"))?,
        None => synthetic(cfg.n as usize, 8, cfg.seed),
    });
    if graph.n == 0 {
        return Err("empty graph".into());
    }
    let src = 0u32;

    // Setup phase: upload the CSR arrays and zero the per-vertex state.
    let g2 = graph.clone();
    let grain = cfg.grain;
    let setup = rt.run(move || {
        let n = g2.n;
        let mut pins = Pins::new();
        let offsets_idx = pins.alloc_words(n + 1);
        let targets_idx = pins.alloc_words(g2.targets.len().max(1));
        let visited_idx = pins.alloc_words(n);
        let dist_idx = pins.alloc_words(n);
        {
            let offsets = pins.get(offsets_idx);
            let g3 = g2.clone();
            let leaf = Arc::new(move |lo: u64, hi: u64| {
                for i in lo..hi {
                    memops::write_nonptr(offsets, i as u32, g3.offsets[i as usize] as u64);
                }
            });
            par_ranges(0, (n + 1) as u64, grain.max(256), leaf);
        }
        {
            let targets = pins.get(targets_idx);
            let g3 = g2.clone();
            let leaf = Arc::new(move |lo: u64, hi: u64| {
                for i in lo..hi {
                    memops::write_nonptr(targets, i as u32, g3.targets[i as usize] as u64);
                }
            });
            par_ranges(0, g2.targets.len() as u64, grain.max(256), leaf);
        }
        // Mark the source visited at distance 0.
        memops::write_nonptr(pins.get(visited_idx), src, 1);
        memops::gc_safepoint();
        let ancestors = memops::alloc(
            &ObjectLayout::ref_array(n, Mutability::Mutable),
            &vec![Value::Null; n],
        );
        let mut pack = Pins::new();
        let p_off = pack.pin(pins.get(offsets_idx));
        let p_tgt = pack.pin(pins.get(targets_idx));
        let p_vis = pack.pin(pins.get(visited_idx));
        let p_dst = pack.pin(pins.get(dist_idx));
        let p_anc = pack.pin(ancestors);
        memops::gc_safepoint();
        let bundle = memops::alloc(
            &ObjectLayout::ref_array(5, Mutability::Mutable),
            &[
                Value::Ref(pack.get(p_off)),
                Value::Ref(pack.get(p_tgt)),
                Value::Ref(pack.get(p_vis)),
                Value::Ref(pack.get(p_dst)),
                Value::Ref(pack.get(p_anc)),
            ],
        );
        TaskValue::Ref(bundle)
    });

    // Pin the five state arrays in driver-held cells.
    let mem = rt.mem().clone();
    let bundle = setup.obj();
    let arrays = crate::task::with_task_at(&mem, rt.root_heap(), || {
        let get = |i: u32| pin_cell(&mem, mem.get_field_raw(bundle, i).as_obj()).1;
        Arc::new(BfsArrays {
            offsets: get(0),
            targets: get(1),
            visited: get(2),
            dist: get(3),
            ancestors: (kind == BfsKind::UspTree).then(|| get(4)),
        })
    });

    let arrays2 = arrays.clone();
    let grain = cfg.grain;
    let (_, secs) = timed_run(rt, move || {
        let mut frontier = vec![src];
        let mut round = 0u64;
        while !frontier.is_empty() {
            round += 1;
            frontier = bfs_round(&arrays2, frontier, round, grain, kind);
        }
        TaskValue::Word(round)
    });

    // Verification against the sequential oracle.
    let oracle = bfs_oracle(&graph, src);
    let visited = arrays.visited.get_obj();
    let dist = arrays.dist.get_obj();
    let check = (|| -> Result<(), String> {
        for v in 0..graph.n {
            let vis = mem.get_field_raw(visited, v as u32).as_word();
            let reach = oracle[v] >= 0;
            if (vis != 0) != reach {
                return Err(format!("vertex {v}: visited={vis} oracle_reachable={reach}"));
            }
            if kind != BfsKind::Reachability && reach && v as u32 != src {
                let d = mem.get_field_raw(dist, v as u32).as_word() as i64;
                if d != oracle[v] {
                    return Err(format!("vertex {v}: dist {d} != oracle {}", oracle[v]));
                }
            }
        }
        if kind == BfsKind::UspTree {
            let edge_set: HashSet<(u32, u32)> = (0..graph.n as u32)
                .flat_map(|u| graph.out_edges(u).iter().map(move |v| (u, *v)))
                .collect();
            let a = arrays.ancestors.as_ref().unwrap().get_obj();
            for v in 0..graph.n as u32 {
                if oracle[v as usize] < 0 || v == src {
                    continue;
                }
                // Walk the ancestor list: head vertices step the distance
                // down by one and successive pairs are real edges.
                let mut at = v;
                let mut node = mem.get_field_raw(a, v);
                let mut expect_d = oracle[v as usize];
                while let Value::Ref(r) = node {
                    let u = memops_read_imm_raw(&mem, r, 0) as u32;
                    if !edge_set.contains(&(u, at)) {
                        return Err(format!("ancestor list of {v}: ({u},{at}) not an edge"));
                    }
                    expect_d -= 1;
                    if oracle[u as usize] != expect_d {
                        return Err(format!(
                            "ancestor list of {v}: {u} at oracle dist {} expected {expect_d}",
                            oracle[u as usize]
                        ));
                    }
                    at = u;
                    node = mem.get_field_raw(r, 1);
                }
                if expect_d != 0 {
                    return Err(format!("ancestor list of {v} too short"));
                }
            }
        }
        Ok(())
    })();
    Ok((secs, check))
}

/// Raw immutable read used by post-run verification outside a task context.
fn memops_read_imm_raw(mem: &crate::mem::Mem, obj: ObjRef, field: u32) -> u64 {
    mem.get_field_raw(obj, field).as_word()
}
