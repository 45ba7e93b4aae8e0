//! Fork/join execution over work-stealing workers.
//!
//! `forkjoin` is cheap: it pushes a stealable descriptor for the second
//! thunk, creates one new superheap level, and runs the first thunk inline.
//! Task materialization — a fresh user-level thread, superheap, and child
//! heap — is deferred to the steal. An un-stolen descriptor is popped and
//! run inline in the same level heap. Either way both child heaps are joined
//! into the caller's heap before `forkjoin` returns.
//!
//! Scheduler-internal allocations (the join records carrying stolen
//! children's results) go to the global heap, outside the hierarchy; results
//! are encoded as scalar words there, so no reference field ever crosses the
//! global-heap boundary.
//!
//! Deterministic mode serializes execution into seeded turns: exactly one
//! worker runs between scheduling points (task push, steal attempt, join
//! block, completion) and every handoff is drawn from one seeded generator,
//! which makes the steal log a pure function of (seed, workers, program).

use std::any::Any;
use std::collections::VecDeque;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::audit::AuditMode;
use crate::hierarchy::HeapId;
use crate::mem::{Mem, MemConfig};
use crate::store::{FieldDescriptor, ObjectLayout, Value};
use crate::task::{self, Frame, TaskId, TaskPhase, TaskState, TaskValue, UlThread};
use crate::trace::{Subject, TraceKind};

/// Runtime configuration record.
#[derive(Clone, Debug)]
pub struct RuntimeConfig {
    pub workers: usize,
    pub seed: u64,
    /// Serialize scheduling into seeded turns for replayable steal decisions.
    pub deterministic: bool,
    pub mem: MemConfig,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            workers: 2,
            seed: 42,
            deterministic: false,
            mem: MemConfig::default(),
        }
    }
}

type Thunk = Box<dyn FnOnce() -> TaskValue + Send + 'static>;
type PanicPayload = Box<dyn Any + Send + 'static>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StealRecord {
    pub seq: u64,
    pub thief: u16,
    pub victim: u16,
    pub task: TaskId,
}

struct JoinState {
    outstanding: u32,
    stolen_heap: Option<HeapId>,
    panic: Option<PanicPayload>,
}

struct Join {
    m: Mutex<JoinState>,
    cv: Condvar,
    /// Global-heap record holding the stolen child's encoded result.
    record: OnceLock<crate::store::ObjRef>,
    /// Worker index + 1 of a deterministically blocked parent.
    waiting_worker: AtomicUsize,
}

/// A stealable descriptor for the second thunk of a forkjoin.
struct Pending {
    task: TaskId,
    parent_task: TaskId,
    parent_heap: HeapId,
    parent_depth: u32,
    thunk: Mutex<Option<Thunk>>,
    join: Arc<Join>,
}

struct RootJob {
    thunk: Mutex<Option<Thunk>>,
    root_heap: HeapId,
    done: Mutex<Option<Result<TaskValue, PanicPayload>>>,
    cv: Condvar,
}

struct WorkerShared {
    deque: Mutex<VecDeque<Arc<Pending>>>,
    rng: Mutex<StdRng>,
}

// ---------------------------------------------------------------------------
// Deterministic turn gate

struct GateState {
    rng: StdRng,
    present: Vec<bool>,
    runnable: Vec<bool>,
    /// The worker granted the current slice.
    active: Option<usize>,
    /// Whether the granted worker has begun consuming its slice; a grant can
    /// arrive before the grantee reaches its next scheduling point, and must
    /// not be mistaken for a stale self-token and forfeited.
    executing: Vec<bool>,
    run_active: bool,
    shutdown: bool,
}

struct DetGate {
    m: Mutex<GateState>,
    cv: Condvar,
}

impl DetGate {
    fn new(workers: usize, seed: u64) -> DetGate {
        DetGate {
            m: Mutex::new(GateState {
                rng: StdRng::seed_from_u64(seed),
                present: vec![true; workers],
                runnable: vec![true; workers],
                active: None,
                executing: vec![false; workers],
                run_active: false,
                shutdown: false,
            }),
            cv: Condvar::new(),
        }
    }

    fn pick(g: &mut GateState) {
        if g.active.is_some() {
            return;
        }
        let cands: Vec<usize> = (0..g.present.len())
            .filter(|i| g.present[*i] && g.runnable[*i])
            .collect();
        if !cands.is_empty() {
            let k = g.rng.random_range(0..cands.len());
            g.active = Some(cands[k]);
        }
    }

    /// Ends the caller's slice (if it was consuming one) and blocks until it
    /// is granted the next one. Returns false on shutdown.
    fn turn(&self, w: usize) -> bool {
        let mut g = self.m.lock().unwrap();
        g.runnable[w] = true;
        if g.active == Some(w) && g.executing[w] {
            g.executing[w] = false;
            g.active = None;
        }
        Self::pick(&mut g);
        self.cv.notify_all();
        loop {
            if g.shutdown {
                return false;
            }
            if g.active == Some(w) {
                g.executing[w] = true;
                return true;
            }
            if g.active.is_none() {
                Self::pick(&mut g);
                self.cv.notify_all();
                continue;
            }
            g = self.cv.wait(g).unwrap();
        }
    }

    /// Blocks the caller until another worker marks it runnable, then waits
    /// to be granted a slice.
    fn block(&self, w: usize) {
        let mut g = self.m.lock().unwrap();
        g.runnable[w] = false;
        if g.active == Some(w) && g.executing[w] {
            g.executing[w] = false;
            g.active = None;
        }
        Self::pick(&mut g);
        self.cv.notify_all();
        while !g.runnable[w] && !g.shutdown {
            g = self.cv.wait(g).unwrap();
        }
        loop {
            if g.shutdown {
                return;
            }
            if g.active == Some(w) {
                g.executing[w] = true;
                return;
            }
            if g.active.is_none() {
                Self::pick(&mut g);
                self.cv.notify_all();
                continue;
            }
            g = self.cv.wait(g).unwrap();
        }
    }

    fn mark_runnable(&self, w: usize) {
        let mut g = self.m.lock().unwrap();
        if g.present[w] {
            g.runnable[w] = true;
        }
        Self::pick(&mut g);
        self.cv.notify_all();
    }

    /// Parks between runs; during a run an empty turn just yields.
    fn idle_wait(&self, w: usize) {
        let mut g = self.m.lock().unwrap();
        if g.shutdown {
            return;
        }
        if g.run_active {
            if g.active == Some(w) && g.executing[w] {
                g.executing[w] = false;
                g.active = None;
                Self::pick(&mut g);
                self.cv.notify_all();
            }
            drop(g);
            std::thread::sleep(Duration::from_micros(20));
            return;
        }
        g.runnable[w] = false;
        if g.active == Some(w) && g.executing[w] {
            g.executing[w] = false;
            g.active = None;
            Self::pick(&mut g);
            self.cv.notify_all();
        }
        while !g.runnable[w] && !g.shutdown {
            g = self.cv.wait(g).unwrap();
        }
    }

    /// Waits until no worker holds the turn token and every present worker
    /// is dormant, so a run can start from a clean deterministic state.
    fn await_quiescent(&self) -> std::sync::MutexGuard<'_, GateState> {
        let mut g = self.m.lock().unwrap();
        loop {
            let quiet = g.active.is_none()
                && (0..g.present.len()).all(|i| !g.present[i] || !g.runnable[i]);
            if quiet || g.shutdown {
                return g;
            }
            g = self.cv.wait(g).unwrap();
        }
    }

    fn pick_victim(&self, me: usize, n: usize) -> usize {
        let mut g = self.m.lock().unwrap();
        let r = g.rng.random_range(0..n - 1);
        if r >= me {
            r + 1
        } else {
            r
        }
    }

    fn leave(&self, w: usize) {
        let mut g = self.m.lock().unwrap();
        g.present[w] = false;
        g.runnable[w] = false;
        if g.active == Some(w) {
            g.executing[w] = false;
            g.active = None;
        }
        Self::pick(&mut g);
        self.cv.notify_all();
    }

    fn shutdown(&self) {
        self.m.lock().unwrap().shutdown = true;
        self.cv.notify_all();
    }
}

// ---------------------------------------------------------------------------
// Stop-the-world safepoints (free-running mode)

struct SpState {
    stop: bool,
    safe: Vec<bool>,
}

struct Safepoint {
    m: Mutex<SpState>,
    cv: Condvar,
    stopper: Mutex<()>,
}

impl Safepoint {
    fn new(workers: usize) -> Safepoint {
        Safepoint {
            m: Mutex::new(SpState {
                stop: false,
                safe: vec![false; workers],
            }),
            cv: Condvar::new(),
            stopper: Mutex::new(()),
        }
    }

    fn enter_safe(&self, w: usize) {
        let mut s = self.m.lock().unwrap();
        s.safe[w] = true;
        self.cv.notify_all();
    }

    fn leave_safe(&self, w: usize) {
        let mut s = self.m.lock().unwrap();
        while s.stop {
            s = self.cv.wait(s).unwrap();
        }
        s.safe[w] = false;
    }

    /// Worker-loop poll: parks as safe while a stop is in progress.
    fn check(&self, w: usize) {
        let mut s = self.m.lock().unwrap();
        if s.stop {
            s.safe[w] = true;
            self.cv.notify_all();
            while s.stop {
                s = self.cv.wait(s).unwrap();
            }
            s.safe[w] = false;
        }
    }

    /// Pauses all other workers at safepoints, runs `f`, releases them.
    fn request<R>(&self, me: usize, f: impl FnOnce() -> R) -> R {
        self.enter_safe(me);
        let guard = self.stopper.lock().unwrap();
        {
            let mut s = self.m.lock().unwrap();
            s.stop = true;
            while !s.safe.iter().all(|ok| *ok) {
                s = self.cv.wait(s).unwrap();
            }
        }
        let r = f();
        {
            let mut s = self.m.lock().unwrap();
            s.stop = false;
            self.cv.notify_all();
        }
        drop(guard);
        self.leave_safe(me);
        r
    }
}

// ---------------------------------------------------------------------------

pub(crate) struct SchedShared {
    mem: Arc<Mem>,
    workers: Vec<WorkerShared>,
    injector: Mutex<VecDeque<Arc<RootJob>>>,
    idle: Mutex<()>,
    idle_cv: Condvar,
    parked: AtomicUsize,
    det: Option<DetGate>,
    safepoint: Safepoint,
    seed: u64,
    next_task: AtomicU64,
    steal_seq: AtomicU64,
    steal_log: Mutex<Vec<StealRecord>>,
    shutdown: AtomicBool,
}

thread_local! {
    static HELP_DEPTH: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

const MAX_HELP_DEPTH: usize = 64;

fn join_record_layout() -> &'static Arc<ObjectLayout> {
    static LAYOUT: OnceLock<Arc<ObjectLayout>> = OnceLock::new();
    LAYOUT.get_or_init(|| {
        ObjectLayout::new(vec![
            FieldDescriptor::scalar_mut(),
            FieldDescriptor::scalar_mut(),
        ])
    })
}

impl SchedShared {
    fn push_local(&self, w: usize, p: Arc<Pending>) {
        self.workers[w].deque.lock().unwrap().push_back(p);
        if self.det.is_none() && self.parked.load(Ordering::Relaxed) > 0 {
            let _g = self.idle.lock().unwrap();
            self.idle_cv.notify_all();
        }
    }

    /// Pops the top of the owner's deque if it is exactly `p` (the entry may
    /// have been stolen from the other end).
    fn pop_local_if(&self, w: usize, p: &Arc<Pending>) -> Option<Arc<Pending>> {
        let mut dq = self.workers[w].deque.lock().unwrap();
        if let Some(top) = dq.back() {
            if Arc::ptr_eq(top, p) {
                return dq.pop_back();
            }
        }
        None
    }

    fn try_steal(&self, w: usize) -> Option<(usize, Arc<Pending>)> {
        let n = self.workers.len();
        if n <= 1 {
            return None;
        }
        let victim = match &self.det {
            Some(gate) => gate.pick_victim(w, n),
            None => {
                let mut rng = self.workers[w].rng.lock().unwrap();
                let r = rng.random_range(0..n - 1);
                if r >= w {
                    r + 1
                } else {
                    r
                }
            }
        };
        let p = self.workers[victim].deque.lock().unwrap().pop_front()?;
        Some((victim, p))
    }

    /// Runs a stolen task: materializes its user-level thread, superheap and
    /// child heap, executes it, publishes the result into a global-heap join
    /// record, and notifies the parent's join.
    fn execute_stolen(self: &Arc<Self>, p: Arc<Pending>, w: usize, victim: usize) {
        let thunk = p
            .thunk
            .lock()
            .unwrap()
            .take()
            .expect("stolen descriptor without a thunk");
        let mem = &self.mem;
        let child_heap = mem.new_child_heap(p.parent_heap);
        let ul = UlThread::new(p.parent_depth + 1, child_heap);
        let child = TaskState::new(p.task, Some(p.parent_task), ul.clone());
        let seq = self.steal_seq.fetch_add(1, Ordering::Relaxed);
        self.steal_log.lock().unwrap().push(StealRecord {
            seq,
            thief: w as u16,
            victim: victim as u16,
            task: p.task,
        });
        mem.stats.steals.fetch_add(1, Ordering::Relaxed);

        HELP_DEPTH.with(|d| d.set(d.get() + 1));
        let result = task::with_frame(
            Frame {
                mem: mem.clone(),
                sched: Some(self.clone()),
                task: child.clone(),
                worker: Some(w as u16),
            },
            || {
                mem.trace
                    .push(mem, TraceKind::Steal, Subject::Heap(child_heap), None);
                catch_unwind(AssertUnwindSafe(thunk))
            },
        );
        HELP_DEPTH.with(|d| d.set(d.get() - 1));
        child.phase.set(TaskPhase::Done);
        debug_assert_eq!(ul.superheap.borrow().len(), 1, "unbalanced superheap");

        if let Ok(v) = &result {
            let (kind, bits) = v.encode();
            let rec = mem.fresh_obj(
                mem.global_heap(),
                join_record_layout(),
                &[Value::Word(kind), Value::Word(bits)],
            );
            let _ = p.join.record.set(rec);
        }
        {
            let mut st = p.join.m.lock().unwrap();
            st.stolen_heap = Some(child_heap);
            if let Err(e) = result {
                st.panic = Some(e);
            }
            st.outstanding -= 1;
            p.join.cv.notify_all();
        }
        if let Some(gate) = &self.det {
            let ww = p.join.waiting_worker.load(Ordering::SeqCst);
            if ww > 0 {
                gate.mark_runnable(ww - 1);
            }
        }
    }

    fn run_root(self: &Arc<Self>, job: Arc<RootJob>, w: usize) {
        let thunk = job.thunk.lock().unwrap().take().expect("root thunk taken");
        let id = TaskId(self.next_task.fetch_add(1, Ordering::Relaxed));
        let depth = self.mem.depth(job.root_heap);
        let ul = UlThread::new(depth, job.root_heap);
        let root = TaskState::new(id, None, ul);
        let result = task::with_frame(
            Frame {
                mem: self.mem.clone(),
                sched: Some(self.clone()),
                task: root.clone(),
                worker: Some(w as u16),
            },
            || catch_unwind(AssertUnwindSafe(thunk)),
        );
        root.phase.set(TaskPhase::Done);
        if let Some(gate) = &self.det {
            gate.m.lock().unwrap().run_active = false;
        }
        let mut done = job.done.lock().unwrap();
        *done = Some(result);
        job.cv.notify_all();
    }

    fn submit_root(&self, job: Arc<RootJob>) {
        if let Some(gate) = &self.det {
            // Start from a fully dormant gate: no token in flight, so the
            // seeded generator's draw sequence is a pure function of the
            // program from here on.
            let mut g = gate.await_quiescent();
            g.rng = StdRng::seed_from_u64(self.seed);
            g.run_active = true;
            for i in 0..g.runnable.len() {
                if g.present[i] {
                    g.runnable[i] = true;
                }
            }
            self.injector.lock().unwrap().push_back(job);
            gate.cv.notify_all();
        } else {
            self.injector.lock().unwrap().push_back(job);
            let _g = self.idle.lock().unwrap();
            self.idle_cv.notify_all();
        }
    }

    fn idle_park(&self, w: usize) {
        self.safepoint.enter_safe(w);
        self.parked.fetch_add(1, Ordering::Relaxed);
        {
            let g = self.idle.lock().unwrap();
            let _ = self
                .idle_cv
                .wait_timeout(g, Duration::from_millis(1))
                .unwrap();
        }
        self.parked.fetch_sub(1, Ordering::Relaxed);
        self.safepoint.leave_safe(w);
    }

    /// Pauses all workers at safepoints and runs both auditors.
    pub(crate) fn stop_world_audit(self: &Arc<Self>, mem: &Arc<Mem>, w: u16) {
        let audit = || {
            mem.record_audit(mem.audit_disentanglement());
            mem.record_audit(mem.audit_forwarding_chains());
        };
        if self.det.is_some() {
            // Turns serialize execution; everyone else is paused at a
            // scheduling point, never mid-memop.
            audit();
        } else {
            self.safepoint.request(w as usize, audit);
        }
    }
}

fn worker_loop(shared: Arc<SchedShared>, w: usize) {
    // Task panics are caught at thunk boundaries; anything unwinding to this
    // frame is a runtime-internal invariant failure. A silently dead worker
    // would orphan stolen tasks and hang joins, so fail loudly instead.
    let r = catch_unwind(AssertUnwindSafe(|| worker_body(&shared, w)));
    if r.is_err() {
        eprintln!("hh-worker-{w}: internal panic; aborting");
        std::process::abort();
    }
}

fn worker_body(shared: &Arc<SchedShared>, w: usize) {
    loop {
        if let Some(gate) = &shared.det {
            if !gate.turn(w) {
                break;
            }
        }
        if shared.shutdown.load(Ordering::Acquire) {
            break;
        }
        if shared.det.is_none() {
            shared.safepoint.check(w);
        }
        // Root jobs start on worker 0; everyone else gets work by stealing.
        if w == 0 {
            let job = shared.injector.lock().unwrap().pop_front();
            if let Some(job) = job {
                shared.run_root(job, w);
                continue;
            }
        }
        if let Some((victim, p)) = shared.try_steal(w) {
            shared.execute_stolen(p, w, victim);
            continue;
        }
        match &shared.det {
            Some(gate) => gate.idle_wait(w),
            None => shared.idle_park(w),
        }
    }
    if let Some(gate) = &shared.det {
        gate.leave(w);
    }
}

// ---------------------------------------------------------------------------

/// The executing task's id. Never fails inside the runtime.
pub use crate::task::current_task;
/// The executing task's allocation heap.
pub use crate::task::current_heap;

/// Runs `f` and `g` as two child tasks and returns their results in order.
///
/// One new superheap level is created for the inline path; if `g` is stolen
/// it gets its own superheap whose base heap is attached as a second child.
/// Both child heaps are joined into the caller's heap before returning; the
/// caller's superheap depth is restored. Thunk panics propagate after both
/// children settle and the heaps are joined.
pub fn forkjoin<F, G>(f: F, g: G) -> (TaskValue, TaskValue)
where
    F: FnOnce() -> TaskValue + Send + 'static,
    G: FnOnce() -> TaskValue + Send + 'static,
{
    let (mem, parent, sched, worker) = task::current();
    let sched = sched.expect("forkjoin outside the runtime");
    let w = worker.expect("forkjoin outside a worker") as usize;
    let ul = parent.ul.clone();
    let (d_cur, h_cur) = ul.top();

    mem.stats.forks.fetch_add(1, Ordering::Relaxed);
    let h_level = mem.new_child_heap(h_cur);
    mem.trace
        .push(&mem, TraceKind::Fork, Subject::Heap(h_level), None);
    ul.push_level(d_cur + 1, h_level);

    let t_f = TaskId(sched.next_task.fetch_add(1, Ordering::Relaxed));
    let t_g = TaskId(sched.next_task.fetch_add(1, Ordering::Relaxed));
    let join = Arc::new(Join {
        m: Mutex::new(JoinState {
            outstanding: 1,
            stolen_heap: None,
            panic: None,
        }),
        cv: Condvar::new(),
        record: OnceLock::new(),
        waiting_worker: AtomicUsize::new(0),
    });
    let pending = Arc::new(Pending {
        task: t_g,
        parent_task: parent.id,
        parent_heap: h_cur,
        parent_depth: d_cur,
        thunk: Mutex::new(Some(Box::new(g))),
        join: join.clone(),
    });
    sched.push_local(w, pending.clone());
    if let Some(gate) = &sched.det {
        // Scheduling point: give thieves a window at the freshly pushed task.
        gate.turn(w);
    }

    parent.phase.set(TaskPhase::Suspended);
    let mut r_f = run_inline_child(&mem, &sched, w, t_f, &parent, &ul, Box::new(f));

    // If g runs inline it shares f's level heap, and its allocations may
    // collect it; f's result lives only in this frame, so pin it for the
    // duration and re-read it afterwards.
    let f_pin = match &r_f {
        Ok(TaskValue::Ref(r)) => {
            let cell = crate::collector::RootCell::new(crate::store::Value::Ref(*r));
            Some((mem.register_root(parent.id, cell.clone()), cell))
        }
        _ => None,
    };
    let inline_g = match sched.pop_local_if(w, &pending) {
        Some(p) => {
            let thunk = p
                .thunk
                .lock()
                .unwrap()
                .take()
                .expect("un-stolen descriptor without a thunk");
            join.m.lock().unwrap().outstanding -= 1;
            Some(run_inline_child(&mem, &sched, w, t_g, &parent, &ul, thunk))
        }
        None => {
            wait_for_stolen(&sched, w, &join);
            None
        }
    };
    if let Some((id, cell)) = f_pin {
        r_f = Ok(TaskValue::Ref(cell.get_obj()));
        mem.unregister_root(id);
    }

    // Both children have settled; merge their heaps into the caller's.
    let (_, lvl) = ul.pop_level();
    debug_assert_eq!(lvl, h_level);
    mem.join_heap(h_cur, h_level);
    let stolen_heap = join.m.lock().unwrap().stolen_heap.take();
    if let Some(hg) = stolen_heap {
        mem.join_heap(h_cur, hg);
    }
    parent.phase.set(TaskPhase::Running);

    if mem.cfg.audit_mode == AuditMode::AtJoins {
        sched.stop_world_audit(&mem, w as u16);
    }

    let r_g: Result<TaskValue, PanicPayload> = match inline_g {
        Some(r) => r,
        None => {
            let stolen_panic = join.m.lock().unwrap().panic.take();
            match stolen_panic {
                Some(p) => Err(p),
                None => {
                    // Read the result from the global-heap join record, now
                    // that joinHeap made any referent parent-owned.
                    let rec = join
                        .record
                        .get()
                        .expect("stolen child published no result record");
                    let kind = mem.get_field_raw(*rec, 0).as_word();
                    let bits = mem.get_field_raw(*rec, 1).as_word();
                    Ok(TaskValue::decode(kind, bits))
                }
            }
        }
    };

    match (r_f, r_g) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(p), _) => resume_unwind(p),
        (_, Err(p)) => resume_unwind(p),
    }
}

fn run_inline_child(
    mem: &Arc<Mem>,
    sched: &Arc<SchedShared>,
    w: usize,
    id: TaskId,
    parent: &std::rc::Rc<TaskState>,
    ul: &std::rc::Rc<UlThread>,
    thunk: Thunk,
) -> Result<TaskValue, PanicPayload> {
    let child = TaskState::new(id, Some(parent.id), ul.clone());
    let r = task::with_frame(
        Frame {
            mem: mem.clone(),
            sched: Some(sched.clone()),
            task: child.clone(),
            worker: Some(w as u16),
        },
        || catch_unwind(AssertUnwindSafe(thunk)),
    );
    child.phase.set(TaskPhase::Done);
    r
}

fn wait_for_stolen(sched: &Arc<SchedShared>, w: usize, join: &Arc<Join>) {
    if let Some(gate) = &sched.det {
        loop {
            let blocked = {
                let st = join.m.lock().unwrap();
                if st.outstanding == 0 {
                    false
                } else {
                    join.waiting_worker.store(w + 1, Ordering::SeqCst);
                    true
                }
            };
            if !blocked {
                return;
            }
            gate.block(w);
        }
    }
    let may_help = HELP_DEPTH.with(|d| d.get()) < MAX_HELP_DEPTH;
    loop {
        {
            let st = join.m.lock().unwrap();
            if st.outstanding == 0 {
                return;
            }
        }
        if may_help {
            if let Some((victim, p)) = sched.try_steal(w) {
                sched.execute_stolen(p, w, victim);
                continue;
            }
        }
        sched.safepoint.enter_safe(w);
        {
            let st = join.m.lock().unwrap();
            if st.outstanding > 0 {
                let _ = join
                    .cv
                    .wait_timeout(st, Duration::from_micros(200))
                    .unwrap();
            }
        }
        sched.safepoint.leave_safe(w);
    }
}

// ---------------------------------------------------------------------------

/// A running worker pool over one memory system. Reusable across multiple
/// `run` calls; all runs share the same hierarchy root heap.
pub struct Runtime {
    mem: Arc<Mem>,
    shared: Arc<SchedShared>,
    root_heap: HeapId,
    threads: Mutex<Vec<std::thread::JoinHandle<()>>>,
    run_lock: Mutex<()>,
}

impl Runtime {
    pub fn new(cfg: RuntimeConfig) -> Runtime {
        assert!(cfg.workers >= 1, "need at least one worker");
        let mem = Mem::new(cfg.mem.clone());
        let root_heap = mem.new_root_heap();
        let workers = (0..cfg.workers)
            .map(|i| WorkerShared {
                deque: Mutex::new(VecDeque::new()),
                rng: Mutex::new(StdRng::seed_from_u64(
                    cfg.seed.wrapping_add(i as u64).wrapping_mul(0x9E37_79B9),
                )),
            })
            .collect();
        let shared = Arc::new(SchedShared {
            mem: mem.clone(),
            workers,
            injector: Mutex::new(VecDeque::new()),
            idle: Mutex::new(()),
            idle_cv: Condvar::new(),
            parked: AtomicUsize::new(0),
            det: cfg.deterministic.then(|| DetGate::new(cfg.workers, cfg.seed)),
            safepoint: Safepoint::new(cfg.workers),
            seed: cfg.seed,
            next_task: AtomicU64::new(0),
            steal_seq: AtomicU64::new(0),
            steal_log: Mutex::new(Vec::new()),
            shutdown: AtomicBool::new(false),
        });
        let threads = (0..cfg.workers)
            .map(|i| {
                let s = shared.clone();
                std::thread::Builder::new()
                    .name(format!("hh-worker-{i}"))
                    .stack_size(32 * 1024 * 1024)
                    .spawn(move || worker_loop(s, i))
                    .expect("spawn worker")
            })
            .collect();
        Runtime {
            mem,
            shared,
            root_heap,
            threads: Mutex::new(threads),
            run_lock: Mutex::new(()),
        }
    }

    /// Runs `f` as the root task and returns its result. Panics inside the
    /// task tree propagate here.
    pub fn run<F>(&self, f: F) -> TaskValue
    where
        F: FnOnce() -> TaskValue + Send + 'static,
    {
        let rl = self.run_lock.lock().unwrap_or_else(|e| e.into_inner());
        let job = Arc::new(RootJob {
            thunk: Mutex::new(Some(Box::new(f))),
            root_heap: self.root_heap,
            done: Mutex::new(None),
            cv: Condvar::new(),
        });
        self.shared.submit_root(job.clone());
        let result = {
            let mut done = job.done.lock().unwrap();
            while done.is_none() {
                done = job.cv.wait(done).unwrap();
            }
            done.take().unwrap()
        };
        drop(rl);
        match result {
            Ok(v) => v,
            Err(p) => resume_unwind(p),
        }
    }

    pub fn mem(&self) -> &Arc<Mem> {
        &self.mem
    }

    pub fn root_heap(&self) -> HeapId {
        self.root_heap
    }

    pub fn steal_log(&self) -> Vec<StealRecord> {
        self.shared.steal_log.lock().unwrap().clone()
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        if let Some(gate) = &self.shared.det {
            gate.shutdown();
        }
        {
            let _g = self.shared.idle.lock().unwrap();
            self.shared.idle_cv.notify_all();
        }
        for t in self.threads.lock().unwrap().drain(..) {
            let _ = t.join();
        }
    }
}
