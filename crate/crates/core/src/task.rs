//! Task identity and the thread-local execution context.
//!
//! A user-level thread owns a superheap: a LIFO stack of (depth, heap) pairs
//! whose top is the allocation heap. A task executes on exactly one OS
//! thread; the frame stack below lets a worker run nested tasks (inline
//! children, stolen tasks picked up while waiting) without losing the outer
//! context.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::hierarchy::HeapId;
use crate::mem::Mem;
use crate::store::{ObjRef, Value};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TaskPhase {
    Ready,
    Running,
    Suspended,
    Done,
}

/// A thunk's result: nothing, a scalar word, or an object reference.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TaskValue {
    Unit,
    Word(u64),
    Ref(ObjRef),
}

impl TaskValue {
    pub fn word(self) -> u64 {
        match self {
            TaskValue::Word(w) => w,
            v => panic!("expected word result, got {v:?}"),
        }
    }

    pub fn obj(self) -> ObjRef {
        match self {
            TaskValue::Ref(r) => r,
            v => panic!("expected object result, got {v:?}"),
        }
    }

    pub(crate) fn encode(self) -> (u64, u64) {
        match self {
            TaskValue::Unit => (0, 0),
            TaskValue::Word(w) => (1, w),
            TaskValue::Ref(r) => (2, r.to_bits()),
        }
    }

    pub(crate) fn decode(kind: u64, bits: u64) -> TaskValue {
        match kind {
            0 => TaskValue::Unit,
            1 => TaskValue::Word(bits),
            2 => TaskValue::Ref(ObjRef::from_bits(bits)),
            k => panic!("bad task value tag {k}"),
        }
    }
}

/// Per user-level thread stack of (depth, heap); the top is the allocation
/// heap. Depths are strictly increasing bottom to top.
pub(crate) struct UlThread {
    pub(crate) superheap: RefCell<Vec<(u32, HeapId)>>,
}

impl UlThread {
    pub(crate) fn new(depth: u32, heap: HeapId) -> Rc<UlThread> {
        Rc::new(UlThread {
            superheap: RefCell::new(vec![(depth, heap)]),
        })
    }

    pub(crate) fn top(&self) -> (u32, HeapId) {
        *self.superheap.borrow().last().expect("empty superheap")
    }

    pub(crate) fn push_level(&self, depth: u32, heap: HeapId) {
        let mut s = self.superheap.borrow_mut();
        debug_assert!(
            s.last().map(|(d, _)| *d < depth).unwrap_or(true),
            "superheap depths must increase"
        );
        s.push((depth, heap));
    }

    pub(crate) fn pop_level(&self) -> (u32, HeapId) {
        self.superheap.borrow_mut().pop().expect("empty superheap")
    }
}

pub(crate) struct TaskState {
    pub(crate) id: TaskId,
    pub(crate) parent: Option<TaskId>,
    pub(crate) phase: Cell<TaskPhase>,
    pub(crate) ul: Rc<UlThread>,
}

impl TaskState {
    pub(crate) fn new(id: TaskId, parent: Option<TaskId>, ul: Rc<UlThread>) -> Rc<TaskState> {
        Rc::new(TaskState {
            id,
            parent,
            phase: Cell::new(TaskPhase::Running),
            ul,
        })
    }
}

pub(crate) struct Frame {
    pub(crate) mem: Arc<Mem>,
    pub(crate) sched: Option<Arc<crate::runtime::SchedShared>>,
    pub(crate) task: Rc<TaskState>,
    pub(crate) worker: Option<u16>,
}

thread_local! {
    static FRAMES: RefCell<Vec<Frame>> = const { RefCell::new(Vec::new()) };
}

struct FrameGuard;

impl Drop for FrameGuard {
    fn drop(&mut self) {
        FRAMES.with(|f| {
            f.borrow_mut().pop();
        });
    }
}

pub(crate) fn with_frame<R>(frame: Frame, body: impl FnOnce() -> R) -> R {
    FRAMES.with(|f| f.borrow_mut().push(frame));
    let _guard = FrameGuard;
    body()
}

pub(crate) fn current() -> (Arc<Mem>, Rc<TaskState>, Option<Arc<crate::runtime::SchedShared>>, Option<u16>) {
    FRAMES.with(|f| {
        let f = f.borrow();
        let frame = f.last().expect("memory operation outside a task context");
        (
            frame.mem.clone(),
            frame.task.clone(),
            frame.sched.clone(),
            frame.worker,
        )
    })
}

/// (worker, task) of the current context, for trace attribution.
pub(crate) fn current_ids() -> (Option<u16>, Option<TaskId>) {
    FRAMES.with(|f| {
        let f = f.borrow();
        match f.last() {
            Some(frame) => (frame.worker, Some(frame.task.id)),
            None => (None, None),
        }
    })
}

/// The executing task. Never fails inside a task context.
pub fn current_task() -> TaskId {
    current().1.id
}

/// The current task's allocation heap (top of its superheap).
pub fn current_heap() -> HeapId {
    current().1.ul.top().1
}

/// The parent of the executing task; None for a root task.
pub fn current_parent() -> Option<TaskId> {
    current().1.parent
}

/// The memory system of the executing task's runtime.
pub fn current_mem() -> Arc<Mem> {
    current().0
}

/// Runs `body` in a synthetic task context whose allocation heap is `heap`.
/// This is the scripted entry point for exercising memory operations without
/// the scheduler; the runtime installs real frames itself.
pub fn with_task_at<R>(mem: &Arc<Mem>, heap: HeapId, body: impl FnOnce() -> R) -> R {
    let depth = mem.depth(heap);
    let ul = UlThread::new(depth, heap);
    let task = TaskState::new(next_synthetic_task_id(), None, ul);
    with_frame(
        Frame {
            mem: mem.clone(),
            sched: None,
            task,
            worker: None,
        },
        body,
    )
}

fn next_synthetic_task_id() -> TaskId {
    use std::sync::atomic::{AtomicU64, Ordering};
    // Synthetic ids count down from the top so they never collide with
    // runtime-assigned ids.
    static NEXT: AtomicU64 = AtomicU64::new(u64::MAX);
    TaskId(NEXT.fetch_sub(1, Ordering::Relaxed))
}

/// Root-cell value helper: scripted contexts often hold a `Value`.
pub fn value_of(obj: Option<ObjRef>) -> Value {
    match obj {
        Some(r) => Value::Ref(r),
        None => Value::Null,
    }
}
