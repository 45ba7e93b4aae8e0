//! Event tracing.
//!
//! When enabled, the runtime appends one record per event to an in-memory
//! buffer; `emit_trace` writes them as newline-delimited text.
//!
//! Schema `hh trace v1`, one record per line, fields in this order,
//! space-separated:
//!
//! ```text
//! <ts_ns> <worker> <task> <event> <subject> <class>
//! ```
//!
//! - `ts_ns`: monotonic nanoseconds since runtime creation
//! - `worker`: worker index, or `-` outside a worker
//! - `task`: task id, or `-` outside a task
//! - `event`: one of `alloc readImm readMut writeScalar writeRef
//!   promoteStart promoteEnd lock unlock collectStart collectEnd fork join
//!   steal`
//! - `subject`: `obj:c<chunk>.<slot>`, `heap:<id>`, or `-`
//! - `class`: `<op>.<locality>` for memory operations, else `-`

use std::io::{self, Write};
use std::sync::Mutex;
use std::time::Instant;

use crate::hierarchy::HeapId;
use crate::mem::Mem;
use crate::stats::OpClassKey;
use crate::store::ObjRef;
use crate::task::TaskId;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TraceKind {
    Alloc,
    ReadImm,
    ReadMut,
    WriteScalar,
    WriteRef,
    PromoteStart,
    PromoteEnd,
    Lock,
    Unlock,
    CollectStart,
    CollectEnd,
    Fork,
    Join,
    Steal,
}

impl TraceKind {
    pub fn label(self) -> &'static str {
        match self {
            TraceKind::Alloc => "alloc",
            TraceKind::ReadImm => "readImm",
            TraceKind::ReadMut => "readMut",
            TraceKind::WriteScalar => "writeScalar",
            TraceKind::WriteRef => "writeRef",
            TraceKind::PromoteStart => "promoteStart",
            TraceKind::PromoteEnd => "promoteEnd",
            TraceKind::Lock => "lock",
            TraceKind::Unlock => "unlock",
            TraceKind::CollectStart => "collectStart",
            TraceKind::CollectEnd => "collectEnd",
            TraceKind::Fork => "fork",
            TraceKind::Join => "join",
            TraceKind::Steal => "steal",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Subject {
    Obj(ObjRef),
    Heap(HeapId),
    None,
}

#[derive(Clone, Copy, Debug)]
pub struct TraceEvent {
    pub ts_ns: u64,
    pub worker: Option<u16>,
    pub task: Option<TaskId>,
    pub kind: TraceKind,
    pub subject: Subject,
    pub class: Option<OpClassKey>,
}

pub(crate) struct TraceBuf {
    enabled: bool,
    epoch: Instant,
    events: Mutex<Vec<TraceEvent>>,
}

impl TraceBuf {
    pub(crate) fn new(enabled: bool) -> TraceBuf {
        TraceBuf {
            enabled,
            epoch: Instant::now(),
            events: Mutex::new(Vec::new()),
        }
    }

    /// Appends one event, attributing it to the current worker/task.
    pub(crate) fn push(
        &self,
        _mem: &Mem,
        kind: TraceKind,
        subject: Subject,
        class: Option<OpClassKey>,
    ) {
        if !self.enabled {
            return;
        }
        let (worker, task) = crate::task::current_ids();
        let ev = TraceEvent {
            ts_ns: self.epoch.elapsed().as_nanos() as u64,
            worker,
            task,
            kind,
            subject,
            class,
        };
        self.events.lock().unwrap().push(ev);
    }
}

impl Mem {
    /// Writes the buffered trace to `sink` in the v1 schema, sorted by
    /// timestamp (stable).
    pub fn emit_trace(&self, sink: &mut dyn Write) -> io::Result<()> {
        let mut events = self.trace.events.lock().unwrap().clone();
        events.sort_by_key(|e| e.ts_ns);
        writeln!(sink, "# hh trace v1")?;
        writeln!(sink, "# fields: ts_ns worker task event subject class")?;
        for e in &events {
            let worker = e
                .worker
                .map(|w| w.to_string())
                .unwrap_or_else(|| "-".into());
            let task = e
                .task
                .map(|t| t.0.to_string())
                .unwrap_or_else(|| "-".into());
            let subject = match e.subject {
                Subject::Obj(r) => format!("obj:{r}"),
                Subject::Heap(h) => format!("heap:{}", h.0),
                Subject::None => "-".into(),
            };
            let class = e
                .class
                .map(|c| c.label())
                .unwrap_or_else(|| "-".into());
            writeln!(
                sink,
                "{} {} {} {} {} {}",
                e.ts_ns,
                worker,
                task,
                e.kind.label(),
                subject,
                class
            )?;
        }
        Ok(())
    }

    /// Snapshot of the raw events, for in-process checks.
    pub fn trace_events(&self) -> Vec<TraceEvent> {
        self.trace.events.lock().unwrap().clone()
    }
}
