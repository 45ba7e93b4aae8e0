//! Hierarchical heaps for mutable state.
//!
//! A task-parallel runtime whose memory mirrors the fork/join task tree:
//! each task allocates into its own heap, child heaps merge into their
//! parents at joins without copying, and every stored reference points into
//! the same heap or an ancestor (disentanglement). Writing a deeper
//! reference into a shallower object first promotes the referent — copies it
//! and everything reachable from it upward — leaving forwarding chains that
//! the promotion-aware semispace collector later elides.
//!
//! Layout:
//! - [`store`]: chunks, object records, raw field access, forwarding slots
//! - [`hierarchy`]: the heap tree, joins, per-heap readers-writer locks
//! - [`memops`]: the high-level operations (fast paths, master lookup,
//!   promoting writes)
//! - [`collector`]: root registration and promotion-aware copy collection
//! - [`runtime`]: fork/join over work-stealing workers, deterministic replay
//! - [`audit`]: disentanglement and forwarding-chain auditors
//! - [`bench`]: the benchmark corpus and harness entry points
//! - [`report`]: the statistics report emitted by the harness

pub mod audit;
pub mod bench;
pub mod collector;
pub mod hierarchy;
pub mod mem;
pub mod memops;
pub mod report;
pub mod runtime;
pub mod rwlock;
pub mod stats;
pub mod store;
pub mod task;
pub mod trace;
pub mod util;

pub use audit::{AuditMode, AuditReport};
pub use collector::{CollectionReport, RootCell, RootId};
pub use hierarchy::HeapId;
pub use mem::{Mem, MemConfig};
pub use memops::{EntanglementError, MasterHandle};
pub use rwlock::LockMode;
pub use runtime::{forkjoin, Runtime, RuntimeConfig, StealRecord};
pub use stats::{Locality, OpClass, OpClassKey, StatsSnapshot};
pub use store::{FieldDescriptor, FieldKind, Mutability, ObjRef, ObjectLayout, Value};
pub use task::{current_heap, current_task, with_task_at, TaskId, TaskValue};
