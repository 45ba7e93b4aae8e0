//! Per-heap readers-writer lock.
//!
//! Writer-preference: once a writer is waiting, new readers queue behind it,
//! so promotions make progress under heavy master-lookup read traffic.
//! Non-reentrant; holders are tracked by thread id so reentrancy and foreign
//! unlocks panic instead of deadlocking or corrupting state.

use std::sync::{Condvar, Mutex};
use std::thread::{self, ThreadId};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LockMode {
    Read,
    Write,
}

#[derive(Default)]
struct LockState {
    readers: u32,
    writer: bool,
    writers_waiting: u32,
    reader_threads: Vec<ThreadId>,
    writer_thread: Option<ThreadId>,
}

pub(crate) struct HeapLock {
    state: Mutex<LockState>,
    readers_cv: Condvar,
    writers_cv: Condvar,
}

impl HeapLock {
    pub(crate) fn new() -> HeapLock {
        HeapLock {
            state: Mutex::new(LockState::default()),
            readers_cv: Condvar::new(),
            writers_cv: Condvar::new(),
        }
    }

    pub(crate) fn lock(&self, mode: LockMode) {
        let me = thread::current().id();
        let mut s = self.state.lock().unwrap();
        assert!(
            s.writer_thread != Some(me) && !s.reader_threads.contains(&me),
            "reentrant heap-lock acquisition"
        );
        match mode {
            LockMode::Read => {
                while s.writer || s.writers_waiting > 0 {
                    s = self.readers_cv.wait(s).unwrap();
                }
                s.readers += 1;
                s.reader_threads.push(me);
            }
            LockMode::Write => {
                s.writers_waiting += 1;
                while s.writer || s.readers > 0 {
                    s = self.writers_cv.wait(s).unwrap();
                }
                s.writers_waiting -= 1;
                s.writer = true;
                s.writer_thread = Some(me);
            }
        }
    }

    /// Releases the calling thread's hold and reports which mode it held.
    pub(crate) fn unlock(&self) -> LockMode {
        let me = thread::current().id();
        let mut s = self.state.lock().unwrap();
        if s.writer {
            assert_eq!(s.writer_thread, Some(me), "unlock of a write hold by another thread");
            s.writer = false;
            s.writer_thread = None;
            if s.writers_waiting > 0 {
                self.writers_cv.notify_one();
            } else {
                self.readers_cv.notify_all();
            }
            LockMode::Write
        } else {
            let pos = s
                .reader_threads
                .iter()
                .position(|t| *t == me)
                .expect("unlock without a lock hold");
            s.reader_threads.swap_remove(pos);
            s.readers -= 1;
            if s.readers == 0 && s.writers_waiting > 0 {
                self.writers_cv.notify_one();
            }
            LockMode::Read
        }
    }

    pub(crate) fn write_held_by_current(&self) -> bool {
        let s = self.state.lock().unwrap();
        s.writer_thread == Some(thread::current().id())
    }

    pub(crate) fn read_held_by_current(&self) -> bool {
        let s = self.state.lock().unwrap();
        s.reader_threads.contains(&thread::current().id())
    }

    pub(crate) fn is_unheld(&self) -> bool {
        let s = self.state.lock().unwrap();
        !s.writer && s.readers == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;
    use std::time::{Duration, Instant};

    #[test]
    fn concurrent_readers_admitted() {
        // Both readers hold the lock at the barrier; if READ were exclusive
        // the second could never arrive.
        let lock = Arc::new(HeapLock::new());
        let barrier = Arc::new(std::sync::Barrier::new(2));
        let mut handles = Vec::new();
        for _ in 0..2 {
            let (lock, barrier) = (lock.clone(), barrier.clone());
            handles.push(std::thread::spawn(move || {
                lock.lock(LockMode::Read);
                barrier.wait();
                lock.unlock();
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn write_excludes_readers() {
        let lock = Arc::new(HeapLock::new());
        lock.lock(LockMode::Read);
        let acquired = Arc::new(AtomicBool::new(false));
        let writer = {
            let (lock, acquired) = (lock.clone(), acquired.clone());
            std::thread::spawn(move || {
                lock.lock(LockMode::Write);
                acquired.store(true, Ordering::SeqCst);
                lock.unlock();
            })
        };
        std::thread::sleep(Duration::from_millis(30));
        assert!(!acquired.load(Ordering::SeqCst), "writer overlapped a reader");
        lock.unlock();
        writer.join().unwrap();
        assert!(acquired.load(Ordering::SeqCst));
    }

    #[test]
    fn stress_writer_never_overlaps_readers() {
        // Timestamp-log overlap checker: record (start, end, is_writer)
        // intervals and assert every writer interval is disjoint from all
        // other intervals.
        let lock = Arc::new(HeapLock::new());
        let log = Arc::new(Mutex::new(Vec::<(Instant, Instant, bool)>::new()));
        let mut handles = Vec::new();
        for t in 0..5 {
            let (lock, log) = (lock.clone(), log.clone());
            let writer = t == 0;
            handles.push(std::thread::spawn(move || {
                for _ in 0..200 {
                    lock.lock(if writer { LockMode::Write } else { LockMode::Read });
                    let start = Instant::now();
                    std::hint::spin_loop();
                    let end = Instant::now();
                    lock.unlock();
                    log.lock().unwrap().push((start, end, writer));
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let log = log.lock().unwrap();
        let writers: Vec<_> = log.iter().filter(|e| e.2).collect();
        for w in &writers {
            for e in log.iter() {
                if std::ptr::eq(*w, e) {
                    continue;
                }
                let disjoint = w.1 <= e.0 || e.1 <= w.0;
                assert!(disjoint, "writer critical section overlapped another holder");
            }
        }
    }

    #[test]
    #[should_panic(expected = "reentrant")]
    fn reentrant_read_rejected() {
        let lock = HeapLock::new();
        lock.lock(LockMode::Read);
        lock.lock(LockMode::Read);
    }

    #[test]
    #[should_panic(expected = "unlock without a lock hold")]
    fn unlock_without_hold_rejected() {
        let lock = HeapLock::new();
        lock.unlock();
    }
}
