//! Shared plumbing: an append-only concurrent table and a mixing hash.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

const SEG_SHIFT: usize = 12;
const SEG_LEN: usize = 1 << SEG_SHIFT;
const MAX_SEGS: usize = 1024;

/// Append-only table with lock-free reads and serialized appends.
///
/// Entries never move once pushed, so an index handed out by `push` stays
/// valid for the life of the table. Readers see an entry only after the
/// release-store of `len` that published it.
pub struct AppendVec<T> {
    spine: Box<[OnceLock<Box<[OnceLock<T>]>>]>,
    len: AtomicUsize,
    push_lock: Mutex<()>,
}

impl<T> AppendVec<T> {
    pub fn new() -> Self {
        AppendVec {
            spine: (0..MAX_SEGS).map(|_| OnceLock::new()).collect(),
            len: AtomicUsize::new(0),
            push_lock: Mutex::new(()),
        }
    }

    pub fn push(&self, value: T) -> usize {
        self.push_with(|_| value)
    }

    /// Appends the value built by `f`, which receives the entry's final
    /// index. The index is assigned under the push lock, so values that
    /// embed their own index stay consistent under concurrent pushes.
    pub fn push_with(&self, f: impl FnOnce(usize) -> T) -> usize {
        let _guard = self.push_lock.lock().unwrap();
        let idx = self.len.load(Ordering::Relaxed);
        assert!(idx < MAX_SEGS * SEG_LEN, "append table full");
        let seg = self.spine[idx >> SEG_SHIFT]
            .get_or_init(|| (0..SEG_LEN).map(|_| OnceLock::new()).collect());
        if seg[idx & (SEG_LEN - 1)].set(f(idx)).is_err() {
            panic!("append slot already occupied");
        }
        self.len.store(idx + 1, Ordering::Release);
        idx
    }

    pub fn get(&self, idx: usize) -> Option<&T> {
        if idx >= self.len.load(Ordering::Acquire) {
            return None;
        }
        self.spine[idx >> SEG_SHIFT].get()?[idx & (SEG_LEN - 1)].get()
    }

    pub fn len(&self) -> usize {
        self.len.load(Ordering::Acquire)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        (0..self.len()).filter_map(move |i| self.get(i))
    }
}

impl<T> Default for AppendVec<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// SplitMix64 finalizer. Benchmarks use it to generate input elements from an
/// index and a seed, so expected values can be recomputed independently.
pub fn splitmix64(seed: u64) -> u64 {
    let mut x = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn append_vec_push_get() {
        let v = AppendVec::new();
        for i in 0..10_000usize {
            assert_eq!(v.push(i * 3), i);
        }
        assert_eq!(v.len(), 10_000);
        assert_eq!(v.get(0), Some(&0));
        assert_eq!(v.get(9_999), Some(&(9_999 * 3)));
        assert_eq!(v.get(10_000), None);
    }

    #[test]
    fn append_vec_concurrent_readers() {
        let v = Arc::new(AppendVec::new());
        let writer = {
            let v = v.clone();
            std::thread::spawn(move || {
                for i in 0..50_000u64 {
                    v.push(i);
                }
            })
        };
        let reader = {
            let v = v.clone();
            std::thread::spawn(move || {
                let mut seen = 0;
                while seen < 50_000 {
                    let n = v.len();
                    for i in seen..n {
                        assert_eq!(v.get(i), Some(&(i as u64)));
                    }
                    seen = n;
                }
            })
        };
        writer.join().unwrap();
        reader.join().unwrap();
    }

    #[test]
    fn splitmix_is_stable() {
        assert_ne!(splitmix64(1), splitmix64(2));
        assert_eq!(splitmix64(42), splitmix64(42));
    }
}
