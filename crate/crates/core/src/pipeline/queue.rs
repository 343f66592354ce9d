//! Bounded FIFO that evicts its oldest item on overflow.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use super::metrics::StageCounts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PopTimeout;

pub struct DropOldestQueue<T> {
    inner: Mutex<Inner<T>>,
    ready: Condvar,
    capacity: usize,
    pushed: AtomicU64,
    popped: AtomicU64,
    dropped: AtomicU64,
}

struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "queue capacity must be >= 1");
        Self {
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            ready: Condvar::new(),
            capacity,
            pushed: AtomicU64::new(0),
            popped: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner<T>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Enqueues `item`, returning the evicted oldest item if the queue was
    /// full. Items pushed after `close` are dropped and counted.
    pub fn push(&self, item: T) -> Option<T> {
        let mut g = self.lock();
        self.pushed.fetch_add(1, Ordering::Relaxed);
        if g.closed {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            return Some(item);
        }
        let evicted = if g.items.len() >= self.capacity {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            g.items.pop_front()
        } else {
            None
        };
        g.items.push_back(item);
        drop(g);
        self.ready.notify_one();
        evicted
    }

    /// Blocks until an item is available. `None` once the queue is closed
    /// and drained.
    pub fn pop(&self) -> Option<T> {
        let mut g = self.lock();
        loop {
            if let Some(item) = g.items.pop_front() {
                self.popped.fetch_add(1, Ordering::Relaxed);
                return Some(item);
            }
            if g.closed {
                return None;
            }
            g = self.ready.wait(g).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Like [`pop`](Self::pop) with a deadline.
    pub fn pop_timeout(&self, timeout: Duration) -> Result<Option<T>, PopTimeout> {
        let mut g = self.lock();
        let deadline = std::time::Instant::now() + timeout;
        loop {
            if let Some(item) = g.items.pop_front() {
                self.popped.fetch_add(1, Ordering::Relaxed);
                return Ok(Some(item));
            }
            if g.closed {
                return Ok(None);
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return Err(PopTimeout);
            }
            g = self
                .ready
                .wait_timeout(g, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Consistent with respect to concurrent pushes and pops.
    pub fn counts(&self) -> StageCounts {
        let _g = self.lock();
        StageCounts {
            in_count: self.pushed.load(Ordering::Relaxed),
            out_count: self.popped.load(Ordering::Relaxed),
            dropped_count: self.dropped.load(Ordering::Relaxed),
        }
    }
}
