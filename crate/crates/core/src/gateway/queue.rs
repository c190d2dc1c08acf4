//! Bounded per-session outbound queue.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

/// Outbound line plus whether it may be dropped under backpressure.
#[derive(Debug, Clone)]
pub struct Outbound {
    pub line: Arc<str>,
    pub droppable: bool,
}

#[derive(Debug, Default)]
struct Inner {
    items: VecDeque<Outbound>,
    closed: bool,
}

/// When full, the oldest droppable line makes room and the session is
/// flagged lagged. Undroppable lines are always accepted; past `hard_cap`
/// lines in total the queue closes, which disconnects the session.
#[derive(Debug)]
pub struct SessionQueue {
    inner: Mutex<Inner>,
    ready: Condvar,
    capacity: usize,
    hard_cap: usize,
    dropped: AtomicU64,
    lagged: AtomicBool,
    needs_resync: AtomicBool,
}

impl SessionQueue {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        SessionQueue {
            inner: Mutex::new(Inner::default()),
            ready: Condvar::new(),
            capacity,
            hard_cap: capacity * 8,
            dropped: AtomicU64::new(0),
            lagged: AtomicBool::new(false),
            needs_resync: AtomicBool::new(false),
        }
    }

    /// Returns false if the queue is closed.
    pub fn push(&self, item: Outbound) -> bool {
        let mut g = self.inner.lock().expect("queue lock");
        if g.closed {
            return false;
        }
        if g.items.len() >= self.capacity {
            if item.droppable {
                let victim = g.items.iter().position(|o| o.droppable);
                match victim {
                    Some(i) => {
                        g.items.remove(i);
                    }
                    // nothing older to shed; shed the new one
                    None => {
                        self.note_drop();
                        return true;
                    }
                }
                self.note_drop();
            } else if g.items.len() >= self.hard_cap {
                g.closed = true;
                self.ready.notify_all();
                return false;
            }
        }
        g.items.push_back(item);
        self.ready.notify_one();
        true
    }

    /// Counts a line withheld from a session that awaits resync.
    pub fn shed(&self) {
        self.dropped.fetch_add(1, Ordering::Relaxed);
    }

    fn note_drop(&self) {
        self.dropped.fetch_add(1, Ordering::Relaxed);
        self.lagged.store(true, Ordering::Relaxed);
        self.needs_resync.store(true, Ordering::Relaxed);
    }

    /// Blocks until a line is available. `None` once closed and drained.
    pub fn pop(&self, timeout: Duration) -> Option<Option<Outbound>> {
        let mut g = self.inner.lock().expect("queue lock");
        loop {
            if let Some(o) = g.items.pop_front() {
                return Some(Some(o));
            }
            if g.closed {
                return None;
            }
            let (ng, t) = self.ready.wait_timeout(g, timeout).expect("queue lock");
            g = ng;
            if t.timed_out() && g.items.is_empty() {
                return if g.closed { None } else { Some(None) };
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.inner.lock().expect("queue lock").items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock").items.len()
    }

    pub fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("queue lock").closed
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    /// True once any line has been dropped.
    pub fn lagged(&self) -> bool {
        self.lagged.load(Ordering::Relaxed)
    }

    /// True from a drop until the replacement snapshot is taken.
    pub fn needs_resync(&self) -> bool {
        self.needs_resync.load(Ordering::Relaxed)
    }

    /// Clears and returns the "send a fresh snapshot" flag, but only once
    /// the backlog has drained to half capacity, so a stalled client costs
    /// no snapshot per cut.
    pub fn take_resync(&self) -> bool {
        if !self.needs_resync() || self.len() > self.capacity / 2 {
            return false;
        }
        self.needs_resync.swap(false, Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(s: &str, droppable: bool) -> Outbound {
        Outbound {
            line: Arc::from(s),
            droppable,
        }
    }

    fn drain(q: &SessionQueue) -> Vec<String> {
        let mut v = Vec::new();
        while let Some(Some(o)) = q.pop(Duration::from_millis(1)) {
            v.push(o.line.to_string());
        }
        v
    }

    #[test]
    fn full_queue_drops_oldest_delta_and_keeps_acks() {
        let q = SessionQueue::new(3);
        q.push(line("d1", true));
        q.push(line("ack", false));
        q.push(line("d2", true));
        q.push(line("d3", true));
        assert_eq!(drain(&q), vec!["ack", "d2", "d3"]);
        assert!(q.lagged());
        assert_eq!(q.dropped(), 1);
        assert!(q.take_resync());
        assert!(!q.take_resync());
    }

    #[test]
    fn undroppable_lines_overflow_until_the_hard_cap() {
        let q = SessionQueue::new(2);
        for i in 0..16 {
            assert!(q.push(line(&format!("a{i}"), false)));
        }
        assert!(!q.push(line("a16", false)));
        assert!(q.is_closed());
        assert_eq!(drain(&q).len(), 16);
        assert!(q.pop(Duration::from_millis(1)).is_none());
    }

    #[test]
    fn resync_waits_for_the_backlog_to_drain() {
        let q = SessionQueue::new(4);
        for i in 0..6 {
            q.push(line(&format!("d{i}"), true));
        }
        assert!(q.needs_resync());
        assert!(!q.take_resync());
        q.pop(Duration::from_millis(1));
        q.pop(Duration::from_millis(1));
        assert!(q.take_resync());
        assert!(!q.needs_resync());
    }

    #[test]
    fn delta_is_shed_when_only_acks_are_queued() {
        let q = SessionQueue::new(1);
        q.push(line("ack", false));
        q.push(line("d", true));
        assert_eq!(drain(&q), vec!["ack"]);
        assert_eq!(q.dropped(), 1);
    }
}
