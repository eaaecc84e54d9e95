//! The two structures the control loop shares with the connection handler.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use crate::sim::OperatorInput;

/// A command the loop has picked up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posted {
    pub input: OperatorInput,
    /// Sequence number, `None` for the hold posted on disconnect.
    pub seq: Option<u64>,
    /// Control cycle that was running when the command arrived.
    pub received_cycle: u64,
}

#[derive(Debug, Default)]
struct Slot {
    latest: Option<Posted>,
    last_seq: Option<u64>,
}

/// Latest-value mailbox: a newer sequence number replaces the held command,
/// an older or repeated one is dropped.
#[derive(Debug, Default)]
pub struct CommandMailbox {
    slot: Mutex<Slot>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl CommandMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Offer a command; returns whether it was accepted.
    pub fn offer(&self, seq: u64, input: OperatorInput, received_cycle: u64) -> bool {
        let mut slot = lock(&self.slot);
        if slot.last_seq.is_some_and(|last| seq <= last) {
            return false;
        }
        slot.last_seq = Some(seq);
        slot.latest = Some(Posted { input, seq: Some(seq), received_cycle });
        true
    }

    /// Replace the command with a zero twist and forget the sequence, so a
    /// new connection may start numbering again.
    pub fn hold(&self, received_cycle: u64) {
        let mut slot = lock(&self.slot);
        slot.last_seq = None;
        slot.latest = Some(Posted { input: OperatorInput::hold(), seq: None, received_cycle });
    }

    /// The command in force, if any has been posted.
    pub fn latest(&self) -> Option<Posted> {
        lock(&self.slot).latest
    }
}

#[derive(Debug)]
struct Queue<T> {
    items: VecDeque<T>,
    dropped: u64,
    closed: bool,
}

/// Bounded single-producer queue that drops its oldest entry when full, so
/// the producer never waits.
#[derive(Debug)]
pub struct TelemetryQueue<T> {
    queue: Mutex<Queue<T>>,
    ready: Condvar,
    capacity: usize,
}

impl<T> TelemetryQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "telemetry queue needs room for one entry");
        Self {
            queue: Mutex::new(Queue { items: VecDeque::with_capacity(capacity), dropped: 0, closed: false }),
            ready: Condvar::new(),
            capacity,
        }
    }

    pub fn push(&self, item: T) {
        let mut q = lock(&self.queue);
        if q.items.len() == self.capacity {
            q.items.pop_front();
            q.dropped += 1;
        }
        q.items.push_back(item);
        drop(q);
        self.ready.notify_one();
    }

    /// Wait up to `timeout` for an entry. `None` on timeout or once the queue
    /// is closed and drained.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let q = lock(&self.queue);
        let (mut q, _) = self
            .ready
            .wait_timeout_while(q, timeout, |q| q.items.is_empty() && !q.closed)
            .unwrap_or_else(|e| e.into_inner());
        q.items.pop_front()
    }

    /// Discard everything queued.
    pub fn clear(&self) {
        lock(&self.queue).items.clear();
    }

    /// Wake any waiting consumer for good.
    pub fn close(&self) {
        lock(&self.queue).closed = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        lock(&self.queue).items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries discarded because the queue was full.
    pub fn dropped(&self) -> u64 {
        lock(&self.queue).dropped
    }
}
