//! Deterministic in-process backend: a priority queue of pending deliveries.
//!
//! Items come out in `(time, phase, sender, kind)` order; items with equal
//! keys come out in the order they were enqueued.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::clock::VirtualTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OrderKey {
    pub time: VirtualTime,
    /// Coarse class of the event at one instant (lower first).
    pub phase: u8,
    pub sender: u64,
    pub kind: u8,
}

struct Entry<T> {
    key: OrderKey,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.key, self.seq) == (other.key, other.seq)
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.key, self.seq).cmp(&(other.key, other.seq))
    }
}

pub struct InProcQueue<T> {
    heap: BinaryHeap<Reverse<Entry<T>>>,
    seq: u64,
}

impl<T> Default for InProcQueue<T> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }
}

impl<T> InProcQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, key: OrderKey, item: T) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(Entry { key, seq, item }));
    }

    pub fn dequeue(&mut self) -> Option<(OrderKey, T)> {
        self.heap.pop().map(|Reverse(e)| (e.key, e.item))
    }

    pub fn peek_key(&self) -> Option<OrderKey> {
        self.heap.peek().map(|Reverse(e)| e.key)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
