use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::time::SimTime;

/// Handle returned by [`Scheduler::schedule`]; pass it to [`Scheduler::cancel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .cmp(&self.at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Global event queue with a `(fire_at, sequence)` total order.
///
/// Events scheduled for the same instant run in insertion order. Cancellation is
/// lazy: cancelled sequence numbers are skipped when they reach the head.
pub struct Scheduler<E> {
    now: SimTime,
    heap: BinaryHeap<Entry<E>>,
    next_seq: u64,
    cancelled: HashSet<u64>,
    last_progress: SimTime,
    executed: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            heap: BinaryHeap::new(),
            next_seq: 0,
            cancelled: HashSet::new(),
            last_progress: SimTime::ZERO,
            executed: 0,
        }
    }

    #[inline]
    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueue `event` to fire at `at`.
    ///
    /// Scheduling in the past is a logic error in the caller and aborts.
    pub fn schedule(&mut self, at: SimTime, event: E) -> EventHandle {
        assert!(
            at >= self.now,
            "event scheduled in the past: fire_at={at} < now={}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, event });
        EventHandle(seq)
    }

    #[inline]
    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventHandle {
        self.schedule(self.now + delay, event)
    }

    /// Cancel a pending event. Cancelling an event that already fired is a no-op
    /// as long as the handle is not reused, which sequence numbers never are.
    pub fn cancel(&mut self, handle: EventHandle) {
        self.cancelled.insert(handle.0);
    }

    /// Number of queued entries, including lazily-cancelled ones.
    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn events_executed(&self) -> u64 {
        self.executed
    }

    /// Record that the model made forward progress (fed to the deadlock watchdog).
    #[inline]
    pub fn note_progress(&mut self) {
        self.last_progress = self.now;
    }

    pub fn last_progress(&self) -> SimTime {
        self.last_progress
    }

    /// Fire time of the next live event, discarding cancelled heads.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(head) = self.heap.peek() {
            if !self.cancelled.is_empty() && self.cancelled.remove(&head.seq) {
                self.heap.pop();
                continue;
            }
            return Some(head.at);
        }
        None
    }

    /// Pop the next live event and advance the clock to its fire time.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        while let Some(entry) = self.heap.pop() {
            if !self.cancelled.is_empty() && self.cancelled.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.at >= self.now, "clock went backwards");
            self.now = entry.at;
            self.executed += 1;
            return Some((entry.at, entry.event));
        }
        None
    }

    pub(crate) fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_instant_runs_in_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(10), 'a');
        s.schedule(SimTime(10), 'b');
        s.schedule(SimTime(5), 'c');
        s.schedule(SimTime(10), 'd');
        let order: Vec<char> = std::iter::from_fn(|| s.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec!['c', 'a', 'b', 'd']);
    }

    #[test]
    fn schedule_now_fires_after_current() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::ZERO, 1);
        let (t, e) = s.pop().unwrap();
        assert_eq!((t, e), (SimTime::ZERO, 1));
        s.schedule(SimTime::ZERO, 2);
        assert_eq!(s.pop(), Some((SimTime::ZERO, 2)));
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut s = Scheduler::new();
        let h = s.schedule(SimTime(3), "timer");
        s.schedule(SimTime(4), "other");
        s.cancel(h);
        assert_eq!(s.pop(), Some((SimTime(4), "other")));
        assert_eq!(s.pop(), None);
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn scheduling_in_the_past_aborts() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(10), ());
        s.pop();
        s.schedule(SimTime(9), ());
    }
}
