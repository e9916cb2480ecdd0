//! Deterministic virtual clock with a pending event queue. All simulated
//! delays (audio pacing, backend compute) are charged here, so runs are
//! reproducible regardless of host speed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// f64 seconds with a total order, usable as a heap key.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeKey(pub f64);

impl Eq for TimeKey {}

impl PartialOrd for TimeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Entry<E> {
    at: TimeKey,
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
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the BinaryHeap pops the earliest (time, seq) first;
        // equal-time events run in scheduling order.
        other.at.cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Current virtual time plus the pending event queue. Time never goes
/// backwards; same-instant events pop in FIFO order.
pub struct VirtualClock<E> {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Entry<E>>,
}

impl<E> Default for VirtualClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> VirtualClock<E> {
    pub fn new() -> Self {
        VirtualClock { now: 0.0, seq: 0, queue: BinaryHeap::new() }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    /// Schedules an event at absolute time `at` (clamped to now).
    pub fn schedule(&mut self, at: f64, event: E) {
        let at = if at < self.now { self.now } else { at };
        let entry = Entry { at: TimeKey(at), seq: self.seq, event };
        self.seq += 1;
        self.queue.push(entry);
    }

    pub fn schedule_in(&mut self, delay: f64, event: E) {
        debug_assert!(delay >= 0.0);
        self.schedule(self.now + delay, event);
    }

    /// Pops the next event, advancing the clock to its time.
    pub fn pop(&mut self) -> Option<(f64, E)> {
        let entry = self.queue.pop()?;
        debug_assert!(entry.at.0 >= self.now, "virtual time must not go backwards");
        self.now = entry.at.0;
        Some((self.now, entry.event))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_order_with_fifo_ties() {
        let mut clock: VirtualClock<&str> = VirtualClock::new();
        clock.schedule(2.0, "late");
        clock.schedule(1.0, "a");
        clock.schedule(1.0, "b");
        clock.schedule(0.5, "first");
        let order: Vec<&str> = std::iter::from_fn(|| clock.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec!["first", "a", "b", "late"]);
    }

    #[test]
    fn time_is_nondecreasing_and_tracks_events() {
        let mut clock: VirtualClock<u32> = VirtualClock::new();
        clock.schedule(1.5, 1);
        let (t, _) = clock.pop().unwrap();
        assert_eq!(t, 1.5);
        assert_eq!(clock.now(), 1.5);
        // Scheduling in the past clamps to now.
        clock.schedule(0.5, 2);
        let (t, _) = clock.pop().unwrap();
        assert_eq!(t, 1.5);
        clock.schedule_in(0.25, 3);
        let (t, _) = clock.pop().unwrap();
        assert!((t - 1.75).abs() < 1e-12);
        assert!(clock.is_empty());
    }
}
