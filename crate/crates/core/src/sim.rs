//! Deterministic event kernel.
//!
//! Events are ordered by `(fire_time, sequence)`, where `sequence` is a
//! global counter assigned at scheduling time, so two events that fire at the
//! same nanosecond always pop in the order they were scheduled. The kernel is
//! generic over the payload so each architecture can carry its own event
//! enum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::SimError;

/// Simulated time in integer nanoseconds.
pub type Nanos = u64;

/// Coarse classification of kernel events, used for tracing and counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    RequestArrival,
    FlashOpComplete,
    TransferComplete,
    ScoutStep,
    ControllerIdle,
    GcTrigger,
}

/// Handle returned by [`EventQueue::schedule`]; equal to the event's sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent<P> {
    pub fire_time: Nanos,
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: P,
}

struct Entry<P>(SimEvent<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_time == other.0.fire_time && self.0.sequence == other.0.sequence
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; invert so the earliest event is on top.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_time, other.0.sequence).cmp(&(self.0.fire_time, self.0.sequence))
    }
}

/// The simulation clock. `now` only moves forward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: Nanos,
}

impl SimClock {
    pub fn now(&self) -> Nanos {
        self.now
    }

    fn advance_to(&mut self, t: Nanos) {
        assert!(t >= self.now, "clock moved backwards: {} -> {}", self.now, t);
        self.now = t;
    }
}

/// Priority queue of pending events plus the clock they drive.
pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    clock: SimClock,
    next_sequence: u64,
    processed: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            clock: SimClock::default(),
            next_sequence: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> Nanos {
        self.clock.now()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Number of events popped so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Schedule `payload` at absolute time `fire_time`.
    ///
    /// Scheduling in the past is a logic error in the caller and is rejected.
    pub fn schedule(
        &mut self,
        fire_time: Nanos,
        kind: EventKind,
        payload: P,
    ) -> Result<EventHandle, SimError> {
        if fire_time < self.clock.now() {
            return Err(SimError::EventInPast {
                fire_time,
                now: self.clock.now(),
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Entry(SimEvent {
            fire_time,
            sequence,
            kind,
            payload,
        }));
        Ok(EventHandle(sequence))
    }

    /// Schedule relative to the current time.
    pub fn schedule_in(&mut self, delay: Nanos, kind: EventKind, payload: P) -> EventHandle {
        let t = self.clock.now() + delay;
        self.schedule(t, kind, payload)
            .expect("relative schedule cannot be in the past")
    }

    /// Pop the earliest event and move the clock to it. `None` means the
    /// simulation has drained.
    pub fn advance(&mut self) -> Option<SimEvent<P>> {
        let Entry(ev) = self.heap.pop()?;
        self.clock.advance_to(ev.fire_time);
        self.processed += 1;
        Some(ev)
    }

    /// Move the clock to `t` for an event kept outside the heap (e.g. a
    /// presorted arrival stream). The caller must only do this when `t` is
    /// not after [`peek_time`](Self::peek_time).
    pub fn advance_external(&mut self, t: Nanos) -> Result<(), SimError> {
        if t < self.clock.now() {
            return Err(SimError::EventInPast {
                fire_time: t,
                now: self.clock.now(),
            });
        }
        self.clock.advance_to(t);
        self.processed += 1;
        Ok(())
    }

    pub fn peek_time(&self) -> Option<Nanos> {
        self.heap.peek().map(|e| e.0.fire_time)
    }
}

/// Two-bit Fibonacci LFSR with feedback polynomial x² + x + 1.
///
/// The register cycles 1 → 2 → 3 → 1 and never reaches zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lfsr2 {
    state: u8,
}

impl Lfsr2 {
    /// Builds a register from an arbitrary seed. A seed whose low two bits
    /// are zero is mapped to state 1 since the all-zero state is a fixed point.
    pub fn from_seed(seed: u64) -> Self {
        let s = (seed & 0b11) as u8;
        Self {
            state: if s == 0 { 1 } else { s },
        }
    }

    /// Per-router register: global seed XOR router id.
    pub fn for_router(global_seed: u64, router: usize) -> Self {
        Self::from_seed(global_seed ^ router as u64)
    }

    pub fn state(&self) -> u8 {
        self.state
    }

    /// Shift once: new_bit = b1 XOR b0, shifted in at the top.
    pub fn step(&mut self) -> u8 {
        let b0 = self.state & 1;
        let b1 = (self.state >> 1) & 1;
        let fb = b0 ^ b1;
        self.state = (fb << 1) | b1;
        self.state
    }

    /// Advance one step and map the new state onto `[0, n_choices)`.
    pub fn pick(&mut self, n_choices: usize) -> usize {
        assert!(
            (2..=4).contains(&n_choices),
            "lfsr pick supports 2..=4 choices, got {n_choices}"
        );
        let s = self.step();
        (s as usize - 1) % n_choices
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new();
        q.schedule(5, EventKind::RequestArrival, 'b').unwrap();
        q.schedule(3, EventKind::RequestArrival, 'a').unwrap();
        assert_eq!(q.advance().unwrap().payload, 'a');
        assert_eq!(q.now(), 3);
        assert_eq!(q.advance().unwrap().payload, 'b');
        assert!(q.advance().is_none());
        assert_eq!(q.now(), 5);
    }

    #[test]
    fn equal_times_pop_in_schedule_order() {
        let mut q = EventQueue::new();
        q.schedule(7, EventKind::ScoutStep, "A").unwrap();
        q.schedule(7, EventKind::ScoutStep, "B").unwrap();
        assert_eq!(q.advance().unwrap().payload, "A");
        assert_eq!(q.advance().unwrap().payload, "B");
    }

    #[test]
    fn rejects_past_events() {
        let mut q = EventQueue::new();
        q.schedule(2, EventKind::GcTrigger, ()).unwrap();
        q.advance();
        assert!(matches!(
            q.schedule(1, EventKind::GcTrigger, ()),
            Err(SimError::EventInPast { fire_time: 1, now: 2 })
        ));
    }

    #[test]
    fn empty_queue_is_end_of_simulation() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert!(q.advance().is_none());
        assert_eq!(q.now(), 0);
    }

    #[test]
    fn lfsr_period_three_and_nonzero() {
        for seed in 0..16u64 {
            let mut l = Lfsr2::from_seed(seed);
            let start = l.state();
            let seq: Vec<u8> = (0..3).map(|_| l.step()).collect();
            assert!(seq.iter().all(|&s| (1..=3).contains(&s)));
            assert_eq!(l.state(), start);
            let mut sorted = seq.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![1, 2, 3]);
        }
    }

    #[test]
    fn lfsr_pick_three_covers_each_index_once_per_period() {
        // Enumerate the cycle independently: the successor map of x^2+x+1 taps.
        let successor = |s: u8| -> u8 { (((s & 1) ^ (s >> 1)) << 1) | (s >> 1) };
        assert_eq!(successor(1), 2);
        assert_eq!(successor(2), 3);
        assert_eq!(successor(3), 1);
        let mut l = Lfsr2::from_seed(1);
        let mut picks: Vec<usize> = (0..3).map(|_| l.pick(3)).collect();
        picks.sort_unstable();
        assert_eq!(picks, vec![0, 1, 2]);
    }

    #[test]
    fn lfsr_pick_two_hits_both_in_any_window() {
        let mut l = Lfsr2::from_seed(3);
        let picks: Vec<usize> = (0..30).map(|_| l.pick(2)).collect();
        for w in picks.windows(3) {
            assert!(w.contains(&0) && w.contains(&1), "{w:?}");
        }
    }

    #[test]
    fn lfsr_is_deterministic() {
        let mut a = Lfsr2::for_router(0xdead_beef, 12);
        let mut b = Lfsr2::for_router(0xdead_beef, 12);
        for n in [2, 3, 4, 2, 2, 4, 3] {
            assert_eq!(a.pick(n), b.pick(n));
        }
    }
}
