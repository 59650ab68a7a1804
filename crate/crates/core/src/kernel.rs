//! Deterministic discrete-event engine.
//!
//! The clock is fixed-point: one tick is a nanosecond of simulated time, and
//! every public conversion is expressed in milliseconds. Events are dispatched
//! in `(fire_at, seq)` order, where `seq` is the insertion counter, so events
//! scheduled for the same instant run in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const TICKS_PER_MS: u64 = 1_000_000;

/// A point (or span) on the simulation clock, in nanosecond ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ticks(ticks: u64) -> Self {
        SimTime(ticks)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * TICKS_PER_MS)
    }

    /// Rounds to the nearest tick. Negative and non-finite inputs map to `None`.
    pub fn from_ms_f64(ms: f64) -> Option<Self> {
        if !ms.is_finite() || ms < 0.0 {
            return None;
        }
        Some(SimTime((ms * TICKS_PER_MS as f64).round() as u64))
    }

    /// Rounds up to the next tick, so that an event fired at the result never
    /// precedes the exact real-valued instant.
    pub fn from_ms_f64_ceil(ms: f64) -> Option<Self> {
        if !ms.is_finite() || ms < 0.0 {
            return None;
        }
        Some(SimTime((ms * TICKS_PER_MS as f64).ceil() as u64))
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / TICKS_PER_MS as f64
    }

    /// Length of one tick in milliseconds.
    pub const fn quantum_ms() -> f64 {
        1.0 / TICKS_PER_MS as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("SimTime subtraction underflow"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.as_ms())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

/// Identifier of a scheduled event; equal to its insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: EntityId,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn id(&self) -> EventId {
        EventId(self.seq)
    }
}

/// Heap entry: the ordering key plus the slab slot holding the event. Keeping
/// payloads out of the heap keeps sift-up/down cheap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Key {
    /// `fire_at` in the high half, `seq` in the low half.
    order: u128,
    slot: u32,
}

impl Key {
    fn fire_at(&self) -> SimTime {
        SimTime((self.order >> 64) as u64)
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    // Reversed so that BinaryHeap (a max-heap) pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.order.cmp(&self.order)
    }
}

/// Min-queue of events ordered by `(fire_at, seq)`.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Key>,
    slots: Vec<Option<Event<P>>>,
    free: Vec<u32>,
    next_seq: u64,
    last_popped: SimTime,
    peak_len: usize,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            slots: Vec::new(),
            free: Vec::new(),
            next_seq: 0,
            last_popped: SimTime::ZERO,
            peak_len: 0,
        }
    }

    /// Enqueues an event. The caller guarantees `fire_at` is not earlier than
    /// the last popped event.
    pub fn push(&mut self, fire_at: SimTime, target: EntityId, payload: P) -> EventId {
        debug_assert!(fire_at >= self.last_popped, "event scheduled in the past");
        let seq = self.next_seq;
        self.next_seq += 1;
        let ev = Event {
            fire_at,
            seq,
            target,
            payload,
        };
        let slot = match self.free.pop() {
            Some(i) => {
                self.slots[i as usize] = Some(ev);
                i
            }
            None => {
                self.slots.push(Some(ev));
                (self.slots.len() - 1) as u32
            }
        };
        let order = (fire_at.0 as u128) << 64 | seq as u128;
        self.heap.push(Key { order, slot });
        self.peak_len = self.peak_len.max(self.heap.len());
        EventId(seq)
    }

    pub fn pop(&mut self) -> Option<Event<P>> {
        let key = self.heap.pop()?;
        self.last_popped = key.fire_at();
        self.free.push(key.slot);
        Some(self.slots[key.slot as usize].take().expect("queued slot is occupied"))
    }

    /// Pops the earliest event if it fires at or before `t_end`.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<P>> {
        if self.peek_time()? > t_end {
            return None;
        }
        self.pop()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(Key::fire_at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn peak_len(&self) -> usize {
        self.peak_len
    }

    /// Events still pending, in no particular order.
    pub fn pending(&self) -> impl Iterator<Item = &Event<P>> {
        self.slots.iter().flatten()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("unknown target entity {0:?}")]
    UnknownEntity(EntityId),
    #[error("invalid delay {0} ms: delays must be finite and non-negative")]
    InvalidDelay(f64),
    #[error("cannot schedule at {at} before the current clock {now}")]
    InPast { at: SimTime, now: SimTime },
    #[error("horizon {horizon} is before the current clock {now}")]
    HorizonInPast { horizon: SimTime, now: SimTime },
}

/// A handler failure, tagged with the event that triggered it.
#[derive(Debug, Error)]
#[error("event #{event} for entity {target:?} at {fire_at} failed: {source}")]
pub struct DispatchError<E: std::error::Error + 'static> {
    pub event: u64,
    pub fire_at: SimTime,
    pub target: EntityId,
    #[source]
    pub source: E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub events_processed: u64,
    pub final_clock: SimTime,
}

/// Simulation clock, event queue and entity registry.
#[derive(Debug)]
pub struct Kernel<P> {
    now: SimTime,
    queue: EventQueue<P>,
    entities: Vec<String>,
    processed: u64,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Kernel {
            now: SimTime::ZERO,
            queue: EventQueue::new(),
            entities: Vec::new(),
            processed: 0,
        }
    }

    pub fn register(&mut self, name: impl Into<String>) -> EntityId {
        self.entities.push(name.into());
        EntityId(self.entities.len() as u32 - 1)
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id.0 as usize).map(String::as_str)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn queue(&self) -> &EventQueue<P> {
        &self.queue
    }

    fn check_target(&self, target: EntityId) -> Result<(), KernelError> {
        if (target.0 as usize) < self.entities.len() {
            Ok(())
        } else {
            Err(KernelError::UnknownEntity(target))
        }
    }

    pub fn schedule(&mut self, delay: SimTime, target: EntityId, payload: P) -> Result<EventId, KernelError> {
        self.check_target(target)?;
        Ok(self.queue.push(self.now + delay, target, payload))
    }

    /// Like [`Kernel::schedule`] with a real-valued delay in milliseconds.
    pub fn schedule_ms(&mut self, delay_ms: f64, target: EntityId, payload: P) -> Result<EventId, KernelError> {
        let delay = SimTime::from_ms_f64(delay_ms).ok_or(KernelError::InvalidDelay(delay_ms))?;
        self.schedule(delay, target, payload)
    }

    pub fn schedule_at(&mut self, at: SimTime, target: EntityId, payload: P) -> Result<EventId, KernelError> {
        if at < self.now {
            return Err(KernelError::InPast { at, now: self.now });
        }
        self.check_target(target)?;
        Ok(self.queue.push(at, target, payload))
    }

    /// Dispatches every event with `fire_at <= t_end`, then parks the clock at
    /// `t_end`. A handler error stops the run; the clock stays at the failing
    /// event's time.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<RunStats, RunError<E>>
    where
        E: std::error::Error + 'static,
        F: FnMut(&mut Kernel<P>, Event<P>) -> Result<(), E>,
    {
        if t_end < self.now {
            return Err(RunError::Kernel(KernelError::HorizonInPast {
                horizon: t_end,
                now: self.now,
            }));
        }
        let start = self.processed;
        while let Some(ev) = self.queue.pop_until(t_end) {
            self.now = ev.fire_at;
            self.processed += 1;
            let (seq, fire_at, target) = (ev.seq, ev.fire_at, ev.target);
            handler(self, ev).map_err(|source| {
                RunError::Dispatch(DispatchError {
                    event: seq,
                    fire_at,
                    target,
                    source,
                })
            })?;
        }
        self.now = t_end;
        Ok(RunStats {
            events_processed: self.processed - start,
            final_clock: self.now,
        })
    }
}

#[derive(Debug, Error)]
pub enum RunError<E: std::error::Error + 'static> {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Dispatch(DispatchError<E>),
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn fired(k: &mut Kernel<u32>, t_end: SimTime) -> Vec<(SimTime, u32)> {
        let mut out = Vec::new();
        k.run_until(t_end, |k, ev| {
            out.push((k.now(), ev.payload));
            Ok::<_, Infallible>(())
        })
        .unwrap();
        out
    }

    #[test]
    fn schedule_uses_current_clock() {
        let mut k = Kernel::new();
        let a = k.register("headset");
        k.schedule_ms(6.0, a, 1).unwrap();
        assert_eq!(fired(&mut k, SimTime::from_ms(10)), vec![(SimTime::from_ms(6), 1)]);
    }

    #[test]
    fn equal_times_pop_in_insertion_order() {
        let mut k = Kernel::new();
        let a = k.register("a");
        k.schedule_ms(5.0, a, 1).unwrap();
        k.schedule_ms(5.0, a, 2).unwrap();
        k.schedule_ms(2.0, a, 3).unwrap();
        let order: Vec<u32> = fired(&mut k, SimTime::from_ms(10))
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        assert_eq!(order, vec![3, 1, 2]);
    }

    #[test]
    fn zero_delay_runs_after_queued_peers() {
        let mut k = Kernel::new();
        let a = k.register("a");
        k.schedule_ms(4.0, a, 1).unwrap();
        k.schedule_ms(4.0, a, 2).unwrap();
        let mut seen = Vec::new();
        k.run_until(SimTime::from_ms(10), |k, ev| {
            seen.push(ev.payload);
            if ev.payload == 1 {
                k.schedule(SimTime::ZERO, a, 3).unwrap();
            }
            Ok::<_, Infallible>(())
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_bad_delays_and_targets() {
        let mut k: Kernel<u32> = Kernel::new();
        let a = k.register("a");
        assert_eq!(k.schedule_ms(-1.0, a, 0), Err(KernelError::InvalidDelay(-1.0)));
        assert!(matches!(
            k.schedule_ms(f64::NAN, a, 0),
            Err(KernelError::InvalidDelay(_))
        ));
        assert_eq!(
            k.schedule_ms(1.0, EntityId(7), 0),
            Err(KernelError::UnknownEntity(EntityId(7)))
        );
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut k: Kernel<u32> = Kernel::new();
        assert_eq!(k.now(), SimTime::ZERO);
        let stats = k
            .run_until(SimTime::from_ms(100), |_, _| Ok::<_, Infallible>(()))
            .unwrap();
        assert_eq!(stats.events_processed, 0);
        assert_eq!(k.now(), SimTime::from_ms(100));
    }

    #[test]
    fn horizon_leaves_later_events_queued() {
        let mut k = Kernel::new();
        let a = k.register("a");
        for d in [2.0, 5.0, 5.0] {
            k.schedule_ms(d, a, 0).unwrap();
        }
        let stats = k
            .run_until(SimTime::from_ms(4), |_, _| Ok::<_, Infallible>(()))
            .unwrap();
        assert_eq!(stats.events_processed, 1);
        assert_eq!(k.queue().len(), 2);
        assert_eq!(k.now(), SimTime::from_ms(4));
    }

    #[test]
    fn clock_inside_handler_is_event_time() {
        let mut k = Kernel::new();
        let a = k.register("a");
        k.schedule_ms(42.0, a, 0).unwrap();
        k.schedule_ms(80.0, a, 0).unwrap();
        let mut inside = Vec::new();
        k.run_until(SimTime::from_ms(100), |k, _| {
            inside.push(k.now());
            Ok::<_, Infallible>(())
        })
        .unwrap();
        assert_eq!(inside[0], SimTime::from_ms(42));
        assert_eq!(k.now(), SimTime::from_ms(100));
    }

    #[test]
    fn handler_error_names_event() {
        #[derive(Debug, Error)]
        #[error("boom")]
        struct Boom;
        let mut k = Kernel::new();
        let a = k.register("a");
        k.schedule_ms(1.0, a, 0).unwrap();
        let id = k.schedule_ms(3.0, a, 1).unwrap();
        let err = k
            .run_until(
                SimTime::from_ms(10),
                |_, ev| {
                    if ev.payload == 1 {
                        Err(Boom)
                    } else {
                        Ok(())
                    }
                },
            )
            .unwrap_err();
        match err {
            RunError::Dispatch(d) => {
                assert_eq!(d.event, id.0);
                assert_eq!(d.fire_at, SimTime::from_ms(3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn horizon_in_past_is_rejected() {
        let mut k: Kernel<u32> = Kernel::new();
        k.run_until(SimTime::from_ms(10), |_, _| Ok::<_, Infallible>(()))
            .unwrap();
        assert!(matches!(
            k.run_until(SimTime::from_ms(5), |_, _| Ok::<_, Infallible>(())),
            Err(RunError::Kernel(KernelError::HorizonInPast { .. }))
        ));
        assert!(matches!(
            k.schedule_at(SimTime::from_ms(3), EntityId(0), 0),
            Err(KernelError::InPast { .. })
        ));
    }

    #[test]
    fn fractional_conversions() {
        assert_eq!(SimTime::from_ms_f64(0.5).unwrap().ticks(), 500_000);
        assert_eq!(SimTime::from_ms_f64_ceil(2.0 / 3.0).unwrap().ticks(), 666_667);
        assert!(SimTime::from_ms_f64(-0.1).is_none());
    }
}
