//! Deterministic discrete-event engine.
//!
//! A single [`Scheduler`] orders events by `(fire_at, sequence)`. Models implement
//! [`Model`] and are driven by [`run_until`], which also hosts the progress
//! watchdog used to flag stalled (possibly deadlocked) fabrics.

mod queue;
mod rng;
mod time;

pub use queue::{EventHandle, Scheduler};
pub use rng::{RngStream, StreamId};
pub use time::SimTime;

use thiserror::Error;

/// Something the engine can drive.
pub trait Model {
    type Event;

    fn handle(&mut self, event: Self::Event, sched: &mut Scheduler<Self::Event>);

    /// True once nothing remains to simulate; lets the run return early.
    fn finished(&self) -> bool {
        false
    }

    /// True while the model holds work that must eventually make progress
    /// (e.g. packets buffered in the fabric).
    fn has_outstanding_work(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Clock reached `end`; later events stay queued.
    ReachedEnd,
    /// No events left before `end`.
    QueueExhausted,
    /// The model reported completion.
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunReport {
    pub clock: SimTime,
    pub reason: StopReason,
    pub events_executed: u64,
    pub last_progress: SimTime,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("possible deadlock: no progress since {last_progress} (now {now}, horizon {horizon})")]
    PossibleDeadlock {
        now: SimTime,
        last_progress: SimTime,
        horizon: SimTime,
    },
}

/// Execute every event with `fire_at <= end`.
///
/// With a `watchdog` horizon, the run aborts when the model has outstanding work
/// but has not reported progress for longer than the horizon, or when the queue
/// drains while work is still outstanding.
pub fn run_until<M: Model>(
    model: &mut M,
    sched: &mut Scheduler<M::Event>,
    end: SimTime,
    watchdog: Option<SimTime>,
) -> Result<RunReport, SimError> {
    let report = |sched: &Scheduler<M::Event>, reason| RunReport {
        clock: sched.now(),
        reason,
        events_executed: sched.events_executed(),
        last_progress: sched.last_progress(),
    };
    loop {
        if model.finished() {
            return Ok(report(sched, StopReason::Finished));
        }
        let Some(next) = sched.peek_time() else {
            if let Some(horizon) = watchdog {
                if model.has_outstanding_work() {
                    return Err(SimError::PossibleDeadlock {
                        now: sched.now(),
                        last_progress: sched.last_progress(),
                        horizon,
                    });
                }
            }
            return Ok(report(sched, StopReason::QueueExhausted));
        };
        if next > end {
            sched.advance_to(end);
            return Ok(report(sched, StopReason::ReachedEnd));
        }
        let (_, event) = sched.pop().expect("peeked event vanished");
        model.handle(event, sched);
        if let Some(horizon) = watchdog {
            let now = sched.now();
            if now.saturating_sub(sched.last_progress()) > horizon && model.has_outstanding_work() {
                return Err(SimError::PossibleDeadlock {
                    now,
                    last_progress: sched.last_progress(),
                    horizon,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Pacer {
        period: SimTime,
        ticks: Vec<SimTime>,
    }

    impl Model for Pacer {
        type Event = ();
        fn handle(&mut self, _: (), sched: &mut Scheduler<()>) {
            self.ticks.push(sched.now());
            sched.schedule_in(self.period, ());
        }
    }

    #[test]
    fn empty_queue_returns_at_last_event() {
        struct Nop;
        impl Model for Nop {
            type Event = ();
            fn handle(&mut self, _: (), _: &mut Scheduler<()>) {}
        }
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_micros(3), ());
        let r = run_until(&mut Nop, &mut s, SimTime::from_millis(1), None).unwrap();
        assert_eq!(r.clock, SimTime::from_micros(3));
        assert_eq!(r.reason, StopReason::QueueExhausted);
    }

    #[test]
    fn self_rescheduling_pacer_runs_to_end_exactly() {
        let mut p = Pacer {
            period: SimTime::from_micros(10),
            ticks: vec![],
        };
        let mut s = Scheduler::new();
        s.schedule(SimTime::ZERO, ());
        let r = run_until(&mut p, &mut s, SimTime::from_micros(100), None).unwrap();
        assert_eq!(r.clock, SimTime::from_micros(100));
        assert_eq!(r.reason, StopReason::ReachedEnd);
        // ticks at 0,10,...,100 inclusive
        assert_eq!(p.ticks.len(), 11);
        assert!(p.ticks.windows(2).all(|w| w[0] <= w[1]));
    }

    /// Two deliveries; the model finishes after the second, well before `end`.
    #[test]
    fn early_return_when_all_flows_complete() {
        struct TwoFlows {
            remaining: u32,
        }
        impl Model for TwoFlows {
            type Event = u32;
            fn handle(&mut self, _: u32, sched: &mut Scheduler<u32>) {
                self.remaining -= 1;
                sched.note_progress();
                // a far-future timer that must not keep the run alive
                sched.schedule_in(SimTime::from_millis(50), 99);
            }
            fn finished(&self) -> bool {
                self.remaining == 0
            }
        }
        let mut m = TwoFlows { remaining: 2 };
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_micros(7), 0);
        s.schedule(SimTime::from_micros(12), 1);
        let r = run_until(&mut m, &mut s, SimTime::from_millis(1), None).unwrap();
        assert_eq!(r.reason, StopReason::Finished);
        assert_eq!(r.clock, SimTime::from_micros(12));
    }

    #[test]
    fn watchdog_flags_stall_with_outstanding_work() {
        struct Stuck;
        impl Model for Stuck {
            type Event = ();
            fn handle(&mut self, _: (), sched: &mut Scheduler<()>) {
                sched.schedule_in(SimTime::from_micros(100), ());
            }
            fn has_outstanding_work(&self) -> bool {
                true
            }
        }
        let mut s = Scheduler::new();
        s.schedule(SimTime::ZERO, ());
        let err = run_until(
            &mut Stuck,
            &mut s,
            SimTime::from_secs(1),
            Some(SimTime::from_millis(1)),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::PossibleDeadlock { .. }));
    }
}
