//! DCQCN notification point and reaction point.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::simcore::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcqcnParams<F> {
    pub line_rate: F,
    pub min_rate: F,
    /// Alpha EWMA gain.
    pub g: F,
    /// Additive-increase step, bits/s.
    pub rate_ai: F,
    /// Hyper-increase step, bits/s.
    pub rate_hai: F,
    /// Stage events spent in fast recovery before additive increase.
    pub fast_recovery_stages: u32,
    pub byte_counter: u64,
    pub timer: SimTime,
    /// Minimum spacing between CNPs for one (sender, receiver) pair.
    pub cnp_interval: SimTime,
}

impl<F: Real> DcqcnParams<F> {
    pub fn with_line_rate(line_rate: F) -> Self {
        Self {
            line_rate,
            min_rate: F::lit(10e6),
            g: F::lit(1.0 / 256.0),
            rate_ai: F::lit(40e6),
            rate_hai: F::lit(400e6),
            fast_recovery_stages: 5,
            byte_counter: 10 * 1024 * 1024,
            timer: SimTime::from_micros(55),
            cnp_interval: SimTime::from_micros(50),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncreaseTrigger {
    Timer,
    ByteCounter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncreaseStage {
    FastRecovery,
    Additive,
    Hyper,
}

/// Reaction-point state for one (sender, receiver) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcqcnRpState<F> {
    /// Current rate.
    pub rc: F,
    /// Target rate.
    pub rt: F,
    pub alpha: F,
    /// Timer expiries since the last CNP.
    pub timer_events: u32,
    /// Byte-counter expiries since the last CNP.
    pub byte_events: u32,
    /// Bytes sent toward the next byte-counter expiry.
    pub bytes_pending: u64,
}

impl<F: Real> DcqcnRpState<F> {
    pub fn new(line_rate: F) -> Self {
        Self {
            rc: line_rate,
            rt: line_rate,
            alpha: F::one(),
            timer_events: 0,
            byte_events: 0,
            bytes_pending: 0,
        }
    }

    /// True once the rate has fully recovered; timers may stop.
    pub fn at_line_rate(&self, p: &DcqcnParams<F>) -> bool {
        self.rc >= p.line_rate && self.rt >= p.line_rate
    }

    /// Multiplicative decrease on a CNP.
    pub fn on_cnp(&mut self, p: &DcqcnParams<F>) {
        self.rt = self.rc;
        self.rc = (self.rc * (F::one() - self.alpha * F::half())).max(p.min_rate);
        self.alpha = (F::one() - p.g) * self.alpha + p.g;
        self.timer_events = 0;
        self.byte_events = 0;
        self.bytes_pending = 0;
    }

    /// Timer expiry with no CNP in the period: alpha decays, then a rate
    /// increase event fires.
    pub fn on_timer(&mut self, p: &DcqcnParams<F>) -> IncreaseStage {
        self.alpha = (F::one() - p.g) * self.alpha;
        self.increase(IncreaseTrigger::Timer, p)
    }

    /// Account transmitted bytes; returns how many byte-counter increase events fired.
    pub fn on_bytes_sent(&mut self, bytes: u64, p: &DcqcnParams<F>) -> u32 {
        self.bytes_pending += bytes;
        let mut fired = 0;
        while self.bytes_pending >= p.byte_counter {
            self.bytes_pending -= p.byte_counter;
            self.increase(IncreaseTrigger::ByteCounter, p);
            fired += 1;
        }
        fired
    }

    /// One increase event. The first `fast_recovery_stages` events (by either
    /// counter) halve the gap to the target; hyper increase starts once both
    /// counters pass the threshold; additive otherwise.
    pub fn increase(&mut self, trigger: IncreaseTrigger, p: &DcqcnParams<F>) -> IncreaseStage {
        match trigger {
            IncreaseTrigger::Timer => self.timer_events += 1,
            IncreaseTrigger::ByteCounter => self.byte_events += 1,
        }
        let hi = self.timer_events.max(self.byte_events);
        let lo = self.timer_events.min(self.byte_events);
        let stage = if hi <= p.fast_recovery_stages {
            IncreaseStage::FastRecovery
        } else if lo > p.fast_recovery_stages {
            IncreaseStage::Hyper
        } else {
            IncreaseStage::Additive
        };
        match stage {
            IncreaseStage::FastRecovery => {}
            IncreaseStage::Additive => self.rt = self.rt + p.rate_ai,
            IncreaseStage::Hyper => self.rt = self.rt + p.rate_hai,
        }
        self.rt = self.rt.min(p.line_rate);
        self.rc = ((self.rc + self.rt) * F::half()).min(p.line_rate);
        stage
    }
}

/// Receiver-side CNP generation, rate-limited per sender.
#[derive(Debug, Clone, Default)]
pub struct NotificationPoint {
    last_cnp: Option<SimTime>,
}

impl NotificationPoint {
    /// Called for every ECN-CE data packet visible to the NP. Returns true if a
    /// CNP should go out now.
    pub fn on_marked_packet(&mut self, now: SimTime, interval: SimTime) -> bool {
        match self.last_cnp {
            Some(t) if now.saturating_sub(t) < interval => false,
            _ => {
                self.last_cnp = Some(now);
                true
            }
        }
    }
}
