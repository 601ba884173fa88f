//! TIMELY: RTT-gradient rate control.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Durations are in nanoseconds, rates in bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelyParams<F> {
    pub line_rate: F,
    pub min_rate: F,
    pub t_low: F,
    pub t_high: F,
    /// Additive increment per update.
    pub additive_step: F,
    pub beta: F,
    /// EWMA weight on each new RTT difference.
    pub ewma_weight: F,
    /// Consecutive non-positive-gradient updates before hyperactive increase.
    pub hai_threshold: u32,
    pub hai_multiplier: F,
}

impl<F: Real> TimelyParams<F> {
    pub fn with_line_rate(line_rate: F) -> Self {
        Self {
            line_rate,
            min_rate: F::lit(10e6),
            t_low: F::lit(50_000.0),
            t_high: F::lit(500_000.0),
            additive_step: F::lit(1e6),
            beta: F::lit(0.8),
            ewma_weight: F::lit(0.125),
            hai_threshold: 5,
            hai_multiplier: F::lit(5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelyRegion {
    BelowLow,
    AboveHigh,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelyState<F> {
    pub rtt_prev: Option<F>,
    pub rtt_diff_ewma: F,
    pub rate: F,
    pub min_rtt: F,
    pub hai_counter: u32,
}

impl<F: Real> TimelyState<F> {
    pub fn new(line_rate: F, min_rtt: F) -> Self {
        Self {
            rtt_prev: None,
            rtt_diff_ewma: F::zero(),
            rate: line_rate,
            min_rtt,
            hai_counter: 0,
        }
    }

    /// Congestion window implied by the current rate, in bytes.
    pub fn window_bytes(&self) -> F {
        self.rate * self.min_rtt / F::lit(8e9)
    }

    /// Apply one RTT sample (ns). A non-positive sample is a measurement bug.
    pub fn on_rtt(&mut self, new_rtt: F, p: &TimelyParams<F>) -> TimelyRegion {
        assert!(
            new_rtt > F::zero(),
            "non-positive RTT sample {new_rtt}: measurement bug"
        );
        let diff = match self.rtt_prev {
            Some(prev) => new_rtt - prev,
            None => F::zero(),
        };
        self.rtt_prev = Some(new_rtt);
        self.rtt_diff_ewma = (F::one() - p.ewma_weight) * self.rtt_diff_ewma + p.ewma_weight * diff;
        self.min_rtt = self.min_rtt.min(new_rtt);
        let gradient = self.rtt_diff_ewma / self.min_rtt;

        let region = if new_rtt < p.t_low {
            self.hai_counter = 0;
            self.rate = self.rate + p.additive_step;
            TimelyRegion::BelowLow
        } else if new_rtt > p.t_high {
            self.hai_counter = 0;
            self.rate = self.rate * (F::one() - p.beta * (F::one() - p.t_high / new_rtt));
            TimelyRegion::AboveHigh
        } else {
            if gradient <= F::zero() {
                self.hai_counter += 1;
                let n = if self.hai_counter >= p.hai_threshold {
                    p.hai_multiplier
                } else {
                    F::one()
                };
                self.rate = self.rate + n * p.additive_step;
            } else {
                self.hai_counter = 0;
                self.rate = self.rate * (F::one() - p.beta * gradient);
            }
            TimelyRegion::Gradient
        };
        self.rate = self.rate.max(p.min_rate).min(p.line_rate);
        region
    }
}
