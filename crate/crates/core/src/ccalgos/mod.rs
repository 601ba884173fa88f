//! Sender-side congestion control: receiver-directed rate apportioning, DCQCN
//! (native or as the fallback governor) and TIMELY.

mod dcqcn;
mod timely;

pub use dcqcn::{
    DcqcnParams, DcqcnRpState, IncreaseStage, IncreaseTrigger, NotificationPoint,
};
pub use timely::{TimelyParams, TimelyRegion, TimelyState};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Congestion-control scheme, including the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    Dart,
    Dcqcn,
    Timely,
    PriqDcqcn,
    DartNoLookahead,
    DasrOnly,
    IofdOnly,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::Dart,
        Scheme::Dcqcn,
        Scheme::Timely,
        Scheme::PriqDcqcn,
        Scheme::DartNoLookahead,
        Scheme::DasrOnly,
        Scheme::IofdOnly,
    ];

    /// Receiver counts senders and piggybacks `n`.
    pub fn uses_dasr(self) -> bool {
        matches!(
            self,
            Scheme::Dart | Scheme::DartNoLookahead | Scheme::DasrOnly
        )
    }

    pub fn uses_lookahead(self) -> bool {
        matches!(self, Scheme::Dart | Scheme::DasrOnly)
    }

    pub fn uses_iofd(self) -> bool {
        matches!(self, Scheme::Dart | Scheme::IofdOnly)
    }

    /// DCQCN reaction point engaged, natively or as the fallback.
    pub fn uses_dcqcn(self) -> bool {
        !matches!(self, Scheme::Timely)
    }

    pub fn uses_timely(self) -> bool {
        matches!(self, Scheme::Timely)
    }

    /// Short flows get strict priority over long flows in switch data queues.
    pub fn prioritizes_short(self) -> bool {
        matches!(self, Scheme::PriqDcqcn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Dart => "DART",
            Scheme::Dcqcn => "DCQCN",
            Scheme::Timely => "TIMELY",
            Scheme::PriqDcqcn => "PRIQ_DCQCN",
            Scheme::DartNoLookahead => "DART_NO_LOOKAHEAD",
            Scheme::DasrOnly => "DASR_ONLY",
            Scheme::IofdOnly => "IOFD_ONLY",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Scheme::ALL.iter().map(|s| s.name()).collect();
                format!("unknown scheme '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcParams<F> {
    pub dcqcn: DcqcnParams<F>,
    pub timely: TimelyParams<F>,
}

impl<F: Real> CcParams<F> {
    pub fn with_line_rate(line_rate: F) -> Self {
        Self {
            dcqcn: DcqcnParams::with_line_rate(line_rate),
            timely: TimelyParams::with_line_rate(line_rate),
        }
    }

    pub fn line_rate(&self) -> F {
        self.dcqcn.line_rate
    }
}

/// Congestion-control state for one (sender, receiver) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcState<F> {
    pub scheme: Scheme,
    pub line_rate: F,
    pub dasr_n: u32,
    /// Fraction of line rate DASR apportions; below 1 so a queue built before
    /// `n` reaches the senders can drain.
    pub dasr_share: F,
    pub dcqcn: DcqcnRpState<F>,
    pub timely: TimelyState<F>,
}

impl<F: Real> CcState<F> {
    pub fn new(scheme: Scheme, line_rate: F, base_rtt_ns: F) -> Self {
        Self {
            scheme,
            line_rate,
            dasr_n: 1,
            dasr_share: F::one(),
            dcqcn: DcqcnRpState::new(line_rate),
            timely: TimelyState::new(line_rate, base_rtt_ns),
        }
    }

    /// Back to line rate with no rate memory, as for a fresh flow.
    pub fn reset(&mut self) {
        let min_rtt = self.timely.min_rtt;
        let share = self.dasr_share;
        *self = Self::new(self.scheme, self.line_rate, min_rtt);
        self.dasr_share = share;
    }

    /// Rate apportioned by the receiver: `share * line_rate / n`, except that
    /// a lone sender (`n = 1`) is never held below line rate.
    pub fn dasr_rate(&self) -> F {
        if self.dasr_n <= 1 {
            return self.line_rate;
        }
        self.dasr_share * self.line_rate / F::from_u32(self.dasr_n).expect("u32 fits")
    }

    /// Rate the NIC pacer enforces.
    pub fn pacer_rate(&self) -> F {
        if self.scheme.uses_timely() {
            self.timely.rate
        } else if self.scheme.uses_dasr() {
            self.dasr_rate().min(self.dcqcn.rc)
        } else {
            self.dcqcn.rc
        }
    }

    /// Apply the `n` piggybacked on an ACK; returns the new pacer rate.
    /// `n = 0` is a protocol violation.
    pub fn dasr_on_ack(&mut self, piggyback_n: u32) -> F {
        assert!(piggyback_n >= 1, "protocol violation: piggybacked n = 0");
        if self.scheme.uses_dasr() {
            self.dasr_n = piggyback_n;
        }
        self.pacer_rate()
    }

    pub fn on_cnp(&mut self, p: &DcqcnParams<F>) -> F {
        if self.scheme.uses_dcqcn() {
            self.dcqcn.on_cnp(p);
        }
        self.pacer_rate()
    }

    /// DCQCN timers only matter while the governor is below line rate.
    pub fn dcqcn_recovering(&self, p: &DcqcnParams<F>) -> bool {
        self.scheme.uses_dcqcn() && !self.dcqcn.at_line_rate(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LINE: f64 = 10e9;

    fn dart() -> CcState<f64> {
        CcState::new(Scheme::Dart, LINE, 20_000.0)
    }

    #[test]
    fn n_two_halves_rate() {
        let mut s = dart();
        assert_relative_eq!(s.dasr_on_ack(2), 5e9);
    }

    #[test]
    fn n_one_restores_line_rate() {
        let mut s = dart();
        s.dasr_on_ack(8);
        assert_relative_eq!(s.dasr_on_ack(1), LINE);
    }

    #[test]
    fn incast_plus_long_flow_share() {
        let mut s = dart();
        assert_relative_eq!(s.dasr_on_ack(17), LINE / 17.0);
    }

    #[test]
    #[should_panic(expected = "protocol violation")]
    fn zero_n_is_fatal() {
        dart().dasr_on_ack(0);
    }

    #[test]
    fn dart_takes_minimum_of_governors() {
        let p = DcqcnParams::with_line_rate(LINE);
        let mut s = dart();
        s.dasr_on_ack(2);
        s.on_cnp(&p); // rc -> 5 Gbps
        s.on_cnp(&p); // rc -> 2.5 Gbps
        assert_relative_eq!(s.pacer_rate(), 2.5e9);
        s.dasr_on_ack(8);
        assert_relative_eq!(s.pacer_rate(), LINE / 8.0);
    }

    #[test]
    fn iofd_only_ignores_piggybacked_n() {
        let mut s = CcState::new(Scheme::IofdOnly, LINE, 20_000.0);
        assert_relative_eq!(s.dasr_on_ack(4), LINE);
        assert_eq!(s.dasr_n, 1);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("dasr-only".parse::<Scheme>().unwrap(), Scheme::DasrOnly);
        assert!("rcp".parse::<Scheme>().is_err());
    }
}
