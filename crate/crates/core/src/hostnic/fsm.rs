use serde::Serialize;

use crate::simcore::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CongestionState {
    NoCongestion,
    ReceiverCongestion,
    NonReceiverCongestion,
}

impl CongestionState {
    pub const ALL: [CongestionState; 3] = [
        CongestionState::NoCongestion,
        CongestionState::ReceiverCongestion,
        CongestionState::NonReceiverCongestion,
    ];

    /// Pure classification of one observation.
    pub fn classify(ecn_recent: bool, rx_at_line_rate: bool) -> Self {
        match (ecn_recent, rx_at_line_rate) {
            (false, _) => CongestionState::NoCongestion,
            (true, true) => CongestionState::ReceiverCongestion,
            (true, false) => CongestionState::NonReceiverCongestion,
        }
    }
}

/// What the receiver puts on the ACK for a data packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckFeedback {
    pub piggyback_n: u32,
    /// The packet's ECN-CE mark reaches the notification point and is echoed.
    pub ecn_visible: bool,
}

/// ACK contents for `state`. Outside non-receiver congestion the sender count
/// is always advertised; in non-receiver congestion `n` is pinned to 1 and
/// marks are passed through to DCQCN.
pub fn ack_feedback(state: CongestionState, auss_n: usize, ecn_ce: bool) -> AckFeedback {
    let n = auss_n.max(1) as u32;
    match state {
        CongestionState::NoCongestion => AckFeedback {
            piggyback_n: n,
            ecn_visible: ecn_ce,
        },
        CongestionState::ReceiverCongestion => AckFeedback {
            piggyback_n: n,
            ecn_visible: false,
        },
        CongestionState::NonReceiverCongestion => AckFeedback {
            piggyback_n: 1,
            ecn_visible: ecn_ce,
        },
    }
}

/// Receiver congestion classifier. `ecn_recent` is true while an ECN-CE mark
/// has been seen within `window`.
#[derive(Debug, Clone)]
pub struct DasrFsm {
    pub state: CongestionState,
    last_ecn: Option<SimTime>,
    window: SimTime,
    line_fraction: f64,
}

impl DasrFsm {
    pub fn new(window: SimTime, line_fraction: f64) -> Self {
        Self {
            state: CongestionState::NoCongestion,
            last_ecn: None,
            window,
            line_fraction,
        }
    }

    pub fn ecn_recent(&self, now: SimTime) -> bool {
        self.last_ecn
            .is_some_and(|t| now.saturating_sub(t) <= self.window)
    }

    pub fn at_line_rate(&self, rx_rate: f64, line_rate: f64) -> bool {
        rx_rate >= self.line_fraction * line_rate
    }

    /// Evaluate on a data arrival.
    pub fn observe(
        &mut self,
        now: SimTime,
        ecn_ce: bool,
        rx_rate: f64,
        line_rate: f64,
    ) -> CongestionState {
        if ecn_ce {
            self.last_ecn = Some(now);
        }
        self.state =
            CongestionState::classify(self.ecn_recent(now), self.at_line_rate(rx_rate, line_rate));
        self.state
    }
}
