//! End-host NIC: packet and message framing plus the receiver-side DASR
//! machinery (sender set, congestion classifier, receive-rate estimator).
//! Sender-side pacing lives in the fabric model, which owns the event loop.

mod auss;
mod fsm;
mod packet;
mod rate;

pub use auss::{AussEntry, AussTable};
pub use fsm::{ack_feedback, AckFeedback, CongestionState, DasrFsm};
pub use packet::{FlowClass, GroupId, Lookahead, Message, MsgId, Packet, PacketKind};
pub use rate::RxRateEstimator;

use std::collections::HashMap;

use serde::Serialize;

use crate::ccalgos::NotificationPoint;
use crate::simcore::SimTime;
use crate::topology::HostId;

#[derive(Debug, Clone)]
pub struct ReceiverConfig {
    pub dasr: bool,
    pub lookahead: bool,
    /// DCQCN notification point active (native or fallback).
    pub notification_point: bool,
    pub line_rate: f64,
    /// Receive rate at or above this fraction of line rate reads as line rate.
    pub line_fraction: f64,
    pub ecn_window: SimTime,
    pub rate_tau: SimTime,
    pub idle_timeout: SimTime,
    pub cnp_interval: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SeqCheck {
    InOrder,
    Gap,
    Inversion,
}

/// Receiver's reaction to one data packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataOutcome {
    pub feedback: AckFeedback,
    pub send_cnp: bool,
    pub state: CongestionState,
    pub seq_check: SeqCheck,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReceiverCounters {
    pub data_packets: u64,
    pub acks_sent: u64,
    pub suppressed_ecn: u64,
    pub cnps_sent: u64,
    pub seq_gaps: u64,
    pub seq_inversions: u64,
    pub evictions: u64,
}

#[derive(Debug, Clone)]
pub struct Receiver {
    cfg: ReceiverConfig,
    auss: AussTable,
    fsm: DasrFsm,
    rate: RxRateEstimator<f64>,
    np: HashMap<HostId, NotificationPoint>,
    expected_seq: HashMap<MsgId, u32>,
    pub counters: ReceiverCounters,
}

impl Receiver {
    pub fn new(cfg: ReceiverConfig) -> Self {
        Self {
            auss: AussTable::new(cfg.idle_timeout),
            fsm: DasrFsm::new(cfg.ecn_window, cfg.line_fraction),
            rate: RxRateEstimator::new(cfg.rate_tau),
            np: HashMap::new(),
            expected_seq: HashMap::new(),
            counters: ReceiverCounters::default(),
            cfg,
        }
    }

    pub fn auss(&self) -> &AussTable {
        &self.auss
    }

    pub fn state(&self) -> CongestionState {
        self.fsm.state
    }

    pub fn rx_rate(&self) -> f64 {
        self.rate.estimate()
    }

    fn check_seq(&mut self, pkt: &Packet) -> SeqCheck {
        let expected = if pkt.start {
            0
        } else {
            self.expected_seq.get(&pkt.flow_id).copied().unwrap_or(0)
        };
        let check = match pkt.seq.cmp(&expected) {
            std::cmp::Ordering::Equal => SeqCheck::InOrder,
            std::cmp::Ordering::Greater => SeqCheck::Gap,
            std::cmp::Ordering::Less => SeqCheck::Inversion,
        };
        match check {
            SeqCheck::InOrder => {}
            SeqCheck::Gap => self.counters.seq_gaps += 1,
            SeqCheck::Inversion => self.counters.seq_inversions += 1,
        }
        if pkt.end {
            self.expected_seq.remove(&pkt.flow_id);
        } else {
            self.expected_seq.insert(pkt.flow_id, pkt.seq + 1);
        }
        check
    }

    /// Process a DATA arrival: sender-set update, rate estimate, classification,
    /// ACK contents and CNP decision.
    pub fn on_data_arrival(&mut self, now: SimTime, pkt: &Packet) -> DataOutcome {
        debug_assert_eq!(pkt.kind, PacketKind::Data);
        self.counters.data_packets += 1;
        let seq_check = self.check_seq(pkt);

        if self.cfg.dasr {
            if pkt.start {
                if let (true, Some(la)) = (self.cfg.lookahead, pkt.lookahead.as_deref()) {
                    self.auss.apply_lookahead(la.group_id, &la.senders, now);
                }
                self.auss.on_start(pkt.src, pkt.flow_id, pkt.group, now);
            } else {
                self.auss.touch(pkt.src, now);
            }
            if pkt.end {
                self.auss.on_end(pkt.src, pkt.flow_id, now);
            }
        }

        let rx = self.rate.on_arrival(now, pkt.size);
        let (state, feedback) = if self.cfg.dasr {
            let st = self.fsm.observe(now, pkt.ecn_ce, rx, self.cfg.line_rate);
            (st, ack_feedback(st, self.auss.n(), pkt.ecn_ce))
        } else {
            (
                CongestionState::classify(pkt.ecn_ce, rx >= self.cfg.line_fraction * self.cfg.line_rate),
                AckFeedback {
                    piggyback_n: 1,
                    ecn_visible: pkt.ecn_ce,
                },
            )
        };
        if pkt.ecn_ce && !feedback.ecn_visible {
            self.counters.suppressed_ecn += 1;
        }
        let send_cnp = self.cfg.notification_point
            && feedback.ecn_visible
            && self
                .np
                .entry(pkt.src)
                .or_default()
                .on_marked_packet(now, self.cfg.cnp_interval);
        self.counters.acks_sent += 1;
        if send_cnp {
            self.counters.cnps_sent += 1;
        }
        DataOutcome {
            feedback,
            send_cnp,
            state,
            seq_check,
        }
    }

    /// Soft-state timeout pass; returns the number of evicted senders.
    pub fn soft_state_sweep(&mut self, now: SimTime) -> usize {
        let n = self.auss.sweep(now).len();
        self.counters.evictions += n as u64;
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn cfg(dasr: bool, lookahead: bool) -> ReceiverConfig {
        ReceiverConfig {
            dasr,
            lookahead,
            notification_point: true,
            line_rate: 10e9,
            line_fraction: 0.9,
            ecn_window: SimTime::from_micros(40),
            rate_tau: SimTime::from_micros(40),
            idle_timeout: SimTime::from_secs(2),
            cnp_interval: SimTime::from_micros(50),
        }
    }

    fn msg(id: MsgId, src: HostId, size: u64, la: Option<Arc<Lookahead>>) -> Message {
        Message {
            id,
            src,
            dst: 0,
            size,
            class: FlowClass::of_size(size, 8000),
            start_time: SimTime::ZERO,
            group: la.as_ref().map(|l| l.group_id),
            lookahead: la,
        }
    }

    #[test]
    fn receiver_congestion_suppresses_marks_and_advertises_n() {
        let mut r = Receiver::new(cfg(true, true));
        let a = msg(1, 1, 1_000_000, None);
        let b = msg(2, 2, 1_000_000, None);
        let mut t = 0;
        for seq in 0..200 {
            for m in [&a, &b] {
                let mut p = Packet::data(m, seq, 1000, 0, true);
                p.ecn_ce = seq > 100;
                t += 800;
                let out = r.on_data_arrival(SimTime(t), &p);
                if seq > 0 {
                    assert_eq!(out.feedback.piggyback_n, 2);
                }
                if seq > 150 {
                    assert_eq!(out.state, CongestionState::ReceiverCongestion);
                    assert!(!out.send_cnp);
                }
            }
        }
        assert!(r.counters.suppressed_ecn > 0);
        assert_eq!(r.counters.cnps_sent, 0);
    }

    #[test]
    fn slow_marked_arrivals_echo_and_pin_n() {
        let mut r = Receiver::new(cfg(true, true));
        let a = msg(1, 1, 1_000_000, None);
        let b = msg(2, 2, 1_000_000, None);
        let mut t = 0;
        let mut last = None;
        for seq in 0..200 {
            for m in [&a, &b] {
                let mut p = Packet::data(m, seq, 1000, 0, true);
                p.ecn_ce = true;
                t += 2000; // 4 Gbps aggregate
                last = Some(r.on_data_arrival(SimTime(t), &p));
            }
        }
        let out = last.unwrap();
        assert_eq!(out.state, CongestionState::NonReceiverCongestion);
        assert_eq!(out.feedback.piggyback_n, 1);
        assert!(out.feedback.ecn_visible);
        // per sender: one CNP per 52 us (first arrival past the 50 us spacing) over 800 us
        assert!((30..=34).contains(&r.counters.cnps_sent), "{}", r.counters.cnps_sent);
    }

    #[test]
    fn lookahead_counts_group_on_first_packet() {
        let la = Arc::new(Lookahead {
            group_id: 7,
            senders: (1..=20).collect(),
        });
        let mut on = Receiver::new(cfg(true, true));
        let mut off = Receiver::new(cfg(true, false));
        let m = msg(10, 1, 2000, Some(la));
        let p = Packet::data(&m, 0, 1000, 4, true);
        assert_eq!(on.on_data_arrival(SimTime(0), &p).feedback.piggyback_n, 20);
        assert_eq!(off.on_data_arrival(SimTime(0), &p).feedback.piggyback_n, 1);
    }

    #[test]
    fn sequence_checks() {
        let mut r = Receiver::new(cfg(false, false));
        let m = msg(3, 1, 4000, None);
        let p: Vec<Packet> = (0..4).map(|s| Packet::data(&m, s, 1000, 4, false)).collect();
        assert_eq!(r.on_data_arrival(SimTime(1), &p[0]).seq_check, SeqCheck::InOrder);
        assert_eq!(r.on_data_arrival(SimTime(2), &p[2]).seq_check, SeqCheck::Gap);
        assert_eq!(r.on_data_arrival(SimTime(3), &p[1]).seq_check, SeqCheck::Inversion);
        assert_eq!(r.counters.seq_gaps, 1);
        assert_eq!(r.counters.seq_inversions, 1);
    }

    #[test]
    fn non_dasr_receiver_always_sends_one() {
        let mut r = Receiver::new(cfg(false, false));
        for id in 0..5 {
            let m = msg(id, id as usize + 1, 1000, None);
            let out = r.on_data_arrival(SimTime(id * 10), &Packet::data(&m, 0, 1000, 0, false));
            assert_eq!(out.feedback.piggyback_n, 1);
        }
    }
}
