use std::collections::VecDeque;

use log::{debug, warn};
use rand::RngCore;
use thiserror::Error;

use crate::ccalgos::{CcParams, CcState, Scheme};
use crate::hostnic::{FlowClass, Message, Packet, PacketKind, Receiver, ReceiverConfig};
use crate::metrics::{FabricTotals, FctSample, MetricsCollector, RateSample, RunSummary};
use crate::simcore::{
    run_until, Model, RngStream, RunReport, Scheduler, SimError, SimTime, StreamId,
};
use crate::switchmodel::{
    PfcAction, PfcThresholds, QueueClass, Switch, SwitchConfig, SwitchConfigError,
};
use crate::topology::{HostId, NodeId, PortId, Topology, VirtualLane};
use crate::workload::Schedule;

type PktRef = u32;

const NO_QP: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Last bit of a packet reached `node` on `port`.
    Arrive { node: u32, port: u16, pkt: PktRef },
    /// `node` finished clocking a packet out of `port`.
    TxDone { node: u32, port: u16 },
    /// A pause or resume frame for `lane` reached `node` on `port`.
    Pfc {
        node: u32,
        port: u16,
        lane: VirtualLane,
        pause: bool,
    },
    HostWake { host: u32 },
    NextMessage,
    DcqcnTimer { qp: u32, gen: u32 },
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimConfigError {
    #[error(transparent)]
    Switch(#[from] SwitchConfigError),
    #[error("mtu must be positive")]
    ZeroMtu,
    #[error("message ids must be dense in 0..{0}")]
    SparseIds(usize),
    #[error("message {0} has zero size or identical endpoints")]
    BadMessage(u64),
    #[error("message {id} names host {host}, fabric has {hosts}")]
    UnknownHost { id: u64, host: HostId, hosts: usize },
    #[error("line_fraction must be in (0, 1], got {0}")]
    LineFraction(f64),
    #[error("dasr_share must be in (0, 1], got {0}")]
    DasrShare(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scheme: Scheme,
    /// DATA payload bytes per packet.
    pub mtu: u32,
    /// ACK and CNP size.
    pub ctrl_bytes: u32,
    pub switch: SwitchConfig,
    /// Deflection tokens a short-flow packet starts with.
    pub tokens: u8,
    pub cc: CcParams<f64>,
    /// Acked bytes between TIMELY updates (one MTU: an update per ACK).
    pub timely_segment: u64,
    pub idle_timeout: SimTime,
    pub line_fraction: f64,
    /// Fraction of line rate DASR splits among `n > 1` senders.
    pub dasr_share: f64,
    /// Defaults to twice the largest base RTT.
    pub ecn_window: Option<SimTime>,
    /// Defaults to twice the largest base RTT.
    pub rate_tau: Option<SimTime>,
    pub sweep_interval: SimTime,
    pub short_flow_max: u64,
    /// No new messages start at or after this time.
    pub horizon: SimTime,
    /// FCT samples of messages that start earlier are left out of percentiles.
    pub warmup: SimTime,
    pub watchdog: SimTime,
    pub trace_rates: bool,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(scheme: Scheme, line_rate_bps: u64, horizon: SimTime, seed: u64) -> Self {
        let switch = SwitchConfig {
            iofd: scheme.uses_iofd(),
            priority_short: scheme.prioritizes_short(),
            ..SwitchConfig::default()
        };
        Self {
            scheme,
            mtu: 1000,
            ctrl_bytes: 64,
            switch,
            tokens: if scheme.uses_iofd() { 4 } else { 0 },
            cc: CcParams::with_line_rate(line_rate_bps as f64),
            timely_segment: 1000,
            idle_timeout: SimTime::from_secs(2),
            line_fraction: 0.9,
            dasr_share: 0.97,
            ecn_window: None,
            rate_tau: None,
            sweep_interval: SimTime::from_millis(500),
            short_flow_max: 8_000,
            horizon,
            warmup: SimTime(horizon.as_nanos() / 10),
            watchdog: SimTime::from_millis(10),
            trace_rates: false,
            seed,
        }
    }
}

/// Snapshot of one queue pair's sender state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpView {
    pub src: HostId,
    pub dst: HostId,
    pub pacer_rate: f64,
    pub dasr_n: u32,
    pub dcqcn_rc: f64,
    pub timely_rate: f64,
    pub pending_msgs: usize,
    pub inflight_pkts: u32,
}

#[derive(Debug, Clone)]
struct Qp {
    src: HostId,
    dst: HostId,
    cc: CcState<f64>,
    /// Messages with packets left to send, served packet by packet.
    pending: VecDeque<u32>,
    next_allowed: SimTime,
    last_send: SimTime,
    last_size: u32,
    inflight_bytes: u64,
    inflight_pkts: u32,
    timely_acked: u64,
    timer_gen: u32,
    timer_armed: bool,
    // start of the current stretch without a running DCQCN timer
    timer_idle_since: SimTime,
    in_active: bool,
    last_rate: f64,
}

#[derive(Debug, Clone, Copy)]
struct MsgState {
    next_seq: u32,
    npkts: u32,
    acked: u32,
}

#[derive(Debug, Clone)]
struct Host {
    ctrl: VecDeque<PktRef>,
    paused: [bool; 2],
    busy: bool,
    wake_at: SimTime,
    active: VecDeque<u32>,
    rx: Receiver,
}

#[derive(Debug, Clone, Copy)]
struct TxSlot {
    in_port: u16,
    lane: Option<VirtualLane>,
    bytes: u32,
}

#[derive(Debug, Clone, Copy)]
struct Meta {
    in_port: u16,
    in_lane: VirtualLane,
}

struct World {
    topo: Topology,
    cfg: SimConfig,
    line_rate: u64,
    delay: SimTime,
    n_hosts: usize,
    hosts: Vec<Host>,
    switches: Vec<Switch<PktRef>>,
    sw_tx: Vec<Vec<Option<TxSlot>>>,
    arena: Vec<Option<Packet>>,
    meta: Vec<Meta>,
    free: Vec<PktRef>,
    qps: Vec<Qp>,
    qp_index: Vec<u32>,
    messages: Vec<Message>,
    msg_state: Vec<MsgState>,
    id_to_idx: Vec<u32>,
    cursor: usize,
    short_total: usize,
    short_done: usize,
    done_total: usize,
    data_in_fabric: u64,
    now: SimTime,
    rng: RngStream,
    metrics: MetricsCollector,
}

fn max_base_rtt(topo: &Topology, data: u64, ctrl: u64) -> SimTime {
    (0..topo.num_hosts())
        .map(|d| topo.base_rtt(0, d, data, ctrl))
        .max()
        .unwrap_or(SimTime::ZERO)
}

impl World {
    fn new(mut topo: Topology, schedule: &Schedule, cfg: SimConfig) -> Result<Self, SimConfigError> {
        if cfg.mtu == 0 {
            return Err(SimConfigError::ZeroMtu);
        }
        if !(cfg.line_fraction > 0.0 && cfg.line_fraction <= 1.0) {
            return Err(SimConfigError::LineFraction(cfg.line_fraction));
        }
        if !(cfg.dasr_share > 0.0 && cfg.dasr_share <= 1.0) {
            return Err(SimConfigError::DasrShare(cfg.dasr_share));
        }
        cfg.switch.validate()?;
        let n_hosts = topo.num_hosts();
        let line_rate = topo.link_rate_bps();
        let delay = topo.link_delay();
        topo.set_ecmp_salt(RngStream::new(cfg.seed, StreamId::EcmpSalt).next_u64());

        let messages: Vec<Message> = schedule
            .messages
            .iter()
            .filter(|m| m.start_time < cfg.horizon)
            .cloned()
            .collect();
        let max_id = schedule.messages.iter().map(|m| m.id).max();
        let mut id_to_idx = vec![u32::MAX; max_id.map_or(0, |m| m as usize + 1)];
        if id_to_idx.len() > schedule.messages.len() {
            return Err(SimConfigError::SparseIds(schedule.messages.len()));
        }
        let mut max_lookahead = 0;
        for (i, m) in messages.iter().enumerate() {
            if m.size == 0 || m.src == m.dst {
                return Err(SimConfigError::BadMessage(m.id));
            }
            for host in [m.src, m.dst] {
                if host >= n_hosts {
                    return Err(SimConfigError::UnknownHost {
                        id: m.id,
                        host,
                        hosts: n_hosts,
                    });
                }
            }
            id_to_idx[m.id as usize] = i as u32;
            max_lookahead = max_lookahead.max(m.lookahead.as_ref().map_or(0, |l| l.wire_bytes()));
        }
        let msg_state = messages
            .iter()
            .map(|m| MsgState {
                next_seq: 0,
                npkts: m.num_packets(cfg.mtu),
                acked: 0,
            })
            .collect();
        let short_total = messages
            .iter()
            .filter(|m| m.size <= cfg.short_flow_max)
            .count();

        let max_packet = (cfg.mtu + max_lookahead) as u64;
        let pfc = PfcThresholds::new(
            cfg.switch.buffer_bytes,
            line_rate,
            delay,
            max_packet,
            cfg.mtu as u64,
        )?;
        let switches: Vec<Switch<PktRef>> = (n_hosts..topo.num_nodes())
            .map(|n| Switch::new(&topo, n, cfg.switch, pfc))
            .collect();
        let sw_tx = switches.iter().map(|s| vec![None; s.ports.len()]).collect();

        let rtt2 = SimTime(2 * max_base_rtt(&topo, cfg.mtu as u64, cfg.ctrl_bytes as u64).as_nanos());
        let rcfg = ReceiverConfig {
            dasr: cfg.scheme.uses_dasr(),
            lookahead: cfg.scheme.uses_lookahead(),
            notification_point: cfg.scheme.uses_dcqcn(),
            line_rate: line_rate as f64,
            line_fraction: cfg.line_fraction,
            ecn_window: cfg.ecn_window.unwrap_or(rtt2),
            rate_tau: cfg.rate_tau.unwrap_or(rtt2),
            idle_timeout: cfg.idle_timeout,
            cnp_interval: cfg.cc.dcqcn.cnp_interval,
        };
        let hosts = (0..n_hosts)
            .map(|_| Host {
                ctrl: VecDeque::new(),
                paused: [false; 2],
                busy: false,
                wake_at: SimTime::MAX,
                active: VecDeque::new(),
                rx: Receiver::new(rcfg.clone()),
            })
            .collect();
        let metrics = MetricsCollector::new(cfg.short_flow_max, cfg.warmup, cfg.trace_rates);
        Ok(Self {
            rng: RngStream::new(cfg.seed, StreamId::Deflection),
            topo,
            line_rate,
            delay,
            n_hosts,
            hosts,
            switches,
            sw_tx,
            arena: Vec::new(),
            meta: Vec::new(),
            free: Vec::new(),
            qps: Vec::new(),
            qp_index: vec![NO_QP; n_hosts * n_hosts],
            messages,
            msg_state,
            id_to_idx,
            cursor: 0,
            short_total,
            short_done: 0,
            done_total: 0,
            data_in_fabric: 0,
            now: SimTime::ZERO,
            metrics,
            cfg,
        })
    }

    fn alloc(&mut self, pkt: Packet) -> PktRef {
        let meta = Meta {
            in_port: 0,
            in_lane: pkt.lane,
        };
        match self.free.pop() {
            Some(r) => {
                self.arena[r as usize] = Some(pkt);
                self.meta[r as usize] = meta;
                r
            }
            None => {
                self.arena.push(Some(pkt));
                self.meta.push(meta);
                (self.arena.len() - 1) as PktRef
            }
        }
    }

    fn tokens_for(&self, class: FlowClass) -> u8 {
        match class {
            FlowClass::Short if self.cfg.switch.iofd => self.cfg.tokens,
            _ => 0,
        }
    }

    fn qp_of(&mut self, src: HostId, dst: HostId) -> u32 {
        let slot = src * self.n_hosts + dst;
        if self.qp_index[slot] == NO_QP {
            let rtt = self.topo.base_rtt(src, dst, self.cfg.mtu as u64, self.cfg.ctrl_bytes as u64);
            let mut cc = CcState::new(self.cfg.scheme, self.line_rate as f64, rtt.as_nanos() as f64);
            cc.dasr_share = self.cfg.dasr_share;
            self.qps.push(Qp {
                src,
                dst,
                last_rate: cc.pacer_rate(),
                cc,
                pending: VecDeque::new(),
                next_allowed: SimTime::ZERO,
                last_send: SimTime::ZERO,
                last_size: 0,
                inflight_bytes: 0,
                inflight_pkts: 0,
                timely_acked: 0,
                timer_gen: 0,
                timer_armed: false,
                timer_idle_since: SimTime::ZERO,
                in_active: false,
            });
            self.qp_index[slot] = (self.qps.len() - 1) as u32;
        }
        self.qp_index[slot]
    }

    fn existing_qp(&self, src: HostId, dst: HostId) -> Option<u32> {
        let q = self.qp_index[src * self.n_hosts + dst];
        (q != NO_QP).then_some(q)
    }

    /// Trace the pacer rate and pull the next send forward or back to match it.
    fn rate_changed(&mut self, q: u32) {
        let qp = &mut self.qps[q as usize];
        let rate = qp.cc.pacer_rate();
        if rate == qp.last_rate {
            return;
        }
        qp.last_rate = rate;
        if qp.last_size > 0 {
            qp.next_allowed = qp.last_send + SimTime::at_rate(qp.last_size as u64, rate);
        }
        self.metrics.on_rate(self.now, qp.src, qp.dst, rate);
    }

    fn start_message(&mut self, m: usize, sched: &mut Scheduler<Event>) {
        let (src, dst) = (self.messages[m].src, self.messages[m].dst);
        let q = self.qp_of(src, dst);
        let qp = &mut self.qps[q as usize];
        if qp.pending.is_empty() && qp.inflight_pkts == 0 {
            // a fresh flow starts at line rate with no rate memory
            qp.cc.reset();
            qp.timer_gen = qp.timer_gen.wrapping_add(1);
            qp.timer_armed = false;
            qp.timer_idle_since = self.now;
            qp.timely_acked = 0;
            qp.last_size = 0;
            qp.next_allowed = self.now;
            let rate = qp.cc.pacer_rate();
            qp.last_rate = rate;
            self.metrics.on_rate(self.now, src, dst, rate);
        }
        let qp = &mut self.qps[q as usize];
        qp.pending.push_back(m as u32);
        if !qp.in_active {
            qp.in_active = true;
            self.hosts[src].active.push_back(q);
        }
        self.host_try_send(src, sched);
    }

    fn host_try_send(&mut self, h: HostId, sched: &mut Scheduler<Event>) {
        if self.hosts[h].busy {
            return;
        }
        if let Some(r) = self.hosts[h].ctrl.pop_front() {
            self.host_transmit(h, r, sched);
            return;
        }
        if self.hosts[h].paused[VirtualLane::Deflect.index()] {
            return;
        }
        let now = self.now;
        let timely = self.cfg.scheme.uses_timely();
        let mut earliest = SimTime::MAX;
        for _ in 0..self.hosts[h].active.len() {
            let q = self.hosts[h].active.pop_front().expect("counted");
            let qp = &mut self.qps[q as usize];
            if qp.pending.is_empty() {
                qp.in_active = false;
                continue;
            }
            if qp.next_allowed > now {
                earliest = earliest.min(qp.next_allowed);
                self.hosts[h].active.push_back(q);
                continue;
            }
            if timely && qp.inflight_bytes > 0 {
                let next = self.messages[*qp.pending.front().expect("non-empty") as usize]
                    .payload_of(self.msg_state[*qp.pending.front().expect("non-empty") as usize].next_seq, self.cfg.mtu);
                if (qp.inflight_bytes + next as u64) as f64 > qp.cc.timely.window_bytes() {
                    // reopened by the next ACK
                    self.hosts[h].active.push_back(q);
                    continue;
                }
            }
            let r = self.emit_data(q);
            let qp = &self.qps[q as usize];
            if qp.pending.is_empty() {
                self.qps[q as usize].in_active = false;
            } else {
                self.hosts[h].active.push_back(q);
            }
            self.host_transmit(h, r, sched);
            return;
        }
        if earliest < self.hosts[h].wake_at {
            self.hosts[h].wake_at = earliest;
            sched.schedule(earliest, Event::HostWake { host: h as u32 });
        }
    }

    fn emit_data(&mut self, q: u32) -> PktRef {
        let now = self.now;
        let qp = &mut self.qps[q as usize];
        let m = qp.pending.pop_front().expect("non-empty") as usize;
        let ms = &mut self.msg_state[m];
        let msg = &self.messages[m];
        let tokens = match msg.class {
            FlowClass::Short if self.cfg.switch.iofd => self.cfg.tokens,
            _ => 0,
        };
        let mut pkt = Packet::data(msg, ms.next_seq, self.cfg.mtu, tokens, self.cfg.scheme.uses_lookahead());
        ms.next_seq += 1;
        if ms.next_seq < ms.npkts {
            qp.pending.push_back(m as u32);
        }
        pkt.sent_at = now;
        qp.inflight_bytes += pkt.payload as u64;
        qp.inflight_pkts += 1;
        if self.cfg.scheme.uses_dcqcn() {
            qp.cc.dcqcn.on_bytes_sent(pkt.size as u64, &self.cfg.cc.dcqcn);
        }
        qp.last_send = now;
        qp.last_size = pkt.size;
        qp.next_allowed = now + SimTime::at_rate(pkt.size as u64, qp.cc.pacer_rate());
        self.metrics.on_data_injected();
        self.data_in_fabric += 1;
        let r = self.alloc(pkt);
        self.rate_changed(q);
        r
    }

    fn host_transmit(&mut self, h: HostId, r: PktRef, sched: &mut Scheduler<Event>) {
        let size = self.arena[r as usize].as_ref().expect("live").size;
        let ser = SimTime::serialization(size as u64, self.line_rate);
        let p = self.topo.node(h).ports[0];
        self.hosts[h].busy = true;
        sched.schedule(
            self.now + ser + self.delay,
            Event::Arrive {
                node: p.peer as u32,
                port: p.peer_port as u16,
                pkt: r,
            },
        );
        sched.schedule(self.now + ser, Event::TxDone { node: h as u32, port: 0 });
    }

    fn send_pfc(&mut self, node: NodeId, in_port: PortId, lane: VirtualLane, pause: bool, sched: &mut Scheduler<Event>) {
        let p = self.topo.node(node).ports[in_port];
        sched.schedule(
            self.now + self.delay,
            Event::Pfc {
                node: p.peer as u32,
                port: p.peer_port as u16,
                lane,
                pause,
            },
        );
    }

    fn switch_receive(&mut self, node: NodeId, in_port: PortId, r: PktRef, sched: &mut Scheduler<Event>) {
        let s = node - self.n_hosts;
        let mut pkt = self.arena[r as usize].take().expect("live packet");
        pkt.hop_count += 1;
        let in_lane = pkt.lane;
        let fwd = self.switches[s].route(&self.topo, &mut pkt, in_port, &mut self.rng);
        let action = self.switches[s].enqueue(fwd, r, &mut pkt, in_port, in_lane);
        self.arena[r as usize] = Some(pkt);
        self.meta[r as usize] = Meta {
            in_port: in_port as u16,
            in_lane,
        };
        if action == PfcAction::Pause {
            self.send_pfc(node, in_port, in_lane, true, sched);
        }
        self.switch_try_tx(node, fwd.out_port, sched);
    }

    fn switch_try_tx(&mut self, node: NodeId, port: PortId, sched: &mut Scheduler<Event>) {
        let s = node - self.n_hosts;
        let q = &mut self.switches[s].ports[port];
        if q.busy {
            return;
        }
        let Some((r, bytes, class)) = q.pop() else {
            return;
        };
        q.busy = true;
        let meta = self.meta[r as usize];
        self.sw_tx[s][port] = Some(TxSlot {
            in_port: meta.in_port,
            lane: (class != QueueClass::Control).then_some(meta.in_lane),
            bytes,
        });
        let ser = SimTime::serialization(bytes as u64, self.line_rate);
        let p = self.topo.node(node).ports[port];
        sched.schedule(
            self.now + ser + self.delay,
            Event::Arrive {
                node: p.peer as u32,
                port: p.peer_port as u16,
                pkt: r,
            },
        );
        sched.schedule(
            self.now + ser,
            Event::TxDone {
                node: node as u32,
                port: port as u16,
            },
        );
    }

    fn switch_tx_done(&mut self, node: NodeId, port: PortId, sched: &mut Scheduler<Event>) {
        let s = node - self.n_hosts;
        let slot = self.sw_tx[s][port].take().expect("transmission in progress");
        self.switches[s].ports[port].busy = false;
        if let Some(lane) = slot.lane {
            let in_port = slot.in_port as PortId;
            if self.switches[s].release(in_port, lane, slot.bytes) == PfcAction::Resume {
                self.send_pfc(node, in_port, lane, false, sched);
            }
        }
        self.switch_try_tx(node, port, sched);
    }

    fn host_receive(&mut self, h: HostId, r: PktRef, sched: &mut Scheduler<Event>) {
        let mut pkt = self.arena[r as usize].take().expect("live packet");
        pkt.hop_count += 1;
        debug_assert_eq!(pkt.dst, h, "misdelivered packet");
        match pkt.kind {
            PacketKind::Data => {
                let shortest = self.topo.shortest_hops(pkt.src, pkt.dst);
                let bound = shortest + 2 * self.tokens_for(pkt.class) as u32;
                self.metrics.on_data_delivered(&pkt, shortest, bound);
                self.data_in_fabric -= 1;
                sched.note_progress();
                let out = self.hosts[h].rx.on_data_arrival(self.now, &pkt);
                let mut ack = Packet::control_for(&pkt, PacketKind::Ack, self.cfg.ctrl_bytes);
                ack.piggyback_n = out.feedback.piggyback_n;
                ack.ecn_echo = pkt.ecn_ce && out.feedback.ecn_visible;
                self.arena[r as usize] = Some(ack);
                self.hosts[h].ctrl.push_back(r);
                if out.send_cnp {
                    let cnp = Packet::control_for(&pkt, PacketKind::Cnp, self.cfg.ctrl_bytes);
                    let c = self.alloc(cnp);
                    self.hosts[h].ctrl.push_back(c);
                }
                self.host_try_send(h, sched);
            }
            PacketKind::Ack => {
                self.free.push(r);
                self.on_ack(h, &pkt, sched);
            }
            PacketKind::Cnp => {
                self.free.push(r);
                self.on_cnp(h, &pkt, sched);
            }
        }
    }

    fn on_ack(&mut self, h: HostId, ack: &Packet, sched: &mut Scheduler<Event>) {
        let Some(q) = self.existing_qp(h, ack.src) else {
            warn!("ACK for unknown queue pair {h}->{}", ack.src);
            return;
        };
        let m = self.id_to_idx[ack.flow_id as usize] as usize;
        let qp = &mut self.qps[q as usize];
        qp.inflight_bytes -= ack.payload as u64;
        qp.inflight_pkts -= 1;
        let ms = &mut self.msg_state[m];
        ms.acked += 1;
        if ms.acked == ms.npkts {
            self.done_total += 1;
            let msg = &self.messages[m];
            if msg.size <= self.cfg.short_flow_max {
                self.short_done += 1;
            }
            self.metrics.on_message_complete(msg, self.now);
        }
        qp.cc.dasr_on_ack(ack.piggyback_n);
        if self.cfg.scheme.uses_timely() {
            qp.timely_acked += ack.payload as u64;
            if qp.timely_acked >= self.cfg.timely_segment || ack.end {
                qp.timely_acked = 0;
                let rtt = self.now.saturating_sub(ack.sent_at).as_nanos().max(1);
                qp.cc.timely.on_rtt(rtt as f64, &self.cfg.cc.timely);
            }
        }
        self.rate_changed(q);
        self.host_try_send(h, sched);
    }

    fn on_cnp(&mut self, h: HostId, cnp: &Packet, sched: &mut Scheduler<Event>) {
        if !self.cfg.scheme.uses_dcqcn() {
            return;
        }
        let Some(q) = self.existing_qp(h, cnp.src) else {
            return;
        };
        let p = self.cfg.cc.dcqcn;
        let qp = &mut self.qps[q as usize];
        if !qp.timer_armed {
            // alpha keeps decaying once per timer period while no timer runs
            let k = self.now.saturating_sub(qp.timer_idle_since).as_nanos() / p.timer.as_nanos().max(1);
            if k > 0 {
                let decay = (1.0 - p.g).powi(k.min(i32::MAX as u64) as i32);
                qp.cc.dcqcn.alpha *= decay;
            }
        }
        qp.cc.on_cnp(&p);
        qp.timer_gen = qp.timer_gen.wrapping_add(1);
        qp.timer_armed = true;
        sched.schedule(
            self.now + p.timer,
            Event::DcqcnTimer {
                qp: q,
                gen: qp.timer_gen,
            },
        );
        self.rate_changed(q);
    }

    fn on_dcqcn_timer(&mut self, q: u32, gen: u32, sched: &mut Scheduler<Event>) {
        let p = self.cfg.cc.dcqcn;
        let qp = &mut self.qps[q as usize];
        if !qp.timer_armed || qp.timer_gen != gen {
            return;
        }
        qp.cc.dcqcn.on_timer(&p);
        if qp.cc.dcqcn_recovering(&p) {
            sched.schedule(self.now + p.timer, Event::DcqcnTimer { qp: q, gen });
        } else {
            qp.timer_armed = false;
            qp.timer_idle_since = self.now;
        }
        let src = qp.src;
        self.rate_changed(q);
        self.host_try_send(src, sched);
    }

    fn next_messages(&mut self, sched: &mut Scheduler<Event>) {
        while self.cursor < self.messages.len() && self.messages[self.cursor].start_time <= self.now {
            let m = self.cursor;
            self.cursor += 1;
            self.start_message(m, sched);
        }
        if let Some(m) = self.messages.get(self.cursor) {
            sched.schedule(m.start_time, Event::NextMessage);
        }
    }

    fn totals(&self, events: u64, deadlock: bool) -> FabricTotals {
        let mut t = FabricTotals {
            events,
            deadlock,
            in_fabric_at_end: self
                .arena
                .iter()
                .flatten()
                .filter(|p| p.kind == PacketKind::Data)
                .count() as u64,
            ..FabricTotals::default()
        };
        for s in &self.switches {
            let c = &s.counters;
            t.drop_count += c.buffer_overflows;
            t.pause_events += c.pauses_sent;
            t.ecn_marks += c.ecn_marked_short + c.ecn_marked_long;
            t.ecn_marks_receiver_link += c.ecn_marked_receiver_link;
            t.deflections += c.deflections;
            t.escape_lane_deflections += c.escape_lane_deflections;
            t.lane_migrations += c.lane_migrations;
            t.dft_high_water = t.dft_high_water.max(s.dft.high_water());
            t.max_queue_bytes = t.max_queue_bytes.max(s.max_queue_bytes());
        }
        for h in &self.hosts {
            t.cnp_count += h.rx.counters.cnps_sent;
            t.seq_gaps += h.rx.counters.seq_gaps;
            t.seq_inversions += h.rx.counters.seq_inversions;
        }
        t
    }
}

impl Model for World {
    type Event = Event;

    fn handle(&mut self, event: Event, sched: &mut Scheduler<Event>) {
        self.now = sched.now();
        match event {
            Event::Arrive { node, port, pkt } => {
                let node = node as NodeId;
                if node < self.n_hosts {
                    self.host_receive(node, pkt, sched);
                } else {
                    self.switch_receive(node, port as PortId, pkt, sched);
                }
            }
            Event::TxDone { node, port } => {
                let node = node as NodeId;
                if node < self.n_hosts {
                    self.hosts[node].busy = false;
                    self.host_try_send(node, sched);
                } else {
                    self.switch_tx_done(node, port as PortId, sched);
                }
            }
            Event::Pfc {
                node,
                port,
                lane,
                pause,
            } => {
                let node = node as NodeId;
                if node < self.n_hosts {
                    self.hosts[node].paused[lane.index()] = pause;
                    if !pause {
                        self.host_try_send(node, sched);
                    }
                } else {
                    let s = node - self.n_hosts;
                    self.switches[s].ports[port as usize].set_paused(lane, pause);
                    if !pause {
                        self.switch_try_tx(node, port as PortId, sched);
                    }
                }
            }
            Event::HostWake { host } => {
                let h = host as HostId;
                if self.hosts[h].wake_at <= self.now {
                    self.hosts[h].wake_at = SimTime::MAX;
                }
                self.host_try_send(h, sched);
            }
            Event::NextMessage => self.next_messages(sched),
            Event::DcqcnTimer { qp, gen } => self.on_dcqcn_timer(qp, gen, sched),
            Event::Sweep => {
                let mut evicted = 0;
                for h in &mut self.hosts {
                    evicted += h.rx.soft_state_sweep(self.now);
                }
                if evicted > 0 {
                    debug!("soft-state sweep at {} evicted {evicted} senders", self.now);
                }
                sched.schedule(self.now + self.cfg.sweep_interval, Event::Sweep);
            }
        }
    }

    /// Past the horizon the run stops once every short message is done; long
    /// messages are background and only waited for when there are no short ones.
    fn finished(&self) -> bool {
        self.now >= self.cfg.horizon
            && self.cursor == self.messages.len()
            && self.short_done == self.short_total
            && (self.short_total > 0 || self.done_total == self.messages.len())
    }

    fn has_outstanding_work(&self) -> bool {
        self.data_in_fabric > 0
    }
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub summary: RunSummary,
    pub samples: Vec<FctSample>,
    pub rates: Vec<RateSample>,
    pub deadlock: Option<SimError>,
}

/// A fabric plus its event queue; can be advanced in steps.
pub struct Simulation {
    world: World,
    sched: Scheduler<Event>,
    deadlock: Option<SimError>,
}

impl Simulation {
    pub fn new(topo: Topology, schedule: &Schedule, cfg: SimConfig) -> Result<Self, SimConfigError> {
        let world = World::new(topo, schedule, cfg)?;
        let mut sched = Scheduler::new();
        if let Some(m) = world.messages.first() {
            sched.schedule(m.start_time, Event::NextMessage);
        }
        if world.cfg.scheme.uses_dasr() {
            sched.schedule(world.cfg.sweep_interval, Event::Sweep);
        }
        Ok(Self {
            world,
            sched,
            deadlock: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.world.cfg
    }

    pub fn topology(&self) -> &Topology {
        &self.world.topo
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    /// Advance to `end` or until all short messages are done past the horizon.
    pub fn run_to(&mut self, end: SimTime) -> Result<RunReport, SimError> {
        let watchdog = Some(self.world.cfg.watchdog);
        let r = run_until(&mut self.world, &mut self.sched, end, watchdog);
        if let Err(e) = &r {
            self.deadlock = Some(e.clone());
        }
        r
    }

    pub fn qp(&self, src: HostId, dst: HostId) -> Option<QpView> {
        let q = &self.world.qps[self.world.existing_qp(src, dst)? as usize];
        Some(QpView {
            src,
            dst,
            pacer_rate: q.cc.pacer_rate(),
            dasr_n: q.cc.dasr_n,
            dcqcn_rc: q.cc.dcqcn.rc,
            timely_rate: q.cc.timely.rate,
            pending_msgs: q.pending.len(),
            inflight_pkts: q.inflight_pkts,
        })
    }

    pub fn receiver(&self, host: HostId) -> &Receiver {
        &self.world.hosts[host].rx
    }

    pub fn switch(&self, node: NodeId) -> &Switch<u32> {
        &self.world.switches[node - self.world.n_hosts]
    }

    pub fn samples(&self) -> &[FctSample] {
        self.world.metrics.samples()
    }

    pub fn rates(&self) -> &[RateSample] {
        self.world.metrics.rates()
    }

    pub fn summary(&self) -> RunSummary {
        let t = self
            .world
            .totals(self.sched.events_executed(), self.deadlock.is_some());
        self.world
            .metrics
            .summarize(self.sched.now(), self.world.messages.len(), t)
    }

    pub fn finish(self) -> SimOutput {
        let summary = self.summary();
        let metrics = self.world.metrics;
        SimOutput {
            summary,
            samples: metrics.samples().to_vec(),
            rates: metrics.rates().to_vec(),
            deadlock: self.deadlock,
        }
    }
}
