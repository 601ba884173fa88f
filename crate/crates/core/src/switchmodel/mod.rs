//! Output-queued lossless switch with ECN marking, PFC-style pause and the
//! in-order flow deflection dataplane.

mod dft;
mod queue;

pub use dft::{DftEntry, DftError, DftTable};
pub use queue::{PortQueue, QueueClass};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hostnic::{FlowClass, Packet, PacketKind};
use crate::simcore::{RngStream, SimTime};
use crate::topology::{FlowKey, NodeId, PortId, Tier, Topology, VirtualLane};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwitchConfigError {
    #[error("deflect_threshold ({deflect}) must be below ecn_threshold ({ecn})")]
    DeflectAboveEcn { deflect: u64, ecn: u64 },
    #[error("ecn_threshold ({ecn}) must be below buffer_bytes ({buffer})")]
    EcnAboveBuffer { ecn: u64, buffer: u64 },
    #[error("buffer_bytes ({buffer}) too small for PFC headroom ({headroom}) on both lanes")]
    BufferTooSmall { buffer: u64, headroom: u64 },
    #[error("dft_entries must be at least 1 when deflection is enabled")]
    EmptyDft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    /// Per-ingress-port buffer.
    pub buffer_bytes: u64,
    pub ecn_threshold: u64,
    pub deflect_threshold: u64,
    pub dft_entries: usize,
    pub iofd: bool,
    /// Short-flow priority band in data queues.
    pub priority_short: bool,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            buffer_bytes: 225_000,
            ecn_threshold: 22_500,
            deflect_threshold: 15_000,
            dft_entries: 8,
            iofd: true,
            priority_short: false,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<(), SwitchConfigError> {
        if self.deflect_threshold >= self.ecn_threshold {
            return Err(SwitchConfigError::DeflectAboveEcn {
                deflect: self.deflect_threshold,
                ecn: self.ecn_threshold,
            });
        }
        if self.ecn_threshold >= self.buffer_bytes {
            return Err(SwitchConfigError::EcnAboveBuffer {
                ecn: self.ecn_threshold,
                buffer: self.buffer_bytes,
            });
        }
        if self.iofd && self.dft_entries == 0 {
            return Err(SwitchConfigError::EmptyDft);
        }
        Ok(())
    }
}

/// ECN-CE iff the queue already holds more than `threshold` bytes.
#[inline]
pub fn should_mark(occupancy: u64, threshold: u64) -> bool {
    occupancy > threshold
}

/// Per-lane PFC thresholds on ingress-attributed bytes.
///
/// The escape lane gets a small fixed allotment, the deflect lane the rest.
/// After `xoff` is crossed at most `headroom` more bytes can arrive, so each
/// lane stays within its allotment and the port within `buffer_bytes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PfcThresholds {
    pub headroom: u64,
    pub allotment: [u64; 2],
    pub xoff: [u64; 2],
    pub xon: [u64; 2],
}

impl PfcThresholds {
    pub fn new(
        buffer_bytes: u64,
        link_rate_bps: u64,
        link_delay: SimTime,
        max_packet: u64,
        mtu: u64,
    ) -> Result<Self, SwitchConfigError> {
        let wire = (link_rate_bps as u128 * 2 * link_delay.as_nanos() as u128).div_ceil(8_000_000_000) as u64;
        let headroom = wire + 2 * max_packet;
        let escape = 2 * headroom + 2 * mtu;
        if buffer_bytes < escape + headroom + 2 * mtu + 1 {
            return Err(SwitchConfigError::BufferTooSmall {
                buffer: buffer_bytes,
                headroom,
            });
        }
        let allotment = [escape, buffer_bytes - escape];
        let xoff = allotment.map(|a| a - headroom);
        let xon = xoff.map(|x| x - 2 * mtu);
        Ok(Self {
            headroom,
            allotment,
            xoff,
            xon,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfcAction {
    None,
    Pause,
    Resume,
}

/// Ingress accounting for one (in_port, lane).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PauseState {
    pub bytes: u64,
    /// A pause is outstanding toward the upstream neighbour.
    pub paused: bool,
}

impl PauseState {
    pub fn add(&mut self, bytes: u64, xoff: u64) -> PfcAction {
        self.bytes += bytes;
        if !self.paused && self.bytes > xoff {
            self.paused = true;
            PfcAction::Pause
        } else {
            PfcAction::None
        }
    }

    pub fn remove(&mut self, bytes: u64, xon: u64) -> PfcAction {
        debug_assert!(self.bytes >= bytes, "ingress accounting underflow");
        self.bytes -= bytes;
        if self.paused && self.bytes < xon {
            self.paused = false;
            PfcAction::Resume
        } else {
            PfcAction::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deflection {
    NoDeflect,
    Deflect(PortId),
}

/// Facts about a packet and its ECMP port that gate deflection.
#[derive(Debug, Clone, Copy)]
pub struct DeflectInputs {
    pub start: bool,
    pub class: FlowClass,
    pub tokens: u8,
    pub lane: VirtualLane,
    pub ecmp_occupancy: u64,
    pub dft_free: bool,
    /// The ECMP port is the destination host's access link.
    pub ecmp_to_receiver: bool,
}

/// Deflect only a short flow's start packet with tokens left, on the deflect
/// lane, when its ECMP queue is above threshold and a DFT slot is free. The
/// port is drawn uniformly from `eligible`; an empty set means no deflection.
pub fn decide_deflection(
    deflect_threshold: u64,
    inp: &DeflectInputs,
    eligible: &[PortId],
    rng: &mut RngStream,
) -> Deflection {
    let allowed = inp.start
        && inp.class == FlowClass::Short
        && inp.tokens > 0
        && inp.lane == VirtualLane::Deflect
        && inp.dft_free
        && !inp.ecmp_to_receiver
        && inp.ecmp_occupancy > deflect_threshold;
    if !allowed || eligible.is_empty() {
        return Deflection::NoDeflect;
    }
    Deflection::Deflect(eligible[rng.below(eligible.len())])
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchCounters {
    pub ecn_marked_short: u64,
    pub ecn_marked_long: u64,
    /// Marks of either class applied on a port facing a host.
    pub ecn_marked_receiver_link: u64,
    pub deflections: u64,
    /// Deflections onto a port that is not an equal-cost next hop.
    pub misroutes: u64,
    pub dft_hits: u64,
    pub escape_lane_deflections: u64,
    pub lane_migrations: u64,
    pub pauses_sent: u64,
    pub resumes_sent: u64,
    pub buffer_overflows: u64,
}

/// Routing outcome for one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Forward {
    pub out_port: PortId,
    pub class: QueueClass,
    pub deflected: bool,
}

#[derive(Debug, Clone)]
pub struct Switch<H> {
    pub node: NodeId,
    pub tier: Tier,
    pub ports: Vec<PortQueue<H>>,
    ingress: Vec<[PauseState; 2]>,
    host_facing: Vec<bool>,
    tor_facing: Vec<bool>,
    pub dft: DftTable,
    cfg: SwitchConfig,
    pfc: PfcThresholds,
    pub counters: SwitchCounters,
    scratch: Vec<PortId>,
}

impl<H: Copy> Switch<H> {
    pub fn new(topo: &Topology, node: NodeId, cfg: SwitchConfig, pfc: PfcThresholds) -> Self {
        let tier = topo.tier(node).expect("switch node");
        let nports = topo.node(node).ports.len();
        Self {
            node,
            tier,
            ports: (0..nports).map(|_| PortQueue::new()).collect(),
            ingress: vec![[PauseState::default(); 2]; nports],
            host_facing: (0..nports).map(|p| topo.is_host_facing(node, p)).collect(),
            tor_facing: topo
                .node(node)
                .ports
                .iter()
                .map(|p| topo.tier(p.peer) == Some(Tier::Tor))
                .collect(),
            dft: DftTable::new(cfg.dft_entries),
            cfg,
            pfc,
            counters: SwitchCounters::default(),
            scratch: Vec::with_capacity(nports),
        }
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.cfg
    }

    pub fn pfc(&self) -> &PfcThresholds {
        &self.pfc
    }

    pub fn ingress_bytes(&self, in_port: PortId, lane: VirtualLane) -> u64 {
        self.ingress[in_port][lane.index()].bytes
    }

    fn data_class(&self, pkt: &Packet) -> QueueClass {
        match pkt.lane {
            VirtualLane::Escape => QueueClass::Escape,
            VirtualLane::Deflect if self.cfg.priority_short && pkt.class == FlowClass::Short => {
                QueueClass::DeflectHigh
            }
            VirtualLane::Deflect => QueueClass::Deflect,
        }
    }

    /// Pick the output port: DFT hit, then a fresh deflection decision, then
    /// ECMP (escape-lane packets take the fixed escape route). Updates the
    /// packet's tokens, lane and deflection count.
    pub fn route(
        &mut self,
        topo: &Topology,
        pkt: &mut Packet,
        in_port: PortId,
        rng: &mut RngStream,
    ) -> Forward {
        let key = FlowKey {
            src: pkt.src,
            dst: pkt.dst,
            flow_id: pkt.flow_id,
        };
        if pkt.kind != PacketKind::Data {
            return Forward {
                out_port: topo.ecmp_next_hop(self.node, key),
                class: QueueClass::Control,
                deflected: false,
            };
        }
        if pkt.lane == VirtualLane::Deflect && pkt.deflection_tokens == 0 && pkt.deflections > 0 {
            pkt.lane = VirtualLane::Escape;
            self.counters.lane_migrations += 1;
        }
        if pkt.lane == VirtualLane::Escape {
            return Forward {
                out_port: topo.escape_next_hop(self.node, pkt.dst),
                class: QueueClass::Escape,
                deflected: false,
            };
        }

        if let Some(e) = self.dft.lookup(pkt.flow_id) {
            if pkt.deflection_tokens > 0 && e.tokens == pkt.deflection_tokens {
                let out_port = e.out_port;
                pkt.deflection_tokens -= 1;
                pkt.deflections += 1;
                self.counters.dft_hits += 1;
                if pkt.end {
                    self.dft.release(pkt.flow_id);
                }
                return Forward {
                    out_port,
                    class: self.data_class(pkt),
                    deflected: true,
                };
            }
        }

        let ecmp = topo.ecmp_next_hop(self.node, key);
        if self.cfg.iofd && pkt.start && pkt.deflection_tokens > 0 {
            let inp = DeflectInputs {
                start: pkt.start,
                class: pkt.class,
                tokens: pkt.deflection_tokens,
                lane: pkt.lane,
                ecmp_occupancy: self.ports[ecmp].occupancy(),
                dft_free: self.dft.has_free() && self.dft.lookup(pkt.flow_id).is_none(),
                ecmp_to_receiver: self.host_facing[ecmp],
            };
            let mut eligible = std::mem::take(&mut self.scratch);
            eligible.clear();
            let threshold = self.cfg.deflect_threshold;
            let open = |p: PortId| {
                p != in_port
                    && p != ecmp
                    && !self.host_facing[p]
                    && self.ports[p].occupancy() <= threshold
            };
            // an uncongested equal-cost port costs no extra hops; misroute
            // only when none exists, and never down into a ToR that would
            // send the packet back up its oversubscribed uplinks
            eligible.extend(topo.next_hops(self.node, pkt.dst).iter().copied().filter(|&p| open(p)));
            let minimal = !eligible.is_empty();
            if !minimal {
                eligible.extend((0..self.ports.len()).filter(|&p| open(p) && !self.tor_facing[p]));
            }
            let d = decide_deflection(self.cfg.deflect_threshold, &inp, &eligible, rng);
            self.scratch = eligible;
            if let Deflection::Deflect(port) = d {
                self.dft
                    .allocate(pkt.flow_id, port, pkt.deflection_tokens)
                    .expect("free slot checked");
                pkt.deflection_tokens -= 1;
                pkt.deflections += 1;
                self.counters.deflections += 1;
                if !minimal {
                    self.counters.misroutes += 1;
                }
                if pkt.end {
                    self.dft.release(pkt.flow_id);
                }
                return Forward {
                    out_port: port,
                    class: self.data_class(pkt),
                    deflected: true,
                };
            }
        }
        Forward {
            out_port: ecmp,
            class: self.data_class(pkt),
            deflected: false,
        }
    }

    /// Queue a routed packet: ECN marking on data, ingress attribution for PFC.
    /// `in_lane` is the lane the packet arrived on, which is what the upstream
    /// pause applies to even if the packet has since migrated.
    pub fn enqueue(
        &mut self,
        fwd: Forward,
        handle: H,
        pkt: &mut Packet,
        in_port: PortId,
        in_lane: VirtualLane,
    ) -> PfcAction {
        let receiver_link = self.host_facing[fwd.out_port];
        let port = &mut self.ports[fwd.out_port];
        if fwd.class == QueueClass::Control {
            port.push(fwd.class, handle, pkt.size);
            return PfcAction::None;
        }
        let lane = in_lane;
        if should_mark(port.occupancy(), self.cfg.ecn_threshold) && !pkt.ecn_ce {
            pkt.ecn_ce = true;
            match pkt.class {
                FlowClass::Short => self.counters.ecn_marked_short += 1,
                FlowClass::Long => self.counters.ecn_marked_long += 1,
            }
            if receiver_link {
                self.counters.ecn_marked_receiver_link += 1;
            }
        }
        port.push(fwd.class, handle, pkt.size);
        let l = lane.index();
        let st = &mut self.ingress[in_port][l];
        let action = st.add(pkt.size as u64, self.pfc.xoff[l]);
        if st.bytes > self.pfc.allotment[l] {
            self.counters.buffer_overflows += 1;
        }
        if action == PfcAction::Pause {
            self.counters.pauses_sent += 1;
        }
        action
    }

    /// A data packet that entered on `in_port` has left the switch.
    pub fn release(&mut self, in_port: PortId, lane: VirtualLane, bytes: u32) -> PfcAction {
        let l = lane.index();
        let action = self.ingress[in_port][l].remove(bytes as u64, self.pfc.xon[l]);
        if action == PfcAction::Resume {
            self.counters.resumes_sent += 1;
        }
        action
    }

    pub fn max_queue_bytes(&self) -> u64 {
        self.ports.iter().map(|p| p.max_occupancy()).max().unwrap_or(0)
    }

    pub fn queued_packets(&self) -> usize {
        self.ports.iter().map(|p| p.len()).sum()
    }
}
