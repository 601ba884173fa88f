use std::collections::VecDeque;

use crate::topology::VirtualLane;

/// Sub-queue a packet is placed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueueClass {
    Control,
    Escape,
    /// Short-flow priority band inside the deflect lane (priority ablation only).
    DeflectHigh,
    Deflect,
}

impl QueueClass {
    pub fn lane(self) -> Option<VirtualLane> {
        match self {
            QueueClass::Control => None,
            QueueClass::Escape => Some(VirtualLane::Escape),
            QueueClass::DeflectHigh | QueueClass::Deflect => Some(VirtualLane::Deflect),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot<H> {
    handle: H,
    bytes: u32,
}

/// Output port: strict-priority control queue, then the two data lanes served
/// round-robin. A lane paused by the downstream neighbour is skipped.
#[derive(Debug, Clone)]
pub struct PortQueue<H> {
    ctrl: VecDeque<Slot<H>>,
    escape: VecDeque<Slot<H>>,
    deflect_hi: VecDeque<Slot<H>>,
    deflect: VecDeque<Slot<H>>,
    data_bytes: u64,
    max_data_bytes: u64,
    paused: [bool; 2],
    next_lane: usize,
    /// Link currently serializing a packet.
    pub busy: bool,
}

impl<H: Copy> Default for PortQueue<H> {
    fn default() -> Self {
        Self::new()
    }
}

impl<H: Copy> PortQueue<H> {
    pub fn new() -> Self {
        Self {
            ctrl: VecDeque::new(),
            escape: VecDeque::new(),
            deflect_hi: VecDeque::new(),
            deflect: VecDeque::new(),
            data_bytes: 0,
            max_data_bytes: 0,
            paused: [false; 2],
            next_lane: 0,
            busy: false,
        }
    }

    /// Data bytes waiting (not yet on the wire).
    #[inline]
    pub fn occupancy(&self) -> u64 {
        self.data_bytes
    }

    pub fn max_occupancy(&self) -> u64 {
        self.max_data_bytes
    }

    pub fn is_paused(&self, lane: VirtualLane) -> bool {
        self.paused[lane.index()]
    }

    pub fn set_paused(&mut self, lane: VirtualLane, paused: bool) {
        self.paused[lane.index()] = paused;
    }

    pub fn len(&self) -> usize {
        self.ctrl.len() + self.escape.len() + self.deflect_hi.len() + self.deflect.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lane_len(&self, lane: VirtualLane) -> usize {
        match lane {
            VirtualLane::Escape => self.escape.len(),
            VirtualLane::Deflect => self.deflect_hi.len() + self.deflect.len(),
        }
    }

    pub fn handles(&self) -> impl Iterator<Item = H> + '_ {
        self.ctrl
            .iter()
            .chain(&self.escape)
            .chain(&self.deflect_hi)
            .chain(&self.deflect)
            .map(|s| s.handle)
    }

    pub fn push(&mut self, class: QueueClass, handle: H, bytes: u32) {
        let slot = Slot { handle, bytes };
        match class {
            QueueClass::Control => {
                self.ctrl.push_back(slot);
                return;
            }
            QueueClass::Escape => self.escape.push_back(slot),
            QueueClass::DeflectHigh => self.deflect_hi.push_back(slot),
            QueueClass::Deflect => self.deflect.push_back(slot),
        }
        self.data_bytes += bytes as u64;
        self.max_data_bytes = self.max_data_bytes.max(self.data_bytes);
    }

    fn lane_ready(&self, lane: usize) -> bool {
        !self.paused[lane]
            && match lane {
                0 => !self.escape.is_empty(),
                _ => !self.deflect_hi.is_empty() || !self.deflect.is_empty(),
            }
    }

    /// True if `pop` would return a packet.
    pub fn has_servable(&self) -> bool {
        !self.ctrl.is_empty() || self.lane_ready(0) || self.lane_ready(1)
    }

    /// Next packet to transmit.
    pub fn pop(&mut self) -> Option<(H, u32, QueueClass)> {
        if let Some(s) = self.ctrl.pop_front() {
            return Some((s.handle, s.bytes, QueueClass::Control));
        }
        let first = self.next_lane;
        let lane = [first, 1 - first]
            .into_iter()
            .find(|&l| self.lane_ready(l))?;
        self.next_lane = 1 - lane;
        let (slot, class) = if lane == 0 {
            (self.escape.pop_front(), QueueClass::Escape)
        } else if let Some(s) = self.deflect_hi.pop_front() {
            (Some(s), QueueClass::DeflectHigh)
        } else {
            (self.deflect.pop_front(), QueueClass::Deflect)
        };
        let s = slot.expect("ready lane is non-empty");
        self.data_bytes -= s.bytes as u64;
        Some((s.handle, s.bytes, class))
    }
}
