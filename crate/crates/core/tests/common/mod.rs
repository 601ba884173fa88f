//! Reference models written straight from the algorithm descriptions, kept
//! free of any code shared with the crate so disagreements show up.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dartsim::ccalgos::{DcqcnParams, DcqcnRpState, TimelyParams, TimelyState};
use dartsim::hostnic::{
    ack_feedback, AussTable, CongestionState, DasrFsm, FlowClass, Message, Packet, Receiver,
    ReceiverConfig,
};
use dartsim::simcore::SimTime;
use dartsim::topology::{HostId, Topology};

pub const LINE: f64 = 10e9;

/// DCQCN reaction point, default constants, plain f64 fields.
#[derive(Debug, Clone, Copy)]
pub struct DcqcnRef {
    pub rc: f64,
    pub rt: f64,
    pub alpha: f64,
    pub t: u32,
    pub bc: u32,
    pub pending: u64,
}

pub const DCQCN_MIN: f64 = 10e6;
pub const DCQCN_G: f64 = 1.0 / 256.0;
pub const DCQCN_AI: f64 = 40e6;
pub const DCQCN_HAI: f64 = 400e6;
pub const DCQCN_F: u32 = 5;
pub const DCQCN_BYTES: u64 = 10 * 1024 * 1024;

impl DcqcnRef {
    pub fn cnp(&mut self) {
        self.rt = self.rc;
        self.rc = f64::max(self.rc * (1.0 - self.alpha / 2.0), DCQCN_MIN);
        self.alpha = (1.0 - DCQCN_G) * self.alpha + DCQCN_G;
        self.t = 0;
        self.bc = 0;
        self.pending = 0;
    }

    fn stage_event(&mut self) {
        let (t, bc) = (self.t, self.bc);
        if t > DCQCN_F && bc > DCQCN_F {
            self.rt += DCQCN_HAI;
        } else if t > DCQCN_F || bc > DCQCN_F {
            self.rt += DCQCN_AI;
        }
        if self.rt > LINE {
            self.rt = LINE;
        }
        self.rc = f64::min((self.rc + self.rt) / 2.0, LINE);
    }

    pub fn timer(&mut self) {
        self.alpha *= 1.0 - DCQCN_G;
        self.t += 1;
        self.stage_event();
    }

    pub fn bytes(&mut self, n: u64) {
        self.pending += n;
        while self.pending >= DCQCN_BYTES {
            self.pending -= DCQCN_BYTES;
            self.bc += 1;
            self.stage_event();
        }
    }
}

/// TIMELY per-completion update with default constants (ns, bits/s).
#[derive(Debug, Clone, Copy)]
pub struct TimelyRef {
    pub prev_rtt: Option<f64>,
    pub rtt_diff: f64,
    pub rate: f64,
    pub min_rtt: f64,
    pub completions: u32,
}

pub const TIMELY_MIN: f64 = 10e6;
pub const TIMELY_LOW: f64 = 50_000.0;
pub const TIMELY_HIGH: f64 = 500_000.0;
pub const TIMELY_DELTA: f64 = 1e6;
pub const TIMELY_BETA: f64 = 0.8;
pub const TIMELY_EWMA: f64 = 0.125;

impl TimelyRef {
    pub fn update(&mut self, rtt: f64) {
        let new_diff = self.prev_rtt.map_or(0.0, |p| rtt - p);
        self.prev_rtt = Some(rtt);
        self.rtt_diff = (1.0 - TIMELY_EWMA) * self.rtt_diff + TIMELY_EWMA * new_diff;
        if rtt < self.min_rtt {
            self.min_rtt = rtt;
        }
        let grad = self.rtt_diff / self.min_rtt;
        if rtt < TIMELY_LOW {
            self.completions = 0;
            self.rate += TIMELY_DELTA;
        } else if rtt > TIMELY_HIGH {
            self.completions = 0;
            self.rate *= 1.0 - TIMELY_BETA * (1.0 - TIMELY_HIGH / rtt);
        } else if grad <= 0.0 {
            self.completions += 1;
            let n = if self.completions >= 5 { 5.0 } else { 1.0 };
            self.rate += n * TIMELY_DELTA;
        } else {
            self.completions = 0;
            self.rate *= 1.0 - TIMELY_BETA * grad;
        }
        self.rate = self.rate.clamp(TIMELY_MIN, LINE);
    }
}

/// Sender set as the set of active messages: a sender counts while it has at
/// least one started, unfinished message and has been heard from within the
/// timeout.
#[derive(Debug, Default)]
pub struct AussRef {
    active: BTreeMap<u64, HostId>,
    heard: BTreeMap<HostId, u64>,
    timeout: u64,
}

impl AussRef {
    pub fn new(timeout: u64) -> Self {
        Self {
            timeout,
            ..Self::default()
        }
    }

    fn has_msgs(&self, s: HostId) -> bool {
        self.active.values().any(|&x| x == s)
    }

    pub fn start(&mut self, s: HostId, msg: u64, now: u64) {
        self.heard.insert(s, now);
        self.active.entry(msg).or_insert(s);
    }

    pub fn end(&mut self, msg: u64, now: u64) {
        if let Some(s) = self.active.remove(&msg) {
            self.heard.insert(s, now);
        }
    }

    pub fn touch(&mut self, s: HostId, now: u64) {
        if self.has_msgs(s) {
            self.heard.insert(s, now);
        }
    }

    pub fn sweep(&mut self, now: u64) {
        let stale: BTreeSet<HostId> = self
            .active
            .values()
            .copied()
            .filter(|s| now - self.heard[s] > self.timeout)
            .collect();
        self.active.retain(|_, s| !stale.contains(s));
    }

    pub fn n(&self) -> usize {
        self.active.values().collect::<BTreeSet<_>>().len()
    }

    pub fn inflight(&self, s: HostId) -> u32 {
        self.active.values().filter(|&&x| x == s).count() as u32
    }
}

/// Hop count of a shortest host-to-host path, by BFS over the link list.
pub fn bfs_hops(topo: &Topology, src: HostId, dst: HostId) -> u32 {
    let mut adj = vec![Vec::new(); topo.num_nodes()];
    for l in topo.links() {
        adj[l.a.0].push(l.b.0);
        adj[l.b.0].push(l.a.0);
    }
    let mut dist = vec![u32::MAX; topo.num_nodes()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        if u == dst {
            return dist[u];
        }
        // hosts do not forward
        if u != src && topo.is_host(u) {
            continue;
        }
        for &v in &adj[u] {
            if dist[v] == u32::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    panic!("{dst} unreachable from {src}");
}

#[derive(Debug, Clone, Copy)]
pub enum RpInput {
    Cnp,
    Timer,
    Bytes(u64),
}

/// Apply one input to the crate's reaction point and to the reference, from
/// the same starting state.
pub fn dcqcn_case(init: DcqcnRef, input: RpInput) -> Result<(), String> {
    let p = DcqcnParams::with_line_rate(LINE);
    let mut s = DcqcnRpState {
        rc: init.rc,
        rt: init.rt,
        alpha: init.alpha,
        timer_events: init.t,
        byte_events: init.bc,
        bytes_pending: init.pending,
    };
    let mut r = init;
    match input {
        RpInput::Cnp => {
            s.on_cnp(&p);
            r.cnp();
        }
        RpInput::Timer => {
            s.on_timer(&p);
            r.timer();
        }
        RpInput::Bytes(n) => {
            s.on_bytes_sent(n, &p);
            r.bytes(n);
        }
    }
    let worst = [(s.rc, r.rc), (s.rt, r.rt), (s.alpha, r.alpha)]
        .into_iter()
        .map(|(a, b)| rel_err(a, b))
        .fold(0.0, f64::max);
    if worst > 1e-12
        || s.timer_events != r.t
        || s.byte_events != r.bc
        || s.bytes_pending != r.pending
    {
        return Err(format!("{init:?} {input:?}: crate {s:?} reference {r:?}"));
    }
    Ok(())
}

pub fn timely_case(init: TimelyRef, rtt_ns: f64) -> Result<(), String> {
    let p = TimelyParams::with_line_rate(LINE);
    let mut s = TimelyState {
        rtt_prev: init.prev_rtt,
        rtt_diff_ewma: init.rtt_diff,
        rate: init.rate,
        min_rtt: init.min_rtt,
        hai_counter: init.completions,
    };
    let mut r = init;
    s.on_rtt(rtt_ns, &p);
    r.update(rtt_ns);
    // the gradient term is in ns; compare it on a 1 ns scale near zero
    let diff_err = (s.rtt_diff_ewma - r.rtt_diff).abs() / r.rtt_diff.abs().max(1.0);
    let worst = rel_err(s.rate, r.rate).max(rel_err(s.min_rtt, r.min_rtt)).max(diff_err);
    if worst > 1e-12 || s.hai_counter != r.completions || s.rtt_prev != r.prev_rtt {
        return Err(format!("{init:?} rtt {rtt_ns}: crate {s:?} reference {r:?}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub enum AussOp {
    Start(u64),
    End(u64),
    Touch(HostId),
    Advance(u64),
    Sweep,
}

pub const AUSS_SENDERS: u64 = 6;
pub const AUSS_TIMEOUT: u64 = 1_000;

/// Message ids are tied to a sender (`id % AUSS_SENDERS`) as in a real trace.
pub fn auss_case(ops: &[AussOp]) -> Result<(), String> {
    let mut t = AussTable::new(SimTime(AUSS_TIMEOUT));
    let mut r = AussRef::new(AUSS_TIMEOUT);
    let mut now = 0u64;
    for (i, &op) in ops.iter().enumerate() {
        match op {
            AussOp::Start(m) => {
                let s = (m % AUSS_SENDERS) as HostId;
                t.on_start(s, m, None, SimTime(now));
                r.start(s, m, now);
            }
            AussOp::End(m) => {
                let s = (m % AUSS_SENDERS) as HostId;
                t.on_end(s, m, SimTime(now));
                r.end(m, now);
            }
            AussOp::Touch(s) => {
                t.touch(s, SimTime(now));
                r.touch(s, now);
            }
            AussOp::Advance(dt) => now += dt,
            AussOp::Sweep => {
                t.sweep(SimTime(now));
                r.sweep(now);
            }
        }
        if t.n() != r.n() {
            return Err(format!("after op {i} {op:?}: n {} vs reference {}", t.n(), r.n()));
        }
        for s in 0..AUSS_SENDERS as HostId {
            let got = t.get(s).map_or(0, |e| e.inflight_msgs);
            if got != r.inflight(s) {
                return Err(format!(
                    "after op {i} {op:?}: sender {s} has {got} messages, reference {}",
                    r.inflight(s)
                ));
            }
        }
    }
    Ok(())
}

pub const FSM_WINDOW: u64 = 40_000;
pub const FSM_FRACTION: f64 = 0.9;

/// One receiver observation: time step, ECN-CE on the packet, measured
/// receive rate, sender-set size.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub dt: u64,
    pub ecn: bool,
    pub rx: f64,
    pub n: usize,
}

/// Drive the classifier and check the state and the ACK it implies against a
/// direct reading of the state diagram.
pub fn fsm_case(obs: &[Observation]) -> Result<(), String> {
    let mut f = DasrFsm::new(SimTime(FSM_WINDOW), FSM_FRACTION);
    let mut now = 0u64;
    let mut last_mark: Option<u64> = None;
    for (i, o) in obs.iter().enumerate() {
        now += o.dt;
        if o.ecn {
            last_mark = Some(now);
        }
        let recent = last_mark.is_some_and(|m| now - m <= FSM_WINDOW);
        let full = o.rx >= FSM_FRACTION * LINE;
        let state = f.observe(SimTime(now), o.ecn, o.rx, LINE);
        let matching = CongestionState::ALL.iter().filter(|&&s| s == state).count();
        let expected = match (recent, full) {
            (false, _) => CongestionState::NoCongestion,
            (true, true) => CongestionState::ReceiverCongestion,
            (true, false) => CongestionState::NonReceiverCongestion,
        };
        if matching != 1 || state != expected {
            return Err(format!("obs {i} {o:?}: state {state:?}, expected {expected:?}"));
        }
        let ack = ack_feedback(state, o.n, o.ecn);
        let ok = match state {
            CongestionState::ReceiverCongestion => {
                ack.piggyback_n as usize == o.n.max(1) && !ack.ecn_visible
            }
            CongestionState::NonReceiverCongestion => ack.piggyback_n == 1 && ack.ecn_visible == o.ecn,
            CongestionState::NoCongestion => ack.piggyback_n as usize == o.n.max(1) && !ack.ecn_visible,
        };
        if !ok {
            return Err(format!("obs {i} {o:?}: ack {ack:?} wrong for {state:?}"));
        }
    }
    Ok(())
}

/// Feed a receiver random data packets from several senders and check every
/// ACK against the receiver's own sender set and ECN input.
pub fn receiver_case(seed: u64, packets: usize) -> Result<(), String> {
    let mut r = rng(seed);
    let mut rx = Receiver::new(ReceiverConfig {
        dasr: true,
        lookahead: true,
        notification_point: true,
        line_rate: LINE,
        line_fraction: FSM_FRACTION,
        ecn_window: SimTime(FSM_WINDOW),
        rate_tau: SimTime(40_000),
        idle_timeout: SimTime::from_millis(10),
        cnp_interval: SimTime(50_000),
    });
    // per sender: (message, next seq)
    let mut open: BTreeMap<HostId, (Message, u32)> = BTreeMap::new();
    let mut next_id = 0;
    let mut now = 0u64;
    let mut last_mark = None;
    for i in 0..packets {
        let s = r.random_range(1..9usize);
        let (m, seq) = open.entry(s).or_insert_with(|| {
            next_id += 1;
            let size = r.random_range(1..12u64) * 1000;
            let m = Message {
                id: next_id,
                src: s,
                dst: 0,
                size,
                class: FlowClass::of_size(size, 8000),
                start_time: SimTime(now),
                group: None,
                lookahead: None,
            };
            (m, 0)
        });
        let mut p = Packet::data(m, *seq, 1000, 4, false);
        *seq += 1;
        if p.end {
            open.remove(&s);
        }
        p.ecn_ce = r.random_bool(0.3);
        // gaps straddle line rate (800 ns per packet)
        now += r.random_range(500..1_400u64);
        let out = rx.on_data_arrival(SimTime(now), &p);
        let n = rx.auss().n().max(1) as u32;
        let fb = out.feedback;
        let ok = match out.state {
            CongestionState::ReceiverCongestion => fb.piggyback_n == n && !fb.ecn_visible,
            CongestionState::NonReceiverCongestion => fb.piggyback_n == 1 && fb.ecn_visible == p.ecn_ce,
            CongestionState::NoCongestion => fb.piggyback_n == n && !p.ecn_ce,
        };
        if p.ecn_ce {
            last_mark = Some(now);
        }
        let recent = last_mark.is_some_and(|t| now - t <= FSM_WINDOW);
        let expected = CongestionState::classify(recent, rx.rx_rate() >= FSM_FRACTION * LINE);
        if !ok || out.state != expected {
            return Err(format!(
                "packet {i} from {s}: state {:?} (expected {expected:?}), ack {fb:?}, |AUSS| {n}",
                out.state
            ));
        }
    }
    Ok(())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Any state the reaction point can reach, plus one input.
pub fn random_dcqcn(r: &mut ChaCha8Rng) -> (DcqcnRef, RpInput) {
    let rc = r.random_range(DCQCN_MIN..=LINE);
    let state = DcqcnRef {
        rc,
        rt: r.random_range(rc..=LINE),
        alpha: r.random_range(0.0..=1.0),
        t: r.random_range(0..12),
        bc: r.random_range(0..12),
        pending: r.random_range(0..DCQCN_BYTES),
    };
    let input = match r.random_range(0..3) {
        0 => RpInput::Cnp,
        1 => RpInput::Timer,
        _ => RpInput::Bytes(r.random_range(1..3 * DCQCN_BYTES)),
    };
    (state, input)
}

pub fn random_timely(r: &mut ChaCha8Rng) -> (TimelyRef, f64) {
    let state = TimelyRef {
        prev_rtt: r.random_bool(0.9).then(|| r.random_range(1_000.0..1_000_000.0)),
        rtt_diff: r.random_range(-100_000.0..100_000.0),
        rate: r.random_range(TIMELY_MIN..=LINE),
        min_rtt: r.random_range(1_000.0..100_000.0),
        completions: r.random_range(0..10),
    };
    // spans all three regions
    (state, r.random_range(1_000.0..1_000_000.0))
}

pub fn random_auss_ops(r: &mut ChaCha8Rng, len: usize) -> Vec<AussOp> {
    (0..len)
        .map(|_| match r.random_range(0..10) {
            0..=3 => AussOp::Start(r.random_range(0..4 * AUSS_SENDERS)),
            4..=5 => AussOp::End(r.random_range(0..4 * AUSS_SENDERS)),
            6 => AussOp::Touch(r.random_range(0..AUSS_SENDERS) as HostId),
            7..=8 => AussOp::Advance(r.random_range(0..AUSS_TIMEOUT)),
            _ => AussOp::Sweep,
        })
        .collect()
}

pub fn random_observations(r: &mut ChaCha8Rng, len: usize) -> Vec<Observation> {
    (0..len)
        .map(|_| Observation {
            dt: r.random_range(0..2 * FSM_WINDOW),
            ecn: r.random_bool(0.3),
            // dense around the 0.9 line-rate boundary
            rx: if r.random_bool(0.2) {
                FSM_FRACTION * LINE
            } else {
                r.random_range(0.0..=LINE)
            },
            n: r.random_range(0..20),
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
