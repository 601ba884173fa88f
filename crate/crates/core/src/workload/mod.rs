//! Traffic generation: short-flow incast groups with Poisson arrivals and a
//! stationary population of long background flows.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hostnic::{FlowClass, GroupId, Lookahead, Message, MsgId};
use crate::simcore::{RngStream, SimTime, StreamId};
use crate::topology::{HostId, Topology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("load must be in (0, 1], got {0}")]
    Load(f64),
    #[error("short-byte fraction must be in [0, 1], got {0}")]
    Mix(f64),
    #[error("incast_degree must be at least 1")]
    ZeroDegree,
    #[error("incast_degree {degree} exceeds num_hosts - 1 = {max}")]
    DegreeTooLarge { degree: usize, max: usize },
    #[error("short_sizes must be non-empty and each size must be <= short_flow_max ({0})")]
    ShortSizes(u64),
    #[error("long_size must exceed short_flow_max ({0})")]
    LongSize(u64),
    #[error("long-flow population {needed} exceeds the {hosts} available senders")]
    TooManyLongFlows { needed: usize, hosts: usize },
}

/// Share of offered bytes carried by short flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mix {
    Typical,
    Light,
    Heavy,
    Custom(f64),
}

impl Mix {
    pub fn short_fraction(self) -> f64 {
        match self {
            Mix::Typical => 0.4,
            Mix::Light => 0.2,
            Mix::Heavy => 0.6,
            Mix::Custom(f) => f,
        }
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mix::Typical => f.write_str("TYPICAL"),
            Mix::Light => f.write_str("LIGHT"),
            Mix::Heavy => f.write_str("HEAVY"),
            Mix::Custom(x) => write!(f, "{x}"),
        }
    }
}

impl FromStr for Mix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TYPICAL" => Ok(Mix::Typical),
            "LIGHT" => Ok(Mix::Light),
            "HEAVY" => Ok(Mix::Heavy),
            other => other
                .parse::<f64>()
                .map(Mix::Custom)
                .map_err(|_| format!("unknown mix '{s}' (TYPICAL, LIGHT, HEAVY or a short-byte fraction)")),
        }
    }
}

impl Serialize for Mix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Mix::Custom(x) => s.serialize_f64(*x),
            named => s.serialize_str(&named.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Mix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Fraction(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Fraction(f) => Ok(Mix::Custom(f)),
        }
    }
}

/// What `load` is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadBasis {
    /// Sum of host line rates.
    Hosts,
    /// Sum of host line rates divided by the ToR oversubscription, i.e. what
    /// the ToR uplinks can carry.
    Fabric,
}

impl FromStr for LoadBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hosts" => Ok(LoadBasis::Hosts),
            "fabric" => Ok(LoadBasis::Fabric),
            _ => Err(format!("unknown load basis '{s}' (hosts or fabric)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    /// Offered bytes as a fraction of the capacity named by `load_basis`.
    pub load: f64,
    pub load_basis: LoadBasis,
    pub mix: Mix,
    pub short_sizes: Vec<u64>,
    pub short_flow_max: u64,
    pub long_size: u64,
    pub incast_degree: usize,
    pub jitter: SimTime,
    pub duration: SimTime,
    pub seed: u64,
    pub lookahead: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            load: 0.4,
            load_basis: LoadBasis::Hosts,
            mix: Mix::Typical,
            short_sizes: vec![2_000, 4_000, 8_000],
            short_flow_max: 8_000,
            long_size: 1_000_000_000,
            incast_degree: 16,
            jitter: SimTime::from_micros(100),
            duration: SimTime::from_millis(50),
            seed: 1,
            lookahead: true,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self, num_hosts: usize) -> Result<(), WorkloadError> {
        if !(self.load > 0.0 && self.load <= 1.0) {
            return Err(WorkloadError::Load(self.load));
        }
        let f = self.mix.short_fraction();
        if !(0.0..=1.0).contains(&f) {
            return Err(WorkloadError::Mix(f));
        }
        if self.incast_degree == 0 {
            return Err(WorkloadError::ZeroDegree);
        }
        if self.incast_degree > num_hosts.saturating_sub(1) {
            return Err(WorkloadError::DegreeTooLarge {
                degree: self.incast_degree,
                max: num_hosts.saturating_sub(1),
            });
        }
        if self.short_sizes.is_empty() || self.short_sizes.iter().any(|&s| s == 0 || s > self.short_flow_max) {
            return Err(WorkloadError::ShortSizes(self.short_flow_max));
        }
        if self.long_size <= self.short_flow_max {
            return Err(WorkloadError::LongSize(self.short_flow_max));
        }
        Ok(())
    }

    /// Bits per second that `load = 1` stands for on `topo`.
    pub fn capacity_bps(&self, topo: &Topology) -> f64 {
        let hosts = topo.num_hosts() as f64 * topo.link_rate_bps() as f64;
        match self.load_basis {
            LoadBasis::Hosts => hosts,
            LoadBasis::Fabric => hosts / topo.oversubscription(),
        }
    }

    pub fn mean_short_size(&self) -> f64 {
        self.short_sizes.iter().sum::<u64>() as f64 / self.short_sizes.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncastGroup {
    pub group_id: GroupId,
    pub receiver: HostId,
    pub senders: Vec<HostId>,
    pub sizes: Vec<u64>,
    pub start_time: SimTime,
}

/// Pre-generated traffic, sorted by start time.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub messages: Vec<Message>,
    pub groups: Vec<IncastGroup>,
    pub duration: SimTime,
}

#[derive(Serialize)]
struct ScheduleRecord {
    msg_id: MsgId,
    src: HostId,
    dst: HostId,
    size: u64,
    class: FlowClass,
    start_time: u64,
    group_id: Option<GroupId>,
}

impl Schedule {
    /// Messages must already be sorted by `(start_time, id)` with dense ids.
    pub fn from_messages(mut messages: Vec<Message>, duration: SimTime) -> Self {
        messages.sort_by_key(|m| (m.start_time, m.id));
        Self {
            messages,
            groups: Vec::new(),
            duration,
        }
    }

    /// Bytes offered within the horizon: short flows whole, long flows capped
    /// at what line rate could carry before the end.
    pub fn offered_bytes(&self, line_rate_bps: u64, short_flow_max: u64) -> (f64, f64) {
        let mut short = 0.0;
        let mut long = 0.0;
        for m in self.messages.iter().filter(|m| m.start_time < self.duration) {
            if m.size <= short_flow_max {
                short += m.size as f64;
            } else {
                let window = (self.duration - m.start_time).as_secs_f64();
                long += (m.size as f64).min(line_rate_bps as f64 / 8.0 * window);
            }
        }
        (short, long)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for m in &self.messages {
            let rec = ScheduleRecord {
                msg_id: m.id,
                src: m.src,
                dst: m.dst,
                size: m.size,
                class: m.class,
                start_time: m.start_time.as_nanos(),
                group_id: m.group,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Put the group's full sender list on each of its messages.
pub fn attach_lookahead(group: &IncastGroup, messages: &mut [Message]) {
    let la = Arc::new(Lookahead {
        group_id: group.group_id,
        senders: group.senders.clone(),
    });
    for m in messages.iter_mut().filter(|m| m.group == Some(group.group_id)) {
        m.lookahead = Some(la.clone());
    }
}

/// Number of always-on long flows that offers `long_rate_bps`.
pub fn long_flow_population(long_rate_bps: f64, line_rate_bps: u64) -> usize {
    (long_rate_bps / line_rate_bps as f64).round() as usize
}

/// Generate the schedule for `topo`; a pure function of the config
/// (including its seed) and the fabric.
pub fn generate_schedule(cfg: &WorkloadConfig, topo: &Topology) -> Result<Schedule, WorkloadError> {
    let num_hosts = topo.num_hosts();
    let line_rate_bps = topo.link_rate_bps();
    cfg.validate(num_hosts)?;
    let mut rng = RngStream::new(cfg.seed, StreamId::Workload);
    let mut jitter_rng = RngStream::new(cfg.seed, StreamId::Jitter);
    let capacity = cfg.capacity_bps(topo);
    let short_frac = cfg.mix.short_fraction();
    let short_rate = cfg.load * short_frac * capacity;
    let long_rate = cfg.load * (1.0 - short_frac) * capacity;

    let mut messages = Vec::new();
    let mut groups = Vec::new();
    let mut next_id: MsgId = 0;
    let jitter = |r: &mut RngStream| SimTime((r.uniform() * cfg.jitter.as_nanos() as f64) as u64);

    let k = long_flow_population(long_rate, line_rate_bps);
    if k > num_hosts {
        return Err(WorkloadError::TooManyLongFlows {
            needed: k,
            hosts: num_hosts,
        });
    }
    if k > 0 {
        for src in index::sample(&mut rng, num_hosts, k).into_vec() {
            let mut dst = rng.below(num_hosts - 1);
            if dst >= src {
                dst += 1;
            }
            messages.push(Message {
                id: next_id,
                src,
                dst,
                size: cfg.long_size,
                class: FlowClass::Long,
                start_time: jitter(&mut jitter_rng),
                group: None,
                lookahead: None,
            });
            next_id += 1;
        }
    }

    if short_rate > 0.0 {
        let bytes_per_group = cfg.incast_degree as f64 * cfg.mean_short_size();
        let groups_per_sec = short_rate / 8.0 / bytes_per_group;
        let gap = Exp::new(groups_per_sec).expect("positive rate");
        let horizon = cfg.duration.as_secs_f64();
        let mut t = gap.sample(&mut rng);
        let mut group_id: GroupId = 0;
        while t < horizon {
            let start = SimTime((t * 1e9) as u64);
            let receiver = rng.below(num_hosts);
            let senders: Vec<HostId> = index::sample(&mut rng, num_hosts - 1, cfg.incast_degree)
                .into_iter()
                .map(|i| if i >= receiver { i + 1 } else { i })
                .collect();
            let sizes: Vec<u64> = senders
                .iter()
                .map(|_| cfg.short_sizes[rng.below(cfg.short_sizes.len())])
                .collect();
            let first = messages.len();
            for (&src, &size) in senders.iter().zip(&sizes) {
                messages.push(Message {
                    id: next_id,
                    src,
                    dst: receiver,
                    size,
                    class: FlowClass::of_size(size, cfg.short_flow_max),
                    start_time: start + jitter(&mut jitter_rng),
                    group: Some(group_id),
                    lookahead: None,
                });
                next_id += 1;
            }
            let group = IncastGroup {
                group_id,
                receiver,
                senders,
                sizes,
                start_time: start,
            };
            if cfg.lookahead {
                attach_lookahead(&group, &mut messages[first..]);
            }
            groups.push(group);
            group_id += 1;
            t += gap.sample(&mut rng);
        }
    }

    messages.sort_by_key(|m| (m.start_time, m.id));
    Ok(Schedule {
        messages,
        groups,
        duration: cfg.duration,
    })
}
