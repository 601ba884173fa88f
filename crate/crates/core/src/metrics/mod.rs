//! Run accounting: per-message completion times, per-packet path and marking
//! statistics, and the summaries and files derived from them.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::hostnic::{FlowClass, Message, MsgId, Packet};
use crate::simcore::SimTime;
use crate::topology::HostId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FctSample {
    pub msg_id: MsgId,
    pub src: HostId,
    pub dst: HostId,
    pub size: u64,
    pub class: FlowClass,
    pub start: SimTime,
    /// Start to final ACK at the sender.
    pub fct: SimTime,
    /// Largest hop count over the message's packets.
    pub hops: u32,
    /// Deflections summed over the message's packets.
    pub deflections: u32,
}

/// Nearest-rank percentile: the `ceil(p * N)`-th smallest sample. `None` for
/// an empty list.
pub fn percentile(samples: &[SimTime], p: f64) -> Option<SimTime> {
    let mut v = samples.to_vec();
    v.sort_unstable();
    percentile_sorted(&v, p)
}

/// As [`percentile`] for an already sorted slice.
pub fn percentile_sorted(sorted: &[SimTime], p: f64) -> Option<SimTime> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    pub size: u64,
    pub count: usize,
    pub median_ns: Option<u64>,
    pub p99_ns: Option<u64>,
    pub p999_ns: Option<u64>,
}

impl SizeStats {
    fn from_fcts(size: u64, mut fcts: Vec<SimTime>) -> Self {
        fcts.sort_unstable();
        let pick = |p| percentile_sorted(&fcts, p).map(SimTime::as_nanos);
        Self {
            size,
            count: fcts.len(),
            median_ns: pick(0.5),
            p99_ns: pick(0.99),
            p999_ns: pick(0.999),
        }
    }
}

/// Post-run summary; every field is a pure function of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub duration_ns: u64,
    pub events: u64,
    pub messages_scheduled: usize,
    pub messages_completed: usize,
    pub short_fct: Vec<SizeStats>,
    pub all_short: SizeStats,
    pub goodput_bps: f64,
    pub ecn_marked_short_pct: Option<f64>,
    /// Share of all ECN marks applied on ToR-to-host links.
    pub ecn_receiver_link_pct: Option<f64>,
    pub path_dilation_pct: Option<f64>,
    pub load_increase_pct: Option<f64>,
    pub drop_count: u64,
    pub pause_events: u64,
    pub cnp_count: u64,
    pub ecn_marks: u64,
    pub ecn_marks_receiver_link: u64,
    pub deflections: u64,
    pub escape_lane_deflections: u64,
    pub lane_migrations: u64,
    pub dft_high_water: usize,
    pub max_queue_bytes: u64,
    pub seq_gaps: u64,
    pub seq_inversions: u64,
    pub hop_bound_violations: u64,
    pub injected_packets: u64,
    pub delivered_packets: u64,
    pub in_fabric_at_end: u64,
    pub deadlock: bool,
}

impl RunSummary {
    /// p99 FCT of `size`-byte messages, if any completed.
    pub fn p99(&self, size: u64) -> Option<u64> {
        self.short_fct.iter().find(|s| s.size == size)?.p99_ns
    }

    pub fn conserved(&self) -> bool {
        self.injected_packets == self.delivered_packets + self.in_fabric_at_end
    }
}

/// Counters the fabric hands over at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FabricTotals {
    pub drop_count: u64,
    pub pause_events: u64,
    pub cnp_count: u64,
    pub ecn_marks: u64,
    pub ecn_marks_receiver_link: u64,
    pub deflections: u64,
    pub escape_lane_deflections: u64,
    pub lane_migrations: u64,
    pub dft_high_water: usize,
    pub max_queue_bytes: u64,
    pub seq_gaps: u64,
    pub seq_inversions: u64,
    pub in_fabric_at_end: u64,
    pub events: u64,
    pub deadlock: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub time: SimTime,
    pub src: HostId,
    pub dst: HostId,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct MsgPath {
    hops: u32,
    deflections: u32,
}

/// Event-loop fed accumulators.
#[derive(Debug, Clone, Default)]
pub struct MetricsCollector {
    short_flow_max: u64,
    warmup: SimTime,
    samples: Vec<FctSample>,
    paths: BTreeMap<MsgId, MsgPath>,
    injected: u64,
    delivered: u64,
    delivered_payload: u64,
    short_delivered: u64,
    short_marked: u64,
    short_dilation_sum: f64,
    link_bytes: u128,
    shortest_link_bytes: u128,
    hop_bound_violations: u64,
    rates: Vec<RateSample>,
    trace_rates: bool,
}

impl MetricsCollector {
    pub fn new(short_flow_max: u64, warmup: SimTime, trace_rates: bool) -> Self {
        Self {
            short_flow_max,
            warmup,
            trace_rates,
            ..Self::default()
        }
    }

    pub fn samples(&self) -> &[FctSample] {
        &self.samples
    }

    pub fn rates(&self) -> &[RateSample] {
        &self.rates
    }

    pub fn injected(&self) -> u64 {
        self.injected
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn hop_bound_violations(&self) -> u64 {
        self.hop_bound_violations
    }

    pub fn on_data_injected(&mut self) {
        self.injected += 1;
    }

    /// A DATA packet reached its destination host after `shortest` hops on the
    /// shortest path. `hop_bound` is the largest legal hop count.
    pub fn on_data_delivered(&mut self, pkt: &Packet, shortest: u32, hop_bound: u32) {
        self.delivered += 1;
        self.delivered_payload += pkt.payload as u64;
        let hops = pkt.hop_count as u32;
        if hops > hop_bound || hops < shortest {
            self.hop_bound_violations += 1;
        }
        self.link_bytes += pkt.size as u128 * hops as u128;
        self.shortest_link_bytes += pkt.size as u128 * shortest as u128;
        if pkt.class == FlowClass::Short {
            self.short_delivered += 1;
            self.short_marked += pkt.ecn_ce as u64;
            self.short_dilation_sum += hops as f64 / shortest as f64 - 1.0;
        }
        let p = self.paths.entry(pkt.flow_id).or_default();
        p.hops = p.hops.max(hops);
        p.deflections += pkt.deflections as u32;
    }

    pub fn on_message_complete(&mut self, msg: &Message, now: SimTime) {
        let path = self.paths.remove(&msg.id).unwrap_or_default();
        debug_assert!(now > msg.start_time, "completion must follow start");
        self.samples.push(FctSample {
            msg_id: msg.id,
            src: msg.src,
            dst: msg.dst,
            size: msg.size,
            class: msg.class,
            start: msg.start_time,
            fct: now - msg.start_time,
            hops: path.hops,
            deflections: path.deflections,
        });
    }

    pub fn on_rate(&mut self, time: SimTime, src: HostId, dst: HostId, rate_bps: f64) {
        if self.trace_rates {
            self.rates.push(RateSample {
                time,
                src,
                dst,
                rate_bps,
            });
        }
    }

    pub fn summarize(&self, duration: SimTime, messages_scheduled: usize, t: FabricTotals) -> RunSummary {
        let mut by_size: BTreeMap<u64, Vec<SimTime>> = BTreeMap::new();
        let mut all = Vec::new();
        for s in &self.samples {
            if s.size > self.short_flow_max || s.start < self.warmup {
                continue;
            }
            by_size.entry(s.size).or_default().push(s.fct);
            all.push(s.fct);
        }
        let ratio = |num: f64, den: f64| (den > 0.0).then(|| 100.0 * num / den);
        let secs = duration.as_secs_f64();
        RunSummary {
            duration_ns: duration.as_nanos(),
            events: t.events,
            messages_scheduled,
            messages_completed: self.samples.len(),
            short_fct: by_size
                .into_iter()
                .map(|(size, f)| SizeStats::from_fcts(size, f))
                .collect(),
            all_short: SizeStats::from_fcts(0, all),
            goodput_bps: if secs > 0.0 {
                self.delivered_payload as f64 * 8.0 / secs
            } else {
                0.0
            },
            ecn_marked_short_pct: ratio(self.short_marked as f64, self.short_delivered as f64),
            path_dilation_pct: ratio(self.short_dilation_sum, self.short_delivered as f64),
            load_increase_pct: ratio(
                self.link_bytes as f64 - self.shortest_link_bytes as f64,
                self.shortest_link_bytes as f64,
            ),
            ecn_receiver_link_pct: ratio(t.ecn_marks_receiver_link as f64, t.ecn_marks as f64),
            drop_count: t.drop_count,
            pause_events: t.pause_events,
            cnp_count: t.cnp_count,
            ecn_marks: t.ecn_marks,
            ecn_marks_receiver_link: t.ecn_marks_receiver_link,
            deflections: t.deflections,
            escape_lane_deflections: t.escape_lane_deflections,
            lane_migrations: t.lane_migrations,
            dft_high_water: t.dft_high_water,
            max_queue_bytes: t.max_queue_bytes,
            seq_gaps: t.seq_gaps,
            seq_inversions: t.seq_inversions,
            hop_bound_violations: self.hop_bound_violations,
            injected_packets: self.injected,
            delivered_packets: self.delivered,
            in_fabric_at_end: t.in_fabric_at_end,
            deadlock: t.deadlock,
        }
    }
}

pub fn write_fct_csv<W: Write>(samples: &[FctSample], mut w: W) -> io::Result<()> {
    writeln!(w, "msg_id,src,dst,size,class,start_ns,fct_ns,hops,deflections")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.msg_id,
            s.src,
            s.dst,
            s.size,
            s.class.as_str(),
            s.start.as_nanos(),
            s.fct.as_nanos(),
            s.hops,
            s.deflections
        )?;
    }
    Ok(())
}

pub fn write_rates_csv<W: Write>(rates: &[RateSample], mut w: W) -> io::Result<()> {
    writeln!(w, "time_ns,src,dst,rate_bps")?;
    for r in rates {
        writeln!(w, "{},{},{},{}", r.time.as_nanos(), r.src, r.dst, r.rate_bps)?;
    }
    Ok(())
}
