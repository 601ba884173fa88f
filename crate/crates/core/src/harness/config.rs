use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccalgos::{CcParams, Scheme};
use crate::hostnic::{FlowClass, Message};
use crate::sim::{SimConfig, SimConfigError};
use crate::simcore::{RngStream, SimTime, StreamId};
use crate::switchmodel::{SwitchConfig, SwitchConfigError};
use crate::topology::{build_clos, build_star, Topology, TopologyError};
use crate::workload::{
    attach_lookahead, generate_schedule, IncastGroup, LoadBasis, Mix, Schedule, WorkloadConfig,
    WorkloadError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {constraint}")]
    Field { field: &'static str, constraint: String },
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("workload: {0}")]
    Workload(#[from] WorkloadError),
    #[error("switch: {0}")]
    Switch(#[from] SwitchConfigError),
    #[error("simulation: {0}")]
    Sim(#[from] SimConfigError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn field(field: &'static str, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        constraint: constraint.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Clos,
    /// Every host on one switch.
    Star,
}

/// Where the traffic comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traffic {
    /// Long flows plus Poisson incast groups.
    Random,
    /// `converge_senders` long flows into host 0, started `converge_stagger_ns` apart.
    Converge,
    /// One long flow into host 0, then an incast of `incast_degree` short
    /// messages starting at `incast_at_ns`, each delayed by up to `jitter_ns`.
    IncastRelease,
}

/// One experiment: a flat key space so every knob is a single JSON field or
/// CLI override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub topology: TopologyKind,
    pub hosts: usize,
    pub oversubscription: usize,
    pub link_rate_bps: u64,
    pub link_delay_ns: u64,

    pub scheme: Scheme,
    pub traffic: Traffic,
    pub load: f64,
    pub load_basis: LoadBasis,
    pub mix: Mix,
    pub short_sizes: Vec<u64>,
    pub short_flow_max: u64,
    pub long_size: u64,
    pub incast_degree: usize,
    pub jitter_ns: u64,
    pub converge_senders: usize,
    pub converge_stagger_ns: u64,
    pub incast_at_ns: u64,

    /// No message starts at or after this time.
    pub duration_ns: u64,
    /// Extra time for messages started before the horizon to finish.
    pub drain_ns: u64,
    /// Defaults to a tenth of the duration.
    pub warmup_ns: Option<u64>,
    pub watchdog_ns: u64,

    pub mtu: u32,
    pub ctrl_bytes: u32,
    pub buffer_bytes: u64,
    pub ecn_threshold: u64,
    pub deflect_threshold: u64,
    pub dft_entries: usize,
    pub tokens: u8,
    pub dasr_share: f64,
    pub idle_timeout_ns: u64,
    pub dcqcn_g: f64,
    pub dcqcn_timer_ns: u64,
    pub dcqcn_byte_counter: u64,
    pub dcqcn_rate_ai_bps: f64,
    pub dcqcn_rate_hai_bps: f64,
    pub cnp_interval_ns: u64,
    pub timely_t_low_ns: f64,
    pub timely_t_high_ns: f64,
    pub timely_beta: f64,
    pub timely_step_bps: f64,

    pub seeds: Vec<u64>,
    pub trace_rates: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let wl = WorkloadConfig::default();
        let sw = SwitchConfig::default();
        let cc = CcParams::<f64>::with_line_rate(10e9);
        Self {
            name: "custom".into(),
            topology: TopologyKind::Clos,
            hosts: 128,
            oversubscription: 4,
            link_rate_bps: 10_000_000_000,
            link_delay_ns: 5_000,
            scheme: Scheme::Dart,
            traffic: Traffic::Random,
            load: wl.load,
            load_basis: wl.load_basis,
            mix: wl.mix,
            short_sizes: wl.short_sizes,
            short_flow_max: wl.short_flow_max,
            long_size: wl.long_size,
            incast_degree: wl.incast_degree,
            jitter_ns: wl.jitter.as_nanos(),
            converge_senders: 2,
            converge_stagger_ns: 1_000_000,
            incast_at_ns: 1_000_000,
            duration_ns: 50_000_000,
            drain_ns: 5_000_000,
            warmup_ns: None,
            watchdog_ns: 10_000_000,
            mtu: 1_000,
            ctrl_bytes: 64,
            buffer_bytes: sw.buffer_bytes,
            ecn_threshold: sw.ecn_threshold,
            deflect_threshold: sw.deflect_threshold,
            dft_entries: sw.dft_entries,
            tokens: 4,
            dasr_share: 0.97,
            idle_timeout_ns: 2_000_000_000,
            dcqcn_g: cc.dcqcn.g,
            dcqcn_timer_ns: cc.dcqcn.timer.as_nanos(),
            dcqcn_byte_counter: cc.dcqcn.byte_counter,
            dcqcn_rate_ai_bps: cc.dcqcn.rate_ai,
            dcqcn_rate_hai_bps: cc.dcqcn.rate_hai,
            cnp_interval_ns: cc.dcqcn.cnp_interval.as_nanos(),
            timely_t_low_ns: cc.timely.t_low,
            timely_t_high_ns: cc.timely.t_high,
            timely_beta: cc.timely.beta,
            timely_step_bps: cc.timely.additive_step,
            seeds: vec![1],
            trace_rates: false,
            out: None,
        }
    }
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scheme: Option<Scheme>,
    pub load: Option<f64>,
    pub mix: Option<Mix>,
    pub hosts: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub duration_ns: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Read a config file. A `summary.json` written by a previous run is
    /// accepted too: its `config` echo replays that run.
    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse = |source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(parse)?;
        let value = match value {
            serde_json::Value::Object(mut m) if m.contains_key("config") && m.contains_key("summary") => {
                m.remove("config").expect("checked")
            }
            v => v,
        };
        serde_json::from_value(value).map_err(parse)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.scheme {
            self.scheme = s;
        }
        if let Some(l) = o.load {
            self.load = l;
        }
        if let Some(m) = o.mix {
            self.mix = m;
        }
        if let Some(h) = o.hosts {
            self.hosts = h;
        }
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(d) = o.duration_ns {
            self.duration_ns = d;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
    }

    pub fn duration(&self) -> SimTime {
        SimTime(self.duration_ns)
    }

    /// Time the simulation is allowed to run to.
    pub fn end(&self) -> SimTime {
        SimTime(self.duration_ns + self.drain_ns)
    }

    /// Tokens a short-flow packet actually starts with: none unless the
    /// scheme deflects.
    pub fn effective_tokens(&self) -> u8 {
        if self.scheme.uses_iofd() {
            self.tokens
        } else {
            0
        }
    }

    pub fn switch_config(&self) -> SwitchConfig {
        SwitchConfig {
            buffer_bytes: self.buffer_bytes,
            ecn_threshold: self.ecn_threshold,
            deflect_threshold: self.deflect_threshold,
            dft_entries: self.dft_entries,
            iofd: self.scheme.uses_iofd(),
            priority_short: self.scheme.prioritizes_short(),
        }
    }

    pub fn workload_config(&self, seed: u64) -> WorkloadConfig {
        WorkloadConfig {
            load: self.load,
            load_basis: self.load_basis,
            mix: self.mix,
            short_sizes: self.short_sizes.clone(),
            short_flow_max: self.short_flow_max,
            long_size: self.long_size,
            incast_degree: self.incast_degree,
            jitter: SimTime(self.jitter_ns),
            duration: self.duration(),
            seed,
            lookahead: true,
        }
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        let mut c = SimConfig::new(self.scheme, self.link_rate_bps, self.duration(), seed);
        c.mtu = self.mtu;
        c.ctrl_bytes = self.ctrl_bytes;
        c.switch = self.switch_config();
        c.tokens = self.effective_tokens();
        c.dasr_share = self.dasr_share;
        c.idle_timeout = SimTime(self.idle_timeout_ns);
        c.short_flow_max = self.short_flow_max;
        c.watchdog = SimTime(self.watchdog_ns);
        c.trace_rates = self.trace_rates;
        if let Some(w) = self.warmup_ns {
            c.warmup = SimTime(w);
        }
        let d = &mut c.cc.dcqcn;
        d.g = self.dcqcn_g;
        d.timer = SimTime(self.dcqcn_timer_ns);
        d.byte_counter = self.dcqcn_byte_counter;
        d.rate_ai = self.dcqcn_rate_ai_bps;
        d.rate_hai = self.dcqcn_rate_hai_bps;
        d.cnp_interval = SimTime(self.cnp_interval_ns);
        let t = &mut c.cc.timely;
        t.t_low = self.timely_t_low_ns;
        t.t_high = self.timely_t_high_ns;
        t.beta = self.timely_beta;
        t.additive_step = self.timely_step_bps;
        c
    }

    pub fn build_topology(&self) -> Result<Topology, ConfigError> {
        let delay = SimTime(self.link_delay_ns);
        Ok(match self.topology {
            TopologyKind::Clos => build_clos(self.hosts, self.oversubscription, self.link_rate_bps, delay)?,
            TopologyKind::Star => build_star(self.hosts, self.link_rate_bps, delay)?,
        })
    }

    /// Check every constraint that does not need a built fabric.
    // negated comparisons below also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        if self.duration_ns == 0 {
            return Err(field("duration_ns", "must be positive"));
        }
        if self.link_rate_bps == 0 {
            return Err(field("link_rate_bps", "must be positive"));
        }
        if self.hosts < 2 {
            return Err(field("hosts", format!("need at least 2, got {}", self.hosts)));
        }
        if let Some(w) = self.warmup_ns {
            if w >= self.duration_ns {
                return Err(field("warmup_ns", "must be shorter than duration_ns"));
            }
        }
        if !(self.dcqcn_g > 0.0 && self.dcqcn_g <= 1.0) {
            return Err(field("dcqcn_g", format!("must be in (0, 1], got {}", self.dcqcn_g)));
        }
        if !(self.timely_t_low_ns < self.timely_t_high_ns) {
            return Err(field("timely_t_low_ns", "must be below timely_t_high_ns"));
        }
        if !(self.timely_beta > 0.0 && self.timely_beta <= 1.0) {
            return Err(field("timely_beta", "must be in (0, 1]"));
        }
        match self.traffic {
            Traffic::Random => {}
            Traffic::Converge => {
                if self.converge_senders == 0 || self.converge_senders >= self.hosts {
                    return Err(field(
                        "converge_senders",
                        format!("must be in 1..{} for {} hosts", self.hosts, self.hosts),
                    ));
                }
            }
            Traffic::IncastRelease => {
                if self.incast_degree + 2 > self.hosts {
                    return Err(field(
                        "incast_degree",
                        format!(
                            "incast release needs incast_degree + 2 <= hosts, got {} with {} hosts",
                            self.incast_degree, self.hosts
                        ),
                    ));
                }
                if self.incast_at_ns >= self.duration_ns {
                    return Err(field("incast_at_ns", "must be before duration_ns"));
                }
            }
        }
        self.switch_config().validate()?;
        if self.traffic == Traffic::Random {
            self.workload_config(self.seeds[0]).validate(self.hosts)?;
        } else if self.short_sizes.is_empty() {
            return Err(field("short_sizes", "must not be empty"));
        }
        Ok(())
    }

    /// The traffic for one seed on `topo`.
    pub fn schedule(&self, topo: &Topology, seed: u64) -> Result<Schedule, ConfigError> {
        let duration = self.duration();
        let long = |id, src, start| Message {
            id,
            src,
            dst: 0,
            size: self.long_size,
            class: FlowClass::Long,
            start_time: SimTime(start),
            group: None,
            lookahead: None,
        };
        Ok(match self.traffic {
            Traffic::Random => generate_schedule(&self.workload_config(seed), topo)?,
            Traffic::Converge => {
                let msgs = (0..self.converge_senders)
                    .map(|i| long(i as u64, i + 1, i as u64 * self.converge_stagger_ns))
                    .collect();
                Schedule::from_messages(msgs, duration)
            }
            Traffic::IncastRelease => {
                let size = *self.short_sizes.iter().max().expect("validated non-empty");
                let senders: Vec<usize> = (2..2 + self.incast_degree).collect();
                let group = IncastGroup {
                    group_id: 0,
                    receiver: 0,
                    senders: senders.clone(),
                    sizes: vec![size; senders.len()],
                    start_time: SimTime(self.incast_at_ns),
                };
                let mut jitter = RngStream::new(seed, StreamId::Jitter);
                let mut msgs = vec![long(0, 1, 0)];
                msgs.extend(senders.iter().enumerate().map(|(i, &s)| Message {
                    id: i as u64 + 1,
                    src: s,
                    dst: 0,
                    size,
                    class: FlowClass::of_size(size, self.short_flow_max),
                    start_time: group.start_time
                        + SimTime((jitter.uniform() * self.jitter_ns as f64) as u64),
                    group: Some(0),
                    lookahead: None,
                }));
                attach_lookahead(&group, &mut msgs);
                let mut s = Schedule::from_messages(msgs, duration);
                s.groups.push(group);
                s
            }
        })
    }

    /// This config narrowed to one seed, as echoed next to that seed's output.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            out: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn inverted_thresholds_name_the_field() {
        let c = ExperimentConfig {
            deflect_threshold: 30_000,
            ..Default::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("deflect_threshold"), "{msg}");
        assert!(msg.contains("ecn_threshold"), "{msg}");
    }

    #[test]
    fn no_iofd_means_no_tokens() {
        for s in Scheme::ALL {
            let c = ExperimentConfig {
                scheme: s,
                ..Default::default()
            };
            let sim = c.sim_config(1);
            assert_eq!(sim.tokens == 0, !s.uses_iofd(), "{s}");
            assert_eq!(sim.switch.iofd, s.uses_iofd());
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = serde_json::from_str::<ExperimentConfig>(r#"{"loadd": 0.4}"#).unwrap_err();
        assert!(e.to_string().contains("loadd"));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"scheme": "DCQCN", "load": 0.2, "mix": "HEAVY"}"#).unwrap();
        assert_eq!(c.scheme, Scheme::Dcqcn);
        assert_eq!(c.load, 0.2);
        assert_eq!(c.mix, Mix::Heavy);
        assert_eq!(c.hosts, 128);
    }

    #[test]
    fn incast_release_schedule_shape() {
        let c = ExperimentConfig {
            topology: TopologyKind::Star,
            hosts: 18,
            traffic: Traffic::IncastRelease,
            duration_ns: 5_000_000,
            ..Default::default()
        };
        c.validate().unwrap();
        let topo = c.build_topology().unwrap();
        let s = c.schedule(&topo, 1).unwrap();
        assert_eq!(s.messages.len(), 17);
        assert_eq!(s.messages[0].class, FlowClass::Long);
        let la = s.messages[1].lookahead.as_ref().unwrap();
        assert_eq!(la.senders.len(), 16);
        assert!(s.messages.iter().all(|m| m.dst == 0));
        let (lo, hi) = (c.incast_at_ns, c.incast_at_ns + c.jitter_ns);
        assert!(s.messages[1..]
            .iter()
            .all(|m| (lo..=hi).contains(&m.start_time.as_nanos())));
    }

    #[test]
    fn converge_needs_room() {
        let c = ExperimentConfig {
            topology: TopologyKind::Star,
            hosts: 3,
            traffic: Traffic::Converge,
            converge_senders: 3,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().starts_with("converge_senders"));
    }
}
