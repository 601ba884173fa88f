use std::collections::BTreeMap;

use serde::Serialize;

use super::config::{ExperimentConfig, TopologyKind, Traffic};
use super::run::{ExperimentResult, Verdict};
use crate::ccalgos::Scheme;
use crate::workload::Mix;

/// What a preset run is expected to show.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "check")]
pub enum ExpectedCheck {
    /// No drops, no deadlock, in order, within the hop bound, deterministic.
    Audits,
    /// Every sender's last traced pacer rate is within `tolerance` (relative)
    /// of `line / senders`.
    FairShare { senders: usize, tolerance: f64 },
    /// Host `src`'s last traced pacer rate is at least `min_fraction` of line.
    Released { src: usize, min_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: ExpectedCheck,
    pub passed: bool,
    pub detail: String,
}

impl ExpectedCheck {
    pub fn evaluate(&self, r: &ExperimentResult) -> CheckOutcome {
        let (passed, detail) = match *self {
            ExpectedCheck::Audits => match r.verdict() {
                Verdict::Ok => (true, "all audits passed".to_string()),
                v => (false, format!("{v:?}: {:?}", r.audit_failures)),
            },
            ExpectedCheck::FairShare { senders, tolerance } => {
                let target = r.config.link_rate_bps as f64 / senders as f64;
                let mut worst = 0.0f64;
                let mut seen = 0;
                for run in &r.runs {
                    let mut last = BTreeMap::new();
                    for s in run.rates.iter().filter(|s| s.dst == 0) {
                        last.insert(s.src, s.rate_bps);
                    }
                    seen += last.len();
                    for rate in last.values() {
                        worst = worst.max((rate - target).abs() / target);
                    }
                }
                (
                    seen > 0 && worst <= tolerance,
                    format!("worst relative error {worst:.4} against {target:.3e} b/s over {seen} senders"),
                )
            }
            ExpectedCheck::Released { src, min_fraction } => {
                let line = r.config.link_rate_bps as f64;
                let lows: Vec<f64> = r
                    .runs
                    .iter()
                    .filter_map(|run| run.rates.iter().rev().find(|s| s.src == src && s.dst == 0))
                    .map(|s| s.rate_bps / line)
                    .collect();
                let worst = lows.iter().copied().fold(f64::INFINITY, f64::min);
                (
                    !lows.is_empty() && worst >= min_fraction,
                    format!("host {src} ends at {worst:.3} of line rate"),
                )
            }
        };
        CheckOutcome {
            check: *self,
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioPreset {
    pub name: String,
    pub description: &'static str,
    pub config: ExperimentConfig,
    pub checks: Vec<ExpectedCheck>,
}

/// `n` long flows into one receiver on a star, joining 1 ms apart.
pub fn convergence_star(n: usize) -> ScenarioPreset {
    let stagger = 1_000_000;
    ScenarioPreset {
        name: if n == 2 {
            "convergence-star".into()
        } else {
            format!("convergence-star-{n}")
        },
        description: "long flows joining one receiver; pacer rates should settle at line/n",
        config: ExperimentConfig {
            name: "convergence-star".into(),
            topology: TopologyKind::Star,
            hosts: n + 1,
            traffic: Traffic::Converge,
            converge_senders: n,
            converge_stagger_ns: stagger,
            duration_ns: stagger * n as u64 + 2_000_000,
            drain_ns: 0,
            warmup_ns: Some(0),
            trace_rates: true,
            ..ExperimentConfig::default()
        },
        checks: vec![
            ExpectedCheck::Audits,
            ExpectedCheck::FairShare {
                senders: n,
                tolerance: 0.05,
            },
        ],
    }
}

/// A long flow interrupted by a synchronized 16-way incast.
pub fn incast_release() -> ScenarioPreset {
    ScenarioPreset {
        name: "incast-release".into(),
        description: "long flow throttled by an incast burst and released when it ends",
        config: ExperimentConfig {
            name: "incast-release".into(),
            topology: TopologyKind::Star,
            hosts: 18,
            traffic: Traffic::IncastRelease,
            incast_degree: 16,
            incast_at_ns: 1_000_000,
            duration_ns: 3_000_000,
            drain_ns: 0,
            warmup_ns: Some(0),
            trace_rates: true,
            ..ExperimentConfig::default()
        },
        checks: vec![
            ExpectedCheck::Audits,
            ExpectedCheck::Released {
                src: 1,
                min_fraction: 0.95,
            },
        ],
    }
}

/// Desk-scale random traffic at `load` with `mix`.
pub fn desk(mix: Mix, load: f64) -> ScenarioPreset {
    let tag = match mix {
        Mix::Typical => "typical".to_string(),
        Mix::Light => "light".to_string(),
        Mix::Heavy => "heavy".to_string(),
        Mix::Custom(f) => format!("short{:.0}", f * 100.0),
    };
    let name = format!("{tag}-{:.0}", load * 100.0);
    ScenarioPreset {
        name: name.clone(),
        description: "128-host 4:1 Clos, long flows plus 16-way incasts",
        config: ExperimentConfig {
            name,
            mix,
            load,
            duration_ns: 20_000_000,
            seeds: vec![1, 2, 3],
            ..ExperimentConfig::default()
        },
        checks: vec![ExpectedCheck::Audits],
    }
}

pub fn all_presets() -> Vec<ScenarioPreset> {
    let mut v: Vec<_> = [2, 4, 8, 16].into_iter().map(convergence_star).collect();
    v.push(incast_release());
    for load in [0.2, 0.4, 0.6] {
        v.push(desk(Mix::Typical, load));
    }
    v.push(desk(Mix::Light, 0.4));
    v.push(desk(Mix::Heavy, 0.4));
    v
}

pub fn preset(name: &str) -> Option<ScenarioPreset> {
    all_presets().into_iter().find(|p| p.name == name)
}

/// Same preset with a different scheme.
pub fn with_scheme(mut p: ScenarioPreset, scheme: Scheme) -> ScenarioPreset {
    p.config.scheme = scheme;
    p
}
