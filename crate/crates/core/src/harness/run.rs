use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig};
use crate::ccalgos::Scheme;
use crate::metrics::{percentile, write_fct_csv, write_rates_csv, FctSample, RateSample, RunSummary};
use crate::sim::Simulation;
use crate::simcore::{SimError, SimTime};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing {path}: {source}")]
    Output {
        path: std::path::PathBuf,
        source: io::Error,
    },
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub summary: RunSummary,
    pub samples: Vec<FctSample>,
    pub rates: Vec<RateSample>,
    pub deadlock: Option<SimError>,
}

impl SeedRun {
    pub fn fct_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_fct_csv(&self.samples, &mut buf).expect("writing to memory");
        buf
    }

    /// The `summary.json` document: summary plus the config that replays it.
    pub fn summary_json(&self, cfg: &ExperimentConfig) -> Vec<u8> {
        let doc = SummaryFile {
            seed: self.seed,
            config: cfg.for_seed(self.seed),
            summary: self.summary.clone(),
        };
        let mut buf = serde_json::to_vec_pretty(&doc).expect("summary serializes");
        buf.push(b'\n');
        buf
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub summary: RunSummary,
}

/// Run one seed to completion.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun, ConfigError> {
    cfg.validate()?;
    let topo = cfg.build_topology()?;
    let schedule = cfg.schedule(&topo, seed)?;
    let mut sim = Simulation::new(topo, &schedule, cfg.sim_config(seed))?;
    log::debug!("{} seed {seed}: {} messages", cfg.scheme, schedule.messages.len());
    // a watchdog trip is recorded in the output rather than returned
    let _ = sim.run_to(cfg.end());
    let out = sim.finish();
    Ok(SeedRun {
        seed,
        summary: out.summary,
        samples: out.samples,
        rates: out.rates,
        deadlock: out.deadlock,
    })
}

/// One failed invariant audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFailure {
    pub seed: u64,
    pub check: String,
    pub detail: String,
}

/// Losslessness, ordering, hop bound, escape-lane and conservation checks.
pub fn audit(run: &SeedRun) -> Vec<AuditFailure> {
    let s = &run.summary;
    let mut out = Vec::new();
    let mut fail = |check: &str, detail: String| {
        out.push(AuditFailure {
            seed: run.seed,
            check: check.into(),
            detail,
        })
    };
    if s.drop_count != 0 {
        fail("lossless", format!("{} packets exceeded buffer", s.drop_count));
    }
    if s.seq_gaps != 0 || s.seq_inversions != 0 {
        fail(
            "in-order",
            format!("{} gaps, {} inversions", s.seq_gaps, s.seq_inversions),
        );
    }
    if s.hop_bound_violations != 0 {
        fail("hop-bound", format!("{} packets over the bound", s.hop_bound_violations));
    }
    if s.escape_lane_deflections != 0 {
        fail(
            "escape-lane",
            format!("{} escape-lane deflections", s.escape_lane_deflections),
        );
    }
    if !s.conserved() {
        fail(
            "conservation",
            format!(
                "injected {} != delivered {} + in fabric {}",
                s.injected_packets, s.delivered_packets, s.in_fabric_at_end
            ),
        );
    }
    out
}

/// Median across seeds of the statistics the figures and tables use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub scheme: Scheme,
    pub seeds: Vec<u64>,
    pub median_ns: BTreeMap<u64, f64>,
    pub p99_ns: BTreeMap<u64, f64>,
    pub p999_ns: BTreeMap<u64, f64>,
    pub goodput_bps: Option<f64>,
    pub ecn_marked_short_pct: Option<f64>,
    pub ecn_receiver_link_pct: Option<f64>,
    pub path_dilation_pct: Option<f64>,
    pub load_increase_pct: Option<f64>,
    pub cnp_count: Option<f64>,
    pub pause_events: Option<f64>,
    pub deflections: Option<f64>,
    pub drop_count: u64,
    pub messages_completed: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(xs[n / 2]),
        _ => Some(0.5 * (xs[n / 2 - 1] + xs[n / 2])),
    }
}

impl AggregateSummary {
    pub fn from_runs(scheme: Scheme, runs: &[SeedRun]) -> Self {
        let col = |f: &dyn Fn(&RunSummary) -> Option<f64>| median(runs.iter().filter_map(|r| f(&r.summary)).collect());
        let mut by_size: BTreeMap<u64, [Vec<f64>; 3]> = BTreeMap::new();
        for r in runs {
            for st in &r.summary.short_fct {
                let e = by_size.entry(st.size).or_default();
                for (slot, v) in e.iter_mut().zip([st.median_ns, st.p99_ns, st.p999_ns]) {
                    slot.extend(v.map(|x| x as f64));
                }
            }
        }
        let pick = |i: usize| -> BTreeMap<u64, f64> {
            by_size
                .iter()
                .filter_map(|(&size, v)| Some((size, median(v[i].clone())?)))
                .collect()
        };
        Self {
            scheme,
            seeds: runs.iter().map(|r| r.seed).collect(),
            median_ns: pick(0),
            p99_ns: pick(1),
            p999_ns: pick(2),
            goodput_bps: col(&|s| Some(s.goodput_bps)),
            ecn_marked_short_pct: col(&|s| s.ecn_marked_short_pct),
            ecn_receiver_link_pct: col(&|s| s.ecn_receiver_link_pct),
            path_dilation_pct: col(&|s| s.path_dilation_pct),
            load_increase_pct: col(&|s| s.load_increase_pct),
            cnp_count: col(&|s| Some(s.cnp_count as f64)),
            pause_events: col(&|s| Some(s.pause_events as f64)),
            deflections: col(&|s| Some(s.deflections as f64)),
            drop_count: runs.iter().map(|r| r.summary.drop_count).sum(),
            messages_completed: col(&|s| Some(s.messages_completed as f64)),
        }
    }

    pub fn p99(&self, size: u64) -> Option<f64> {
        self.p99_ns.get(&size).copied()
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    pub aggregate: AggregateSummary,
    pub audit_failures: Vec<AuditFailure>,
    /// First seed rerun produced byte-identical outputs.
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    AuditFailed,
    Deadlock,
}

impl ExperimentResult {
    pub fn deadlocks(&self) -> impl Iterator<Item = (u64, &SimError)> {
        self.runs.iter().filter_map(|r| Some((r.seed, r.deadlock.as_ref()?)))
    }

    pub fn verdict(&self) -> Verdict {
        if self.deadlocks().next().is_some() {
            Verdict::Deadlock
        } else if !self.audit_failures.is_empty() || !self.deterministic {
            Verdict::AuditFailed
        } else {
            Verdict::Ok
        }
    }
}

/// Run `seeds` concurrently, results in seed order.
fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<SeedRun>, ConfigError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(workers) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&seed| s.spawn(move || run_seed(cfg, seed))).collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let err = |source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(err)?;
    }
    fs::write(path, bytes).map_err(err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut buf = serde_json::to_vec_pretty(value).expect("serializable");
    buf.push(b'\n');
    write_file(path, &buf)
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &SeedRun) -> Result<(), HarnessError> {
    let seed_dir = dir.join(format!("seed-{}", run.seed));
    write_file(&seed_dir.join("fct.csv"), &run.fct_csv())?;
    write_file(&seed_dir.join("summary.json"), &run.summary_json(cfg))?;
    if cfg.trace_rates {
        let mut buf = Vec::new();
        write_rates_csv(&run.rates, &mut buf).expect("writing to memory");
        write_file(&seed_dir.join("rates.csv"), &buf)?;
    }
    Ok(())
}

/// Run every seed, audit, re-run the first seed to confirm determinism, and
/// write outputs when `cfg.out` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let runs = run_seeds(cfg, &cfg.seeds)?;
    let first = &runs[0];
    let again = run_seed(cfg, first.seed)?;
    let deterministic = again.fct_csv() == first.fct_csv() && again.summary_json(cfg) == first.summary_json(cfg);
    let mut audit_failures: Vec<_> = runs.iter().flat_map(audit).collect();
    if !deterministic {
        audit_failures.push(AuditFailure {
            seed: first.seed,
            check: "determinism".into(),
            detail: "rerun differs from the first run".into(),
        });
    }
    let aggregate = AggregateSummary::from_runs(cfg.scheme, &runs);
    if let Some(dir) = &cfg.out {
        for r in &runs {
            write_run(dir, cfg, r)?;
        }
        write_json(&dir.join("aggregate.json"), &aggregate)?;
        if !audit_failures.is_empty() {
            write_json(&dir.join("audit_failures.json"), &audit_failures)?;
        }
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
        aggregate,
        audit_failures,
        deterministic,
    })
}

/// Variants compared by the ablation, DCQCN last as the anchor.
pub const ABLATION_SCHEMES: [Scheme; 6] = [
    Scheme::Dart,
    Scheme::DasrOnly,
    Scheme::IofdOnly,
    Scheme::DartNoLookahead,
    Scheme::PriqDcqcn,
    Scheme::Dcqcn,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scheme: Scheme,
    pub p99_ns: Option<f64>,
    /// p99 over DCQCN's p99 for the same size.
    pub normalized_p99: Option<f64>,
    pub ecn_marked_short_pct: Option<f64>,
    pub path_dilation_pct: Option<f64>,
    pub load_increase_pct: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub size: u64,
    pub rows: Vec<AblationRow>,
    pub results: Vec<ExperimentResult>,
}

impl AblationTable {
    pub fn row(&self, scheme: Scheme) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.scheme == scheme)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.4}"));
        writeln!(w, "scheme,size,p99_ns,normalized_p99,ecn_marked_short_pct,path_dilation_pct,load_increase_pct")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.scheme,
                self.size,
                f(r.p99_ns),
                f(r.normalized_p99),
                f(r.ecn_marked_short_pct),
                f(r.path_dilation_pct),
                f(r.load_increase_pct)
            )?;
        }
        Ok(())
    }
}

/// Run the ablation variants on the same seeds and schedules as `base` and
/// normalize each variant's p99 for `size`-byte messages to DCQCN's.
pub fn ablation_matrix(base: &ExperimentConfig, size: u64) -> Result<AblationTable, HarnessError> {
    let mut results = Vec::new();
    for scheme in ABLATION_SCHEMES {
        let cfg = ExperimentConfig {
            scheme,
            out: base.out.as_ref().map(|d| d.join(scheme.name())),
            ..base.clone()
        };
        results.push(run_experiment(&cfg)?);
    }
    let anchor = results.last().expect("DCQCN row").aggregate.p99(size);
    let rows = results
        .iter()
        .map(|r| {
            let a = &r.aggregate;
            let p99 = a.p99(size);
            AblationRow {
                scheme: a.scheme,
                p99_ns: p99,
                normalized_p99: p99.zip(anchor).map(|(x, d)| x / d),
                ecn_marked_short_pct: a.ecn_marked_short_pct,
                path_dilation_pct: a.path_dilation_pct,
                load_increase_pct: a.load_increase_pct,
            }
        })
        .collect();
    let table = AblationTable { size, rows, results };
    if let Some(dir) = &base.out {
        write_json(&dir.join("ablation.json"), &table.rows)?;
        let mut buf = Vec::new();
        table.write_csv(&mut buf).expect("writing to memory");
        write_file(&dir.join("ablation.csv"), &buf)?;
    }
    Ok(table)
}

/// Nearest-rank percentile over a run's FCTs for one size; convenience for
/// callers that hold raw samples.
pub fn fct_percentile(samples: &[FctSample], size: u64, p: f64, after: SimTime) -> Option<SimTime> {
    let v: Vec<SimTime> = samples
        .iter()
        .filter(|s| s.size == size && s.start >= after)
        .map(|s| s.fct)
        .collect();
    percentile(&v, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_seeds() {
        assert_eq!(median(vec![]), None);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
