use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dartsim::ccalgos::Scheme;
use dartsim::harness::{
    ablation_matrix, all_presets, preset, run_experiment, ExperimentConfig, ExperimentResult,
    HarnessError, Overrides, Verdict,
};
use dartsim::topology::build_clos;
use dartsim::simcore::SimTime;
use dartsim::workload::Mix;

const EXIT_CONFIG: u8 = 1;
const EXIT_AUDIT: u8 = 2;
const EXIT_DEADLOCK: u8 = 3;

#[derive(Parser)]
#[command(name = "dartsim", version, about = "Packet-level congestion-control simulator for lossless Clos fabrics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment from a config file (or defaults) plus overrides.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run a named scenario preset.
    Preset {
        /// Preset name; omit with --list to see them.
        name: Option<String>,
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run the ablation variants on identical seeds and normalize p99 to DCQCN.
    Ablation {
        /// Message size whose p99 is compared.
        #[arg(long, default_value_t = 8000)]
        size: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Build a Clos fabric and print its audit (shape, hop counts, escape-lane cycle check).
    TopoAudit {
        #[arg(long, default_value_t = 128)]
        hosts: usize,
        #[arg(long, default_value_t = 4)]
        oversubscription: usize,
    },
    /// Write the generated traffic of the first seed as JSON lines.
    Schedule {
        #[command(flatten)]
        common: Common,
        /// Destination file; stdout if omitted.
        #[arg(long)]
        to: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; a summary.json from an earlier run replays that run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    load: Option<f64>,
    #[arg(long)]
    mix: Option<Mix>,
    #[arg(long)]
    hosts: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Simulated time during which messages start, in milliseconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            scheme: self.scheme,
            load: self.load,
            mix: self.mix,
            hosts: self.hosts,
            seeds: self.seed.clone(),
            duration_ns: self.duration.map(|ms| (ms * 1e6).round() as u64),
            out: self.out.clone(),
        }
    }

    fn config(&self, base: Option<ExperimentConfig>) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(b)) => b,
            (None, None) => ExperimentConfig::default(),
        };
        cfg.apply(&self.overrides());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Config(_) => EXIT_CONFIG,
        HarnessError::Output { .. } => EXIT_AUDIT,
    }
}

fn report(r: &ExperimentResult) -> u8 {
    println!("{}", serde_json::to_string_pretty(&r.aggregate).expect("serializable"));
    for f in &r.audit_failures {
        eprintln!("audit failure (seed {}): {}: {}", f.seed, f.check, f.detail);
    }
    for (seed, e) in r.deadlocks() {
        eprintln!("seed {seed}: {e}");
    }
    match r.verdict() {
        Verdict::Ok => 0,
        Verdict::AuditFailed => EXIT_AUDIT,
        Verdict::Deadlock => EXIT_DEADLOCK,
    }
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    match cli.cmd {
        Cmd::Run { common } => {
            let cfg = common.config(None)?;
            Ok(report(&run_experiment(&cfg)?))
        }
        Cmd::Preset { name, list, common } => {
            let Some(name) = name.filter(|_| !list) else {
                for p in all_presets() {
                    println!("{:<22} {}", p.name, p.description);
                }
                return Ok(0);
            };
            let Some(p) = preset(&name) else {
                eprintln!("unknown preset '{name}'; try --list");
                return Ok(EXIT_CONFIG);
            };
            let cfg = common.config(Some(p.config.clone()))?;
            let r = run_experiment(&cfg)?;
            let mut code = report(&r);
            for c in &p.checks {
                let o = c.evaluate(&r);
                eprintln!("{} {:?}: {}", if o.passed { "PASS" } else { "FAIL" }, o.check, o.detail);
                if !o.passed && code == 0 {
                    code = EXIT_AUDIT;
                }
            }
            Ok(code)
        }
        Cmd::Ablation { size, common } => {
            let cfg = common.config(None)?;
            let table = ablation_matrix(&cfg, size)?;
            table.write_csv(std::io::stdout().lock()).expect("stdout");
            Ok(table.results.iter().map(report_quiet).max().unwrap_or(0))
        }
        Cmd::TopoAudit { hosts, oversubscription } => {
            let topo = build_clos(hosts, oversubscription, 10_000_000_000, SimTime::from_micros(5))
                .map_err(|e| HarnessError::Config(e.into()))?;
            let audit = topo.audit();
            println!("{}", serde_json::to_string_pretty(&audit).expect("serializable"));
            Ok(if audit.escape_acyclic { 0 } else { EXIT_AUDIT })
        }
        Cmd::Schedule { common, to } => {
            let cfg = common.config(None)?;
            let topo = cfg.build_topology()?;
            let sched = cfg.schedule(&topo, cfg.seeds[0])?;
            let res = match to {
                Some(path) => std::fs::File::create(&path)
                    .and_then(|f| sched.write_jsonl(std::io::BufWriter::new(f)))
                    .map_err(|source| HarnessError::Output { path, source }),
                None => {
                    let mut out = std::io::stdout().lock();
                    sched
                        .write_jsonl(&mut out)
                        .and_then(|_| out.flush())
                        .map_err(|source| HarnessError::Output {
                            path: "-".into(),
                            source,
                        })
                }
            };
            res.map(|_| 0)
        }
    }
}

fn report_quiet(r: &ExperimentResult) -> u8 {
    for f in &r.audit_failures {
        eprintln!("{} audit failure (seed {}): {}: {}", r.config.scheme, f.seed, f.check, f.detail);
    }
    match r.verdict() {
        Verdict::Ok => 0,
        Verdict::AuditFailed => EXIT_AUDIT,
        Verdict::Deadlock => EXIT_DEADLOCK,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
