//! Experiment orchestration: configs, presets, multi-seed runs, audits and the
//! ablation matrix. The `dartsim` binary is a thin layer over this module.

mod config;
mod presets;
mod run;

pub use config::{ConfigError, ExperimentConfig, Overrides, TopologyKind, Traffic};
pub use presets::{
    all_presets, convergence_star, desk, incast_release, preset, with_scheme, CheckOutcome,
    ExpectedCheck, ScenarioPreset,
};
pub use run::{
    ablation_matrix, audit, fct_percentile, run_experiment, run_seed, AblationRow, AblationTable,
    AggregateSummary, AuditFailure, ExperimentResult, HarnessError, SeedRun, SummaryFile, Verdict,
    ABLATION_SCHEMES,
};
