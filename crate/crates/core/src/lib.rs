//! Packet-level discrete-event simulator for lossless, oversubscribed Clos
//! fabrics. Implements receiver-driven rate apportioning with in-order flow
//! deflection and a DCQCN fallback, next to DCQCN and TIMELY baselines.
//!
//! Rate arithmetic is generic over [`scalar::Real`]; the simulator itself runs
//! in `f64` and the aliases below name those instantiations.

pub mod ccalgos;
pub mod harness;
pub mod hostnic;
pub mod metrics;
pub mod scalar;
pub mod sim;
pub mod simcore;
pub mod switchmodel;
pub mod topology;
pub mod workload;

pub use ccalgos::Scheme;
pub use harness::{run_experiment, ExperimentConfig, ExperimentResult};
pub use sim::{SimConfig, Simulation};
pub use simcore::SimTime;
pub use topology::{build_clos, build_star, Topology};

pub type Cc = ccalgos::CcState<f64>;
pub type CcConfig = ccalgos::CcParams<f64>;
pub type DcqcnRp = ccalgos::DcqcnRpState<f64>;
pub type DcqcnConfig = ccalgos::DcqcnParams<f64>;
pub type Timely = ccalgos::TimelyState<f64>;
pub type TimelyConfig = ccalgos::TimelyParams<f64>;
pub type RxRate = hostnic::RxRateEstimator<f64>;
