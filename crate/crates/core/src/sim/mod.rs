//! The fabric model: hosts, switches and links driven by the event engine.
//!
//! Hosts pull packets onto their access link: control packets first, then one
//! data packet from the next eligible (sender, receiver) queue pair in
//! round-robin order. Each queue pair owns one pacer and one congestion-control
//! state; its messages take turns packet by packet.

mod world;

pub use world::{Event, QpView, SimConfig, SimConfigError, SimOutput, Simulation};
