//! Deterministic discrete-event simulator of the SSD IO stack: flash
//! hardware, flash translation layer, device scheduler and host OS.

pub mod config;
pub mod engine;
pub mod experiments;
pub mod gc_wl;
pub mod hardware;
pub mod host_os;
pub mod io;
pub mod mapping;
pub mod messages;
pub mod metrics;
pub mod scheduler;
pub mod sim;
pub mod temperature;
pub mod trace;
pub mod workloads;
