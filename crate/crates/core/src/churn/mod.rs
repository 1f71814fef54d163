//! Worker-pool churn: availability traces and the virtual-time simulator.

pub mod sim;
pub mod trace;

pub use sim::{simulate, Direction, LogEntry, SimError, SimOptions, SimReport};
pub use trace::{
    load_trace, static_pool, synth_trace, AvailabilityEvent, AvailabilityKind, AvailabilityTrace,
    TraceError,
};
