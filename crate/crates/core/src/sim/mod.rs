//! Discrete-event cluster simulation: traces, signals, engine, metrics.

pub mod engine;
pub mod metrics;
pub mod signal;
pub mod trace;

pub use engine::{CappedChassisScenario, SimError, Simulation};
pub use metrics::{DeploymentRecord, DrawSample, MetricsCollector, RunOutput, SimMetrics};
pub use signal::{SignalConfig, SignalKind, SignalParams};
pub use trace::{generate_trace, read_trace_csv, write_trace_csv, Trace, TraceSpec};
