//! Library for studying power oversubscription in virtualized clusters.
//!
//! The crate models the full control stack of an oversubscribed cluster:
//!
//! - [`criticality`] classifies a VM's CPU-utilization history as user-facing
//!   (diurnal, must be protected) or non-user-facing via 24-hour template
//!   matching with 8/12-hour disambiguation.
//! - [`predict`] supplies arrival-time predictions of workload type and
//!   P95-utilization bucket through interchangeable providers, plus the
//!   conservative low-confidence fallback.
//! - [`power`] maps per-core utilization and frequency to blade power and
//!   produces the frequency/power curves the budget search consumes.
//! - [`cluster`] holds the rack/chassis/blade/core topology and the load
//!   accounting shared by the scheduler and the simulator.
//! - [`scheduler`] places VMs with constraint filtering plus a criticality-
//!   and utilization-aware preference rule.
//! - [`capping`] simulates chassis PSU polling, the in-band per-VM DVFS
//!   controller, and the full-server fallback that throttles all cores.
//! - [`oversub`] searches historical chassis draws for the minimum budget
//!   that honors per-class capping-event rates and frequency floors.
//! - [`sim`] is the discrete-event engine tying arrivals, placement,
//!   utilization signals, power, and capping together.
//! - [`config`] is the versioned run-configuration schema used by the CLI.

pub mod capping;
pub mod cluster;
pub mod config;
pub mod criticality;
pub mod oversub;
pub mod power;
pub mod predict;
pub mod scheduler;
pub mod sim;

pub use capping::{CappingEvent, ChassisManagerConfig, ControllerConfig};
pub use cluster::{ChassisId, ChassisLoad, ClusterState, ServerId, ServerLoad, VmDescriptor};
pub use criticality::{classify, CriticalityScores, UtilizationSeries, WorkloadLabel};
pub use oversub::{BudgetResult, HistoricalDraws, HistoryEstimates, OversubPolicy};
pub use power::{FreqPowerCurve, PState, ServerPowerSpec};
pub use predict::{EffectiveAttributes, Prediction, PredictionProvider, VmFeatures};
pub use scheduler::SchedulerConfig;
pub use sim::{RunOutput, SimMetrics, Simulation, TraceSpec};

/// Simulation timestamps and durations in whole milliseconds.
pub type TimeMs = u64;

pub const MS_PER_SEC: TimeMs = 1_000;
pub const MS_PER_HOUR: TimeMs = 3_600_000;
pub const MS_PER_DAY: TimeMs = 86_400_000;
