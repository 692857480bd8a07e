//! Chassis power-budget selection from historical draws.
//!
//! The strategy walks candidate budgets downward from the highest observed
//! chassis draw. Setting the budget just below a draw turns every higher
//! reading into a would-be capping event whose depth is the difference.
//! Each event is classified by whether throttling non-user-facing cores to
//! their frequency floor could shave the deficit alone, or user-facing
//! cores would have to help, or neither suffices. The walk stops when the
//! per-class event-rate limits are exceeded or an event becomes
//! unshaveable; the last accepted candidate is the minimum feasible budget,
//! padded with a buffer for future drift.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criticality::WorkloadLabel;
use crate::power::{FreqPowerCurve, ServerPowerSpec};

/// Candidate budgets sit this far below each distinct draw.
pub const CANDIDATE_STEP_W: f64 = 10.0;

/// Audit rows keep the full shave list only up to this many events.
const SHAVE_LIST_LIMIT: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum OversubError {
    #[error("allocation log is empty")]
    EmptyLog,
    #[error("no historical draws supplied")]
    NoFeasibleBudget,
    #[error("draw file line {line}: {message}")]
    BadDraw { line: u64, message: String },
}

/// Event-rate and throttling-depth limits per workload class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversubPolicy {
    /// Maximum acceptable capping-event rate for user-facing VMs.
    pub emax_uf: f64,
    /// Maximum acceptable capping-event rate for non-user-facing VMs.
    pub emax_nuf: f64,
    /// Deepest normalized frequency user-facing cores may be pushed to.
    pub fmin_uf: f64,
    /// Deepest normalized frequency non-user-facing cores may be pushed to.
    pub fmin_nuf: f64,
    /// Headroom added on top of the minimum feasible budget.
    pub buffer: f64,
}

impl Default for OversubPolicy {
    fn default() -> Self {
        // Minimal user-facing impact: 0.1% UF events at 75% frequency,
        // 0.9% NUF events at half frequency.
        Self {
            emax_uf: 0.001,
            emax_nuf: 0.009,
            fmin_uf: 0.75,
            fmin_nuf: 0.5,
            buffer: 0.10,
        }
    }
}

/// Fleet-average workload statistics estimated from an allocation log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEstimates {
    /// Share of allocated virtual cores belonging to user-facing VMs.
    pub uf_core_share: f64,
    /// Core-weighted average P95 utilization of user-facing cores.
    pub util_uf: f64,
    /// Core-weighted average P95 utilization of non-user-facing cores.
    pub util_nuf: f64,
}

impl HistoryEstimates {
    /// The reference operating point: 40% user-facing cores at 65% P95,
    /// non-user-facing at 44%.
    pub fn reference() -> Self {
        Self {
            uf_core_share: 0.40,
            util_uf: 0.65,
            util_nuf: 0.44,
        }
    }
}

/// One row of the historical allocation log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationRecord {
    pub label: WorkloadLabel,
    pub cores: u32,
    pub p95_util: f64,
    pub lifetime_hours: f64,
}

/// Core-hour-weighted class averages over an allocation log.
pub fn estimate_history(log: &[AllocationRecord]) -> Result<HistoryEstimates, OversubError> {
    let mut uf_weight = 0.0;
    let mut nuf_weight = 0.0;
    let mut uf_util = 0.0;
    let mut nuf_util = 0.0;
    for record in log {
        let weight = record.cores as f64 * record.lifetime_hours;
        match record.label {
            WorkloadLabel::UserFacing => {
                uf_weight += weight;
                uf_util += weight * record.p95_util;
            }
            WorkloadLabel::NonUserFacing => {
                nuf_weight += weight;
                nuf_util += weight * record.p95_util;
            }
        }
    }
    let total = uf_weight + nuf_weight;
    if total <= 0.0 {
        return Err(OversubError::EmptyLog);
    }
    Ok(HistoryEstimates {
        uf_core_share: uf_weight / total,
        util_uf: if uf_weight > 0.0 { uf_util / uf_weight } else { 0.0 },
        util_nuf: if nuf_weight > 0.0 {
            nuf_util / nuf_weight
        } else {
            0.0
        },
    })
}

/// Hardware profile consumed by the feasibility check: the two power
/// curves, and the chassis size they apply to.
#[derive(Debug, Clone, PartialEq)]
pub struct ShaveProfile {
    pub uf_curve: FreqPowerCurve,
    pub nuf_curve: FreqPowerCurve,
    pub cores_per_server: usize,
    /// Average number of allocated virtual cores per chassis.
    pub allocated_cores_per_chassis: f64,
}

impl ShaveProfile {
    pub fn new(
        spec: &ServerPowerSpec,
        estimates: &HistoryEstimates,
        allocated_cores_per_chassis: f64,
    ) -> Self {
        Self {
            uf_curve: crate::power::freq_power_curve(spec, estimates.util_uf),
            nuf_curve: crate::power::freq_power_curve(spec, estimates.util_nuf),
            cores_per_server: spec.cores,
            allocated_cores_per_chassis,
        }
    }

    /// Watts recoverable by throttling all non-user-facing cores of an
    /// average chassis from maximum frequency to the policy floor.
    pub fn nuf_shaveable_w(&self, estimates: &HistoryEstimates, policy: &OversubPolicy) -> f64 {
        let cores = (1.0 - estimates.uf_core_share) * self.allocated_cores_per_chassis;
        cores
            * self
                .nuf_curve
                .per_core_reduction_to(policy.fmin_nuf, self.cores_per_server)
    }

    /// Watts recoverable from the user-facing cores on top of that.
    pub fn uf_shaveable_w(&self, estimates: &HistoryEstimates, policy: &OversubPolicy) -> f64 {
        let cores = estimates.uf_core_share * self.allocated_cores_per_chassis;
        cores
            * self
                .uf_curve
                .per_core_reduction_to(policy.fmin_uf, self.cores_per_server)
    }
}

/// Who a capping event of a given depth would touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shaveability {
    /// Throttling non-user-facing cores covers the deficit.
    NufOnly,
    /// User-facing cores must be throttled too.
    NufAndUf,
    /// Even both classes at their floors cannot cover it.
    Infeasible,
}

/// Classify a single event deficit against the average chassis composition.
pub fn shaveable_power(
    deficit_w: f64,
    profile: &ShaveProfile,
    estimates: &HistoryEstimates,
    policy: &OversubPolicy,
) -> Shaveability {
    debug_assert!(deficit_w >= 0.0);
    let nuf = profile.nuf_shaveable_w(estimates, policy);
    if deficit_w <= nuf {
        return Shaveability::NufOnly;
    }
    if deficit_w <= nuf + profile.uf_shaveable_w(estimates, policy) {
        return Shaveability::NufAndUf;
    }
    Shaveability::Infeasible
}

/// Chassis-level power readings, one per chassis per unit of time.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalDraws {
    readings: Vec<f64>,
}

impl HistoricalDraws {
    pub fn new(mut readings: Vec<f64>) -> Self {
        readings.sort_by(|a, b| b.partial_cmp(a).expect("NaN draw"));
        Self { readings }
    }

    /// Parse `chassis_id,timestamp,watts` rows (header required).
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, OversubError> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let mut readings = Vec::new();
        for result in csv_reader.records() {
            let record = result.map_err(|e| OversubError::BadDraw {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 3 {
                return Err(OversubError::BadDraw {
                    line,
                    message: format!("expected 3 columns, got {}", record.len()),
                });
            }
            let watts: f64 = record[2].trim().parse().map_err(|_| OversubError::BadDraw {
                line,
                message: format!("bad watts value `{}`", &record[2]),
            })?;
            if watts <= 0.0 {
                return Err(OversubError::BadDraw {
                    line,
                    message: format!("non-positive draw {watts}"),
                });
            }
            readings.push(watts);
        }
        if readings.is_empty() {
            return Err(OversubError::NoFeasibleBudget);
        }
        Ok(Self::new(readings))
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn max_w(&self) -> f64 {
        self.readings[0]
    }

    /// Readings in descending order.
    pub fn sorted_desc(&self) -> &[f64] {
        &self.readings
    }
}

/// One candidate budget the search examined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAudit {
    pub candidate_w: f64,
    pub event_count: usize,
    pub uf_event_count: usize,
    pub nuf_event_count: usize,
    pub infeasible_event_count: usize,
    pub uf_event_rate: f64,
    pub nuf_event_rate: f64,
    pub max_shave_w: f64,
    /// Per-event deficits, kept verbatim for small event counts.
    pub shaves_w: Option<Vec<f64>>,
    pub accepted: bool,
}

/// Outcome of the budget search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetResult {
    pub p_min_w: f64,
    pub final_budget_w: f64,
    pub provisioned_w: f64,
    /// Budget reduction relative to provisioned power, in [0, 1].
    pub oversubscription_delta: f64,
    pub uf_event_rate: f64,
    pub nuf_event_rate: f64,
    pub worst_shave_w: f64,
    pub reading_count: usize,
    pub policy: OversubPolicy,
    pub estimates: HistoryEstimates,
    pub audit: Vec<CandidateAudit>,
}

/// Walk candidate budgets downward and return the lowest one whose event
/// rates and depths the policy tolerates.
pub fn find_min_budget(
    draws: &HistoricalDraws,
    policy: &OversubPolicy,
    estimates: &HistoryEstimates,
    profile: &ShaveProfile,
    provisioned_w: f64,
) -> Result<BudgetResult, OversubError> {
    if draws.is_empty() {
        return Err(OversubError::NoFeasibleBudget);
    }
    let readings = draws.sorted_desc();
    let n = readings.len() as f64;

    // Zero-event fallback: a budget just above the highest draw.
    let mut p_min = draws.max_w() + CANDIDATE_STEP_W;
    let mut accepted_rates = (0.0, 0.0);
    let mut worst_shave = 0.0;
    let mut audit = Vec::new();

    let mut index = 0;
    while index < readings.len() {
        let draw = readings[index];
        // Skip duplicates of this draw to land just below the next distinct value.
        let candidate = draw - CANDIDATE_STEP_W;
        let events: Vec<f64> = readings
            .iter()
            .take_while(|&&r| r > candidate)
            .map(|&r| r - candidate)
            .collect();
        let mut uf_events = 0;
        let mut nuf_events = 0;
        let mut infeasible_events = 0;
        let mut max_shave: f64 = 0.0;
        for &deficit in &events {
            max_shave = max_shave.max(deficit);
            match shaveable_power(deficit, profile, estimates, policy) {
                Shaveability::NufOnly => nuf_events += 1,
                Shaveability::NufAndUf => {
                    nuf_events += 1;
                    uf_events += 1;
                }
                Shaveability::Infeasible => infeasible_events += 1,
            }
        }
        let uf_rate = uf_events as f64 / n;
        let nuf_rate = nuf_events as f64 / n;
        let accepted =
            infeasible_events == 0 && uf_rate <= policy.emax_uf && nuf_rate <= policy.emax_nuf;
        audit.push(CandidateAudit {
            candidate_w: candidate,
            event_count: events.len(),
            uf_event_count: uf_events,
            nuf_event_count: nuf_events,
            infeasible_event_count: infeasible_events,
            uf_event_rate: uf_rate,
            nuf_event_rate: nuf_rate,
            max_shave_w: max_shave,
            shaves_w: (events.len() <= SHAVE_LIST_LIMIT).then_some(events.clone()),
            accepted,
        });
        if !accepted {
            break;
        }
        p_min = candidate;
        accepted_rates = (uf_rate, nuf_rate);
        worst_shave = max_shave;

        while index < readings.len() && readings[index] >= draw {
            index += 1;
        }
    }

    let final_w = final_budget(p_min, policy, provisioned_w);
    Ok(BudgetResult {
        p_min_w: p_min,
        final_budget_w: final_w,
        provisioned_w,
        oversubscription_delta: (provisioned_w - final_w) / provisioned_w,
        uf_event_rate: accepted_rates.0,
        nuf_event_rate: accepted_rates.1,
        worst_shave_w: worst_shave,
        reading_count: readings.len(),
        policy: *policy,
        estimates: *estimates,
        audit,
    })
}

/// Step 5: pad the minimum budget, never exceeding provisioned power.
pub fn final_budget(p_min_w: f64, policy: &OversubPolicy, provisioned_w: f64) -> f64 {
    (p_min_w * (1.0 + policy.buffer)).min(provisioned_w)
}
