//! Run metrics: placement quality, balance, and capping impact.
//!
//! Balance metrics time-average each entity's score over the run, then take
//! the standard deviation across entities: low values mean the fleet stayed
//! uniformly balanced. The server score here is the fixed user-facing form
//! `(1 + (nuf - uf)/cores) / 2`, so it measures mix skew rather than any
//! particular placement decision.

use serde::{Deserialize, Serialize};

use crate::cluster::{ChassisId, ClusterState, ServerId};
use crate::criticality::WorkloadLabel;
use crate::scheduler::score_chassis;
use crate::TimeMs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub deployment_failure_rate: f64,
    pub avg_empty_server_ratio: f64,
    pub stddev_avg_chassis_score: f64,
    pub stddev_avg_server_score: f64,
    pub avg_core_occupancy: f64,
    pub deployments_total: usize,
    pub deployments_failed: usize,
    pub vms_placed: usize,
    pub capping_event_count: usize,
    pub capping_events_affecting_uf: usize,
    pub rapl_engaged_events: usize,
    pub uf_throttled_core_seconds: f64,
    pub nuf_throttled_core_seconds: f64,
    pub infeasible_budget_ticks: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Streaming integrator advanced at every simulation event.
#[derive(Debug)]
pub struct MetricsCollector {
    last_t: TimeMs,
    server_integral: Vec<f64>,
    chassis_integral: Vec<f64>,
    empty_integral: f64,
    occupancy_integral: f64,
    vm_counts: Vec<u32>,
    empty_count: usize,
    used_cores: u64,
    usable_cores: u64,
    pub deployments_total: usize,
    pub deployments_failed: usize,
    pub vms_placed: usize,
    pub infeasible_budget_ticks: usize,
}

impl MetricsCollector {
    pub fn new(cluster: &ClusterState) -> Self {
        let servers = cluster.server_count() as usize;
        let usable_per_blade =
            cluster.topology.cores_per_blade - cluster.topology.reserved_cores_per_blade;
        Self {
            last_t: 0,
            server_integral: vec![0.0; servers],
            chassis_integral: vec![0.0; cluster.chassis_count() as usize],
            empty_integral: 0.0,
            occupancy_integral: 0.0,
            vm_counts: vec![0; servers],
            empty_count: servers,
            used_cores: 0,
            usable_cores: usable_per_blade as u64 * servers as u64,
            deployments_total: 0,
            deployments_failed: 0,
            vms_placed: 0,
            infeasible_budget_ticks: 0,
        }
    }

    /// Integrate current scores up to `t`; call before mutating the cluster.
    pub fn advance(&mut self, t: TimeMs, cluster: &ClusterState) {
        if t <= self.last_t {
            return;
        }
        let dt = (t - self.last_t) as f64;
        self.last_t = t;
        for s in 0..self.server_integral.len() {
            let load = cluster.server_load(ServerId(s as u32));
            let score = 0.5
                * (1.0
                    + (load.nuf_core_equivalents() - load.uf_core_equivalents())
                        / load.total_cores as f64);
            self.server_integral[s] += score * dt;
        }
        for c in 0..self.chassis_integral.len() {
            self.chassis_integral[c] += score_chassis(cluster.chassis_load(ChassisId(c as u32))) * dt;
        }
        self.empty_integral += self.empty_count as f64 / self.vm_counts.len() as f64 * dt;
        self.occupancy_integral += self.used_cores as f64 / self.usable_cores as f64 * dt;
    }

    pub fn on_vm_placed(&mut self, server: ServerId, cores: u32) {
        let s = server.0 as usize;
        if self.vm_counts[s] == 0 {
            self.empty_count -= 1;
        }
        self.vm_counts[s] += 1;
        self.used_cores += cores as u64;
        self.vms_placed += 1;
    }

    pub fn on_vm_removed(&mut self, server: ServerId, cores: u32, rollback: bool) {
        let s = server.0 as usize;
        self.vm_counts[s] -= 1;
        if self.vm_counts[s] == 0 {
            self.empty_count += 1;
        }
        self.used_cores -= cores as u64;
        if rollback {
            self.vms_placed -= 1;
        }
    }

    pub fn on_deployment(&mut self, accepted: bool) {
        self.deployments_total += 1;
        if !accepted {
            self.deployments_failed += 1;
        }
    }

    pub fn finalize(
        mut self,
        end: TimeMs,
        cluster: &ClusterState,
        capping_events: &[crate::capping::CappingEvent],
        seed: u64,
        config_hash: String,
    ) -> SimMetrics {
        self.advance(end, cluster);
        let horizon = end.max(1) as f64;
        let server_avgs: Vec<f64> = self
            .server_integral
            .iter()
            .map(|i| i / horizon)
            .collect();
        let chassis_avgs: Vec<f64> = self
            .chassis_integral
            .iter()
            .map(|i| i / horizon)
            .collect();
        let events_affecting_uf = capping_events
            .iter()
            .filter(|e| e.affected_user_facing())
            .count();
        let rapl_engaged = capping_events.iter().filter(|e| e.rapl_engaged).count();
        let (uf_cs, nuf_cs) = crate::capping::core_seconds_by_class(capping_events);
        SimMetrics {
            deployment_failure_rate: if self.deployments_total == 0 {
                0.0
            } else {
                self.deployments_failed as f64 / self.deployments_total as f64
            },
            avg_empty_server_ratio: self.empty_integral / horizon,
            stddev_avg_chassis_score: stddev(&chassis_avgs),
            stddev_avg_server_score: stddev(&server_avgs),
            avg_core_occupancy: self.occupancy_integral / horizon,
            deployments_total: self.deployments_total,
            deployments_failed: self.deployments_failed,
            vms_placed: self.vms_placed,
            capping_event_count: capping_events.len(),
            capping_events_affecting_uf: events_affecting_uf,
            rapl_engaged_events: rapl_engaged,
            uf_throttled_core_seconds: uf_cs,
            nuf_throttled_core_seconds: nuf_cs,
            infeasible_budget_ticks: self.infeasible_budget_ticks,
            seed,
            config_hash,
        }
    }
}

fn stddev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// One chassis power reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawSample {
    pub chassis: u32,
    pub t_ms: TimeMs,
    pub watts: f64,
}

/// One deployment request and its outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub deployment_id: u64,
    pub arrival_ms: TimeMs,
    pub vm_count: usize,
    pub accepted: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: SimMetrics,
    pub capping_events: Vec<crate::capping::CappingEvent>,
    pub draw_samples: Vec<DrawSample>,
    pub power_ticks: Vec<DrawSample>,
    pub deployment_log: Vec<DeploymentRecord>,
    pub allocation_log: Vec<crate::oversub::AllocationRecord>,
}

impl RunOutput {
    /// Failure rate recomputed from the deployment log; must agree with the
    /// streamed metric.
    pub fn failure_rate_from_log(&self) -> f64 {
        if self.deployment_log.is_empty() {
            return 0.0;
        }
        self.deployment_log.iter().filter(|d| !d.accepted).count() as f64
            / self.deployment_log.len() as f64
    }

    /// Share of allocated core-hours belonging to truly user-facing VMs.
    pub fn true_uf_core_share(&self) -> f64 {
        let uf: f64 = self
            .allocation_log
            .iter()
            .filter(|r| r.label == WorkloadLabel::UserFacing)
            .map(|r| r.cores as f64 * r.lifetime_hours)
            .sum();
        let total: f64 = self
            .allocation_log
            .iter()
            .map(|r| r.cores as f64 * r.lifetime_hours)
            .sum();
        if total == 0.0 {
            0.0
        } else {
            uf / total
        }
    }
}
