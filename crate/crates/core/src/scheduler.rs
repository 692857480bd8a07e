//! Criticality- and utilization-aware VM placement.
//!
//! Placement runs in two stages, mirroring the production scheduler:
//! constraint rules filter servers that cannot host the VM, then preference
//! rules order the survivors. Two preference rules are combined by
//! rank-normalized points: the incumbent packing rule (tightest fit first)
//! and the power rule, which scores each candidate by how well its chassis
//! and server would stay balanced if the VM landed there.
//!
//! The power rule's server score rewards mixing: placing a user-facing VM
//! where non-user-facing peak utilization dominates (and vice versa) keeps
//! throttleable power available on every blade.

use serde::{Deserialize, Serialize};

use crate::cluster::{ChassisLoad, ClusterState, ServerId, ServerLoad, VmDescriptor};
use crate::criticality::WorkloadLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Weight of the chassis score in the power rule; the server score gets
    /// the complement.
    pub alpha: f64,
    /// Rule weight of the incumbent packing preference.
    pub packing_rule_weight: f64,
    /// Rule weight of the power rule; 0 disables it (the baseline scheduler).
    pub power_rule_weight: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        // The power rule needs to outweigh packing for its chassis-balancing
        // effect to survive the combination; packing still breaks near-ties.
        Self {
            alpha: 0.8,
            packing_rule_weight: 0.3,
            power_rule_weight: 0.7,
        }
    }
}

impl SchedulerConfig {
    /// The unmodified packing-only scheduler.
    pub fn baseline() -> Self {
        Self {
            power_rule_weight: 0.0,
            ..Self::default()
        }
    }
}

/// One candidate server with its power-rule scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub server: ServerId,
    /// Chassis headroom score in [0, 1]; higher means a less committed chassis.
    pub kappa: f64,
    /// Server mixing score in [0, 1]; higher means better UF/NUF balance
    /// for this VM's type.
    pub eta: f64,
    /// Combined power-rule score `alpha * kappa + (1 - alpha) * eta`.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no server satisfies the constraints")]
pub struct DeploymentFailure;

/// Constraint stage: servers with enough free cores and memory.
pub fn filter_constraints(vm: &VmDescriptor, cluster: &ClusterState) -> Vec<ServerId> {
    (0..cluster.server_count())
        .map(ServerId)
        .filter(|&s| cluster.fits(vm, s))
        .collect()
}

/// Chassis headroom assuming every VM peaks at its predicted P95 at once.
pub fn score_chassis(load: &ChassisLoad) -> f64 {
    1.0 - load.peak_core_equivalents() / load.total_cores as f64
}

/// Server mixing score for a VM of the given predicted type.
pub fn score_server(label: WorkloadLabel, load: &ServerLoad) -> f64 {
    let diff = match label {
        WorkloadLabel::UserFacing => load.nuf_core_equivalents() - load.uf_core_equivalents(),
        WorkloadLabel::NonUserFacing => load.uf_core_equivalents() - load.nuf_core_equivalents(),
    };
    0.5 * (1.0 + diff / load.total_cores as f64)
}

/// Score candidates with the power rule and order them best-first.
/// Ties break toward fuller servers, then lower ids, so runs replay exactly.
pub fn sort_candidates(
    vm: &VmDescriptor,
    candidates: &[ServerId],
    cluster: &ClusterState,
    config: &SchedulerConfig,
) -> Vec<ScoredCandidate> {
    let mut scored: Vec<ScoredCandidate> = candidates
        .iter()
        .map(|&server| {
            let kappa = score_chassis(cluster.chassis_load(cluster.chassis_of(server)));
            let eta = score_server(vm.effective.label, cluster.server_load(server));
            ScoredCandidate {
                server,
                kappa,
                eta,
                score: config.alpha * kappa + (1.0 - config.alpha) * eta,
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| {
                let fa = cluster.server_load(a.server).free_cores;
                let fb = cluster.server_load(b.server).free_cores;
                fa.cmp(&fb)
            })
            .then_with(|| a.server.cmp(&b.server))
    });
    scored
}

/// Pick a server for the VM and commit it.
///
/// Each preference rule ranks the candidates and awards `1 - rank/n`
/// points; rule weights combine the points. The packing rule prefers the
/// fewest free cores after placement.
pub fn place(
    vm: &VmDescriptor,
    cluster: &mut ClusterState,
    config: &SchedulerConfig,
) -> Result<ServerId, DeploymentFailure> {
    let winner = choose(vm, cluster, config)?;
    cluster
        .commit(vm, winner)
        .expect("candidate passed constraints");
    Ok(winner)
}

/// Run both preference rules without committing.
pub fn choose(
    vm: &VmDescriptor,
    cluster: &ClusterState,
    config: &SchedulerConfig,
) -> Result<ServerId, DeploymentFailure> {
    let candidates = filter_constraints(vm, cluster);
    if candidates.is_empty() {
        return Err(DeploymentFailure);
    }
    let n = candidates.len() as f64;

    // Packing rule: fewest free cores after placement first.
    let mut packing = candidates.clone();
    packing.sort_by_key(|&s| (cluster.server_load(s).free_cores, s));
    let mut points: std::collections::BTreeMap<ServerId, f64> = packing
        .iter()
        .enumerate()
        .map(|(rank, &s)| (s, config.packing_rule_weight * (1.0 - rank as f64 / n)))
        .collect();

    if config.power_rule_weight != 0.0 {
        for (rank, c) in sort_candidates(vm, &candidates, cluster, config)
            .iter()
            .enumerate()
        {
            *points.get_mut(&c.server).unwrap() +=
                config.power_rule_weight * (1.0 - rank as f64 / n);
        }
    }

    let winner = candidates
        .iter()
        .copied()
        .max_by(|&a, &b| {
            points[&a]
                .partial_cmp(&points[&b])
                .unwrap()
                .then_with(|| {
                    // Prefer fuller servers, then lower ids, inverted here
                    // because max_by keeps the "greater" side.
                    cluster
                        .server_load(b)
                        .free_cores
                        .cmp(&cluster.server_load(a).free_cores)
                })
                .then_with(|| b.cmp(&a))
        })
        .unwrap();
    Ok(winner)
}
