//! Chassis power-budget enforcement.
//!
//! Three cooperating mechanisms, mirroring the hardware/software split of a
//! real chassis:
//!
//! 1. The chassis manager polls the PSUs every 200 ms and alerts every
//!    blade's in-band controller when the draw crosses a threshold just
//!    below the budget.
//! 2. The in-band controller reacts to an alert by dropping the least
//!    protected nonempty tier of cores to the minimum p-state, then runs a
//!    feedback loop that raises a few throttled cores per tick back toward
//!    the highest frequency that keeps the blade under its target. Caps
//!    lift wholesale after a configurable hold time.
//! 3. If the chassis still reaches its full budget, the out-of-band
//!    fallback steps *all* cores of every over-share blade down equally,
//!    one p-state per tick, until each offending blade is under its even
//!    share of the budget.
//!
//! User-facing cores are only ever slowed by the fallback path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{Blade, ChassisId, ClusterState, ServerId, ThrottleTier, TIER_ORDER};
use crate::criticality::WorkloadLabel;
use crate::power::{PState, ServerPowerSpec};
use crate::TimeMs;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChassisManagerConfig {
    pub poll_interval_ms: TimeMs,
    /// Fraction of the chassis budget at which PSU polling raises an alert.
    pub alert_threshold_fraction: f64,
    pub chassis_budget_w: f64,
}

impl ChassisManagerConfig {
    pub fn with_budget(chassis_budget_w: f64) -> Self {
        Self {
            poll_interval_ms: 200,
            alert_threshold_fraction: 0.98,
            chassis_budget_w,
        }
    }

    pub fn alert_level_w(&self) -> f64 {
        self.alert_threshold_fraction * self.chassis_budget_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Throttled cores raised per feedback iteration.
    pub step_cores: usize,
    /// Hold time before a cap lifts and all cores return to maximum.
    pub cap_duration_s: u64,
    /// The controller regulates to this fraction of the blade's even share,
    /// leaving room to settle below the hard cap.
    pub server_target_fraction: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            step_cores: 4,
            cap_duration_s: 30,
            server_target_fraction: 225.0 / 230.0,
        }
    }
}

/// PSU poll: does the current draw warrant alerting the controllers?
pub fn poll_chassis(config: &ChassisManagerConfig, chassis_draw_w: f64) -> bool {
    chassis_draw_w >= config.alert_level_w()
}

/// Blade power from per-core utilizations and p-states. Matches
/// `power::server_power` term for term.
pub fn blade_draw(spec: &ServerPowerSpec, utils: &[f64], pstates: &[PState]) -> f64 {
    debug_assert_eq!(utils.len(), pstates.len());
    spec.idle_w
        + utils
            .iter()
            .zip(pstates)
            .map(|(&u, &p)| spec.core_dynamic_at(u, p))
            .sum::<f64>()
}

/// One chassis-budget episode: when it ran, how deep it cut, who it touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CappingEvent {
    pub chassis: u32,
    pub start_ms: TimeMs,
    pub end_ms: TimeMs,
    pub trigger_draw_w: f64,
    pub rapl_engaged: bool,
    /// Minimum normalized frequency reached per tier, ordered least
    /// protected first.
    pub min_freq_per_tier: [f64; 3],
    /// Throttled core-seconds per VM over the episode.
    pub throttled_core_seconds: BTreeMap<u64, f64>,
    /// Core-seconds aggregated by the VMs' *true* workload type.
    pub uf_throttled_core_seconds: f64,
    pub nuf_throttled_core_seconds: f64,
}

impl CappingEvent {
    pub fn csv_header() -> &'static str {
        "chassis,start_ms,end_ms,trigger_draw_w,rapl_engaged,\
         min_freq_low_priority,min_freq_production_nuf,min_freq_protected,\
         uf_throttled_core_seconds,nuf_throttled_core_seconds"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{},{:.2},{:.2},{:.2},{:.3},{:.3}",
            self.chassis,
            self.start_ms,
            self.end_ms,
            self.trigger_draw_w,
            self.rapl_engaged,
            self.min_freq_per_tier[0],
            self.min_freq_per_tier[1],
            self.min_freq_per_tier[2],
            self.uf_throttled_core_seconds,
            self.nuf_throttled_core_seconds
        )
    }

    /// True when the episode slowed any core of a truly user-facing VM.
    pub fn affected_user_facing(&self) -> bool {
        self.uf_throttled_core_seconds > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CtlState {
    Normal,
    /// Alert received and the blade was over target; holds until the cap
    /// duration elapses past the last alert.
    Active { last_alert_ms: TimeMs },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RaplState {
    armed: bool,
}

/// What one tick observed, for the engine's metrics and safety checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutcome {
    pub chassis_draw_w: f64,
    pub alerted: bool,
    pub rapl_active: bool,
    /// Blade that cannot reach its even-share cap even at the minimum
    /// p-state on every core; signals a budget below the physical floor.
    pub infeasible: Option<ServerId>,
}

/// Budget enforcement state for one chassis.
#[derive(Debug, Clone)]
pub struct ChassisCapping {
    pub chassis: ChassisId,
    pub manager: ChassisManagerConfig,
    pub controller: ControllerConfig,
    servers: Vec<ServerId>,
    states: Vec<CtlState>,
    rapl: Vec<RaplState>,
    open_event: Option<CappingEvent>,
    pub events: Vec<CappingEvent>,
}

impl ChassisCapping {
    pub fn new(
        chassis: ChassisId,
        servers: Vec<ServerId>,
        manager: ChassisManagerConfig,
        controller: ControllerConfig,
    ) -> Self {
        let n = servers.len();
        Self {
            chassis,
            manager,
            controller,
            servers,
            states: vec![CtlState::Normal; n],
            rapl: vec![RaplState { armed: false }; n],
            open_event: None,
            events: Vec::new(),
        }
    }

    pub fn even_share_w(&self) -> f64 {
        self.manager.chassis_budget_w / self.servers.len() as f64
    }

    pub fn target_w(&self) -> f64 {
        self.controller.server_target_fraction * self.even_share_w()
    }

    fn cap_duration_ms(&self) -> TimeMs {
        self.controller.cap_duration_s * 1000
    }

    /// Advance enforcement by one poll interval. `utils` holds the current
    /// per-core utilization of each blade, in chassis order.
    pub fn tick(
        &mut self,
        now: TimeMs,
        cluster: &mut ClusterState,
        utils: &[Vec<f64>],
        spec: &ServerPowerSpec,
    ) -> TickOutcome {
        assert_eq!(utils.len(), self.servers.len());
        let even_share = self.even_share_w();
        let target = self.target_w();

        let mut draws: Vec<f64> = (0..self.servers.len())
            .map(|i| blade_draw(spec, &utils[i], &cluster.blade(self.servers[i]).pstates))
            .collect();
        let chassis_draw: f64 = draws.iter().sum();

        // Cap lift: past the hold window, everything returns to maximum.
        for i in 0..self.servers.len() {
            if let CtlState::Active { last_alert_ms } = self.states[i] {
                if now.saturating_sub(last_alert_ms) >= self.cap_duration_ms() {
                    let blade = cluster.blade_mut(self.servers[i]);
                    blade.pstates.fill(PState::MAX);
                    self.states[i] = CtlState::Normal;
                    self.rapl[i].armed = false;
                    draws[i] = blade_draw(spec, &utils[i], &blade.pstates);
                }
            }
        }

        let alerted = poll_chassis(&self.manager, draws.iter().sum());
        let mut dropped = vec![false; self.servers.len()];
        if alerted {
            for i in 0..self.servers.len() {
                if draws[i] > target {
                    let blade = cluster.blade_mut(self.servers[i]);
                    dropped[i] = drop_lowest_tier(blade);
                    self.states[i] = CtlState::Active { last_alert_ms: now };
                    if dropped[i] {
                        draws[i] = blade_draw(spec, &utils[i], &blade.pstates);
                    }
                }
            }
        }

        // Out-of-band fallback at the full budget: every blade over its even
        // share steps all cores down equally until it complies.
        let mut infeasible = None;
        let after_inband: f64 = draws.iter().sum();
        if after_inband >= self.manager.chassis_budget_w {
            for i in 0..self.servers.len() {
                if draws[i] > even_share {
                    self.rapl[i].armed = true;
                }
            }
        }
        let mut rapl_active = false;
        for i in 0..self.servers.len() {
            if !self.rapl[i].armed {
                continue;
            }
            if draws[i] > even_share {
                rapl_active = true;
                let blade = cluster.blade_mut(self.servers[i]);
                let at_floor = blade.pstates.iter().all(|&p| p == PState::MIN);
                if at_floor {
                    infeasible = Some(self.servers[i]);
                } else {
                    for p in blade.pstates.iter_mut() {
                        *p = p.step_down();
                    }
                    draws[i] = blade_draw(spec, &utils[i], &blade.pstates);
                    rapl_active = true;
                }
            }
        }

        // Feedback: blades under control and below target hand frequency
        // back to a few throttled cores per tick.
        for i in 0..self.servers.len() {
            if dropped[i] || self.rapl[i].armed {
                continue;
            }
            if let CtlState::Active { .. } = self.states[i] {
                let blade = cluster.blade_mut(self.servers[i]);
                if feedback_step(blade, &utils[i], spec, target, self.controller.step_cores) {
                    draws[i] = blade_draw(spec, &utils[i], &blade.pstates);
                }
            }
        }

        self.update_event(now, cluster, chassis_draw, alerted, rapl_active);

        TickOutcome {
            chassis_draw_w: draws.iter().sum(),
            alerted,
            rapl_active,
            infeasible,
        }
    }

    fn update_event(
        &mut self,
        now: TimeMs,
        cluster: &ClusterState,
        chassis_draw: f64,
        alerted: bool,
        rapl_active: bool,
    ) {
        let any_throttled = self
            .servers
            .iter()
            .any(|&s| !cluster.blade(s).all_at_max());
        let engaged = alerted || rapl_active || any_throttled;

        if self.open_event.is_none() && engaged && (alerted || rapl_active) {
            self.open_event = Some(CappingEvent {
                chassis: self.chassis.0,
                start_ms: now,
                end_ms: now,
                trigger_draw_w: chassis_draw,
                rapl_engaged: false,
                min_freq_per_tier: [1.0; 3],
                throttled_core_seconds: BTreeMap::new(),
                uf_throttled_core_seconds: 0.0,
                nuf_throttled_core_seconds: 0.0,
            });
        }

        if let Some(event) = self.open_event.as_mut() {
            event.rapl_engaged |= rapl_active;
            let dt_s = self.manager.poll_interval_ms as f64 / 1000.0;
            for &server in &self.servers {
                let blade = cluster.blade(server);
                for core in 0..blade.core_count() {
                    let pstate = blade.pstates[core];
                    if pstate < PState::MAX {
                        let tier_idx = TIER_ORDER
                            .iter()
                            .position(|&t| t == blade.core_tier(core))
                            .unwrap();
                        event.min_freq_per_tier[tier_idx] =
                            event.min_freq_per_tier[tier_idx].min(pstate.frequency());
                        if let Some(vm_id) = blade.vm_on_core(core) {
                            *event.throttled_core_seconds.entry(vm_id.0).or_insert(0.0) += dt_s;
                            match cluster.vm(vm_id).map(|v| v.descriptor.true_label) {
                                Some(WorkloadLabel::UserFacing) => {
                                    event.uf_throttled_core_seconds += dt_s
                                }
                                _ => event.nuf_throttled_core_seconds += dt_s,
                            }
                        }
                    }
                }
            }
            if !engaged {
                let mut done = self.open_event.take().unwrap();
                done.end_ms = now;
                self.events.push(done);
            }
        }
    }

    /// Close any episode still open at the end of a run.
    pub fn finish(&mut self, now: TimeMs) {
        if let Some(mut event) = self.open_event.take() {
            event.end_ms = now;
            self.events.push(event);
        }
    }
}

/// Throttle the least protected tier that still has headroom; the last tier
/// is never touched in-band. Returns whether anything moved.
fn drop_lowest_tier(blade: &mut Blade) -> bool {
    for &tier in &TIER_ORDER[..TIER_ORDER.len() - 1] {
        let cores = blade.cores_in_tier(tier);
        let throttleable: Vec<usize> = cores
            .into_iter()
            .filter(|&c| blade.pstates[c] > PState::MIN)
            .collect();
        if !throttleable.is_empty() {
            for c in throttleable {
                blade.pstates[c] = PState::MIN;
            }
            return true;
        }
    }
    false
}

/// One feedback iteration: raise up to `step_cores` throttled in-band cores
/// one p-state, but only if the predicted draw stays at or under target.
/// Returns whether any core moved.
fn feedback_step(
    blade: &mut Blade,
    utils: &[f64],
    spec: &ServerPowerSpec,
    target_w: f64,
    step_cores: usize,
) -> bool {
    let draw = blade_draw(spec, utils, &blade.pstates);
    if draw >= target_w {
        return false;
    }
    // Lowest frequencies first; recover production NUF before low-priority.
    let mut candidates: Vec<usize> = (0..blade.core_count())
        .filter(|&c| {
            blade.vm_on_core(c).is_some()
                && blade.core_tier(c) != ThrottleTier::Protected
                && blade.pstates[c] < PState::MAX
        })
        .collect();
    candidates.sort_by_key(|&c| {
        (
            blade.pstates[c],
            std::cmp::Reverse(blade.core_tier(c)),
            c,
        )
    });
    candidates.truncate(step_cores);
    if candidates.is_empty() {
        return false;
    }
    let extra: f64 = candidates
        .iter()
        .map(|&c| {
            spec.core_dynamic_at(utils[c], blade.pstates[c].step_up())
                - spec.core_dynamic_at(utils[c], blade.pstates[c])
        })
        .sum();
    if draw + extra > target_w {
        return false;
    }
    for &c in &candidates {
        blade.pstates[c] = blade.pstates[c].step_up();
    }
    true
}

/// Convenience for tests and scenario drivers: collect per-VM throttled
/// core-seconds across events, keyed by true workload type.
pub fn core_seconds_by_class(events: &[CappingEvent]) -> (f64, f64) {
    events.iter().fold((0.0, 0.0), |(uf, nuf), e| {
        (
            uf + e.uf_throttled_core_seconds,
            nuf + e.nuf_throttled_core_seconds,
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{Topology, VmDescriptor, VmId};
    use crate::predict::EffectiveAttributes;

    fn topology(blades: u32) -> Topology {
        Topology {
            racks: 1,
            chassis_per_rack: 1,
            blades_per_chassis: blades,
            cores_per_blade: 40,
            memory_gb_per_blade: 160.0,
            reserved_cores_per_blade: 0,
            reserved_core_util: 0.0,
        }
    }

    fn vm(id: u64, cores: u32, label: WorkloadLabel) -> VmDescriptor {
        VmDescriptor {
            id: VmId(id),
            cores,
            memory_gb: cores as f64 * 4.0,
            lifetime_hours: 1.0,
            subscription_id: 0,
            low_priority: false,
            true_label: label,
            true_p95: 0.8,
            effective: EffectiveAttributes {
                label,
                p95_util: 0.875,
            },
        }
    }

    /// Single blade hosting 20 UF + 20 NUF cores.
    fn one_blade_cluster() -> ClusterState {
        let mut cluster = ClusterState::new(topology(1));
        cluster
            .commit(&vm(1, 20, WorkloadLabel::UserFacing), ServerId(0))
            .unwrap();
        cluster
            .commit(&vm(2, 20, WorkloadLabel::NonUserFacing), ServerId(0))
            .unwrap();
        cluster
    }

    fn capping(blades: u32, budget: f64) -> ChassisCapping {
        ChassisCapping::new(
            ChassisId(0),
            (0..blades).map(ServerId).collect(),
            ChassisManagerConfig::with_budget(budget),
            ControllerConfig::default(),
        )
    }

    #[test]
    fn poll_needs_threshold_crossing() {
        let cfg = ChassisManagerConfig::with_budget(1000.0);
        assert!(!poll_chassis(&cfg, 970.0));
        assert!(poll_chassis(&cfg, 980.0));
        assert!(poll_chassis(&cfg, 990.0));
    }

    #[test]
    fn alert_drops_nuf_tier_to_minimum() {
        let mut cluster = one_blade_cluster();
        let spec = ServerPowerSpec::reference();
        // Full-tilt draw (310 W) is over target, and the NUF-floored draw
        // (239.5 W) stays under budget so the fallback never engages.
        let mut cap = capping(1, 260.0);
        let utils = vec![vec![1.0; 40]];
        cap.tick(0, &mut cluster, &utils, &spec);
        let blade = cluster.blade(ServerId(0));
        for c in 0..40 {
            match blade.core_tier(c) {
                ThrottleTier::ProductionNuf => assert_eq!(blade.pstates[c], PState::MIN),
                ThrottleTier::Protected => assert_eq!(blade.pstates[c], PState::MAX),
                ThrottleTier::LowPriority => {}
            }
        }
    }

    #[test]
    fn below_target_blade_is_left_alone() {
        let mut cluster = one_blade_cluster();
        let spec = ServerPowerSpec::reference();
        // Chassis-wide alert, but this blade idles below its target.
        let mut cap = capping(1, 230.0);
        cap.manager.alert_threshold_fraction = 0.4;
        let utils = vec![vec![0.1; 40]];
        let outcome = cap.tick(0, &mut cluster, &utils, &spec);
        assert!(outcome.alerted);
        assert!(cluster.blade(ServerId(0)).all_at_max());
    }

    #[test]
    fn low_priority_tier_throttles_before_production_nuf() {
        // 4 low-priority + 16 production NUF + 20 UF cores, budget 300 W:
        // flooring the low-priority tier alone leaves 295.9 W, still above
        // the 294 W alert level, so the next poll escalates.
        let mut cluster = ClusterState::new(topology(1));
        let mut low = vm(1, 4, WorkloadLabel::NonUserFacing);
        low.low_priority = true;
        cluster.commit(&low, ServerId(0)).unwrap();
        cluster
            .commit(&vm(2, 16, WorkloadLabel::NonUserFacing), ServerId(0))
            .unwrap();
        cluster
            .commit(&vm(3, 20, WorkloadLabel::UserFacing), ServerId(0))
            .unwrap();
        let spec = ServerPowerSpec::reference();
        let mut cap = capping(1, 300.0);
        let utils = vec![vec![1.0; 40]];
        cap.tick(0, &mut cluster, &utils, &spec);
        let blade = cluster.blade(ServerId(0));
        let low_cores = blade.cores_in_tier(ThrottleTier::LowPriority);
        let nuf_cores = blade.cores_in_tier(ThrottleTier::ProductionNuf);
        assert!(low_cores.iter().all(|&c| blade.pstates[c] == PState::MIN));
        assert!(nuf_cores.iter().all(|&c| blade.pstates[c] == PState::MAX));
        // Next alert escalates to production NUF.
        cap.tick(200, &mut cluster, &utils, &spec);
        let blade = cluster.blade(ServerId(0));
        let nuf_cores = blade.cores_in_tier(ThrottleTier::ProductionNuf);
        assert!(nuf_cores.iter().all(|&c| blade.pstates[c] == PState::MIN));
        // The protected tier never moved in-band.
        let uf_cores = blade.cores_in_tier(ThrottleTier::Protected);
        assert!(uf_cores.iter().all(|&c| blade.pstates[c] == PState::MAX));
    }

    #[test]
    fn feedback_recovers_stepwise_and_holds_at_target() {
        let mut cluster = one_blade_cluster();
        let spec = ServerPowerSpec::reference();
        let mut cap = capping(1, 260.0);
        let high = vec![vec![1.0; 40]];
        cap.tick(0, &mut cluster, &high, &spec);
        let floor: Vec<PState> = cluster.blade(ServerId(0)).pstates.clone();

        // Load eases: feedback raises at most 4 cores per tick, never past
        // the point where predicted draw exceeds the target.
        let low = vec![vec![0.3; 40]];
        let mut previous: Vec<PState> = floor;
        for step in 1..=6u64 {
            cap.tick(step * 200, &mut cluster, &low, &spec);
            let current = cluster.blade(ServerId(0)).pstates.clone();
            let raised = current
                .iter()
                .zip(&previous)
                .filter(|(c, p)| c > p)
                .count();
            assert!(raised <= 4, "step {step} raised {raised}");
            assert!(current.iter().zip(&previous).all(|(c, p)| c >= p));
            let draw = blade_draw(&spec, &low[0], &current);
            assert!(draw <= cap.target_w() + 1e-9);
            previous = current;
        }
    }

    #[test]
    fn feedback_holds_when_a_step_would_overshoot() {
        // Budget 245 W puts the target at 239.67 W, a whisker above the
        // NUF-floored draw of 239.5 W: one 4-core step (+1.06 W) overshoots.
        let mut cluster = one_blade_cluster();
        let spec = ServerPowerSpec::reference();
        let mut cap = capping(1, 245.0);
        let utils = vec![vec![1.0; 40]];
        cap.tick(0, &mut cluster, &utils, &spec);
        let throttled = cluster.blade(ServerId(0)).pstates.clone();
        // Draw at full utilization with the NUF tier floored: raising any 4
        // cores would cross the target, so the state must not change.
        let draw = blade_draw(&spec, &utils[0], &throttled);
        assert!(draw < cap.target_w());
        let step_cost = 4.0
            * (spec.core_dynamic_at(1.0, PState::MIN.step_up())
                - spec.core_dynamic_at(1.0, PState::MIN));
        assert!(draw + step_cost > cap.target_w());
        cap.tick(200, &mut cluster, &utils, &spec);
        assert_eq!(cluster.blade(ServerId(0)).pstates, throttled);
    }

    #[test]
    fn cap_lifts_fully_after_hold_duration() {
        // Sustained load keeps the feedback frozen (any step overshoots the
        // 239.67 W target), so only the 30 s lift can restore frequencies.
        let mut cluster = one_blade_cluster();
        let spec = ServerPowerSpec::reference();
        let mut cap = capping(1, 245.0);
        let high = vec![vec![1.0; 40]];
        cap.tick(0, &mut cluster, &high, &spec);
        assert!(!cluster.blade(ServerId(0)).all_at_max());
        let mut t = 200;
        while t < 30_000 {
            cap.tick(t, &mut cluster, &high, &spec);
            assert!(!cluster.blade(ServerId(0)).all_at_max(), "lifted early at {t}");
            t += 200;
        }
        // Load subsides right as the hold expires; everything returns to
        // maximum in a single step.
        let quiet = vec![vec![0.1; 40]];
        cap.tick(30_000, &mut cluster, &quiet, &spec);
        assert!(cluster.blade(ServerId(0)).all_at_max());
        cap.finish(30_200);
        assert_eq!(cap.events.len(), 1);
        let event = &cap.events[0];
        assert!(!event.rapl_engaged);
        assert!(event.nuf_throttled_core_seconds > 0.0);
        assert_eq!(event.uf_throttled_core_seconds, 0.0);
        assert_eq!(event.min_freq_per_tier[1], 0.5);
        assert_eq!(event.min_freq_per_tier[2], 1.0);
    }

    #[test]
    fn rapl_steps_all_cores_until_even_share() {
        // Two blades, one all-UF: in-band has nothing to throttle there and
        // the fallback must slow every core equally.
        let mut cluster = ClusterState::new(topology(2));
        cluster
            .commit(&vm(1, 40, WorkloadLabel::UserFacing), ServerId(0))
            .unwrap();
        cluster
            .commit(&vm(2, 40, WorkloadLabel::NonUserFacing), ServerId(1))
            .unwrap();
        let spec = ServerPowerSpec::reference();
        // Even share 230 W; both blades draw 310 W at full tilt.
        let mut cap = capping(2, 460.0);
        let utils = vec![vec![1.0; 40], vec![1.0; 40]];
        let mut t = 0;
        let mut converged_at = None;
        for step in 0..20u64 {
            t = step * 200;
            let outcome = cap.tick(t, &mut cluster, &utils, &spec);
            assert_eq!(outcome.infeasible, None);
            let uf_blade = cluster.blade(ServerId(0));
            let uniform = uf_blade.pstates.windows(2).all(|w| w[0] == w[1]);
            assert!(uniform, "fallback must move all cores equally");
            let draw = blade_draw(&spec, &utils[0], &uf_blade.pstates);
            if draw <= cap.even_share_w() && converged_at.is_none() {
                converged_at = Some(t);
            }
        }
        let converged = converged_at.expect("blade never complied");
        assert!(converged <= 2_000, "took {converged} ms");
        cap.finish(t);
        assert!(cap.events.iter().any(|e| e.rapl_engaged));
    }

    #[test]
    fn rapl_never_fires_below_budget() {
        let mut cluster = one_blade_cluster();
        let spec = ServerPowerSpec::reference();
        let mut cap = capping(1, 400.0);
        let utils = vec![vec![1.0; 40]];
        for step in 0..10u64 {
            let outcome = cap.tick(step * 200, &mut cluster, &utils, &spec);
            assert!(!outcome.rapl_active);
        }
        assert!(cluster.blade(ServerId(0)).all_at_max());
    }

    #[test]
    fn budget_below_idle_reports_infeasible() {
        let mut cluster = one_blade_cluster();
        let spec = ServerPowerSpec::reference();
        let mut cap = capping(1, 100.0);
        let utils = vec![vec![1.0; 40]];
        let mut saw_infeasible = false;
        for step in 0..30u64 {
            let outcome = cap.tick(step * 200, &mut cluster, &utils, &spec);
            if outcome.infeasible == Some(ServerId(0)) {
                saw_infeasible = true;
                break;
            }
        }
        assert!(saw_infeasible, "100 W cap sits below idle power");
    }

    #[test]
    fn alerts_only_happen_at_poll_instants() {
        let mut cluster = one_blade_cluster();
        let spec = ServerPowerSpec::reference();
        // Even the NUF-floored draw (239.5 W) crosses the 237.2 W alert
        // level, so every hot poll alerts; the cold swings between polls
        // are invisible.
        let mut cap = capping(1, 242.0);
        let hot = vec![vec![1.0; 40]];
        let cold = vec![vec![0.0; 40]];
        let mut alerts = 0;
        for step in 0..10u64 {
            let utils = if step % 2 == 0 { &hot } else { &cold };
            let outcome = cap.tick(step * 200, &mut cluster, utils, &spec);
            if outcome.alerted {
                alerts += 1;
            }
        }
        assert_eq!(alerts, 5);
    }

    #[test]
    fn blade_draw_matches_server_power() {
        use crate::power::{server_power, CoreState};
        let spec = ServerPowerSpec::reference();
        let utils: Vec<f64> = (0..40).map(|i| (i as f64 * 0.171) % 1.0).collect();
        let pstates: Vec<PState> = (0..40).map(|i| PState::new((i % 11) as u8)).collect();
        let cores: Vec<CoreState> = utils
            .iter()
            .zip(&pstates)
            .map(|(&utilization, &pstate)| CoreState {
                utilization,
                pstate,
            })
            .collect();
        assert_eq!(
            blade_draw(&spec, &utils, &pstates),
            server_power(&spec, &cores)
        );
    }
}
