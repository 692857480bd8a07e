//! Discrete-event simulation engine.
//!
//! Scheduling is event-driven: deployments arrive, VMs are placed or the
//! whole request fails atomically, departures free capacity, and balance
//! metrics integrate between events. Power enforcement, when enabled, runs
//! on a fixed tick matching the PSU poll interval; uncapped runs skip ticks
//! entirely and only sample chassis draws when a sampling section asks for
//! them.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::capping::{ChassisCapping, ChassisManagerConfig};
use crate::cluster::{ChassisId, ClusterState, ServerId, VmDescriptor, VmId};
use crate::config::RunConfig;
use crate::criticality::WorkloadLabel;
use crate::oversub::AllocationRecord;
use crate::power::ServerPowerSpec;
use crate::predict::{self, bucket_of, GroundTruth, PredictionProvider};
use crate::scheduler;
use crate::sim::metrics::{DeploymentRecord, DrawSample, MetricsCollector, RunOutput};
use crate::sim::signal::{splitmix64, utilization, SignalParams};
use crate::sim::trace::{generate_trace, Trace, TraceError};
use crate::{TimeMs, MS_PER_DAY, MS_PER_HOUR};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Predict(#[from] crate::predict::PredictError),
    #[error("chassis {chassis} budget {budget_w} W is below the physical floor {floor_w} W ({blades} blades at idle)")]
    InfeasibleBudget {
        chassis: u32,
        budget_w: f64,
        floor_w: f64,
        blades: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Departure(VmId),
    Arrival(u32),
    CapTick,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    t: TimeMs,
    /// Departures before arrivals before ticks before samples at equal times.
    rank: u8,
    seq: u64,
    kind: EventKind,
}

pub struct Simulation {
    config: RunConfig,
    cluster: ClusterState,
    spec: ServerPowerSpec,
    provider: PredictionProvider,
    trace: Trace,
    signals: HashMap<u64, SignalParams>,
    capping: Vec<ChassisCapping>,
    metrics: MetricsCollector,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    horizon: TimeMs,
    draw_samples: Vec<DrawSample>,
    power_ticks: Vec<DrawSample>,
    deployment_log: Vec<DeploymentRecord>,
    allocation_log: Vec<AllocationRecord>,
}

impl Simulation {
    /// Build a simulation, generating the arrival trace from the config.
    pub fn new(config: &RunConfig) -> Result<Self, SimError> {
        let horizon_hours = config.horizon_days * 24.0;
        let trace = generate_trace(&config.trace, horizon_hours, config.seed)?;
        Self::with_trace(config, trace)
    }

    /// Build a simulation over a pre-generated trace.
    pub fn with_trace(config: &RunConfig, trace: Trace) -> Result<Self, SimError> {
        let cluster = ClusterState::new(config.topology);
        let spec = config.power_spec();
        if let Some(capping) = &config.capping {
            let floor = spec.idle_w * config.topology.blades_per_chassis as f64;
            if capping.chassis_budget_w < floor {
                return Err(SimError::InfeasibleBudget {
                    chassis: 0,
                    budget_w: capping.chassis_budget_w,
                    floor_w: floor,
                    blades: config.topology.blades_per_chassis,
                });
            }
        }
        let provider = PredictionProvider::from_name(
            &config.predictor.provider,
            config.predictor.noisy.clone(),
            ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x70726f76)),
        )?;
        let metrics = MetricsCollector::new(&cluster);
        let capping = match &config.capping {
            Some(cap) => (0..config.topology.chassis_count())
                .map(|c| {
                    ChassisCapping::new(
                        ChassisId(c),
                        cluster.servers_in_chassis(ChassisId(c)).collect(),
                        ChassisManagerConfig {
                            poll_interval_ms: cap.poll_interval_ms,
                            alert_threshold_fraction: cap.alert_threshold_fraction,
                            chassis_budget_w: cap.chassis_budget_w,
                        },
                        cap.controller,
                    )
                })
                .collect(),
            None => Vec::new(),
        };

        let horizon = (config.horizon_days * MS_PER_DAY as f64) as TimeMs;
        let mut sim = Self {
            config: config.clone(),
            cluster,
            spec,
            provider,
            trace,
            signals: HashMap::new(),
            capping,
            metrics,
            heap: BinaryHeap::new(),
            seq: 0,
            horizon,
            draw_samples: Vec::new(),
            power_ticks: Vec::new(),
            deployment_log: Vec::new(),
            allocation_log: Vec::new(),
        };
        for (idx, d) in sim.trace.deployments.iter().enumerate() {
            if d.arrival_ms < horizon {
                let event = Event {
                    t: d.arrival_ms,
                    rank: 1,
                    seq: sim.seq,
                    kind: EventKind::Arrival(idx as u32),
                };
                sim.seq += 1;
                sim.heap.push(Reverse(event));
            }
        }
        if sim.config.capping.is_some() {
            sim.push(sim.config.capping.as_ref().unwrap().poll_interval_ms, 2, EventKind::CapTick);
        }
        if let Some(sampling) = &sim.config.sampling {
            sim.push(sampling.draw_interval_s * 1000, 3, EventKind::Sample);
        }
        Ok(sim)
    }

    fn push(&mut self, t: TimeMs, rank: u8, kind: EventKind) {
        let event = Event {
            t,
            rank,
            seq: self.seq,
            kind,
        };
        self.seq += 1;
        self.heap.push(Reverse(event));
    }

    /// Run to the horizon and collect outputs.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while let Some(Reverse(event)) = self.heap.pop() {
            if event.t >= self.horizon {
                break;
            }
            self.metrics.advance(event.t, &self.cluster);
            match event.kind {
                EventKind::Arrival(idx) => self.handle_arrival(event.t, idx as usize),
                EventKind::Departure(vm_id) => self.handle_departure(vm_id),
                EventKind::CapTick => self.handle_cap_tick(event.t),
                EventKind::Sample => self.handle_sample(event.t),
            }
        }
        let end = self.horizon;
        for cap in &mut self.capping {
            cap.finish(end);
        }
        let capping_events: Vec<_> = self
            .capping
            .iter()
            .flat_map(|c| c.events.iter().cloned())
            .collect();
        let metrics = self.metrics.finalize(
            end,
            &self.cluster,
            &capping_events,
            self.config.seed,
            self.config.hash(),
        );
        Ok(RunOutput {
            metrics,
            capping_events,
            draw_samples: self.draw_samples,
            power_ticks: self.power_ticks,
            deployment_log: self.deployment_log,
            allocation_log: self.allocation_log,
        })
    }

    fn handle_arrival(&mut self, t: TimeMs, idx: usize) {
        let deployment = self.trace.deployments[idx].clone();
        let mut placed: Vec<(VmId, ServerId, u32)> = Vec::with_capacity(deployment.vms.len());
        let mut ok = true;
        for vm in &deployment.vms {
            let profile = crate::sim::trace::SubscriptionProfile::derive(
                self.config.seed,
                vm.subscription_id,
                self.config.trace.uf_fraction,
            );
            let features = profile.features_for(&self.config.trace, vm.cores, vm.memory_gb);
            let truth = GroundTruth {
                label: vm.true_label,
                p95_bucket: bucket_of(vm.true_p95),
            };
            let prediction = self.provider.predict(&features, truth);
            let effective = predict::resolve(&prediction, self.config.predictor.min_confidence);
            let descriptor = VmDescriptor {
                id: VmId(vm.vm_id),
                cores: vm.cores,
                memory_gb: vm.memory_gb,
                lifetime_hours: vm.lifetime_hours,
                subscription_id: vm.subscription_id,
                low_priority: vm.low_priority,
                true_label: vm.true_label,
                true_p95: vm.true_p95,
                effective,
            };
            match scheduler::choose(&descriptor, &self.cluster, &self.config.scheduler) {
                Ok(server) => {
                    self.cluster
                        .commit(&descriptor, server)
                        .expect("chosen server fits");
                    self.metrics.on_vm_placed(server, vm.cores);
                    placed.push((VmId(vm.vm_id), server, vm.cores));
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            for vm in &deployment.vms {
                let seed = splitmix64(self.config.seed ^ vm.vm_id.wrapping_mul(0x5851_f42d_4c95_7f2d));
                let params = self.config.signal.params_for(
                    vm.true_label == WorkloadLabel::UserFacing,
                    vm.true_p95,
                    seed,
                );
                self.signals.insert(vm.vm_id, params);
                self.allocation_log.push(AllocationRecord {
                    label: vm.true_label,
                    cores: vm.cores,
                    p95_util: vm.true_p95,
                    lifetime_hours: vm.lifetime_hours,
                });
                let departure = t + (vm.lifetime_hours * MS_PER_HOUR as f64) as TimeMs;
                if departure < self.horizon {
                    self.push(departure, 0, EventKind::Departure(VmId(vm.vm_id)));
                }
            }
        } else {
            // Deployments succeed or fail atomically.
            for (vm_id, server, cores) in placed {
                self.cluster.remove(vm_id).expect("placed above");
                self.metrics.on_vm_removed(server, cores, true);
            }
        }
        self.deployment_log.push(DeploymentRecord {
            deployment_id: deployment.deployment_id,
            arrival_ms: t,
            vm_count: deployment.vms.len(),
            accepted: ok,
        });
        self.metrics.on_deployment(ok);
    }

    fn handle_departure(&mut self, vm_id: VmId) {
        if let Ok(placed) = self.cluster.remove(vm_id) {
            self.metrics
                .on_vm_removed(placed.server, placed.descriptor.cores, false);
            self.signals.remove(&vm_id.0);
        }
    }

    fn blade_utils(&self, server: ServerId, t: TimeMs) -> Vec<f64> {
        let blade = self.cluster.blade(server);
        let reserved = blade.reserved_cores() as usize;
        (0..blade.core_count())
            .map(|core| {
                if core < reserved {
                    self.cluster.topology.reserved_core_util
                } else {
                    match blade.vm_on_core(core) {
                        Some(vm) => utilization(&self.signals[&vm.0], t),
                        None => 0.0,
                    }
                }
            })
            .collect()
    }

    fn handle_cap_tick(&mut self, t: TimeMs) {
        let interval = self.config.capping.as_ref().unwrap().poll_interval_ms;
        let record_ticks = self.config.output.power_ticks_csv.is_some();
        for c in 0..self.capping.len() {
            let chassis = ChassisId(c as u32);
            let utils: Vec<Vec<f64>> = self
                .cluster
                .servers_in_chassis(chassis)
                .map(|s| self.blade_utils(s, t))
                .collect();
            let mut cap = std::mem::replace(
                &mut self.capping[c],
                ChassisCapping::new(
                    chassis,
                    Vec::new(),
                    ChassisManagerConfig::with_budget(1.0),
                    Default::default(),
                ),
            );
            let outcome = cap.tick(t, &mut self.cluster, &utils, &self.spec);
            self.capping[c] = cap;
            if outcome.infeasible.is_some() {
                self.metrics.infeasible_budget_ticks += 1;
            }
            if record_ticks {
                self.power_ticks.push(DrawSample {
                    chassis: c as u32,
                    t_ms: t,
                    watts: outcome.chassis_draw_w,
                });
            }
        }
        let next = t + interval;
        if next < self.horizon {
            self.push(next, 2, EventKind::CapTick);
        }
    }

    fn handle_sample(&mut self, t: TimeMs) {
        let interval = self.config.sampling.as_ref().unwrap().draw_interval_s * 1000;
        for c in 0..self.cluster.chassis_count() {
            let chassis = ChassisId(c);
            let watts: f64 = self
                .cluster
                .servers_in_chassis(chassis)
                .map(|s| {
                    let utils = self.blade_utils(s, t);
                    crate::capping::blade_draw(&self.spec, &utils, &self.cluster.blade(s).pstates)
                })
                .sum();
            self.draw_samples.push(DrawSample {
                chassis: c,
                t_ms: t,
                watts,
            });
        }
        let next = t + interval;
        if next < self.horizon {
            self.push(next, 3, EventKind::Sample);
        }
    }
}

/// Hand-placed single-chassis scenario driven at the poll cadence; used for
/// controlled capping experiments where the scheduler would get in the way.
pub struct CappedChassisScenario {
    pub cluster: ClusterState,
    pub capping: ChassisCapping,
    pub spec: ServerPowerSpec,
    signals: HashMap<u64, SignalParams>,
    reserved_util: f64,
}

impl CappedChassisScenario {
    pub fn new(
        cluster: ClusterState,
        manager: ChassisManagerConfig,
        controller: crate::capping::ControllerConfig,
        spec: ServerPowerSpec,
    ) -> Self {
        assert_eq!(cluster.chassis_count(), 1, "scenario is single-chassis");
        let servers = cluster.servers_in_chassis(ChassisId(0)).collect();
        let reserved_util = cluster.topology.reserved_core_util;
        Self {
            cluster,
            capping: ChassisCapping::new(ChassisId(0), servers, manager, controller),
            spec,
            signals: HashMap::new(),
            reserved_util,
        }
    }

    /// Place a VM on an explicit blade with an explicit signal.
    pub fn place(&mut self, vm: &VmDescriptor, server: ServerId, signal: SignalParams) {
        self.cluster.commit(vm, server).expect("scenario placement fits");
        self.signals.insert(vm.id.0, signal);
    }

    /// Advance tick by tick, reporting each tick to the observer.
    pub fn run<F>(&mut self, duration_ms: TimeMs, mut observe: F)
    where
        F: FnMut(TimeMs, &ClusterState, &crate::capping::TickOutcome),
    {
        let interval = self.capping.manager.poll_interval_ms;
        let mut t = interval;
        while t <= duration_ms {
            let utils: Vec<Vec<f64>> = self
                .cluster
                .servers_in_chassis(ChassisId(0))
                .map(|s| {
                    let blade = self.cluster.blade(s);
                    let reserved = blade.reserved_cores() as usize;
                    (0..blade.core_count())
                        .map(|core| {
                            if core < reserved {
                                self.reserved_util
                            } else {
                                match blade.vm_on_core(core) {
                                    Some(vm) => utilization(&self.signals[&vm.0], t),
                                    None => 0.0,
                                }
                            }
                        })
                        .collect()
                })
                .collect();
            let outcome = self.capping.tick(t, &mut self.cluster, &utils, &self.spec);
            observe(t, &self.cluster, &outcome);
            t += interval;
        }
        self.capping.finish(t);
    }
}
