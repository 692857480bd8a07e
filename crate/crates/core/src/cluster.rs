//! Rack/chassis/blade/core topology and load accounting.
//!
//! The scheduler sees predicted load (effective attributes accumulated in
//! the per-server and per-chassis counters); the power path sees true
//! attributes through the per-core VM assignments. Keeping the two side by
//! side is what lets a run expose the cost of mispredictions.
//!
//! Peak-core-equivalent counters are kept in integer eighths of a core
//! (every effective P95 is a multiple of 1/8), so placing and removing a VM
//! restores the accounting exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::criticality::WorkloadLabel;
use crate::power::PState;
use crate::predict::EffectiveAttributes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServerId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChassisId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VmId(pub u64);

/// Throttling tiers, least protected first. The in-band controller works
/// through tiers in order and never touches the last one; the full-server
/// fallback ignores tiers entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThrottleTier {
    /// Low-priority / internal non-production VMs; throttled first.
    LowPriority,
    /// Production non-user-facing VMs; throttled as a last resort.
    ProductionNuf,
    /// User-facing VMs and the host I/O partition; never throttled in-band.
    Protected,
}

pub const TIER_ORDER: [ThrottleTier; 3] = [
    ThrottleTier::LowPriority,
    ThrottleTier::ProductionNuf,
    ThrottleTier::Protected,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub racks: u32,
    pub chassis_per_rack: u32,
    pub blades_per_chassis: u32,
    pub cores_per_blade: u32,
    pub memory_gb_per_blade: f64,
    /// Cores per blade reserved for the host I/O partition; always in the
    /// protected tier and never schedulable.
    pub reserved_cores_per_blade: u32,
    /// Constant utilization modeled for the reserved cores.
    pub reserved_core_util: f64,
}

impl Topology {
    /// The reference 20-rack cluster: 20 x 3 chassis x 12 blades of 40 cores.
    pub fn reference() -> Self {
        Self {
            racks: 20,
            chassis_per_rack: 3,
            blades_per_chassis: 12,
            cores_per_blade: 40,
            memory_gb_per_blade: 160.0,
            reserved_cores_per_blade: 2,
            reserved_core_util: 0.1,
        }
    }

    pub fn chassis_count(&self) -> u32 {
        self.racks * self.chassis_per_rack
    }

    pub fn blade_count(&self) -> u32 {
        self.chassis_count() * self.blades_per_chassis
    }

    pub fn cores_per_chassis(&self) -> u32 {
        self.blades_per_chassis * self.cores_per_blade
    }
}

/// A VM as the scheduler sees it: requested resources plus true and
/// predicted workload attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmDescriptor {
    pub id: VmId,
    pub cores: u32,
    pub memory_gb: f64,
    pub lifetime_hours: f64,
    pub subscription_id: u64,
    /// Internal non-production VMs volunteer for first-tier throttling.
    pub low_priority: bool,
    pub true_label: WorkloadLabel,
    pub true_p95: f64,
    /// Predicted attributes after the confidence fallback; what placement
    /// and the capping controller are allowed to know.
    pub effective: EffectiveAttributes,
}

impl VmDescriptor {
    /// Throttle tier, assigned from the predicted label since the platform
    /// never sees ground truth.
    pub fn tier(&self) -> ThrottleTier {
        match (self.effective.label, self.low_priority) {
            (WorkloadLabel::UserFacing, _) => ThrottleTier::Protected,
            (WorkloadLabel::NonUserFacing, true) => ThrottleTier::LowPriority,
            (WorkloadLabel::NonUserFacing, false) => ThrottleTier::ProductionNuf,
        }
    }

    fn memory_mb(&self) -> u64 {
        (self.memory_gb * 1024.0).round() as u64
    }

    fn peak_eighths(&self) -> u64 {
        let eighths = self.effective.p95_util * 8.0;
        let rounded = eighths.round();
        debug_assert!(
            (eighths - rounded).abs() < 1e-9,
            "effective p95 {} is not a bucket midpoint",
            self.effective.p95_util
        );
        rounded as u64 * self.cores as u64
    }
}

/// Predicted-load accounting for one blade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerLoad {
    pub total_cores: u32,
    pub free_cores: u32,
    pub free_memory_mb: u64,
    uf_peak_eighths: u64,
    nuf_peak_eighths: u64,
}

impl ServerLoad {
    /// Sum of predicted P95 x cores over user-facing VMs, in cores.
    pub fn uf_core_equivalents(&self) -> f64 {
        self.uf_peak_eighths as f64 / 8.0
    }

    /// Sum of predicted P95 x cores over non-user-facing VMs, in cores.
    pub fn nuf_core_equivalents(&self) -> f64 {
        self.nuf_peak_eighths as f64 / 8.0
    }

    pub fn free_memory_gb(&self) -> f64 {
        self.free_memory_mb as f64 / 1024.0
    }

    pub fn is_empty(&self) -> bool {
        self.uf_peak_eighths == 0 && self.nuf_peak_eighths == 0
    }
}

/// Predicted-load accounting for one chassis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChassisLoad {
    pub total_cores: u32,
    peak_eighths: u64,
}

impl ChassisLoad {
    /// Conservative chassis peak: sum of predicted P95 x cores, in cores.
    pub fn peak_core_equivalents(&self) -> f64 {
        self.peak_eighths as f64 / 8.0
    }
}

/// One blade's runtime state: VM core assignments and per-core p-states.
#[derive(Debug, Clone)]
pub struct Blade {
    pub load: ServerLoad,
    /// Physical core -> owning VM. Reserved cores stay `None`.
    core_vm: Vec<Option<VmId>>,
    /// Per-core throttle tier, kept in sync with assignments.
    tiers: Vec<ThrottleTier>,
    /// Per-core p-state, mutated by the capping controllers.
    pub pstates: Vec<PState>,
    reserved: u32,
}

impl Blade {
    fn new(topology: &Topology) -> Self {
        let n = topology.cores_per_blade as usize;
        let reserved = topology.reserved_cores_per_blade;
        let mut tiers = vec![ThrottleTier::Protected; n];
        for tier in tiers.iter_mut().skip(reserved as usize) {
            *tier = ThrottleTier::LowPriority;
        }
        Self {
            load: ServerLoad {
                total_cores: topology.cores_per_blade,
                free_cores: topology.cores_per_blade - reserved,
                free_memory_mb: (topology.memory_gb_per_blade * 1024.0).round() as u64,
                uf_peak_eighths: 0,
                nuf_peak_eighths: 0,
            },
            core_vm: vec![None; n],
            tiers,
            pstates: vec![PState::MAX; n],
            reserved,
        }
    }

    pub fn core_count(&self) -> usize {
        self.core_vm.len()
    }

    pub fn reserved_cores(&self) -> u32 {
        self.reserved
    }

    pub fn vm_on_core(&self, core: usize) -> Option<VmId> {
        self.core_vm[core]
    }

    /// Tier of a physical core. Unassigned non-reserved cores report the
    /// least protected tier; they draw no dynamic power either way.
    pub fn core_tier(&self, core: usize) -> ThrottleTier {
        if (core as u32) < self.reserved {
            ThrottleTier::Protected
        } else if self.core_vm[core].is_some() {
            self.tiers[core]
        } else {
            ThrottleTier::LowPriority
        }
    }

    /// Indices of cores assigned to VMs of the given tier.
    pub fn cores_in_tier(&self, tier: ThrottleTier) -> Vec<usize> {
        (0..self.core_vm.len())
            .filter(|&c| self.core_vm[c].is_some() && self.tiers[c] == tier)
            .collect()
    }

    pub fn all_at_max(&self) -> bool {
        self.pstates.iter().all(|&p| p == PState::MAX)
    }
}

/// A committed VM: descriptor plus where it landed.
#[derive(Debug, Clone)]
pub struct PlacedVm {
    pub descriptor: VmDescriptor,
    pub server: ServerId,
    pub cores: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PlacementError {
    #[error("server {0:?} lacks free cores or memory")]
    InsufficientResources(ServerId),
    #[error("vm {0:?} is already placed")]
    AlreadyPlaced(VmId),
    #[error("vm {0:?} is not placed")]
    NotPlaced(VmId),
}

/// Full cluster: blades, per-chassis accounting, and the VM registry.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub topology: Topology,
    blades: Vec<Blade>,
    chassis: Vec<ChassisLoad>,
    placed: BTreeMap<VmId, PlacedVm>,
}

impl ClusterState {
    pub fn new(topology: Topology) -> Self {
        let blades = (0..topology.blade_count())
            .map(|_| Blade::new(&topology))
            .collect();
        let chassis = (0..topology.chassis_count())
            .map(|_| ChassisLoad {
                total_cores: topology.cores_per_chassis(),
                peak_eighths: 0,
            })
            .collect();
        Self {
            topology,
            blades,
            chassis,
            placed: BTreeMap::new(),
        }
    }

    pub fn server_count(&self) -> u32 {
        self.blades.len() as u32
    }

    pub fn chassis_count(&self) -> u32 {
        self.chassis.len() as u32
    }

    pub fn chassis_of(&self, server: ServerId) -> ChassisId {
        ChassisId(server.0 / self.topology.blades_per_chassis)
    }

    pub fn servers_in_chassis(&self, chassis: ChassisId) -> impl Iterator<Item = ServerId> {
        let per = self.topology.blades_per_chassis;
        (chassis.0 * per..(chassis.0 + 1) * per).map(ServerId)
    }

    pub fn blade(&self, server: ServerId) -> &Blade {
        &self.blades[server.0 as usize]
    }

    pub fn blade_mut(&mut self, server: ServerId) -> &mut Blade {
        &mut self.blades[server.0 as usize]
    }

    pub fn server_load(&self, server: ServerId) -> &ServerLoad {
        &self.blades[server.0 as usize].load
    }

    pub fn chassis_load(&self, chassis: ChassisId) -> &ChassisLoad {
        &self.chassis[chassis.0 as usize]
    }

    pub fn vm(&self, id: VmId) -> Option<&PlacedVm> {
        self.placed.get(&id)
    }

    pub fn vms(&self) -> impl Iterator<Item = &PlacedVm> {
        self.placed.values()
    }

    pub fn vm_count(&self) -> usize {
        self.placed.len()
    }

    /// VMs on one blade, ordered by id.
    pub fn vms_on(&self, server: ServerId) -> Vec<&PlacedVm> {
        // Blades hold few VMs; scanning the registry would be wasteful, so
        // collect from the core map instead.
        let blade = self.blade(server);
        let mut ids: Vec<VmId> = blade.core_vm.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids.iter().map(|id| &self.placed[id]).collect()
    }

    pub fn fits(&self, vm: &VmDescriptor, server: ServerId) -> bool {
        let load = self.server_load(server);
        load.free_cores >= vm.cores && load.free_memory_mb >= vm.memory_mb()
    }

    /// Commit a VM to a server: assign physical cores (lowest free indices)
    /// and account its predicted attributes.
    pub fn commit(&mut self, vm: &VmDescriptor, server: ServerId) -> Result<(), PlacementError> {
        if self.placed.contains_key(&vm.id) {
            return Err(PlacementError::AlreadyPlaced(vm.id));
        }
        if !self.fits(vm, server) {
            return Err(PlacementError::InsufficientResources(server));
        }
        let tier = vm.tier();
        let blade = &mut self.blades[server.0 as usize];
        let mut cores = Vec::with_capacity(vm.cores as usize);
        for core in blade.reserved as usize..blade.core_vm.len() {
            if cores.len() == vm.cores as usize {
                break;
            }
            if blade.core_vm[core].is_none() {
                blade.core_vm[core] = Some(vm.id);
                blade.tiers[core] = tier;
                cores.push(core as u32);
            }
        }
        debug_assert_eq!(cores.len(), vm.cores as usize);
        blade.load.free_cores -= vm.cores;
        blade.load.free_memory_mb -= vm.memory_mb();
        let eighths = vm.peak_eighths();
        match vm.effective.label {
            WorkloadLabel::UserFacing => blade.load.uf_peak_eighths += eighths,
            WorkloadLabel::NonUserFacing => blade.load.nuf_peak_eighths += eighths,
        }
        let chassis = self.chassis_of(server);
        self.chassis[chassis.0 as usize].peak_eighths += eighths;
        self.placed.insert(
            vm.id,
            PlacedVm {
                descriptor: vm.clone(),
                server,
                cores,
            },
        );
        Ok(())
    }

    /// Remove a VM, releasing cores and reversing every accumulator update
    /// its commit made.
    pub fn remove(&mut self, id: VmId) -> Result<PlacedVm, PlacementError> {
        let placed = self.placed.remove(&id).ok_or(PlacementError::NotPlaced(id))?;
        let vm = &placed.descriptor;
        let blade = &mut self.blades[placed.server.0 as usize];
        for &core in &placed.cores {
            blade.core_vm[core as usize] = None;
            blade.tiers[core as usize] = ThrottleTier::LowPriority;
            blade.pstates[core as usize] = PState::MAX;
        }
        blade.load.free_cores += vm.cores;
        blade.load.free_memory_mb += vm.memory_mb();
        let eighths = vm.peak_eighths();
        match vm.effective.label {
            WorkloadLabel::UserFacing => blade.load.uf_peak_eighths -= eighths,
            WorkloadLabel::NonUserFacing => blade.load.nuf_peak_eighths -= eighths,
        }
        let chassis = self.chassis_of(placed.server);
        self.chassis[chassis.0 as usize].peak_eighths -= eighths;
        Ok(placed)
    }

    /// Every VM-assigned core count plus free and reserved cores must equal
    /// the blade total; used by tests and debug assertions.
    pub fn cores_conserved(&self) -> bool {
        self.blades.iter().all(|b| {
            let assigned = b.core_vm.iter().filter(|c| c.is_some()).count() as u32;
            assigned + b.load.free_cores + b.reserved == b.load.total_cores
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_vm(id: u64, cores: u32, label: WorkloadLabel, p95: f64) -> VmDescriptor {
        VmDescriptor {
            id: VmId(id),
            cores,
            memory_gb: cores as f64 * 4.0,
            lifetime_hours: 10.0,
            subscription_id: 1,
            low_priority: false,
            true_label: label,
            true_p95: p95,
            effective: EffectiveAttributes {
                label,
                p95_util: p95,
            },
        }
    }

    fn small_topology() -> Topology {
        Topology {
            racks: 1,
            chassis_per_rack: 2,
            blades_per_chassis: 3,
            cores_per_blade: 40,
            memory_gb_per_blade: 160.0,
            reserved_cores_per_blade: 2,
            reserved_core_util: 0.1,
        }
    }

    #[test]
    fn commit_and_remove_restore_loads_exactly() {
        let mut cluster = ClusterState::new(small_topology());
        let before_server = *cluster.server_load(ServerId(1));
        let before_chassis = *cluster.chassis_load(ChassisId(0));
        let vm = test_vm(1, 4, WorkloadLabel::UserFacing, 0.625);
        cluster.commit(&vm, ServerId(1)).unwrap();
        assert_eq!(cluster.server_load(ServerId(1)).free_cores, 34);
        assert_eq!(
            cluster.server_load(ServerId(1)).uf_core_equivalents(),
            2.5
        );
        assert_eq!(
            cluster.chassis_load(ChassisId(0)).peak_core_equivalents(),
            2.5
        );
        assert!(cluster.cores_conserved());
        cluster.remove(VmId(1)).unwrap();
        assert_eq!(*cluster.server_load(ServerId(1)), before_server);
        assert_eq!(*cluster.chassis_load(ChassisId(0)), before_chassis);
        assert!(cluster.cores_conserved());
    }

    #[test]
    fn reserved_cores_are_not_schedulable() {
        let mut cluster = ClusterState::new(small_topology());
        let vm = test_vm(1, 38, WorkloadLabel::NonUserFacing, 0.375);
        cluster.commit(&vm, ServerId(0)).unwrap();
        assert_eq!(cluster.server_load(ServerId(0)).free_cores, 0);
        let overflow = test_vm(2, 1, WorkloadLabel::NonUserFacing, 0.375);
        assert_eq!(
            cluster.commit(&overflow, ServerId(0)),
            Err(PlacementError::InsufficientResources(ServerId(0)))
        );
        // Cores 0 and 1 stay reserved for the host partition.
        assert_eq!(cluster.blade(ServerId(0)).vm_on_core(0), None);
        assert_eq!(cluster.blade(ServerId(0)).vm_on_core(1), None);
        assert_eq!(
            cluster.blade(ServerId(0)).core_tier(0),
            ThrottleTier::Protected
        );
    }

    #[test]
    fn tier_follows_predicted_label_not_truth() {
        let mut vm = test_vm(1, 2, WorkloadLabel::UserFacing, 0.625);
        vm.effective.label = WorkloadLabel::NonUserFacing;
        assert_eq!(vm.tier(), ThrottleTier::ProductionNuf);
        vm.low_priority = true;
        assert_eq!(vm.tier(), ThrottleTier::LowPriority);
        vm.effective.label = WorkloadLabel::UserFacing;
        assert_eq!(vm.tier(), ThrottleTier::Protected);
    }

    #[test]
    fn chassis_mapping_is_contiguous() {
        let cluster = ClusterState::new(small_topology());
        assert_eq!(cluster.chassis_of(ServerId(0)), ChassisId(0));
        assert_eq!(cluster.chassis_of(ServerId(2)), ChassisId(0));
        assert_eq!(cluster.chassis_of(ServerId(3)), ChassisId(1));
        let servers: Vec<ServerId> = cluster.servers_in_chassis(ChassisId(1)).collect();
        assert_eq!(servers, vec![ServerId(3), ServerId(4), ServerId(5)]);
    }
}
