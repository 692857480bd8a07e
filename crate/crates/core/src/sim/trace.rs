//! VM arrival-trace generation from empirical distributions.
//!
//! Deployments arrive as a Poisson process; each carries a batch of VMs
//! whose sizes, lifetimes, workload types, and P95 utilizations follow the
//! configured marginals. Every VM belongs to a subscription whose
//! user-facing propensity is drawn once per subscription, which is what
//! gives the history-frequency predictor something real to vote on.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criticality::WorkloadLabel;
use crate::predict::VmFeatures;
use crate::sim::signal::splitmix64;
use crate::{TimeMs, MS_PER_HOUR};

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("distribution `{name}` sums to {sum}, expected 1")]
    InvalidDistribution { name: &'static str, sum: f64 },
    #[error("trace file line {line}: {message}")]
    BadTraceRow { line: u64, message: String },
}

/// Weighted choice of an exact VM core count.
pub type SizeDist = Vec<(u32, f64)>;
/// Weighted choice of an inclusive integer range.
pub type RangeDist = Vec<(u32, u32, f64)>;
/// Weighted choice of an inclusive hour range; lo == hi is a point mass.
pub type HoursDist = Vec<(f64, f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSpec {
    /// Poisson arrival rate of deployment requests.
    pub deployments_per_hour: f64,
    /// (cores, probability) for VM sizes.
    pub vm_cores: SizeDist,
    /// (lo, hi, probability) for VMs per deployment.
    pub deployment_size: RangeDist,
    /// (lo, hi, probability) for lifetime hours.
    pub lifetime_hours: HoursDist,
    /// Marginal probability that a VM is user-facing.
    pub uf_fraction: f64,
    /// True P95 range for user-facing VMs (uniform).
    pub uf_p95_range: (f64, f64),
    /// True P95 range for non-user-facing VMs (uniform).
    pub nuf_p95_range: (f64, f64),
    pub memory_gb_per_core: f64,
    /// Fraction of non-user-facing VMs that are internal low-priority.
    pub low_priority_fraction: f64,
    pub subscription_count: u32,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            deployments_per_hour: 10.0,
            vm_cores: vec![
                (1, 0.33),
                (2, 0.27),
                (4, 0.21),
                (8, 0.10),
                (16, 0.05),
                (24, 0.03),
                (32, 0.01),
            ],
            deployment_size: vec![
                (1, 1, 0.39),
                (2, 2, 0.14),
                (3, 5, 0.16),
                (6, 10, 0.09),
                (11, 15, 0.08),
                (16, 25, 0.05),
                (26, 40, 0.09),
            ],
            lifetime_hours: vec![
                (1.0, 1.0, 0.52),
                (2.0, 2.0, 0.05),
                (3.0, 5.0, 0.10),
                (6.0, 10.0, 0.09),
                (11.0, 25.0, 0.07),
                (26.0, 720.0, 0.08),
                (721.0, 2160.0, 0.09),
            ],
            uf_fraction: 0.40,
            uf_p95_range: (0.55, 0.75),
            nuf_p95_range: (0.38, 0.50),
            memory_gb_per_core: 4.0,
            low_priority_fraction: 0.0,
            subscription_count: 200,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        fn check(name: &'static str, sum: f64) -> Result<(), TraceError> {
            if (sum - 1.0).abs() > 1e-6 {
                Err(TraceError::InvalidDistribution { name, sum })
            } else {
                Ok(())
            }
        }
        check("vm_cores", self.vm_cores.iter().map(|c| c.1).sum())?;
        check(
            "deployment_size",
            self.deployment_size.iter().map(|c| c.2).sum(),
        )?;
        check(
            "lifetime_hours",
            self.lifetime_hours.iter().map(|c| c.2).sum(),
        )?;
        Ok(())
    }

    /// Fraction of VMs whose lifetime reaches `hours`, under the configured
    /// distribution with uniform spread inside each range.
    pub fn p_lifetime_at_least(&self, hours: f64) -> f64 {
        self.lifetime_hours
            .iter()
            .map(|&(lo, hi, p)| {
                if hours <= lo {
                    p
                } else if hours > hi {
                    0.0
                } else {
                    p * (hi - hours) / (hi - lo).max(f64::MIN_POSITIVE)
                }
            })
            .sum()
    }
}

/// One VM's workload truth as generated; predictions come later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceVm {
    pub vm_id: u64,
    pub cores: u32,
    pub memory_gb: f64,
    pub lifetime_hours: f64,
    pub subscription_id: u64,
    pub low_priority: bool,
    pub true_label: WorkloadLabel,
    pub true_p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub deployment_id: u64,
    pub arrival_ms: TimeMs,
    pub vms: Vec<TraceVm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub deployments: Vec<Deployment>,
}

impl Trace {
    pub fn vm_count(&self) -> usize {
        self.deployments.iter().map(|d| d.vms.len()).sum()
    }
}

/// Per-subscription workload tendencies, derived deterministically from the
/// run seed so traces never need to carry them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubscriptionProfile {
    pub subscription_id: u64,
    /// Probability a VM of this subscription is user-facing.
    pub p_uf: f64,
    pub vm_count: u32,
}

impl SubscriptionProfile {
    pub fn derive(seed: u64, subscription_id: u64, uf_fraction: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
            seed ^ subscription_id.wrapping_mul(0xd134_2543_de82_ef95),
        ));
        // Beta with mean `uf_fraction`, alpha 2: most subscriptions lean
        // clearly one way, matching how real subscriptions specialize.
        let alpha = 2.0;
        let beta = alpha * (1.0 - uf_fraction) / uf_fraction.clamp(1e-6, 1.0 - 1e-6);
        let dist = rand_distr::Beta::new(alpha, beta).expect("valid beta");
        SubscriptionProfile {
            subscription_id,
            p_uf: dist.sample(&mut rng),
            vm_count: rng.gen_range(5..500),
        }
    }

    /// Deployment-time features reported for a VM of this subscription.
    pub fn features_for(&self, spec: &TraceSpec, cores: u32, memory_gb: f64) -> VmFeatures {
        // UF VMs of this corpus live in bucket 3, NUF in bucket 2.
        let buckets = [0.0, 1.0 - self.p_uf, self.p_uf, 0.0];
        let avg_p95 = self.p_uf * 0.65 + (1.0 - self.p_uf) * 0.44;
        VmFeatures {
            subscription_id: self.subscription_id,
            pct_uf_in_subscription: self.p_uf,
            pct_vms_alive_7d: spec.p_lifetime_at_least(168.0),
            subscription_vm_count: self.vm_count,
            pct_vms_per_util_bucket: buckets,
            avg_of_avg_util: 0.6 * avg_p95,
            avg_of_p95_util: avg_p95,
            vm_cores: cores,
            vm_memory_gb: memory_gb,
            vm_type: format!("standard_d{cores}"),
        }
    }
}

fn sample_weighted<T: Copy>(rng: &mut ChaCha8Rng, choices: &[(T, f64)]) -> T {
    let total: f64 = choices.iter().map(|c| c.1).sum();
    let mut x = rng.gen::<f64>() * total;
    for &(value, weight) in choices {
        x -= weight;
        if x <= 0.0 {
            return value;
        }
    }
    choices.last().unwrap().0
}

/// Generate a seeded, reproducible arrival trace covering `horizon_hours`.
pub fn generate_trace(
    spec: &TraceSpec,
    horizon_hours: f64,
    seed: u64,
) -> Result<Trace, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deployments = Vec::new();
    let mut t_hours = 0.0f64;
    let mut vm_id = 0u64;
    let mut deployment_id = 0u64;
    let exp = rand_distr::Exp::new(spec.deployments_per_hour).expect("positive rate");
    loop {
        t_hours += exp.sample(&mut rng);
        if t_hours >= horizon_hours {
            break;
        }
        let (lo, hi, _) = {
            let sized: Vec<((u32, u32), f64)> = spec
                .deployment_size
                .iter()
                .map(|&(lo, hi, p)| ((lo, hi), p))
                .collect();
            let (range, _) = (sample_weighted(&mut rng, &sized), 0.0);
            (range.0, range.1, 0.0)
        };
        let vm_count = rng.gen_range(lo..=hi);
        let subscription_id = rng.gen_range(0..spec.subscription_count) as u64;
        let profile = SubscriptionProfile::derive(seed, subscription_id, spec.uf_fraction);
        let mut vms = Vec::with_capacity(vm_count as usize);
        for _ in 0..vm_count {
            let cores = sample_weighted(&mut rng, &spec.vm_cores);
            let lifetimes: Vec<((u64, u64), f64)> = spec
                .lifetime_hours
                .iter()
                .map(|&(lo, hi, p)| ((lo.to_bits(), hi.to_bits()), p))
                .collect();
            let (lo_bits, hi_bits) = sample_weighted(&mut rng, &lifetimes);
            let (lt_lo, lt_hi) = (f64::from_bits(lo_bits), f64::from_bits(hi_bits));
            let lifetime_hours = if lt_lo == lt_hi {
                lt_lo
            } else {
                rng.gen_range(lt_lo..=lt_hi)
            };
            let user_facing = rng.gen::<f64>() < profile.p_uf;
            let (p_lo, p_hi) = if user_facing {
                spec.uf_p95_range
            } else {
                spec.nuf_p95_range
            };
            let true_p95 = rng.gen_range(p_lo..=p_hi);
            let low_priority = !user_facing && rng.gen::<f64>() < spec.low_priority_fraction;
            vms.push(TraceVm {
                vm_id,
                cores,
                memory_gb: cores as f64 * spec.memory_gb_per_core,
                lifetime_hours,
                subscription_id,
                low_priority,
                true_label: if user_facing {
                    WorkloadLabel::UserFacing
                } else {
                    WorkloadLabel::NonUserFacing
                },
                true_p95,
            });
            vm_id += 1;
        }
        deployments.push(Deployment {
            deployment_id,
            arrival_ms: (t_hours * MS_PER_HOUR as f64) as TimeMs,
            vms,
        });
        deployment_id += 1;
    }
    Ok(Trace { deployments })
}

const TRACE_HEADER: &[&str] = &[
    "deployment_id",
    "arrival_ms",
    "vm_id",
    "cores",
    "memory_gb",
    "lifetime_hours",
    "subscription_id",
    "low_priority",
    "true_label",
    "true_p95",
];

/// Write a trace as CSV, one row per VM.
pub fn write_trace_csv<W: std::io::Write>(trace: &Trace, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for d in &trace.deployments {
        for vm in &d.vms {
            w.write_record(&[
                d.deployment_id.to_string(),
                d.arrival_ms.to_string(),
                vm.vm_id.to_string(),
                vm.cores.to_string(),
                format!("{}", vm.memory_gb),
                format!("{}", vm.lifetime_hours),
                vm.subscription_id.to_string(),
                vm.low_priority.to_string(),
                match vm.true_label {
                    WorkloadLabel::UserFacing => "uf".to_string(),
                    WorkloadLabel::NonUserFacing => "nuf".to_string(),
                },
                format!("{}", vm.true_p95),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a trace written by [`write_trace_csv`]. Rows sharing a deployment id
/// must be contiguous.
pub fn read_trace_csv<R: std::io::Read>(reader: R) -> Result<Trace, TraceError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut deployments: Vec<Deployment> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| TraceError::BadTraceRow {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> &str { record.get(i).unwrap_or("") };
        let err = |message: String| TraceError::BadTraceRow { line, message };
        if record.len() != TRACE_HEADER.len() {
            return Err(err(format!("expected {} columns", TRACE_HEADER.len())));
        }
        let deployment_id: u64 = field(0).parse().map_err(|_| err("bad deployment_id".into()))?;
        let arrival_ms: u64 = field(1).parse().map_err(|_| err("bad arrival_ms".into()))?;
        let vm = TraceVm {
            vm_id: field(2).parse().map_err(|_| err("bad vm_id".into()))?,
            cores: field(3).parse().map_err(|_| err("bad cores".into()))?,
            memory_gb: field(4).parse().map_err(|_| err("bad memory_gb".into()))?,
            lifetime_hours: field(5)
                .parse()
                .map_err(|_| err("bad lifetime_hours".into()))?,
            subscription_id: field(6)
                .parse()
                .map_err(|_| err("bad subscription_id".into()))?,
            low_priority: field(7).parse().map_err(|_| err("bad low_priority".into()))?,
            true_label: match field(8) {
                "uf" => WorkloadLabel::UserFacing,
                "nuf" => WorkloadLabel::NonUserFacing,
                other => return Err(err(format!("bad true_label `{other}`"))),
            },
            true_p95: field(9).parse().map_err(|_| err("bad true_p95".into()))?,
        };
        match deployments.last_mut() {
            Some(d) if d.deployment_id == deployment_id => d.vms.push(vm),
            _ => deployments.push(Deployment {
                deployment_id,
                arrival_ms,
                vms: vec![vm],
            }),
        }
    }
    Ok(Trace { deployments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big_trace(seed: u64) -> Trace {
        let spec = TraceSpec {
            deployments_per_hour: 200.0,
            ..Default::default()
        };
        // ~100k VMs.
        generate_trace(&spec, 72.0, seed).unwrap()
    }

    #[test]
    fn vm_size_marginal_matches_spec() {
        let trace = big_trace(1);
        let n = trace.vm_count() as f64;
        assert!(n > 50_000.0, "need a large sample, got {n}");
        let one_core = trace
            .deployments
            .iter()
            .flat_map(|d| &d.vms)
            .filter(|v| v.cores == 1)
            .count() as f64;
        assert!((one_core / n - 0.33).abs() < 0.01, "{}", one_core / n);
    }

    #[test]
    fn lifetime_marginal_matches_spec() {
        let trace = big_trace(2);
        let n = trace.vm_count() as f64;
        let one_hour = trace
            .deployments
            .iter()
            .flat_map(|d| &d.vms)
            .filter(|v| v.lifetime_hours == 1.0)
            .count() as f64;
        assert!((one_hour / n - 0.52).abs() < 0.01, "{}", one_hour / n);
    }

    #[test]
    fn uf_marginal_matches_spec() {
        let trace = big_trace(3);
        let n = trace.vm_count() as f64;
        let uf = trace
            .deployments
            .iter()
            .flat_map(|d| &d.vms)
            .filter(|v| v.true_label == WorkloadLabel::UserFacing)
            .count() as f64;
        assert!((uf / n - 0.40).abs() < 0.02, "{}", uf / n);
    }

    #[test]
    fn same_seed_reproduces_trace() {
        let spec = TraceSpec::default();
        let a = generate_trace(&spec, 100.0, 42).unwrap();
        let b = generate_trace(&spec, 100.0, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_trace(&spec, 100.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_distribution_is_rejected() {
        let spec = TraceSpec {
            vm_cores: vec![(1, 0.5), (2, 0.4)],
            ..Default::default()
        };
        match generate_trace(&spec, 10.0, 1) {
            Err(TraceError::InvalidDistribution { name, .. }) => assert_eq!(name, "vm_cores"),
            other => panic!("expected InvalidDistribution, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_preserves_trace() {
        let spec = TraceSpec::default();
        let trace = generate_trace(&spec, 200.0, 7).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let back = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn subscription_profiles_are_deterministic_with_target_mean() {
        let a = SubscriptionProfile::derive(9, 17, 0.4);
        let b = SubscriptionProfile::derive(9, 17, 0.4);
        assert_eq!(a, b);
        let mean: f64 = (0..2000)
            .map(|id| SubscriptionProfile::derive(9, id, 0.4).p_uf)
            .sum::<f64>()
            / 2000.0;
        assert!((mean - 0.4).abs() < 0.03, "mean p_uf = {mean}");
    }

    #[test]
    fn lifetime_tail_probability() {
        let spec = TraceSpec::default();
        // P(lifetime >= 168 h): part of the 26-720 band plus all of >720.
        let expected = 0.08 * (720.0 - 168.0) / (720.0 - 26.0) + 0.09;
        assert!((spec.p_lifetime_at_least(168.0) - expected).abs() < 1e-9);
    }
}
