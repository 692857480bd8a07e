//! Synthetic per-VM CPU-utilization signals.
//!
//! User-facing VMs follow a diurnal curve that peaks at the VM's P95 during
//! the common busy hour (with per-VM phase jitter); non-user-facing VMs hold
//! a stationary level whose 95th percentile equals their P95. Noise is
//! piecewise-constant over short blocks and derived by hashing
//! `(vm seed, block index)`, so a signal can be evaluated at any instant,
//! in any order, and always replays identically.

use serde::{Deserialize, Serialize};

use crate::{TimeMs, MS_PER_DAY, MS_PER_HOUR};

/// Shape and noise parameters for one VM's signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalParams {
    pub kind: SignalKind,
    pub noise_sigma: f64,
    pub noise_block_ms: TimeMs,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalKind {
    /// Daily cycle peaking at `peak` utilization; bottoms out at
    /// `night_floor * peak`.
    Diurnal {
        peak: f64,
        night_floor: f64,
        /// Clock time of the daily peak for this VM.
        acrophase_ms: TimeMs,
    },
    /// Stationary level; with gaussian noise its P95 is `level + 1.645 sigma`.
    Steady { level: f64 },
}

/// Cluster-wide signal-shape knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub uf_noise_sigma: f64,
    pub nuf_noise_sigma: f64,
    /// Night utilization as a fraction of the daily peak.
    pub night_floor: f64,
    /// Hour of day (0-24) when user-facing load peaks.
    pub peak_hour: f64,
    /// Uniform per-VM jitter applied to the peak hour, in hours.
    pub phase_jitter_hours: f64,
    /// Noise changes value once per block.
    pub noise_block_s: u64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            uf_noise_sigma: 0.03,
            nuf_noise_sigma: 0.03,
            night_floor: 0.3,
            peak_hour: 14.0,
            phase_jitter_hours: 2.5,
            noise_block_s: 300,
        }
    }
}

impl SignalConfig {
    /// Build a VM's signal parameters from its workload truth.
    pub fn params_for(
        &self,
        user_facing: bool,
        true_p95: f64,
        vm_seed: u64,
    ) -> SignalParams {
        if user_facing {
            let jitter_span = (2.0 * self.phase_jitter_hours * MS_PER_HOUR as f64) as u64;
            let jitter = if jitter_span == 0 {
                0
            } else {
                splitmix64(vm_seed ^ 0x9e37_79b9) % jitter_span
            };
            let base = (self.peak_hour * MS_PER_HOUR as f64) as i64
                - (self.phase_jitter_hours * MS_PER_HOUR as f64) as i64;
            let acrophase_ms =
                (base + jitter as i64).rem_euclid(MS_PER_DAY as i64) as TimeMs;
            SignalParams {
                kind: SignalKind::Diurnal {
                    peak: true_p95,
                    night_floor: self.night_floor,
                    acrophase_ms,
                },
                noise_sigma: self.uf_noise_sigma,
                noise_block_ms: self.noise_block_s * 1000,
                seed: vm_seed,
            }
        } else {
            SignalParams {
                kind: SignalKind::Steady {
                    level: (true_p95 - 1.645 * self.nuf_noise_sigma).max(0.0),
                },
                noise_sigma: self.nuf_noise_sigma,
                noise_block_ms: self.noise_block_s * 1000,
                seed: vm_seed,
            }
        }
    }
}

/// Utilization of a VM at an instant; always in [0, 1].
pub fn utilization(params: &SignalParams, t: TimeMs) -> f64 {
    let base = match params.kind {
        SignalKind::Diurnal {
            peak,
            night_floor,
            acrophase_ms,
        } => {
            let day_pos = (t + MS_PER_DAY - acrophase_ms % MS_PER_DAY) % MS_PER_DAY;
            let angle = 2.0 * std::f64::consts::PI * day_pos as f64 / MS_PER_DAY as f64;
            // Cosine of the offset from the acrophase: 1 at the peak.
            let curve = 0.5 * (1.0 + angle.cos());
            peak * (night_floor + (1.0 - night_floor) * curve)
        }
        SignalKind::Steady { level } => level,
    };
    let noise = if params.noise_sigma > 0.0 {
        let block = t / params.noise_block_ms.max(1);
        params.noise_sigma * gaussian_from_hash(params.seed, block)
    } else {
        0.0
    };
    (base + noise).clamp(0.0, 1.0)
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn unit_f64(h: u64) -> f64 {
    // 53 high bits -> [0, 1).
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Standard normal deviate addressed by (seed, block): Box-Muller over two
/// hashed uniforms.
fn gaussian_from_hash(seed: u64, block: u64) -> f64 {
    let h1 = splitmix64(seed ^ splitmix64(block));
    let h2 = splitmix64(h1);
    let u1 = unit_f64(h1).max(1e-12);
    let u2 = unit_f64(h2);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
