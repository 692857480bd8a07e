//! Blade power model and frequency/power curves.
//!
//! Power is idle plus a per-core dynamic term, linear in utilization and a
//! power law in normalized frequency. The exponent is calibrated so the
//! model hits the measured envelope of the reference blade: 112 W idle,
//! 310 W at full utilization and frequency, and ~169 W at full utilization
//! and half frequency.

use serde::{Deserialize, Serialize};

/// Discrete p-state ladder: 11 evenly spaced normalized frequencies from
/// 0.50 to 1.00. Index 0 is the minimum p-state, index 10 the maximum.
pub const PSTATE_COUNT: u8 = 11;

/// A point on the p-state ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PState(u8);

impl PState {
    pub const MIN: PState = PState(0);
    pub const MAX: PState = PState(PSTATE_COUNT - 1);

    pub fn new(index: u8) -> Self {
        assert!(index < PSTATE_COUNT, "p-state index {index} out of range");
        PState(index)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Normalized frequency; exact for every ladder point.
    pub fn frequency(self) -> f64 {
        (10 + self.0) as f64 / 20.0
    }

    pub fn step_up(self) -> PState {
        PState((self.0 + 1).min(PSTATE_COUNT - 1))
    }

    pub fn step_down(self) -> PState {
        PState(self.0.saturating_sub(1))
    }

    /// Lowest ladder point at or above the given normalized frequency.
    pub fn at_or_above(freq: f64) -> PState {
        let idx = ((freq * 20.0).ceil() as i64 - 10).clamp(0, (PSTATE_COUNT - 1) as i64);
        PState(idx as u8)
    }

    pub fn ladder() -> impl Iterator<Item = PState> {
        (0..PSTATE_COUNT).map(PState)
    }
}

/// Power envelope and shape parameters for one blade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerPowerSpec {
    pub idle_w: f64,
    pub peak_w: f64,
    pub cores: usize,
    /// Exponent of the frequency power law in the dynamic term.
    pub dyn_exponent: f64,
}

impl ServerPowerSpec {
    /// Reference 40-core blade: 112 W idle, 310 W peak, 169 W at half
    /// frequency and full utilization.
    pub fn reference() -> Self {
        Self::calibrated(112.0, 310.0, 40, 169.0)
    }

    /// Build a spec whose frequency exponent is fitted so that full
    /// utilization at half frequency draws `half_freq_peak_w`.
    pub fn calibrated(idle_w: f64, peak_w: f64, cores: usize, half_freq_peak_w: f64) -> Self {
        assert!(idle_w < half_freq_peak_w && half_freq_peak_w < peak_w);
        let ratio = (half_freq_peak_w - idle_w) / (peak_w - idle_w);
        Self {
            idle_w,
            peak_w,
            cores,
            dyn_exponent: ratio.ln() / 0.5f64.ln(),
        }
    }

    /// Dynamic power of one core at the given utilization and normalized
    /// frequency.
    pub fn core_dynamic_w(&self, utilization: f64, frequency: f64) -> f64 {
        (self.peak_w - self.idle_w) / self.cores as f64
            * utilization
            * frequency.powf(self.dyn_exponent)
    }

    /// Dynamic power of one core at a ladder p-state.
    pub fn core_dynamic_at(&self, utilization: f64, pstate: PState) -> f64 {
        self.core_dynamic_w(utilization, pstate.frequency())
    }
}

/// Utilization and p-state of one physical core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreState {
    pub utilization: f64,
    pub pstate: PState,
}

/// Total blade power for a full set of core states.
pub fn server_power(spec: &ServerPowerSpec, cores: &[CoreState]) -> f64 {
    assert_eq!(cores.len(), spec.cores, "core state count must match spec");
    spec.idle_w
        + cores
            .iter()
            .map(|c| spec.core_dynamic_at(c.utilization, c.pstate))
            .sum::<f64>()
}

/// Blade power as a function of frequency at one uniform utilization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqPowerCurve {
    pub utilization: f64,
    /// Ordered (normalized frequency, watts) pairs over the p-state ladder.
    pub points: Vec<(f64, f64)>,
}

impl FreqPowerCurve {
    /// Blade power at the given ladder frequency.
    pub fn watts_at(&self, pstate: PState) -> f64 {
        self.points[pstate.index() as usize].1
    }

    /// Power reduction per core when stepping from full frequency down to
    /// `floor` (snapped up to the ladder), at this curve's utilization.
    pub fn per_core_reduction_to(&self, floor: f64, cores: usize) -> f64 {
        let p = PState::at_or_above(floor);
        (self.watts_at(PState::MAX) - self.watts_at(p)) / cores as f64
    }
}

/// Evaluate blade power at every ladder frequency with all cores at the
/// given utilization.
pub fn freq_power_curve(spec: &ServerPowerSpec, utilization: f64) -> FreqPowerCurve {
    assert!((0.0..=1.0).contains(&utilization));
    let points = PState::ladder()
        .map(|p| {
            let watts = spec.idle_w + spec.cores as f64 * spec.core_dynamic_at(utilization, p);
            (p.frequency(), watts)
        })
        .collect();
    FreqPowerCurve {
        utilization,
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_cores(utilization: f64, pstate: PState) -> Vec<CoreState> {
        vec![
            CoreState {
                utilization,
                pstate
            };
            40
        ]
    }

    #[test]
    fn ladder_frequencies_are_exact() {
        assert_eq!(PState::MIN.frequency(), 0.5);
        assert_eq!(PState::MAX.frequency(), 1.0);
        assert_eq!(PState::new(5).frequency(), 0.75);
        let freqs: Vec<f64> = PState::ladder().map(|p| p.frequency()).collect();
        assert_eq!(freqs.len(), 11);
        assert!(freqs.windows(2).all(|w| (w[1] - w[0] - 0.05).abs() < 1e-12));
    }

    #[test]
    fn idle_blade_draws_idle_power() {
        let spec = ServerPowerSpec::reference();
        assert_eq!(server_power(&spec, &all_cores(0.0, PState::MAX)), 112.0);
    }

    #[test]
    fn full_blade_draws_peak_power() {
        let spec = ServerPowerSpec::reference();
        let p = server_power(&spec, &all_cores(1.0, PState::MAX));
        assert!((p - 310.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn half_frequency_full_util_matches_calibration_point() {
        let spec = ServerPowerSpec::reference();
        let p = server_power(&spec, &all_cores(1.0, PState::MIN));
        assert!((p - 169.0).abs() < 2.0, "{p}");
        // Exponent fitted from the three envelope points.
        let expected = (57.0f64 / 198.0).ln() / 0.5f64.ln();
        assert!((spec.dyn_exponent - expected).abs() < 1e-12);
        assert!((spec.dyn_exponent - 1.797).abs() < 0.01);
    }

    #[test]
    fn curve_at_zero_utilization_is_flat_idle() {
        let spec = ServerPowerSpec::reference();
        let curve = freq_power_curve(&spec, 0.0);
        assert!(curve.points.iter().all(|&(_, w)| w == 112.0));
    }

    #[test]
    fn curve_at_full_utilization_hits_envelope_endpoints() {
        let spec = ServerPowerSpec::reference();
        let curve = freq_power_curve(&spec, 1.0);
        assert_eq!(curve.points[0].0, 0.5);
        assert!((curve.points[0].1 - 169.0).abs() < 2.0);
        assert_eq!(curve.points[10].0, 1.0);
        assert!((curve.points[10].1 - 310.0).abs() < 1e-9);
    }

    #[test]
    fn curve_at_typical_nuf_utilization() {
        // Direct evaluation of the model at utilization 0.44.
        let spec = ServerPowerSpec::reference();
        let curve = freq_power_curve(&spec, 0.44);
        let low = 112.0 + 0.44 * 198.0 * 0.5f64.powf(spec.dyn_exponent);
        let high = 112.0 + 0.44 * 198.0;
        assert!((curve.points[0].1 - low).abs() < 1e-9);
        assert!((curve.points[10].1 - high).abs() < 1e-9);
    }

    #[test]
    fn power_is_monotone_in_utilization_and_frequency() {
        let spec = ServerPowerSpec::reference();
        let mut cores = all_cores(0.3, PState::new(4));
        let base = server_power(&spec, &cores);
        cores[7].utilization = 0.9;
        let more_util = server_power(&spec, &cores);
        assert!(more_util > base);
        cores[7].pstate = PState::new(9);
        assert!(server_power(&spec, &cores) > more_util);
    }

    #[test]
    fn power_is_permutation_invariant_and_bounded() {
        let spec = ServerPowerSpec::reference();
        let mut cores: Vec<CoreState> = (0..40)
            .map(|i| CoreState {
                utilization: (i as f64 * 0.317) % 1.0,
                pstate: PState::new((i % 11) as u8),
            })
            .collect();
        let p = server_power(&spec, &cores);
        cores.reverse();
        assert!((server_power(&spec, &cores) - p).abs() < 1e-9);
        assert!(p >= spec.idle_w && p <= spec.peak_w);
    }

    #[test]
    fn at_or_above_snaps_to_ladder() {
        assert_eq!(PState::at_or_above(0.5), PState::MIN);
        assert_eq!(PState::at_or_above(0.75), PState::new(5));
        assert_eq!(PState::at_or_above(0.76), PState::new(6));
        assert_eq!(PState::at_or_above(1.0), PState::MAX);
    }
}
