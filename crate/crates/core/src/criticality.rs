//! User-facing vs non-user-facing classification of CPU-utilization series.
//!
//! A workload is considered user-facing when its utilization repeats on a
//! 24-hour cycle. The classifier extracts a "typical day" template from the
//! series and checks that it fits the data better than 8-hour and 12-hour
//! templates do; short-period machine-generated workloads fit all three
//! templates equally well, genuinely diurnal ones only the 24-hour template.
//!
//! The pipeline: de-trend and normalize the series, extract per-period
//! templates as phase-wise medians, measure trimmed mean absolute deviation
//! against each template, and compare the 24-hour deviation to the shorter
//! ones. A `compare8` ratio close to 0 means the daily template is a much
//! better fit, i.e. user-facing.

use thiserror::Error;

/// Slots per day at the default 30-minute cadence.
pub const SLOTS_PER_DAY_30MIN: usize = 48;

/// Minimum number of whole days a series must cover to be classified.
pub const MIN_CLASSIFIABLE_DAYS: usize = 5;

/// Default `compare8` decision threshold; scores below it are user-facing.
pub const DEFAULT_THRESHOLD: f64 = 0.72;

/// Guard for divisions by near-zero means and deviations.
const EPSILON: f64 = 1e-6;

/// Fraction of the largest per-slot deviations excluded from the mean.
const TRIM_FRACTION: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("series has {got} slots, need at least {need}")]
    SeriesTooShort { got: usize, need: usize },
    #[error("slot length {0} min does not divide a day")]
    BadSlotLength(u32),
    #[error("utilization {value} at slot {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
}

/// Fixed-cadence CPU-utilization series for one VM.
///
/// Values are fractions in `[0, 1]`, one per `slot_minutes` interval. The
/// classification contract expects weekday data only; the caller filters.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationSeries {
    values: Vec<f64>,
    slot_minutes: u32,
}

impl UtilizationSeries {
    pub fn new(values: Vec<f64>, slot_minutes: u32) -> Result<Self, SeriesError> {
        if slot_minutes == 0 || 1440 % slot_minutes != 0 {
            return Err(SeriesError::BadSlotLength(slot_minutes));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(SeriesError::OutOfRange { index, value });
            }
        }
        Ok(Self {
            values,
            slot_minutes,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slot_minutes(&self) -> u32 {
        self.slot_minutes
    }

    /// Slots in one 24-hour day at this cadence.
    pub fn slots_per_day(&self) -> usize {
        (1440 / self.slot_minutes) as usize
    }

    /// Number of whole days covered.
    pub fn whole_days(&self) -> usize {
        self.values.len() / self.slots_per_day()
    }
}

/// De-trended, normalized series; values are unbounded reals.
#[derive(Debug, Clone)]
pub struct PreprocessedSeries {
    pub values: Vec<f64>,
    pub slots_per_day: usize,
}

/// Outcome of preprocessing: either a usable series or the constant-series
/// flag the classifier maps to non-user-facing.
#[derive(Debug, Clone)]
pub enum Preprocessed {
    Ok(PreprocessedSeries),
    /// Standard deviation of the de-trended series was zero.
    ZeroVariance,
}

/// De-trend and normalize a utilization series.
///
/// Each value is scaled by the mean of its own day so all days sit in the
/// same range regardless of long-term trend, then the whole series is
/// divided by its standard deviation. Trailing slots past the last whole
/// day are dropped.
pub fn preprocess(series: &UtilizationSeries) -> Result<Preprocessed, SeriesError> {
    let spd = series.slots_per_day();
    let need = 2 * spd;
    if series.values.len() < need {
        return Err(SeriesError::SeriesTooShort {
            got: series.values.len(),
            need,
        });
    }
    let days = series.whole_days();
    let len = days * spd;

    let mut scaled = Vec::with_capacity(len);
    for day in 0..days {
        let chunk = &series.values[day * spd..(day + 1) * spd];
        let mean = chunk.iter().sum::<f64>() / spd as f64;
        let divisor = mean.max(EPSILON);
        scaled.extend(chunk.iter().map(|v| v / divisor));
    }

    let mean = scaled.iter().sum::<f64>() / len as f64;
    let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
    let std = var.sqrt();
    if std < EPSILON {
        return Ok(Preprocessed::ZeroVariance);
    }
    for v in &mut scaled {
        *v /= std;
    }
    Ok(Preprocessed::Ok(PreprocessedSeries {
        values: scaled,
        slots_per_day: spd,
    }))
}

/// Typical-period template: the phase-wise median of a pre-processed series.
#[derive(Debug, Clone)]
pub struct Template {
    pub period_slots: usize,
    pub slot_values: Vec<f64>,
}

/// Extract the template for `period_slots` as the median of all values
/// observed at each phase. `period_slots` must divide the series length.
pub fn extract_template(pre: &PreprocessedSeries, period_slots: usize) -> Template {
    assert!(
        period_slots > 0 && pre.values.len() % period_slots == 0,
        "period {} must divide series length {}",
        period_slots,
        pre.values.len()
    );
    let repeats = pre.values.len() / period_slots;
    let mut slot_values = Vec::with_capacity(period_slots);
    let mut phase_buf = Vec::with_capacity(repeats);
    for phase in 0..period_slots {
        phase_buf.clear();
        for rep in 0..repeats {
            phase_buf.push(pre.values[rep * period_slots + phase]);
        }
        slot_values.push(median(&mut phase_buf));
    }
    Template {
        period_slots,
        slot_values,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("NaN in series"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Mean absolute deviation between a series and a tiled template, after
/// discarding the `floor(20% x series length)` largest per-slot deviations.
///
/// When the template value is the sample median of an odd repeat count, it
/// reproduces exactly one occurrence per phase verbatim; that structural
/// zero is excluded so deviation scales stay comparable across template
/// lengths (a 5-repeat template would otherwise start with 20% exact zeros
/// against 7% for a 15-repeat one, skewing every ratio of the two).
pub fn mean_deviation(pre: &PreprocessedSeries, template: &Template) -> f64 {
    assert_eq!(pre.values.len() % template.period_slots, 0);
    let period = template.period_slots;
    let mut self_match_left = vec![1u8; period];
    let mut deviations = Vec::with_capacity(pre.values.len());
    for (i, v) in pre.values.iter().enumerate() {
        let phase = i % period;
        let deviation = (v - template.slot_values[phase]).abs();
        if deviation == 0.0 && self_match_left[phase] == 1 {
            self_match_left[phase] = 0;
            continue;
        }
        deviations.push(deviation);
    }
    deviations.sort_by(|a, b| a.partial_cmp(b).expect("NaN deviation"));
    let drop = (TRIM_FRACTION * pre.values.len() as f64).floor() as usize;
    let kept = &deviations[..deviations.len().saturating_sub(drop)];
    if kept.is_empty() {
        return 0.0;
    }
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Template-fit scores for one series.
///
/// `compare8` and `compare12` divide the 24-hour template deviation by the
/// 8-hour and 12-hour deviations; values near 0 mean the daily template is
/// the markedly better fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalityScores {
    pub compare8: f64,
    pub compare12: f64,
    pub dev24: f64,
    pub dev12: f64,
    pub dev8: f64,
}

impl CriticalityScores {
    fn from_deviations(dev24: f64, dev12: f64, dev8: f64) -> Self {
        Self {
            compare8: dev24 / dev8.max(EPSILON),
            compare12: dev24 / dev12.max(EPSILON),
            dev24,
            dev12,
            dev8,
        }
    }

    /// Sentinel for series too short to classify.
    fn too_short() -> Self {
        Self {
            compare8: 0.0,
            compare12: 0.0,
            dev24: 0.0,
            dev12: 0.0,
            dev8: 0.0,
        }
    }

    /// Sentinel for constant or template-perfect short-period series.
    fn degenerate() -> Self {
        Self {
            compare8: 1.0,
            compare12: 1.0,
            dev24: 0.0,
            dev12: 0.0,
            dev8: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadLabel {
    UserFacing,
    NonUserFacing,
}

impl std::fmt::Display for WorkloadLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WorkloadLabel::UserFacing => write!(f, "UserFacing"),
            WorkloadLabel::NonUserFacing => write!(f, "NonUserFacing"),
        }
    }
}

/// Why a series received its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifyReason {
    /// Scored normally from template deviations.
    Scored,
    /// Under five whole days of data; conservatively user-facing.
    TooShort,
    /// Constant series; machine-generated.
    ZeroVariance,
    /// Near-zero deviation at both 24 h and 8 h; short-period machine load.
    TemplatePerfect,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: WorkloadLabel,
    pub scores: CriticalityScores,
    pub reason: ClassifyReason,
}

/// Compute template-fit scores for a series of at least five whole days.
///
/// Returns `None` when the de-trended series has zero variance.
pub fn compare_scores(series: &UtilizationSeries) -> Result<Option<CriticalityScores>, SeriesError> {
    let spd = series.slots_per_day();
    if series.whole_days() < MIN_CLASSIFIABLE_DAYS {
        return Err(SeriesError::SeriesTooShort {
            got: series.values.len(),
            need: MIN_CLASSIFIABLE_DAYS * spd,
        });
    }
    assert!(
        spd % 3 == 0 && spd % 2 == 0,
        "slot cadence must divide the day into 8 h and 12 h templates"
    );
    let pre = match preprocess(series)? {
        Preprocessed::Ok(pre) => pre,
        Preprocessed::ZeroVariance => return Ok(None),
    };
    let dev24 = mean_deviation(&pre, &extract_template(&pre, spd));
    let dev12 = mean_deviation(&pre, &extract_template(&pre, spd / 2));
    let dev8 = mean_deviation(&pre, &extract_template(&pre, spd / 3));
    Ok(Some(CriticalityScores::from_deviations(dev24, dev12, dev8)))
}

/// Classify a series as user-facing or non-user-facing.
///
/// Total over all inputs: series under five whole days are conservatively
/// user-facing, constant series are non-user-facing, and otherwise the label
/// is user-facing exactly when `compare8` is strictly below `threshold`.
pub fn classify(series: &UtilizationSeries, threshold: f64) -> Classification {
    if series.whole_days() < MIN_CLASSIFIABLE_DAYS {
        return Classification {
            label: WorkloadLabel::UserFacing,
            scores: CriticalityScores::too_short(),
            reason: ClassifyReason::TooShort,
        };
    }
    match compare_scores(series) {
        Err(_) => Classification {
            label: WorkloadLabel::UserFacing,
            scores: CriticalityScores::too_short(),
            reason: ClassifyReason::TooShort,
        },
        Ok(None) => Classification {
            label: WorkloadLabel::NonUserFacing,
            scores: CriticalityScores::degenerate(),
            reason: ClassifyReason::ZeroVariance,
        },
        Ok(Some(scores)) => {
            if scores.dev24 < EPSILON && scores.dev8 < EPSILON {
                return Classification {
                    label: WorkloadLabel::NonUserFacing,
                    scores: CriticalityScores::degenerate(),
                    reason: ClassifyReason::TemplatePerfect,
                };
            }
            let label = if scores.compare8 < threshold {
                WorkloadLabel::UserFacing
            } else {
                WorkloadLabel::NonUserFacing
            };
            Classification {
                label,
                scores,
                reason: ClassifyReason::Scored,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn series_30min(values: Vec<f64>) -> UtilizationSeries {
        UtilizationSeries::new(values, 30).unwrap()
    }

    /// 5 weekdays of a diurnal sinusoid plus gaussian noise, clamped.
    fn diurnal(amp: f64, noise: f64, seed: u64) -> UtilizationSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..240)
            .map(|i| {
                let day_phase = 2.0 * std::f64::consts::PI * (i % 48) as f64 / 48.0;
                let v = 0.5 + amp * (day_phase).sin() + noise * rng.sample::<f64, _>(rand_distr::StandardNormal);
                v.clamp(0.0, 1.0)
            })
            .collect();
        series_30min(values)
    }

    /// Cron-style machine load: short spike every `period_slots`, else a low floor.
    fn spike_train(period_slots: usize, width: usize, noise: f64, seed: u64) -> UtilizationSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..240)
            .map(|i| {
                let base = if i % period_slots < width { 0.9 } else { 0.1 };
                (base + noise * rng.sample::<f64, _>(rand_distr::StandardNormal)).clamp(0.0, 1.0)
            })
            .collect();
        series_30min(values)
    }

    #[test]
    fn constant_series_flags_zero_variance() {
        let series = series_30min(vec![0.5; 240]);
        match preprocess(&series).unwrap() {
            Preprocessed::ZeroVariance => {}
            Preprocessed::Ok(_) => panic!("constant series must flag zero variance"),
        }
    }

    #[test]
    fn preprocess_is_scale_invariant() {
        let series = diurnal(0.3, 0.02, 7);
        let scaled = series_30min(series.values().iter().map(|v| v / 3.0).collect());
        let a = match preprocess(&series).unwrap() {
            Preprocessed::Ok(p) => p.values,
            _ => panic!(),
        };
        let b = match preprocess(&scaled).unwrap() {
            Preprocessed::Ok(p) => p.values,
            _ => panic!(),
        };
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn preprocess_removes_linear_ramp() {
        // Ramp 0.1 -> 0.9 over 5 days with a small 24 h sine on top. After
        // de-trending, per-day means of the output must agree within 5%.
        let values: Vec<f64> = (0..240)
            .map(|i| {
                let ramp = 0.1 + 0.8 * i as f64 / 239.0;
                let sine = 0.08 * (2.0 * std::f64::consts::PI * i as f64 / 48.0).sin();
                (ramp + sine).clamp(0.0, 1.0)
            })
            .collect();
        let pre = match preprocess(&series_30min(values)).unwrap() {
            Preprocessed::Ok(p) => p,
            _ => panic!(),
        };
        let day_means: Vec<f64> = (0..5)
            .map(|d| pre.values[d * 48..(d + 1) * 48].iter().sum::<f64>() / 48.0)
            .collect();
        let overall = day_means.iter().sum::<f64>() / day_means.len() as f64;
        for m in &day_means {
            assert!(
                (m - overall).abs() / overall.abs() < 0.05,
                "day mean {m} vs overall {overall}"
            );
        }
    }

    #[test]
    fn preprocess_rejects_short_series() {
        let series = series_30min(vec![0.4; 60]);
        match preprocess(&series) {
            Err(SeriesError::SeriesTooShort { got: 60, need: 96 }) => {}
            other => panic!("expected SeriesTooShort, got {other:?}"),
        }
    }

    #[test]
    fn template_of_exactly_periodic_series_is_one_period() {
        let one_period: Vec<f64> = (0..48).map(|i| (i as f64 / 48.0).sin()).collect();
        let pre = PreprocessedSeries {
            values: one_period.repeat(5),
            slots_per_day: 48,
        };
        let tmpl = extract_template(&pre, 48);
        for (a, b) in tmpl.slot_values.iter().zip(&one_period) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn template_median_rejects_one_corrupt_repeat() {
        // 5 repeats of a period, one repeat fully corrupted: the phase-wise
        // median must still equal the clean period. Oracle: brute-force
        // median per phase over the five observed values.
        let clean: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut values = clean.repeat(5);
        for v in &mut values[96..144] {
            *v += 50.0;
        }
        let pre = PreprocessedSeries {
            values: values.clone(),
            slots_per_day: 48,
        };
        let tmpl = extract_template(&pre, 48);
        for phase in 0..48 {
            let mut all: Vec<f64> = (0..5).map(|r| values[r * 48 + phase]).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let oracle = all[2];
            assert_eq!(tmpl.slot_values[phase], oracle);
            assert!((tmpl.slot_values[phase] - clean[phase]).abs() < 1e-12);
        }
    }

    #[test]
    fn sixteen_slot_template_on_48_periodic_series() {
        // Oracle: phase-wise median over the fifteen 16-slot segments.
        let day: Vec<f64> = (0..48).map(|i| (i as f64 * 0.59).cos()).collect();
        let values = day.repeat(5);
        let pre = PreprocessedSeries {
            values: values.clone(),
            slots_per_day: 48,
        };
        let tmpl = extract_template(&pre, 16);
        for phase in 0..16 {
            let mut occurrences: Vec<f64> =
                (0..15).map(|r| values[r * 16 + phase]).collect();
            let oracle = median(&mut occurrences);
            assert_eq!(tmpl.slot_values[phase], oracle);
        }
    }

    #[test]
    fn mean_deviation_of_exact_tiling_is_zero() {
        let day: Vec<f64> = (0..48).map(|i| (i as f64 * 1.1).sin()).collect();
        let pre = PreprocessedSeries {
            values: day.repeat(5),
            slots_per_day: 48,
        };
        let tmpl = extract_template(&pre, 48);
        assert_eq!(mean_deviation(&pre, &tmpl), 0.0);
    }

    #[test]
    fn mean_deviation_trims_ten_percent_corruption() {
        let day: Vec<f64> = (0..48).map(|i| (i as f64 * 1.1).sin()).collect();
        let mut values = day.repeat(5);
        let tmpl = Template {
            period_slots: 48,
            slot_values: day.clone(),
        };
        // Corrupt 24 of 240 slots (10%) by +10; all fall inside the trimmed 20%.
        for k in 0..24 {
            values[k * 10] += 10.0;
        }
        let pre = PreprocessedSeries {
            values,
            slots_per_day: 48,
        };
        assert_eq!(mean_deviation(&pre, &tmpl), 0.0);
    }

    #[test]
    fn mean_deviation_of_uniform_offset_is_the_offset() {
        let day: Vec<f64> = (0..48).map(|i| (i as f64 * 1.1).sin()).collect();
        let values: Vec<f64> = day.repeat(5).iter().map(|v| v + 1.0).collect();
        let tmpl = Template {
            period_slots: 48,
            slot_values: day,
        };
        let pre = PreprocessedSeries {
            values,
            slots_per_day: 48,
        };
        assert!((mean_deviation(&pre, &tmpl) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diurnal_scores_low_compare8() {
        let scores = compare_scores(&diurnal(0.3, 0.03, 11)).unwrap().unwrap();
        assert!(scores.compare8 < 0.3, "compare8 = {}", scores.compare8);
        assert!(scores.compare12 < 0.5, "compare12 = {}", scores.compare12);
    }

    #[test]
    fn six_hour_machine_load_scores_high_compare8() {
        // 6 h period = 12 slots; the spikes the 8 h template cannot absorb
        // fall inside the trimmed 20%, so all templates fit equally well.
        let scores = compare_scores(&spike_train(12, 1, 0.02, 3))
            .unwrap()
            .unwrap();
        assert!(scores.compare8 > 0.72, "compare8 = {}", scores.compare8);
    }

    #[test]
    fn white_noise_scores_high_compare8_across_seeds() {
        let mut passes = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = (0..240).map(|_| rng.gen_range(0.0..1.0)).collect();
            let scores = compare_scores(&series_30min(values)).unwrap().unwrap();
            if scores.compare8 > 0.72 {
                passes += 1;
            }
        }
        assert!(passes >= 95, "only {passes}/100 noise seeds above threshold");
    }

    #[test]
    fn classify_thresholds_strictly() {
        // compare8 exactly at the threshold classifies non-user-facing.
        let diurnal_series = diurnal(0.3, 0.03, 5);
        let scores = compare_scores(&diurnal_series).unwrap().unwrap();
        let at_threshold = classify(&diurnal_series, scores.compare8);
        assert_eq!(at_threshold.label, WorkloadLabel::NonUserFacing);
        let just_above = classify(&diurnal_series, scores.compare8 + 1e-12);
        assert_eq!(just_above.label, WorkloadLabel::UserFacing);
    }

    #[test]
    fn short_series_is_user_facing() {
        let three_days = series_30min(vec![0.2; 144]);
        let c = classify(&three_days, DEFAULT_THRESHOLD);
        assert_eq!(c.label, WorkloadLabel::UserFacing);
        assert_eq!(c.reason, ClassifyReason::TooShort);
    }

    #[test]
    fn constant_series_is_non_user_facing() {
        let c = classify(&series_30min(vec![0.5; 240]), DEFAULT_THRESHOLD);
        assert_eq!(c.label, WorkloadLabel::NonUserFacing);
        assert_eq!(c.reason, ClassifyReason::ZeroVariance);
    }

    #[test]
    fn exact_short_period_series_is_template_perfect() {
        // Noise-free 8 h sawtooth: every template fits exactly.
        let values: Vec<f64> = (0..240).map(|i| 0.1 + 0.05 * (i % 16) as f64).collect();
        let c = classify(&series_30min(values), DEFAULT_THRESHOLD);
        assert_eq!(c.label, WorkloadLabel::NonUserFacing);
        assert_eq!(c.reason, ClassifyReason::TemplatePerfect);
    }

    #[test]
    fn classification_is_scale_invariant() {
        for seed in [1u64, 9, 23] {
            let series = diurnal(0.25, 0.05, seed);
            let scaled = series_30min(series.values().iter().map(|v| v * 0.2).collect());
            let a = classify(&series, DEFAULT_THRESHOLD);
            let b = classify(&scaled, DEFAULT_THRESHOLD);
            assert_eq!(a.label, b.label);
            assert!((a.scores.compare8 - b.scores.compare8).abs() < 1e-9);
            assert!((a.scores.compare12 - b.scores.compare12).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_input_gives_bit_identical_scores() {
        let series = diurnal(0.3, 0.05, 42);
        let a = compare_scores(&series).unwrap().unwrap();
        let b = compare_scores(&series).unwrap().unwrap();
        assert_eq!(a, b);
    }
}
