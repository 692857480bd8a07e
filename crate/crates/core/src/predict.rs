//! Arrival-time predictions of workload type and P95-utilization bucket.
//!
//! The real platform queries trained models through a prediction service;
//! here interchangeable providers stand in for the service. The oracle
//! returns ground truth, the noisy oracle reproduces a configurable
//! operating point (flip rates, confidence mix, bucket accuracy), and the
//! history-frequency provider votes from per-subscription statistics.
//! `resolve` applies the conservative fallback: any low-confidence
//! prediction is treated as a fully-utilized user-facing VM.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criticality::WorkloadLabel;

/// Midpoints of the four P95-utilization buckets (1..=4).
pub const BUCKET_MIDPOINTS: [f64; 4] = [0.125, 0.375, 0.625, 0.875];

/// Default minimum confidence below which a prediction is disregarded.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.6;

/// P95 bucket (1..=4) for a utilization fraction.
pub fn bucket_of(p95: f64) -> u8 {
    match p95 {
        p if p <= 0.25 => 1,
        p if p <= 0.50 => 2,
        p if p <= 0.75 => 3,
        _ => 4,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PredictError {
    #[error("unknown prediction provider `{0}`")]
    UnknownProvider(String),
}

/// Subscription- and VM-level features known at deployment time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmFeatures {
    pub subscription_id: u64,
    pub pct_uf_in_subscription: f64,
    pub pct_vms_alive_7d: f64,
    pub subscription_vm_count: u32,
    /// Fraction of the subscription's VMs in each P95 bucket; sums to 1.
    pub pct_vms_per_util_bucket: [f64; 4],
    pub avg_of_avg_util: f64,
    pub avg_of_p95_util: f64,
    pub vm_cores: u32,
    pub vm_memory_gb: f64,
    pub vm_type: String,
}

impl VmFeatures {
    pub fn validate(&self) -> bool {
        let sum: f64 = self.pct_vms_per_util_bucket.iter().sum();
        (sum - 1.0).abs() <= 1e-6
            && [self.pct_uf_in_subscription, self.pct_vms_alive_7d]
                .iter()
                .all(|f| (0.0..=1.0).contains(f))
    }
}

/// Ground truth hidden from the scheduler but visible to providers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub label: WorkloadLabel,
    pub p95_bucket: u8,
}

/// A provider's answer: label and bucket with per-answer confidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Option<WorkloadLabel>,
    pub p95_bucket: Option<u8>,
    pub confidence_label: f64,
    pub confidence_bucket: f64,
}

/// Attributes the scheduler actually uses after the confidence fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveAttributes {
    pub label: WorkloadLabel,
    /// Bucket midpoint, or 1.0 when the bucket prediction was discarded.
    pub p95_util: f64,
}

/// Error model for the noisy oracle, defaulting to the measured operating
/// point of the production models: 99% user-facing recall, 99% of label
/// predictions and 73% of bucket predictions high-confidence, 84% bucket
/// accuracy among high-confidence answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoisyOracleConfig {
    /// Probability a truly user-facing VM is labeled non-user-facing.
    pub uf_flip_rate: f64,
    /// Probability a truly non-user-facing VM is labeled user-facing.
    pub nuf_flip_rate: f64,
    /// Fraction of label predictions drawn with confidence >= 0.6.
    pub label_high_confidence_rate: f64,
    /// Fraction of bucket predictions drawn with confidence >= 0.6.
    pub bucket_high_confidence_rate: f64,
    /// Probability the predicted bucket equals the true bucket.
    pub bucket_accuracy: f64,
    /// Optional explicit row-stochastic confusion matrix
    /// `confusion[true-1][predicted-1]`; overrides `bucket_accuracy`.
    pub bucket_confusion: Option<[[f64; 4]; 4]>,
}

impl Default for NoisyOracleConfig {
    fn default() -> Self {
        Self {
            uf_flip_rate: 0.01,
            nuf_flip_rate: 0.31,
            label_high_confidence_rate: 0.99,
            bucket_high_confidence_rate: 0.73,
            bucket_accuracy: 0.84,
            bucket_confusion: None,
        }
    }
}

/// A source of predictions. Providers own any randomness; one instance per
/// simulation keeps runs reproducible.
#[derive(Debug, Clone)]
pub enum PredictionProvider {
    /// Ground truth with full confidence.
    Oracle,
    /// Ground truth corrupted per an explicit error model.
    NoisyOracle {
        config: NoisyOracleConfig,
        rng: ChaCha8Rng,
    },
    /// Majority vote from subscription history; no learned model.
    HistoryFrequency,
}

impl PredictionProvider {
    pub fn from_name(name: &str, config: NoisyOracleConfig, rng: ChaCha8Rng) -> Result<Self, PredictError> {
        match name {
            "oracle" => Ok(Self::Oracle),
            "noisy_oracle" => Ok(Self::NoisyOracle { config, rng }),
            "history_frequency" => Ok(Self::HistoryFrequency),
            other => Err(PredictError::UnknownProvider(other.to_string())),
        }
    }

    pub fn predict(&mut self, features: &VmFeatures, truth: GroundTruth) -> Prediction {
        match self {
            Self::Oracle => Prediction {
                label: Some(truth.label),
                p95_bucket: Some(truth.p95_bucket),
                confidence_label: 1.0,
                confidence_bucket: 1.0,
            },
            Self::NoisyOracle { config, rng } => noisy_predict(config, rng, truth),
            Self::HistoryFrequency => history_predict(features),
        }
    }
}

fn noisy_predict(config: &NoisyOracleConfig, rng: &mut ChaCha8Rng, truth: GroundTruth) -> Prediction {
    let flip_rate = match truth.label {
        WorkloadLabel::UserFacing => config.uf_flip_rate,
        WorkloadLabel::NonUserFacing => config.nuf_flip_rate,
    };
    let label = if rng.gen::<f64>() < flip_rate {
        match truth.label {
            WorkloadLabel::UserFacing => WorkloadLabel::NonUserFacing,
            WorkloadLabel::NonUserFacing => WorkloadLabel::UserFacing,
        }
    } else {
        truth.label
    };

    let bucket = match &config.bucket_confusion {
        Some(matrix) => {
            let row = &matrix[(truth.p95_bucket - 1) as usize];
            sample_discrete(rng, row) + 1
        }
        None => {
            if rng.gen::<f64>() < config.bucket_accuracy {
                truth.p95_bucket
            } else {
                // Uniform over the three wrong buckets.
                let mut b = rng.gen_range(1..=3u8);
                if b >= truth.p95_bucket {
                    b += 1;
                }
                b
            }
        }
    };

    Prediction {
        label: Some(label),
        p95_bucket: Some(bucket),
        confidence_label: draw_confidence(rng, config.label_high_confidence_rate),
        confidence_bucket: draw_confidence(rng, config.bucket_high_confidence_rate),
    }
}

fn sample_discrete(rng: &mut ChaCha8Rng, weights: &[f64; 4]) -> u8 {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        x -= w;
        if x <= 0.0 {
            return i as u8;
        }
    }
    3
}

/// High-confidence answers draw uniformly from [0.6, 1.0), the rest from
/// [0.0, 0.6).
fn draw_confidence(rng: &mut ChaCha8Rng, high_rate: f64) -> f64 {
    if rng.gen::<f64>() < high_rate {
        rng.gen_range(DEFAULT_MIN_CONFIDENCE..1.0)
    } else {
        rng.gen_range(0.0..DEFAULT_MIN_CONFIDENCE)
    }
}

fn history_predict(features: &VmFeatures) -> Prediction {
    let uf = features.pct_uf_in_subscription >= 0.5;
    let label = if uf {
        WorkloadLabel::UserFacing
    } else {
        WorkloadLabel::NonUserFacing
    };
    let confidence_label = if uf {
        features.pct_uf_in_subscription
    } else {
        1.0 - features.pct_uf_in_subscription
    };
    let (best_idx, best_frac) = features
        .pct_vms_per_util_bucket
        .iter()
        .enumerate()
        .fold((0usize, f64::MIN), |(bi, bf), (i, &f)| {
            if f > bf {
                (i, f)
            } else {
                (bi, bf)
            }
        });
    Prediction {
        label: Some(label),
        p95_bucket: Some(best_idx as u8 + 1),
        confidence_label,
        confidence_bucket: best_frac,
    }
}

/// Apply the conservative confidence fallback: a low-confidence (or absent)
/// label becomes user-facing, a low-confidence bucket becomes 100% P95.
pub fn resolve(prediction: &Prediction, min_confidence: f64) -> EffectiveAttributes {
    let label = match prediction.label {
        Some(label) if prediction.confidence_label >= min_confidence => label,
        _ => WorkloadLabel::UserFacing,
    };
    let p95_util = match prediction.p95_bucket {
        Some(bucket) if prediction.confidence_bucket >= min_confidence && (1..=4).contains(&bucket) => {
            BUCKET_MIDPOINTS[(bucket - 1) as usize]
        }
        _ => 1.0,
    };
    EffectiveAttributes { label, p95_util }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn features(pct_uf: f64, buckets: [f64; 4]) -> VmFeatures {
        VmFeatures {
            subscription_id: 7,
            pct_uf_in_subscription: pct_uf,
            pct_vms_alive_7d: 0.5,
            subscription_vm_count: 100,
            pct_vms_per_util_bucket: buckets,
            avg_of_avg_util: 0.3,
            avg_of_p95_util: 0.5,
            vm_cores: 4,
            vm_memory_gb: 16.0,
            vm_type: "standard".into(),
        }
    }

    #[test]
    fn oracle_returns_truth_with_full_confidence() {
        let mut provider = PredictionProvider::Oracle;
        let p = provider.predict(
            &features(0.5, [0.25; 4]),
            GroundTruth {
                label: WorkloadLabel::UserFacing,
                p95_bucket: 3,
            },
        );
        assert_eq!(p.label, Some(WorkloadLabel::UserFacing));
        assert_eq!(p.p95_bucket, Some(3));
        assert_eq!(p.confidence_label, 1.0);
        assert_eq!(p.confidence_bucket, 1.0);
    }

    #[test]
    fn noisy_oracle_hits_uf_recall_band() {
        let mut provider = PredictionProvider::NoisyOracle {
            config: NoisyOracleConfig::default(),
            rng: ChaCha8Rng::seed_from_u64(99),
        };
        let f = features(0.5, [0.25; 4]);
        let truth = GroundTruth {
            label: WorkloadLabel::UserFacing,
            p95_bucket: 2,
        };
        let kept = (0..10_000)
            .filter(|_| provider.predict(&f, truth).label == Some(WorkloadLabel::UserFacing))
            .count();
        // Binomial 2-sigma band around 9,900 of 10,000.
        assert!((9_840..=9_960).contains(&kept), "kept = {kept}");
    }

    #[test]
    fn noisy_oracle_flip_rate_converges() {
        let config = NoisyOracleConfig {
            nuf_flip_rate: 0.2,
            ..NoisyOracleConfig::default()
        };
        let mut provider = PredictionProvider::NoisyOracle {
            config,
            rng: ChaCha8Rng::seed_from_u64(5),
        };
        let f = features(0.5, [0.25; 4]);
        let truth = GroundTruth {
            label: WorkloadLabel::NonUserFacing,
            p95_bucket: 1,
        };
        let n = 100_000;
        let flipped = (0..n)
            .filter(|_| provider.predict(&f, truth).label == Some(WorkloadLabel::UserFacing))
            .count();
        let rate = flipped as f64 / n as f64;
        let sigma = (0.2 * 0.8 / n as f64).sqrt();
        assert!((rate - 0.2).abs() < 3.0 * sigma, "rate = {rate}");
    }

    #[test]
    fn noisy_oracle_confidence_mix_matches_config() {
        let mut provider = PredictionProvider::NoisyOracle {
            config: NoisyOracleConfig::default(),
            rng: ChaCha8Rng::seed_from_u64(17),
        };
        let f = features(0.5, [0.25; 4]);
        let truth = GroundTruth {
            label: WorkloadLabel::UserFacing,
            p95_bucket: 4,
        };
        let n = 50_000;
        let mut label_high = 0;
        let mut bucket_high = 0;
        for _ in 0..n {
            let p = provider.predict(&f, truth);
            if p.confidence_label >= 0.6 {
                label_high += 1;
            }
            if p.confidence_bucket >= 0.6 {
                bucket_high += 1;
            }
        }
        assert!((label_high as f64 / n as f64 - 0.99).abs() < 0.005);
        assert!((bucket_high as f64 / n as f64 - 0.73).abs() < 0.01);
    }

    #[test]
    fn history_frequency_votes_from_subscription() {
        let mut provider = PredictionProvider::HistoryFrequency;
        let p = provider.predict(
            &features(0.8, [0.1, 0.2, 0.6, 0.1]),
            GroundTruth {
                label: WorkloadLabel::NonUserFacing,
                p95_bucket: 1,
            },
        );
        assert_eq!(p.label, Some(WorkloadLabel::UserFacing));
        assert_eq!(p.p95_bucket, Some(3));
        assert!((p.confidence_label - 0.8).abs() < 1e-12);
        assert!((p.confidence_bucket - 0.6).abs() < 1e-12);
    }

    #[test]
    fn unknown_provider_is_an_error() {
        let err = PredictionProvider::from_name(
            "gradient_boosting",
            NoisyOracleConfig::default(),
            ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert_eq!(
            err,
            PredictError::UnknownProvider("gradient_boosting".into())
        );
    }

    #[test]
    fn resolve_falls_back_on_low_label_confidence() {
        let p = Prediction {
            label: Some(WorkloadLabel::NonUserFacing),
            p95_bucket: Some(1),
            confidence_label: 0.4,
            confidence_bucket: 0.9,
        };
        let eff = resolve(&p, DEFAULT_MIN_CONFIDENCE);
        assert_eq!(eff.label, WorkloadLabel::UserFacing);
        assert_eq!(eff.p95_util, 0.125);
    }

    #[test]
    fn resolve_keeps_high_confidence_predictions() {
        let p = Prediction {
            label: Some(WorkloadLabel::UserFacing),
            p95_bucket: Some(4),
            confidence_label: 0.9,
            confidence_bucket: 0.9,
        };
        let eff = resolve(&p, DEFAULT_MIN_CONFIDENCE);
        assert_eq!(eff.label, WorkloadLabel::UserFacing);
        assert_eq!(eff.p95_util, 0.875);
    }

    #[test]
    fn resolve_falls_back_on_low_bucket_confidence() {
        let p = Prediction {
            label: Some(WorkloadLabel::UserFacing),
            p95_bucket: Some(2),
            confidence_label: 0.9,
            confidence_bucket: 0.3,
        };
        let eff = resolve(&p, DEFAULT_MIN_CONFIDENCE);
        assert_eq!(eff.label, WorkloadLabel::UserFacing);
        assert_eq!(eff.p95_util, 1.0);
    }

    #[test]
    fn oracle_composed_with_resolve_is_identity() {
        let mut provider = PredictionProvider::Oracle;
        for bucket in 1..=4u8 {
            for label in [WorkloadLabel::UserFacing, WorkloadLabel::NonUserFacing] {
                let truth = GroundTruth {
                    label,
                    p95_bucket: bucket,
                };
                let eff = resolve(
                    &provider.predict(&features(0.5, [0.25; 4]), truth),
                    DEFAULT_MIN_CONFIDENCE,
                );
                assert_eq!(eff.label, label);
                assert_eq!(eff.p95_util, BUCKET_MIDPOINTS[(bucket - 1) as usize]);
            }
        }
    }

    #[test]
    fn bucket_of_maps_boundaries() {
        assert_eq!(bucket_of(0.0), 1);
        assert_eq!(bucket_of(0.25), 1);
        assert_eq!(bucket_of(0.44), 2);
        assert_eq!(bucket_of(0.65), 3);
        assert_eq!(bucket_of(0.76), 4);
        assert_eq!(bucket_of(1.0), 4);
    }
}
