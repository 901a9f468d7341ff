//! Evaluation quantities computed from traces: bubble ratio, throughput,
//! staleness distribution, length-distribution skew, and curriculum
//! statistics.

use crate::engine::StepTrace;
use crate::workload::LengthModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("queue size Q must be positive")]
    ZeroCapacity,
    #[error("zero-duration trace")]
    ZeroDuration,
    #[error("need at least {0} samples, got {1}")]
    TooFewSamples(usize, usize),
}

/// Idle slot-time over total slot-time: sum_k (Q - r_k) dt_k / (T * Q).
pub fn bubble_ratio(trace: &StepTrace, q: usize) -> Result<f64, MetricsError> {
    if q == 0 {
        return Err(MetricsError::ZeroCapacity);
    }
    if trace.records.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let idle: f64 = trace.records.iter().map(|r| (q - r.active) as f64 * r.dt).sum();
    Ok(idle / (trace.total_time * q as f64))
}

/// Tokens per wall-clock time unit.
pub fn throughput(trace: &StepTrace, total_tokens: u64) -> Result<f64, MetricsError> {
    if trace.records.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    if trace.total_time <= 0.0 {
        return Err(MetricsError::ZeroDuration);
    }
    Ok(total_tokens as f64 / trace.total_time)
}

/// Two-sample Kolmogorov-Smirnov distance between sorted samples.
fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Length-skew report: KS distance between harvested lengths and a
/// reference sample from the length model, plus the 5% critical value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewReport {
    pub statistic: f64,
    pub critical_5pct: f64,
}

impl SkewReport {
    pub fn biased(&self) -> bool {
        self.statistic > self.critical_5pct
    }
}

const SKEW_REFERENCE_SAMPLES: usize = 20_000;
const SKEW_REFERENCE_SEED: u64 = 0x5eed_5eed;

/// Quantifies short-response bias in harvested data against the workload's
/// reference length distribution (distribution-free two-sample statistic).
pub fn length_skew(harvested_lengths: &[u64], model: &LengthModel) -> Result<SkewReport, MetricsError> {
    if harvested_lengths.len() < 100 {
        return Err(MetricsError::TooFewSamples(100, harvested_lengths.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SKEW_REFERENCE_SEED);
    let mut reference: Vec<f64> =
        (0..SKEW_REFERENCE_SAMPLES).map(|_| model.sample_length(rng.gen::<f64>()) as f64).collect();
    let mut sample: Vec<f64> = harvested_lengths.iter().map(|&l| l as f64).collect();
    let statistic = ks_distance(&mut sample, &mut reference);
    let (m, n) = (harvested_lengths.len() as f64, SKEW_REFERENCE_SAMPLES as f64);
    let critical_5pct = 1.358 * ((m + n) / (m * n)).sqrt();
    Ok(SkewReport { statistic, critical_5pct })
}

/// Mean trained length per update step, grouped by group epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumPoint {
    pub group_epoch: u32,
    pub step_index: u32,
    pub mean_length: f64,
}

/// Per-group curriculum profile from (group_epoch, mean batch length)
/// update records, in update order.
pub fn curriculum_profile(updates: &[(u32, f64)]) -> Vec<CurriculumPoint> {
    let mut out = Vec::with_capacity(updates.len());
    let mut epoch_step = std::collections::BTreeMap::<u32, u32>::new();
    for &(group_epoch, mean_length) in updates {
        let step = epoch_step.entry(group_epoch).or_insert(0);
        out.push(CurriculumPoint { group_epoch, step_index: *step, mean_length });
        *step += 1;
    }
    out
}

/// Ratio of the aggregate mean length of each group's last update batch to
/// its first; the micro-curriculum signature. Returns 1.0 when every group
/// has a single batch.
pub fn curriculum_ratio(profile: &[CurriculumPoint]) -> f64 {
    let mut first = Vec::new();
    let mut last = std::collections::BTreeMap::<u32, f64>::new();
    let mut steps = std::collections::BTreeMap::<u32, u32>::new();
    for p in profile {
        if p.step_index == 0 {
            first.push(p.mean_length);
        }
        last.insert(p.group_epoch, p.mean_length);
        steps.insert(p.group_epoch, p.step_index);
    }
    if first.is_empty() || steps.values().all(|&s| s == 0) {
        return 1.0;
    }
    let first_mean = first.iter().sum::<f64>() / first.len() as f64;
    let last_mean = last.values().sum::<f64>() / last.len() as f64;
    last_mean / first_mean
}
