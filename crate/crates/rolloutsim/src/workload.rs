//! Synthetic prompt stream with latent per-trajectory generation lengths.
//!
//! Lengths are drawn from a long-tailed model: a log-normal body plus a
//! point mass at the generation cap. Sampling goes through an explicit
//! uniform draw and the inverse CDF, so the same uniform stream yields
//! monotonically comparable lengths when the cap changes.
//!
//! The intrinsic length is latent ground truth: the engine discovers it one
//! token at a time, and the scheduler never reads it directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("length model: {0}")]
    InvalidModel(String),
}

/// Long-tailed generation-length model: log-normal body, point mass at cap.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthModel {
    /// Location of the log-normal body (log token count).
    pub mu: f64,
    /// Scale of the log-normal body.
    pub sigma: f64,
    /// Maximum generation length; `tail_mass` of samples land exactly here.
    pub cap: u64,
    /// Fraction of samples forced to the cap.
    pub tail_mass: f64,
    /// Minimum length.
    pub floor: u64,
    /// Per-policy-version length multiplier (1.0 = off).
    pub drift_per_version: f64,
}

impl LengthModel {
    pub fn new(
        mu: f64,
        sigma: f64,
        cap: u64,
        tail_mass: f64,
        floor: u64,
    ) -> Result<Self, WorkloadError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(WorkloadError::InvalidModel(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if !mu.is_finite() {
            return Err(WorkloadError::InvalidModel(format!("mu must be finite, got {mu}")));
        }
        if !(0.0..=1.0).contains(&tail_mass) {
            return Err(WorkloadError::InvalidModel(format!(
                "tail_mass must be in [0, 1], got {tail_mass}"
            )));
        }
        if floor < 1 || floor > cap {
            return Err(WorkloadError::InvalidModel(format!(
                "need 1 <= floor <= cap, got floor={floor}, cap={cap}"
            )));
        }
        Ok(Self { mu, sigma, cap, tail_mass, floor, drift_per_version: 1.0 })
    }

    /// Shipped default, calibrated so that over the body+cap mixture
    /// P(len <= 3000) lands in [0.75, 0.85] and P(len = cap) in [0.04, 0.08].
    pub fn calibrated_default() -> Self {
        Self { mu: 7.6843, sigma: 0.30, cap: 4096, tail_mass: 0.05, floor: 16, drift_per_version: 1.0 }
    }

    /// Maps one uniform draw in [0, 1) to a length in [floor, cap].
    ///
    /// Inverse-CDF construction: draws below `tail_mass` hit the cap; the
    /// rest are rescaled and pushed through the log-normal quantile
    /// function, then clamped. Raising `cap` never decreases the result for
    /// the same `u`.
    pub fn sample_length(&self, u: f64) -> u64 {
        debug_assert!((0.0..1.0).contains(&u));
        if u < self.tail_mass {
            return self.cap;
        }
        if self.sigma == 0.0 {
            let len = self.mu.exp().round() as u64;
            return len.clamp(self.floor, self.cap);
        }
        let body_u = ((u - self.tail_mass) / (1.0 - self.tail_mass)).clamp(1e-15, 1.0 - 1e-15);
        let z = Normal::standard().inverse_cdf(body_u);
        let len = (self.mu + self.sigma * z).exp().round();
        (len as u64).clamp(self.floor, self.cap)
    }

    /// Applies the optional per-version length drift to a base length.
    pub fn drifted(&self, base: u64, policy_version: u32) -> u64 {
        if self.drift_per_version == 1.0 {
            return base;
        }
        let scaled = (base as f64 * self.drift_per_version.powi(policy_version as i32)).round();
        (scaled as u64).clamp(self.floor, self.cap)
    }
}

/// One prompt with its pre-drawn intrinsic lengths, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub prompt_id: u64,
    /// Index of the group load that introduces this prompt.
    pub group_epoch: u32,
    pub samples_per_prompt: u32,
    pub intrinsic_lengths: Vec<u64>,
}

/// Draws the full prompt stream deterministically from one seed.
///
/// `prompts_per_group` stamps each spec with the group epoch that will load
/// it (scheduler convention: groups are consecutive slices of the stream).
pub fn build_prompt_stream(
    model: &LengthModel,
    total_prompts: u64,
    samples_per_prompt: u32,
    prompts_per_group: u64,
    seed: u64,
) -> Vec<PromptSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..total_prompts)
        .map(|prompt_id| PromptSpec {
            prompt_id,
            group_epoch: (prompt_id / prompts_per_group.max(1)) as u32,
            samples_per_prompt,
            intrinsic_lengths: (0..samples_per_prompt)
                .map(|_| model.sample_length(rng.gen::<f64>()))
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_model(len: u64) -> LengthModel {
        LengthModel { mu: (len as f64).ln(), sigma: 0.0, cap: 4096, tail_mass: 0.0, floor: 1, drift_per_version: 1.0 }
    }

    #[test]
    fn constant_body_returns_constant() {
        let m = constant_model(100);
        assert_eq!(m.sample_length(0.3), 100);
        assert_eq!(m.sample_length(0.9), 100);
    }

    #[test]
    fn full_tail_mass_forces_cap() {
        let m = LengthModel::new(7.0, 0.5, 4096, 1.0, 16).unwrap();
        assert_eq!(m.sample_length(0.0), 4096);
        assert_eq!(m.sample_length(0.999), 4096);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(LengthModel::new(7.0, -0.1, 4096, 0.05, 16).is_err());
        assert!(LengthModel::new(7.0, 0.3, 4096, 1.5, 16).is_err());
        assert!(LengthModel::new(7.0, 0.3, 10, 0.05, 20).is_err());
        assert!(LengthModel::new(f64::NAN, 0.3, 4096, 0.05, 16).is_err());
    }

    #[test]
    fn calibrated_default_matches_observed_quantiles() {
        let m = LengthModel::calibrated_default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut le_3000 = 0u64;
        let mut at_cap = 0u64;
        for _ in 0..n {
            let len = m.sample_length(rng.gen::<f64>());
            assert!((m.floor..=m.cap).contains(&len));
            if len <= 3000 {
                le_3000 += 1;
            }
            if len == m.cap {
                at_cap += 1;
            }
        }
        let p_le = le_3000 as f64 / n as f64;
        let p_cap = at_cap as f64 / n as f64;
        assert!((0.75..=0.85).contains(&p_le), "P(len <= 3000) = {p_le}");
        assert!((0.04..=0.08).contains(&p_cap), "P(len = cap) = {p_cap}");
    }

    #[test]
    fn cap_mass_at_least_tail_mass() {
        let m = LengthModel::new(8.2, 0.4, 4096, 0.05, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50_000;
        let at_cap = (0..n).filter(|_| m.sample_length(rng.gen::<f64>()) == m.cap).count();
        assert!(at_cap as f64 / n as f64 >= 0.05);
    }

    #[test]
    fn raising_cap_never_decreases_length() {
        let lo = LengthModel::new(7.6843, 0.30, 2048, 0.05, 16).unwrap();
        let hi = LengthModel::new(7.6843, 0.30, 8192, 0.05, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let u = rng.gen::<f64>();
            assert!(hi.sample_length(u) >= lo.sample_length(u));
        }
    }

    #[test]
    fn stream_is_deterministic_and_well_formed() {
        let m = LengthModel::calibrated_default();
        let a = build_prompt_stream(&m, 128, 8, 32, 42);
        let b = build_prompt_stream(&m, 128, 8, 32, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 128);
        assert_eq!(a.iter().map(|p| p.intrinsic_lengths.len()).sum::<usize>(), 1024);
        assert_eq!(a[0].group_epoch, 0);
        assert_eq!(a[32].group_epoch, 1);
        for spec in &a {
            for &len in &spec.intrinsic_lengths {
                assert!((m.floor..=m.cap).contains(&len));
            }
        }
    }

    #[test]
    fn two_prompt_constant_stream() {
        let m = constant_model(100);
        let s = build_prompt_stream(&m, 2, 1, 2, 0);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].intrinsic_lengths, vec![100]);
        assert_eq!(s[1].intrinsic_lengths, vec![100]);
    }

    #[test]
    fn empty_stream_is_not_an_error() {
        let m = constant_model(100);
        assert!(build_prompt_stream(&m, 0, 1, 2, 0).is_empty());
    }

    #[test]
    fn drift_off_by_default() {
        let m = LengthModel::calibrated_default();
        assert_eq!(m.drifted(1000, 5), 1000);
        let mut d = m;
        d.drift_per_version = 1.1;
        assert_eq!(d.drifted(1000, 1), 1100);
        assert_eq!(d.drifted(4000, 2), d.cap);
    }
}
