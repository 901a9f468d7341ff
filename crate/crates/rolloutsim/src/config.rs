//! Experiment configuration: a flat key-value file with dotted section
//! names, parsed into a validated [`SimConfig`].
//!
//! The file is the single source of truth for a run; there are no
//! environment overrides except the output directory. Unknown keys are
//! rejected, and every diagnostic names the offending line and field.

use crate::engine::StepCost;
use crate::learner::Hyperparams;
use crate::scheduler::{EarlyTerm, Mode, SchedulerConfig};
use crate::sim::{AdvantageKind, SimParams};
use crate::workload::LengthModel;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: field '{key}': {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("missing required field '{0}'")]
    MissingField(String),
    #[error("field '{key}': {message}")]
    Invalid { key: String, message: String },
}

/// Every key the config file accepts, in canonical order.
pub const KNOWN_KEYS: &[&str] = &[
    "workload.mu",
    "workload.sigma",
    "workload.cap",
    "workload.tail_mass",
    "workload.floor",
    "workload.drift_per_version",
    "workload.total_prompts",
    "workload.samples_per_prompt",
    "engine.capacity_q",
    "engine.step_cost_base",
    "engine.step_cost_per_active",
    "scheduler.modes",
    "scheduler.rollout_batch_b",
    "scheduler.group_size_n",
    "scheduler.update_batch_size",
    "scheduler.ready_target",
    "scheduler.min_util",
    "scheduler.max_updates",
    "learner.eps_low",
    "learner.eps_high",
    "learner.gamma",
    "learner.lambda",
    "learner.advantage_kind",
    "seed",
];

/// Numeric fields that may serve as a sweep axis, plus `scheduler.modes`.
pub const SWEEP_AXES: &[&str] = &[
    "workload.cap",
    "workload.tail_mass",
    "workload.total_prompts",
    "workload.samples_per_prompt",
    "engine.capacity_q",
    "scheduler.modes",
    "scheduler.rollout_batch_b",
    "scheduler.group_size_n",
    "scheduler.update_batch_size",
    "scheduler.ready_target",
    "scheduler.min_util",
    "scheduler.max_updates",
    "seed",
];

/// A fully validated experiment description. One config may name several
/// scheduling modes; they share the workload seed so intrinsic lengths are
/// identical across modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: LengthModel,
    pub total_prompts: u64,
    pub samples_per_prompt: u32,
    pub capacity_q: usize,
    pub step_cost: StepCost,
    pub modes: Vec<Mode>,
    pub rollout_batch_b: u64,
    pub group_size_n: u64,
    pub update_batch_size: usize,
    pub early_term: EarlyTerm,
    pub max_updates: u64,
    pub hyperparams: Hyperparams,
    pub advantage_kind: AdvantageKind,
    pub seed: u64,
}

struct RawConfig {
    // key -> (line, value)
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line,
                text: content.to_string(),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line, key });
            }
            if entries.contains_key(&key) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            entries.insert(key, (line, value));
        }
        Ok(Self { entries })
    }

    fn take(&self, key: &str) -> Result<(usize, &str), ConfigError> {
        self.entries
            .get(key)
            .map(|(line, v)| (*line, v.as_str()))
            .ok_or_else(|| ConfigError::MissingField(key.to_string()))
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let (line, value) = self.take(key)?;
        value.parse::<T>().map_err(|e| ConfigError::BadValue {
            line,
            key: key.to_string(),
            message: format!("cannot parse '{value}': {e}"),
        })
    }

    fn optional<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(_) => self.required(key),
        }
    }
}

impl SimConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let raw = RawConfig::parse(text)?;
        let model = LengthModel {
            mu: raw.required("workload.mu")?,
            sigma: raw.required("workload.sigma")?,
            cap: raw.required("workload.cap")?,
            tail_mass: raw.required("workload.tail_mass")?,
            floor: raw.optional("workload.floor", 16)?,
            drift_per_version: raw.optional("workload.drift_per_version", 1.0)?,
        };
        let (modes_line, modes_text) = raw.take("scheduler.modes")?;
        let mut modes = Vec::new();
        for part in modes_text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            modes.push(Mode::parse(part).map_err(|e| ConfigError::BadValue {
                line: modes_line,
                key: "scheduler.modes".to_string(),
                message: e.to_string(),
            })?);
        }
        if modes.is_empty() {
            return Err(ConfigError::BadValue {
                line: modes_line,
                key: "scheduler.modes".to_string(),
                message: "at least one mode required".to_string(),
            });
        }
        let advantage_text: String =
            raw.optional("learner.advantage_kind", "reinforce_pp".to_string())?;
        let advantage_kind = AdvantageKind::parse(&advantage_text).map_err(|e| {
            ConfigError::Invalid { key: "learner.advantage_kind".to_string(), message: e.to_string() }
        })?;
        let config = Self {
            model,
            total_prompts: raw.required("workload.total_prompts")?,
            samples_per_prompt: raw.required("workload.samples_per_prompt")?,
            capacity_q: raw.required("engine.capacity_q")?,
            step_cost: StepCost {
                base: raw.optional("engine.step_cost_base", 1.0)?,
                per_active: raw.optional("engine.step_cost_per_active", 0.0)?,
            },
            modes,
            rollout_batch_b: raw.required("scheduler.rollout_batch_b")?,
            group_size_n: raw.required("scheduler.group_size_n")?,
            update_batch_size: raw.required("scheduler.update_batch_size")?,
            early_term: EarlyTerm {
                ready_target: raw.required("scheduler.ready_target")?,
                min_util: raw.optional("scheduler.min_util", 0.0)?,
            },
            max_updates: raw.optional("scheduler.max_updates", 0)?,
            hyperparams: Hyperparams {
                eps_low: raw.optional("learner.eps_low", 0.2)?,
                eps_high: raw.optional("learner.eps_high", 0.28)?,
                gamma: raw.optional("learner.gamma", 1.0)?,
                lambda: raw.optional("learner.lambda", 1.0)?,
            },
            advantage_kind,
            seed: raw.required("seed")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Invalid {
            key: path.display().to_string(),
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        LengthModel::new(
            self.model.mu,
            self.model.sigma,
            self.model.cap,
            self.model.tail_mass,
            self.model.floor,
        )
        .map_err(|e| ConfigError::Invalid { key: "workload".to_string(), message: e.to_string() })?;
        if self.total_prompts == 0 {
            return Err(ConfigError::Invalid {
                key: "workload.total_prompts".to_string(),
                message: "must be positive".to_string(),
            });
        }
        if self.capacity_q == 0 {
            return Err(ConfigError::Invalid {
                key: "engine.capacity_q".to_string(),
                message: "must be positive".to_string(),
            });
        }
        if !(self.step_cost.base > 0.0) || self.step_cost.per_active < 0.0 {
            return Err(ConfigError::Invalid {
                key: "engine.step_cost_base".to_string(),
                message: "base cost must be > 0 and per-active cost >= 0".to_string(),
            });
        }
        let hp = &self.hyperparams;
        if hp.eps_low <= 0.0 || hp.eps_high <= 0.0 {
            return Err(ConfigError::Invalid {
                key: "learner.eps_low".to_string(),
                message: "clip bounds must be positive".to_string(),
            });
        }
        if !(0.0..=1.0).contains(&hp.gamma) || !(0.0..=1.0).contains(&hp.lambda) {
            return Err(ConfigError::Invalid {
                key: "learner.gamma".to_string(),
                message: "gamma and lambda must be in [0, 1]".to_string(),
            });
        }
        for &mode in &self.modes {
            self.scheduler_for(mode).validate().map_err(|e| ConfigError::Invalid {
                key: "scheduler".to_string(),
                message: format!("mode {}: {e}", mode.as_str()),
            })?;
        }
        Ok(())
    }

    pub fn scheduler_for(&self, mode: Mode) -> SchedulerConfig {
        SchedulerConfig {
            mode,
            rollout_batch_b: self.rollout_batch_b,
            group_size_n: self.group_size_n,
            samples_per_prompt: self.samples_per_prompt,
            update_batch_size: self.update_batch_size,
            early_term: self.early_term,
            max_updates: self.max_updates,
        }
    }

    /// Simulation parameters for one of the configured modes.
    pub fn params_for(&self, mode: Mode, record_events: bool) -> SimParams {
        SimParams {
            model: self.model.clone(),
            scheduler: self.scheduler_for(mode),
            capacity_q: self.capacity_q,
            step_cost: self.step_cost,
            total_prompts: self.total_prompts,
            seed: self.seed,
            hyperparams: self.hyperparams,
            advantage_kind: self.advantage_kind,
            record_events,
        }
    }

    /// Applies one sweep-axis assignment, returning the modified config.
    pub fn with_axis(&self, axis: &str, value: &str) -> Result<Self, ConfigError> {
        if !SWEEP_AXES.contains(&axis) {
            return Err(ConfigError::Invalid {
                key: axis.to_string(),
                message: format!("not a sweep axis; valid axes: {}", SWEEP_AXES.join(", ")),
            });
        }
        let bad = |message: String| ConfigError::Invalid { key: axis.to_string(), message };
        let mut next = self.clone();
        match axis {
            "workload.cap" => next.model.cap = value.parse().map_err(|e| bad(format!("{e}")))?,
            "workload.tail_mass" => {
                next.model.tail_mass = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "workload.total_prompts" => {
                next.total_prompts = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "workload.samples_per_prompt" => {
                next.samples_per_prompt = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "engine.capacity_q" => next.capacity_q = value.parse().map_err(|e| bad(format!("{e}")))?,
            "scheduler.modes" => {
                next.modes = vec![Mode::parse(value).map_err(|e| bad(e.to_string()))?]
            }
            "scheduler.rollout_batch_b" => {
                next.rollout_batch_b = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "scheduler.group_size_n" => {
                next.group_size_n = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "scheduler.update_batch_size" => {
                next.update_batch_size = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "scheduler.ready_target" => {
                next.early_term.ready_target = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "scheduler.min_util" => {
                next.early_term.min_util = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "scheduler.max_updates" => {
                next.max_updates = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "seed" => next.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
            _ => unreachable!("axis membership checked above"),
        }
        next.validate()?;
        Ok(next)
    }
}

/// Derives a per-point seed by mixing the base seed with the axis name and
/// value, so sweep points are comparable but independent.
pub fn sweep_seed(base_seed: u64, axis: &str, value: &str) -> u64 {
    fn fnv1a(bytes: &[u8]) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
    crate::engine::splitmix64(base_seed ^ fnv1a(axis.as_bytes()) ^ fnv1a(value.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
# minimal baseline run
workload.mu = 4.6
workload.sigma = 0.0
workload.cap = 100
workload.tail_mass = 0.0
workload.floor = 1
workload.total_prompts = 2
workload.samples_per_prompt = 1
engine.capacity_q = 1
scheduler.modes = baseline_sync
scheduler.rollout_batch_b = 2
scheduler.group_size_n = 1
scheduler.update_batch_size = 2
scheduler.ready_target = 2
seed = 1
";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = SimConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(c.modes, vec![Mode::BaselineSync]);
        assert_eq!(c.model.floor, 1);
        assert_eq!(c.step_cost, StepCost::default());
        assert_eq!(c.hyperparams, Hyperparams::default());
        assert_eq!(c.advantage_kind, AdvantageKind::ReinforcePp);
        assert_eq!(c.max_updates, 0);
    }

    #[test]
    fn unknown_key_rejected_with_line_number() {
        let text = format!("{MINIMAL}bogus.key = 1\n");
        match SimConfig::parse_str(&text) {
            Err(ConfigError::UnknownKey { line, key }) => {
                assert_eq!(key, "bogus.key");
                assert_eq!(line, 16);
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_duplicate_lines_rejected() {
        assert!(matches!(
            SimConfig::parse_str("workload.mu 4.6\n"),
            Err(ConfigError::Malformed { line: 1, .. })
        ));
        let text = format!("{MINIMAL}seed = 2\n");
        assert!(matches!(SimConfig::parse_str(&text), Err(ConfigError::DuplicateKey { .. })));
    }

    #[test]
    fn missing_field_named() {
        let text = MINIMAL.replace("seed = 1\n", "");
        assert_eq!(SimConfig::parse_str(&text), Err(ConfigError::MissingField("seed".to_string())));
    }

    #[test]
    fn bad_value_reports_line_and_field() {
        let text = MINIMAL.replace("engine.capacity_q = 1", "engine.capacity_q = banana");
        match SimConfig::parse_str(&text) {
            Err(ConfigError::BadValue { key, .. }) => assert_eq!(key, "engine.capacity_q"),
            other => panic!("expected BadValue, got {other:?}"),
        }
    }

    #[test]
    fn module_invariants_checked_at_load() {
        let text = MINIMAL.replace("workload.tail_mass = 0.0", "workload.tail_mass = 1.5");
        assert!(matches!(SimConfig::parse_str(&text), Err(ConfigError::Invalid { .. })));
        let text = MINIMAL.replace("scheduler.update_batch_size = 2", "scheduler.update_batch_size = 3");
        assert!(matches!(SimConfig::parse_str(&text), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn mode_list_parses_and_bad_mode_rejected() {
        let text = MINIMAL.replace(
            "scheduler.modes = baseline_sync",
            "scheduler.modes = baseline_sync, sorted_partial",
        );
        let c = SimConfig::parse_str(&text).unwrap();
        assert_eq!(c.modes, vec![Mode::BaselineSync, Mode::SortedPartial]);
        let text = MINIMAL.replace("scheduler.modes = baseline_sync", "scheduler.modes = magic");
        assert!(SimConfig::parse_str(&text).is_err());
    }

    #[test]
    fn axis_application_and_validation() {
        let c = SimConfig::parse_str(MINIMAL).unwrap();
        let n2 = c.with_axis("scheduler.group_size_n", "2").unwrap();
        assert_eq!(n2.group_size_n, 2);
        let m = c.with_axis("scheduler.modes", "sorted_partial").unwrap();
        assert_eq!(m.modes, vec![Mode::SortedPartial]);
        assert!(c.with_axis("workload.mu", "5.0").is_err());
        assert!(c.with_axis("engine.capacity_q", "0").is_err());
    }

    #[test]
    fn sweep_seeds_differ_per_point_but_are_stable() {
        let a = sweep_seed(42, "scheduler.group_size_n", "1");
        let b = sweep_seed(42, "scheduler.group_size_n", "2");
        assert_ne!(a, b);
        assert_eq!(a, sweep_seed(42, "scheduler.group_size_n", "1"));
        assert_ne!(a, sweep_seed(43, "scheduler.group_size_n", "1"));
    }

    #[test]
    fn inline_comments_are_stripped() {
        let text = MINIMAL.replace("seed = 1", "seed = 1  # fixed for repro");
        assert_eq!(SimConfig::parse_str(&text).unwrap().seed, 1);
    }
}
