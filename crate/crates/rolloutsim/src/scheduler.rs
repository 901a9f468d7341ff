//! Scheduling policies and their pure building blocks: mode definitions,
//! group accounting, the early-termination predicate, and sorted selective
//! batching.
//!
//! The simulation driver in [`crate::sim`] wires these against the engine
//! and the rollout buffer.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("scheduler config: {0}")]
    InvalidConfig(String),
    #[error("cannot load a group while {0} trajectories are outstanding")]
    GroupStillOutstanding(u64),
}

/// Scheduling policy. The last two are the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Synchronous baseline: capacity-sized waves, wait for all, no
    /// oversubscription, no early termination, arrival-order consumption.
    BaselineSync,
    /// Oversubscribed group rollout; interrupted generations discarded.
    SortedOnPolicy,
    /// Oversubscribed group rollout; interrupted generations resumed.
    SortedPartial,
    /// Ablation: continuous fresh loading without a group barrier.
    NoGrouping,
    /// Ablation: synchronous rollout, sorted consumption after completion.
    PostHocSort,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::BaselineSync => "baseline_sync",
            Mode::SortedOnPolicy => "sorted_on_policy",
            Mode::SortedPartial => "sorted_partial",
            Mode::NoGrouping => "no_grouping",
            Mode::PostHocSort => "post_hoc_sort",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SchedulerError> {
        match s {
            "baseline_sync" => Ok(Mode::BaselineSync),
            "sorted_on_policy" => Ok(Mode::SortedOnPolicy),
            "sorted_partial" => Ok(Mode::SortedPartial),
            "no_grouping" => Ok(Mode::NoGrouping),
            "post_hoc_sort" => Ok(Mode::PostHocSort),
            other => Err(SchedulerError::InvalidConfig(format!(
                "unknown mode '{other}' (expected baseline_sync, sorted_on_policy, \
                 sorted_partial, no_grouping, or post_hoc_sort)"
            ))),
        }
    }

    /// Whether interrupted sessions keep their tokens.
    pub fn keeps_progress(&self) -> bool {
        matches!(self, Mode::SortedPartial | Mode::NoGrouping)
    }

    /// Whether train batches are sorted by length (vs arrival order).
    pub fn sorts_batches(&self) -> bool {
        !matches!(self, Mode::BaselineSync)
    }

    /// Whether the rollout is synchronous (waves of Q, wait for all).
    pub fn is_synchronous(&self) -> bool {
        matches!(self, Mode::BaselineSync | Mode::PostHocSort)
    }
}

/// Early-termination thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyTerm {
    /// Completions that end an iteration (aligned with train-batch
    /// readiness).
    pub ready_target: usize,
    /// Utilization floor in [0, 1]; prevents a lone straggler from pinning
    /// the engine once the admission queue is empty.
    pub min_util: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub mode: Mode,
    /// Prompts per rollout batch.
    pub rollout_batch_b: u64,
    /// Batches per group.
    pub group_size_n: u64,
    pub samples_per_prompt: u32,
    /// Trajectories per train step.
    pub update_batch_size: usize,
    pub early_term: EarlyTerm,
    /// Stop after this many updates (0 = unlimited); required for the
    /// no-grouping ablation to expose its short bias.
    pub max_updates: u64,
}

impl SchedulerConfig {
    /// Trajectories in one full group pool.
    pub fn group_trajectories(&self) -> u64 {
        self.effective_group_n() * self.rollout_batch_b * self.samples_per_prompt as u64
    }

    /// Synchronous modes have no grouping concept; each rollout batch is
    /// its own group.
    pub fn effective_group_n(&self) -> u64 {
        if self.mode.is_synchronous() {
            1
        } else {
            self.group_size_n
        }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.rollout_batch_b == 0 || self.group_size_n == 0 || self.samples_per_prompt == 0 {
            return Err(SchedulerError::InvalidConfig(
                "rollout_batch_b, group_size_n, and samples_per_prompt must be positive".into(),
            ));
        }
        if self.update_batch_size == 0 {
            return Err(SchedulerError::InvalidConfig("update_batch_size must be positive".into()));
        }
        if self.update_batch_size as u64 > self.group_trajectories() {
            return Err(SchedulerError::InvalidConfig(format!(
                "update_batch_size {} exceeds group pool of {} trajectories",
                self.update_batch_size,
                self.group_trajectories()
            )));
        }
        if self.group_trajectories() % self.update_batch_size as u64 != 0 {
            return Err(SchedulerError::InvalidConfig(format!(
                "update_batch_size {} must divide the group pool of {} trajectories \
                 or the group can never be fully consumed",
                self.update_batch_size,
                self.group_trajectories()
            )));
        }
        if !self.mode.is_synchronous() && self.early_term.ready_target < self.update_batch_size {
            return Err(SchedulerError::InvalidConfig(format!(
                "ready_target {} must be at least update_batch_size {}",
                self.early_term.ready_target, self.update_batch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.early_term.min_util) {
            return Err(SchedulerError::InvalidConfig(format!(
                "min_util must be in [0, 1], got {}",
                self.early_term.min_util
            )));
        }
        Ok(())
    }
}

/// Group accounting: a new group loads only once every trajectory of the
/// previous one has been fed to the trainer.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct GroupState {
    pub loaded_prompts: u64,
    pub trajectories_outstanding: u64,
    pub group_epoch: u32,
}

impl GroupState {
    pub fn load(&mut self, prompts: u64, samples_per_prompt: u32) -> Result<(), SchedulerError> {
        if self.trajectories_outstanding > 0 {
            return Err(SchedulerError::GroupStillOutstanding(self.trajectories_outstanding));
        }
        self.loaded_prompts = prompts;
        self.trajectories_outstanding = prompts * samples_per_prompt as u64;
        self.group_epoch += 1;
        Ok(())
    }
}

/// Snapshot of the running iteration, input to the termination predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationState {
    pub completed_this_iteration: usize,
    pub running: usize,
    pub capacity_q: usize,
    pub admission_queue_len: usize,
}

/// Pure early-termination predicate: the completions target is reached, or
/// occupancy has fallen below the utilization floor with nothing left to
/// backfill.
pub fn check_early_termination(state: &IterationState, thresholds: &EarlyTerm) -> bool {
    state.completed_this_iteration >= thresholds.ready_target
        || ((state.running as f64) / (state.capacity_q as f64) < thresholds.min_util
            && state.admission_queue_len == 0)
}

/// A completed trajectory waiting for training consumption.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadyTrajectory {
    pub request_id: u64,
    pub prompt_id: u64,
    pub sample_index: u32,
    pub group_epoch: u32,
    pub total_tokens: u64,
}

/// Slices the ready pool into consecutive batches of exactly
/// `update_batch_size`, shortest-first when `sorted`; leftover trajectories
/// stay in the pool for the next call within the same group.
pub fn select_train_batches(
    ready: &mut Vec<ReadyTrajectory>,
    update_batch_size: usize,
    sorted: bool,
) -> Vec<Vec<ReadyTrajectory>> {
    if sorted {
        ready.sort_by(|a, b| {
            a.total_tokens
                .cmp(&b.total_tokens)
                .then(a.prompt_id.cmp(&b.prompt_id))
                .then(a.sample_index.cmp(&b.sample_index))
        });
    }
    let full = ready.len() / update_batch_size;
    let mut batches = Vec::with_capacity(full);
    for _ in 0..full {
        batches.push(ready.drain(..update_batch_size).collect());
    }
    batches
}
