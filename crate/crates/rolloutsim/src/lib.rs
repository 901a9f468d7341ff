//! Deterministic discrete-event simulator and metrics library for
//! reinforcement-learning rollout scheduling.
//!
//! The library models the generation phase of RL training for large
//! language models: a continuous-batching engine with bounded concurrency,
//! a stateful rollout buffer that can resume interrupted generations, and
//! schedulers that trade rollout utilization against training
//! off-policiness. Everything is deterministic: one `(config, seed)` pair
//! reproduces bit-identical results.
//!
//! Modules:
//! - [`workload`]: long-tailed synthetic generation-length model and
//!   prompt streams.
//! - [`engine`]: the continuous-batching engine state machine with a
//!   wall-clock step trace.
//! - [`buffer`]: the rollout buffer holding partial trajectories with
//!   their per-version behavior logprobs.
//! - [`scheduler`]: scheduling modes, early termination, grouped loading,
//!   and sorted selective batching.
//! - [`learner`]: the clipped policy objective, advantage estimators, and
//!   the policy version clock.
//! - [`metrics`]: bubble ratio, throughput, length skew, and curriculum
//!   statistics.
//! - [`sim`]: the end-to-end driver tying the above together.
//! - [`config`], [`report`], [`cli`]: experiment plumbing.
//!
//! # Example
//!
//! Run one small simulation in the oversubscribed partial-resume mode and
//! check token conservation:
//!
//! ```
//! use rolloutsim::engine::StepCost;
//! use rolloutsim::learner::Hyperparams;
//! use rolloutsim::scheduler::{EarlyTerm, Mode, SchedulerConfig};
//! use rolloutsim::sim::{run_simulation, AdvantageKind, SimParams};
//! use rolloutsim::workload::LengthModel;
//!
//! let params = SimParams {
//!     model: LengthModel::new(3.0, 0.5, 64, 0.05, 2).unwrap(),
//!     scheduler: SchedulerConfig {
//!         mode: Mode::SortedPartial,
//!         rollout_batch_b: 8,
//!         group_size_n: 2,
//!         samples_per_prompt: 2,
//!         update_batch_size: 16,
//!         early_term: EarlyTerm { ready_target: 16, min_util: 0.1 },
//!         max_updates: 0,
//!     },
//!     capacity_q: 8,
//!     step_cost: StepCost::default(),
//!     total_prompts: 32,
//!     seed: 7,
//!     hyperparams: Hyperparams::default(),
//!     advantage_kind: AdvantageKind::ReinforcePp,
//!     record_events: false,
//! };
//! let report = run_simulation(&params).unwrap();
//! assert!(report.bubble_ratio >= 0.0 && report.bubble_ratio <= 1.0);
//! assert_eq!(
//!     report.tokens.emitted,
//!     report.tokens.harvested + report.tokens.buffered + report.tokens.discarded,
//! );
//! ```

pub mod buffer;
pub mod cli;
pub mod config;
pub mod engine;
pub mod learner;
pub mod metrics;
pub mod report;
pub mod scheduler;
pub mod sim;
pub mod workload;
