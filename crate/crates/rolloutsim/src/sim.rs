//! End-to-end simulation driver: wires the workload, engine, rollout
//! buffer, scheduler policy, and learner into one deterministic run and
//! collects the records that reports are rendered from.
//!
//! Control flow per group: load, then alternate rollout iterations
//! (admit resume candidates, step until the early-termination predicate
//! fires, harvest what is left) with training consumption (slice the ready
//! pool into update batches, compute the objective, advance the policy
//! clock). Synchronous modes replace the oversubscribed iteration with
//! capacity-sized waves that wait for every request.

use crate::buffer::{fresh_entry, RolloutBuffer, ScavengeMode};
use crate::engine::{splitmix64, synth_logprob, EngineState, GenRequest, StepCost, StepTrace};
use crate::learner::{
    apply_update, assemble_behavior_logprobs, gae_advantage, ppo_objective,
    reinforce_pp_advantage, Hyperparams, PolicyClock,
};
use crate::metrics::{bubble_ratio, throughput};
use crate::scheduler::{
    check_early_termination, select_train_batches, GroupState, IterationState, Mode,
    ReadyTrajectory, SchedulerConfig,
};
use crate::workload::{build_prompt_stream, LengthModel};
use serde::Serialize;
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scheduler(#[from] crate::scheduler::SchedulerError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Buffer(#[from] crate::buffer::BufferError),
    #[error(transparent)]
    Learner(#[from] crate::learner::LearnerError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("simulation config: {0}")]
    InvalidParams(String),
    #[error("bookkeeping invariant violated: {0}")]
    InvariantViolation(String),
}

/// Per-trajectory advantage estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvantageKind {
    /// Batch-normalized terminal reward, broadcast to every token.
    ReinforcePp,
    /// Generalized advantage estimation over a terminal-reward trajectory.
    Gae,
}

impl AdvantageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdvantageKind::ReinforcePp => "reinforce_pp",
            AdvantageKind::Gae => "gae",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s {
            "reinforce_pp" => Ok(AdvantageKind::ReinforcePp),
            "gae" => Ok(AdvantageKind::Gae),
            other => Err(SimError::InvalidParams(format!(
                "unknown advantage kind '{other}' (expected reinforce_pp or gae)"
            ))),
        }
    }
}

/// Full parameterization of one simulation run.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub model: LengthModel,
    pub scheduler: SchedulerConfig,
    pub capacity_q: usize,
    pub step_cost: StepCost,
    pub total_prompts: u64,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub advantage_kind: AdvantageKind,
    /// Record the per-event trace (admit/complete/scavenge/update).
    pub record_events: bool,
}

/// One training update's record.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    /// 1-based update ordinal.
    pub step: u64,
    /// Policy version the update was computed at (pre-increment).
    pub version: u32,
    pub group_epoch: u32,
    /// Mean total trajectory length in the batch.
    pub mean_len: f64,
    pub staleness_p50: u32,
    pub staleness_max: u32,
    pub objective: f64,
}

/// One rollout iteration's record.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration ordinal.
    pub iteration: u64,
    /// Trajectories completed during the iteration.
    pub harvested: u64,
    /// Sessions interrupted at the iteration boundary.
    pub scavenged: u64,
    /// Engine wall clock at the end of the iteration.
    pub clock: f64,
}

/// One entry of the optional event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub event_kind: &'static str,
    pub request_id: Option<u64>,
    pub active_count: usize,
    pub policy_version: u32,
}

/// Token conservation ledger: emitted = harvested + buffered + discarded.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TokenTotals {
    /// Tokens the engine ever generated.
    pub emitted: u64,
    /// Tokens in trajectories consumed by training.
    pub harvested: u64,
    /// Tokens still held by unconsumed buffer entries at shutdown.
    pub buffered: u64,
    /// Tokens thrown away by fully-on-policy scavenges.
    pub discarded: u64,
}

/// Everything a finished run exposes.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: Mode,
    pub bubble_ratio: f64,
    /// Engine tokens per wall-clock unit.
    pub throughput: f64,
    pub updates: Vec<UpdateRecord>,
    pub iterations: Vec<IterationRecord>,
    /// Total length of each consumed trajectory, in consumption order.
    pub harvested_lengths: Vec<u64>,
    pub tokens: TokenTotals,
    pub final_version: u32,
    pub groups_loaded: u32,
    /// True when max_updates stopped the run before the stream drained.
    pub truncated: bool,
    /// Trajectories left ready but never consumed (partial final group).
    pub leftover_ready: u64,
    /// First admission sequence number per group epoch.
    pub first_admit_seq: BTreeMap<u32, u64>,
    /// Last consumption sequence number per group epoch.
    pub last_consume_seq: BTreeMap<u32, u64>,
    pub events: Vec<EventRecord>,
    pub trace: StepTrace,
}

/// Deterministic terminal reward in [0, 1] for one trajectory.
pub fn synth_reward(request_id: u64, seed: u64) -> f64 {
    let h = splitmix64(splitmix64(request_id ^ 0x5e77a9d1) ^ splitmix64(seed));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Verifies the off-policiness bookkeeping of a trajectory entering a train
/// batch: segment versions strictly increase, token indices are contiguous
/// from zero, and every stored behavior logprob round-trips through the
/// deterministic logprob function for its generating version.
fn audit_entry(entry: &crate::buffer::BufferEntry) -> Result<(), SimError> {
    let fail = |message: String| Err(SimError::InvariantViolation(message));
    let mut prev_version: Option<u32> = None;
    let mut next_index = 0u64;
    for seg in &entry.segments {
        if prev_version.is_some_and(|p| p >= seg.policy_version) {
            return fail(format!(
                "request {}: segment versions not strictly increasing",
                entry.request_id
            ));
        }
        prev_version = Some(seg.policy_version);
        for &(index, logprob) in &seg.values {
            if index != next_index {
                return fail(format!(
                    "request {}: token index {index} out of order (expected {next_index})",
                    entry.request_id
                ));
            }
            next_index += 1;
            if logprob != synth_logprob(entry.request_id, index, seg.policy_version) {
                return fail(format!(
                    "request {}: behavior logprob mismatch at token {index}",
                    entry.request_id
                ));
            }
        }
    }
    if next_index != entry.partial_tokens {
        return fail(format!(
            "request {}: segment tokens {next_index} != recorded {}",
            entry.request_id, entry.partial_tokens
        ));
    }
    Ok(())
}

/// Owned snapshot of a resume candidate, taken before engine admission.
#[derive(Debug, Clone)]
struct PendingRequest {
    request_id: u64,
    prompt_id: u64,
    sample_index: u32,
    group_epoch: u32,
    intrinsic_length: u64,
    resumed_tokens: u64,
}

impl PendingRequest {
    fn to_gen_request(&self) -> GenRequest {
        GenRequest {
            request_id: self.request_id,
            prompt_id: self.prompt_id,
            sample_index: self.sample_index,
            intrinsic_length: self.intrinsic_length,
            resumed_tokens: self.resumed_tokens,
        }
    }
}

struct Driver<'a> {
    params: &'a SimParams,
    engine: EngineState,
    buffer: RolloutBuffer,
    clock: PolicyClock,
    ready: Vec<ReadyTrajectory>,
    events: Vec<EventRecord>,
    seq: u64,
    first_admit_seq: BTreeMap<u32, u64>,
    last_consume_seq: BTreeMap<u32, u64>,
}

impl<'a> Driver<'a> {
    fn record(&mut self, event_kind: &'static str, request_id: Option<u64>) {
        if self.params.record_events {
            self.events.push(EventRecord {
                t: self.engine.clock,
                event_kind,
                request_id,
                active_count: self.engine.active_count(),
                policy_version: self.clock.version,
            });
        }
    }

    fn admit(&mut self, pending: &PendingRequest) -> Result<(), SimError> {
        self.engine.admit(pending.to_gen_request(), self.clock.version)?;
        self.buffer.mark_admitted(pending.request_id);
        self.first_admit_seq.entry(pending.group_epoch).or_insert(self.seq);
        self.seq += 1;
        self.record("admit", Some(pending.request_id));
        Ok(())
    }

    fn resume_candidates(&self) -> Vec<PendingRequest> {
        self.buffer
            .resume_candidates()
            .iter()
            .map(|e| PendingRequest {
                request_id: e.request_id,
                prompt_id: e.prompt_id,
                sample_index: e.sample_index,
                group_epoch: e.group_epoch,
                intrinsic_length: e.intrinsic_length,
                resumed_tokens: e.partial_tokens,
            })
            .collect()
    }

    fn note_completions(
        &mut self,
        done: Vec<crate::engine::SessionOutput>,
        completed_this: &mut usize,
    ) -> Result<(), SimError> {
        for out in done {
            self.buffer.mark_complete(&out)?;
            let entry = self.buffer.get(out.request.request_id).unwrap();
            // Fully-on-policy purity: a harvested trajectory carries exactly
            // one segment, generated entirely at the current version.
            if self.params.scheduler.mode == Mode::SortedOnPolicy
                && (entry.segments.len() != 1
                    || entry.segments[0].policy_version != self.clock.version)
            {
                return Err(SimError::InvariantViolation(format!(
                    "request {} harvested with stale segments in fully-on-policy mode",
                    entry.request_id
                )));
            }
            self.ready.push(ReadyTrajectory {
                request_id: entry.request_id,
                prompt_id: entry.prompt_id,
                sample_index: entry.sample_index,
                group_epoch: entry.group_epoch,
                total_tokens: entry.partial_tokens,
            });
            *completed_this += 1;
            self.record("complete", Some(out.request.request_id));
        }
        Ok(())
    }

    /// Synchronous rollout: capacity-sized waves, each waiting for all of
    /// its requests; no oversubscription, no early termination.
    fn run_synchronous_iteration(&mut self) -> Result<usize, SimError> {
        let mut pending: VecDeque<PendingRequest> = self.resume_candidates().into();
        let mut completed_this = 0usize;
        while !pending.is_empty() || self.engine.active_count() > 0 {
            if self.engine.active_count() == 0 {
                for _ in 0..self.params.capacity_q {
                    match pending.pop_front() {
                        Some(p) => self.admit(&p)?,
                        None => break,
                    }
                }
            }
            let done = self.engine.step(self.clock.version)?;
            self.note_completions(done, &mut completed_this)?;
        }
        Ok(completed_this)
    }

    /// Oversubscribed rollout iteration: admit every incomplete entry,
    /// step until the termination predicate fires, harvest the remainder.
    fn run_oversubscribed_iteration(
        &mut self,
        scavenge_mode: ScavengeMode,
    ) -> Result<(usize, u64), SimError> {
        for p in self.resume_candidates() {
            self.admit(&p)?;
        }
        let mut completed_this = 0usize;
        let early_term = self.params.scheduler.early_term;
        while self.engine.active_count() > 0 {
            let done = self.engine.step(self.clock.version)?;
            self.note_completions(done, &mut completed_this)?;
            let state = IterationState {
                completed_this_iteration: completed_this,
                running: self.engine.active_count(),
                capacity_q: self.params.capacity_q,
                admission_queue_len: self.engine.queued_count(),
            };
            // The predicate is consulted only once the iteration has made
            // progress; otherwise a below-floor tail could loop on
            // scavenge-and-restart without ever completing anything.
            if completed_this >= 1 && check_early_termination(&state, &early_term) {
                break;
            }
        }
        let leftover_ids = self.engine.admitted_ids();
        let scavenged = leftover_ids.len() as u64;
        if !leftover_ids.is_empty() {
            let outs = self.engine.terminate(&leftover_ids)?;
            for out in outs {
                self.buffer.scavenge(&out, scavenge_mode)?;
                self.record("scavenge", Some(out.request.request_id));
            }
        }
        Ok((completed_this, scavenged))
    }
}

/// Runs one full simulation to completion (stream drained or max_updates
/// reached) and returns its report.
pub fn run_simulation(params: &SimParams) -> Result<RunReport, SimError> {
    params.scheduler.validate()?;
    if params.capacity_q == 0 {
        return Err(SimError::InvalidParams("capacity_q must be positive".into()));
    }
    if params.total_prompts == 0 {
        return Err(SimError::InvalidParams("total_prompts must be positive".into()));
    }
    let sched = &params.scheduler;
    let g = sched.samples_per_prompt;
    let prompts_per_group = sched.effective_group_n() * sched.rollout_batch_b;
    let stream =
        build_prompt_stream(&params.model, params.total_prompts, g, prompts_per_group, params.seed);
    let scavenge_mode = if sched.mode.keeps_progress() {
        ScavengeMode::Partial
    } else {
        ScavengeMode::FullyOnPolicy
    };

    let mut driver = Driver {
        params,
        engine: EngineState::new(params.capacity_q, params.model.cap, params.step_cost),
        buffer: RolloutBuffer::new(),
        clock: PolicyClock::default(),
        ready: Vec::new(),
        events: Vec::new(),
        seq: 0,
        first_admit_seq: BTreeMap::new(),
        last_consume_seq: BTreeMap::new(),
    };
    let mut group = GroupState::default();
    let mut next_prompt = 0usize;
    let mut iterations = Vec::new();
    let mut updates = Vec::new();
    let mut harvested_lengths = Vec::new();
    let mut harvested_tokens = 0u64;
    let mut iteration_ordinal = 0u64;
    let mut updates_applied = 0u64;
    let mut truncated = false;

    'outer: loop {
        // Load fresh prompts.
        if sched.mode == Mode::NoGrouping {
            let pool = sched.group_trajectories();
            while (driver.buffer.incomplete_count() as u64) < pool && next_prompt < stream.len() {
                let spec = &stream[next_prompt];
                for s in 0..g {
                    driver.buffer.insert_fresh(fresh_entry(
                        spec.prompt_id * g as u64 + s as u64,
                        spec.prompt_id,
                        s,
                        spec.group_epoch,
                        spec.intrinsic_lengths[s as usize],
                    ))?;
                }
                next_prompt += 1;
            }
            group.group_epoch = stream.get(next_prompt.saturating_sub(1)).map_or(0, |s| s.group_epoch + 1);
        } else if group.trajectories_outstanding == 0 {
            if next_prompt >= stream.len() {
                break;
            }
            let take = (prompts_per_group as usize).min(stream.len() - next_prompt);
            group.load(take as u64, g)?;
            for spec in &stream[next_prompt..next_prompt + take] {
                for s in 0..g {
                    driver.buffer.insert_fresh(fresh_entry(
                        spec.prompt_id * g as u64 + s as u64,
                        spec.prompt_id,
                        s,
                        spec.group_epoch,
                        spec.intrinsic_lengths[s as usize],
                    ))?;
                }
            }
            next_prompt += take;
        }
        // Nothing left to roll out: either the stream drained, or a partial
        // final group left fewer ready trajectories than one update batch.
        if driver.buffer.incomplete_count() == 0 {
            break;
        }

        iteration_ordinal += 1;
        let (harvested, scavenged) = if sched.mode.is_synchronous() {
            (driver.run_synchronous_iteration()? as u64, 0)
        } else {
            let (h, s) = driver.run_oversubscribed_iteration(scavenge_mode)?;
            (h as u64, s)
        };
        iterations.push(IterationRecord {
            iteration: iteration_ordinal,
            harvested,
            scavenged,
            clock: driver.engine.clock,
        });

        // Training consumption.
        let batches =
            select_train_batches(&mut driver.ready, sched.update_batch_size, sched.mode.sorts_batches());
        for batch in batches {
            let mut consumed = Vec::with_capacity(batch.len());
            for t in &batch {
                let entry = driver.buffer.consume(t.request_id)?;
                audit_entry(&entry)?;
                consumed.push(entry);
            }
            let rewards: Vec<f64> =
                consumed.iter().map(|e| synth_reward(e.request_id, params.seed)).collect();
            let per_traj_adv: Vec<Vec<f64>> = match params.advantage_kind {
                AdvantageKind::ReinforcePp => {
                    let adv = reinforce_pp_advantage(&rewards)?;
                    consumed
                        .iter()
                        .zip(adv)
                        .map(|(e, a)| vec![a; e.partial_tokens as usize])
                        .collect()
                }
                AdvantageKind::Gae => consumed
                    .iter()
                    .zip(&rewards)
                    .map(|(e, &r)| {
                        let n = e.partial_tokens as usize;
                        let mut rs = vec![0.0; n];
                        rs[n - 1] = r;
                        gae_advantage(&rs, &vec![0.0; n + 1], params.hyperparams.gamma, params.hyperparams.lambda)
                    })
                    .collect::<Result<_, _>>()?,
            };
            let mut new_lp = Vec::new();
            let mut behavior_lp = Vec::new();
            let mut token_versions = Vec::new();
            let mut advantages = Vec::new();
            for (entry, adv) in consumed.iter().zip(per_traj_adv) {
                let behavior = assemble_behavior_logprobs(entry)?;
                for (index, &(lp, version)) in behavior.iter().enumerate() {
                    behavior_lp.push(lp);
                    token_versions.push(version);
                    new_lp.push(synth_logprob(entry.request_id, index as u64, driver.clock.version));
                }
                advantages.extend(adv);
            }
            let (objective, _) =
                ppo_objective(&new_lp, &behavior_lp, &advantages, &params.hyperparams)?;
            let version_before = driver.clock.version;
            let stats = apply_update(&mut driver.clock, &token_versions);
            updates_applied += 1;
            let mean_len = consumed.iter().map(|e| e.partial_tokens as f64).sum::<f64>()
                / consumed.len() as f64;
            for entry in &consumed {
                harvested_lengths.push(entry.partial_tokens);
                harvested_tokens += entry.partial_tokens;
                driver.last_consume_seq.insert(entry.group_epoch, driver.seq);
                driver.seq += 1;
            }
            if sched.mode != Mode::NoGrouping {
                group.trajectories_outstanding -= consumed.len() as u64;
            }
            updates.push(UpdateRecord {
                step: updates_applied,
                version: version_before,
                group_epoch: consumed[0].group_epoch,
                mean_len,
                staleness_p50: stats.p50,
                staleness_max: stats.max,
                objective,
            });
            driver.record("update", None);
            if sched.max_updates > 0 && updates_applied >= sched.max_updates {
                truncated = true;
                break 'outer;
            }
        }
    }

    // Shutdown accounting: anything still ready was completed but never
    // consumed; its tokens stay buffered. The engine is always empty here
    // (every iteration ends by draining or harvesting it).
    debug_assert!(driver.engine.is_empty());
    let bubble = bubble_ratio(&driver.engine.trace, params.capacity_q)?;
    let thr = throughput(&driver.engine.trace, driver.engine.tokens_emitted_total)?;
    Ok(RunReport {
        mode: sched.mode,
        bubble_ratio: bubble,
        throughput: thr,
        updates,
        iterations,
        harvested_lengths,
        tokens: TokenTotals {
            emitted: driver.engine.tokens_emitted_total,
            harvested: harvested_tokens,
            buffered: driver.buffer.buffered_tokens(),
            discarded: driver.buffer.discarded_tokens,
        },
        final_version: driver.clock.version,
        groups_loaded: group.group_epoch,
        truncated,
        leftover_ready: driver.ready.len() as u64,
        first_admit_seq: driver.first_admit_seq,
        last_consume_seq: driver.last_consume_seq,
        events: driver.events,
        trace: driver.engine.trace,
    })
}
