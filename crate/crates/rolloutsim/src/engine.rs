//! Discrete-event model of an autoregressive rollout engine.
//!
//! The engine holds a running set of at most `Q` requests under continuous
//! batching: each step every running request emits one token, completed
//! requests free their slots, and freed slots are backfilled from a FIFO
//! admission queue before the next step. The step cost is occupancy
//! independent by default (`per_active = 0`), which is what converts idle
//! slots into lost throughput.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("request {0} already admitted")]
    DuplicateRequest(u64),
    #[error("stepping an empty engine")]
    EmptyStep,
    #[error("unknown request {0}")]
    UnknownRequest(u64),
}

/// Lower bound of synthesized logprob values.
pub const LOGPROB_LO: f64 = -5.0;
/// Upper bound of synthesized logprob values.
pub const LOGPROB_HI: f64 = -0.05;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic stand-in for a model's per-token log probability.
///
/// The value depends on the policy version, so off-policiness is a
/// measurable numeric signal: regenerating a token under a newer policy
/// yields a different logprob, and exact bookkeeping of which version
/// produced each token is machine-checkable.
pub fn synth_logprob(request_id: u64, token_index: u64, policy_version: u32) -> f64 {
    let h = splitmix64(
        splitmix64(request_id) ^ splitmix64(token_index.wrapping_add(0x51ed2701)) ^ splitmix64(policy_version as u64),
    );
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    LOGPROB_LO + u * (LOGPROB_HI - LOGPROB_LO)
}

/// A request handed to the engine: identity plus the latent target length.
#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub request_id: u64,
    pub prompt_id: u64,
    pub sample_index: u32,
    /// Hidden target length; the engine discovers it token by token.
    pub intrinsic_length: u64,
    /// Tokens already accumulated in earlier sessions (partial-mode resume).
    pub resumed_tokens: u64,
}

#[derive(Debug, Clone)]
struct RunningRequest {
    request: GenRequest,
    tokens_emitted: u64,
    /// (trajectory-global token index, logprob) for tokens of this session.
    segment: Vec<(u64, f64)>,
    admitted_version: u32,
}

impl RunningRequest {
    fn total_tokens(&self) -> u64 {
        self.request.resumed_tokens + self.tokens_emitted
    }
}

/// Output of one engine session for one request, completed or interrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub request: GenRequest,
    /// Tokens emitted in this session only.
    pub tokens_emitted: u64,
    /// Total tokens including resumed prefix.
    pub total_tokens: u64,
    pub segment: Vec<(u64, f64)>,
    pub policy_version: u32,
}

/// One trace record: wall-clock duration and pre-step active count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub dt: f64,
    pub active: usize,
}

/// Time-ordered step records; the input to the bubble ratio.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTrace {
    pub records: Vec<TraceRecord>,
    pub total_time: f64,
}

impl StepTrace {
    fn push(&mut self, dt: f64, active: usize) {
        self.records.push(TraceRecord { dt, active });
        self.total_time += dt;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCost {
    pub base: f64,
    pub per_active: f64,
}

impl Default for StepCost {
    fn default() -> Self {
        Self { base: 1.0, per_active: 0.0 }
    }
}

/// The engine state machine. Single-owner, strictly single-threaded.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub capacity_q: usize,
    /// Max generation length; requests complete at min(intrinsic, cap).
    pub cap: u64,
    pub step_cost: StepCost,
    pub clock: f64,
    running: Vec<RunningRequest>,
    admission_queue: std::collections::VecDeque<(GenRequest, u32)>,
    pub trace: StepTrace,
    /// Total tokens emitted over the engine's lifetime.
    pub tokens_emitted_total: u64,
    steps_executed: u64,
}

impl EngineState {
    pub fn new(capacity_q: usize, cap: u64, step_cost: StepCost) -> Self {
        assert!(capacity_q > 0, "engine capacity must be positive");
        Self {
            capacity_q,
            cap,
            step_cost,
            clock: 0.0,
            running: Vec::new(),
            admission_queue: std::collections::VecDeque::new(),
            trace: StepTrace::default(),
            tokens_emitted_total: 0,
            steps_executed: 0,
        }
    }

    pub fn active_count(&self) -> usize {
        self.running.len()
    }

    pub fn queued_count(&self) -> usize {
        self.admission_queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.running.is_empty() && self.admission_queue.is_empty()
    }

    pub fn steps_executed(&self) -> u64 {
        self.steps_executed
    }

    fn contains(&self, request_id: u64) -> bool {
        self.running.iter().any(|r| r.request.request_id == request_id)
            || self.admission_queue.iter().any(|(r, _)| r.request_id == request_id)
    }

    fn activate(&mut self, request: GenRequest, version: u32) {
        self.running.push(RunningRequest {
            request,
            tokens_emitted: 0,
            segment: Vec::new(),
            admitted_version: version,
        });
    }

    fn backfill(&mut self) {
        while self.running.len() < self.capacity_q {
            match self.admission_queue.pop_front() {
                Some((req, version)) => self.activate(req, version),
                None => break,
            }
        }
    }

    /// Admits a request: active immediately if a slot is free, queued
    /// otherwise. Oversubscription is simply admitting more than `Q`.
    pub fn admit(&mut self, request: GenRequest, policy_version: u32) -> Result<(), EngineError> {
        if self.contains(request.request_id) {
            return Err(EngineError::DuplicateRequest(request.request_id));
        }
        if self.running.len() < self.capacity_q {
            self.activate(request, policy_version);
        } else {
            self.admission_queue.push_back((request, policy_version));
        }
        Ok(())
    }

    /// Advances one decode step: every active request emits one token.
    ///
    /// Returns the sessions of requests that completed this step, in
    /// running-set order. Freed slots are backfilled before the caller can
    /// observe the state again.
    pub fn step(&mut self, policy_version: u32) -> Result<Vec<SessionOutput>, EngineError> {
        if self.running.is_empty() {
            return Err(EngineError::EmptyStep);
        }
        let active = self.running.len();
        self.trace.push(self.step_cost.base + self.step_cost.per_active * active as f64, active);
        self.clock += self.step_cost.base + self.step_cost.per_active * active as f64;
        self.steps_executed += 1;
        self.tokens_emitted_total += active as u64;

        let cap = self.cap;
        let mut completed = Vec::new();
        let mut idx = 0;
        while idx < self.running.len() {
            let r = &mut self.running[idx];
            debug_assert_eq!(r.admitted_version, policy_version, "sessions must not span updates");
            let token_index = r.total_tokens();
            r.segment.push((token_index, synth_logprob(r.request.request_id, token_index, policy_version)));
            r.tokens_emitted += 1;
            if r.total_tokens() >= r.request.intrinsic_length.min(cap) {
                let done = self.running.remove(idx);
                completed.push(SessionOutput {
                    total_tokens: done.total_tokens(),
                    tokens_emitted: done.tokens_emitted,
                    request: done.request,
                    segment: done.segment,
                    policy_version: done.admitted_version,
                });
            } else {
                idx += 1;
            }
        }
        self.backfill();
        Ok(completed)
    }

    /// Removes the named requests, returning their partial sessions.
    /// Queued never-started requests yield empty segments.
    pub fn terminate(&mut self, request_ids: &[u64]) -> Result<Vec<SessionOutput>, EngineError> {
        for &id in request_ids {
            if !self.contains(id) {
                return Err(EngineError::UnknownRequest(id));
            }
        }
        let mut outputs = Vec::with_capacity(request_ids.len());
        for &id in request_ids {
            if let Some(pos) = self.running.iter().position(|r| r.request.request_id == id) {
                let r = self.running.remove(pos);
                outputs.push(SessionOutput {
                    total_tokens: r.total_tokens(),
                    tokens_emitted: r.tokens_emitted,
                    request: r.request,
                    segment: r.segment,
                    policy_version: r.admitted_version,
                });
            } else {
                let pos = self.admission_queue.iter().position(|(r, _)| r.request_id == id).unwrap();
                let (req, version) = self.admission_queue.remove(pos).unwrap();
                outputs.push(SessionOutput {
                    total_tokens: req.resumed_tokens,
                    tokens_emitted: 0,
                    request: req,
                    segment: Vec::new(),
                    policy_version: version,
                });
            }
        }
        self.backfill();
        Ok(outputs)
    }

    /// Ids of every request currently active or queued, admission order.
    pub fn admitted_ids(&self) -> Vec<u64> {
        self.running
            .iter()
            .map(|r| r.request.request_id)
            .chain(self.admission_queue.iter().map(|(r, _)| r.request_id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64, len: u64) -> GenRequest {
        GenRequest { request_id: id, prompt_id: id, sample_index: 0, intrinsic_length: len, resumed_tokens: 0 }
    }

    fn engine(q: usize) -> EngineState {
        EngineState::new(q, 8192, StepCost::default())
    }

    #[test]
    fn admit_fills_slot_then_queues() {
        let mut e = engine(2);
        e.admit(req(0, 5), 0).unwrap();
        assert_eq!(e.active_count(), 1);
        let mut e1 = engine(1);
        e1.admit(req(0, 1), 0).unwrap();
        e1.admit(req(1, 1), 0).unwrap();
        assert_eq!((e1.active_count(), e1.queued_count()), (1, 1));
        let done = e1.step(0).unwrap();
        assert_eq!(done[0].request.request_id, 0);
        assert_eq!(e1.active_count(), 1);
        assert_eq!(e1.queued_count(), 0);
    }

    #[test]
    fn duplicate_admission_rejected() {
        let mut e = engine(2);
        e.admit(req(0, 5), 0).unwrap();
        assert_eq!(e.admit(req(0, 3), 0), Err(EngineError::DuplicateRequest(0)));
    }

    #[test]
    fn oversubscription_splits_running_and_queue() {
        let mut e = engine(128);
        for id in 0..512 {
            e.admit(req(id, 100), 0).unwrap();
        }
        assert_eq!(e.active_count(), 128);
        assert_eq!(e.queued_count(), 384);
    }

    #[test]
    fn single_request_runs_to_exact_length() {
        let mut e = engine(2);
        e.admit(req(0, 3), 0).unwrap();
        assert!(e.step(0).unwrap().is_empty());
        assert!(e.step(0).unwrap().is_empty());
        let done = e.step(0).unwrap();
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].total_tokens, 3);
        assert_eq!(done[0].segment.len(), 3);
        let counts: Vec<usize> = e.trace.records.iter().map(|r| r.active).collect();
        assert_eq!(counts, vec![1, 1, 1]);
        assert_eq!(e.clock, 3.0);
    }

    #[test]
    fn two_requests_trace_matches_hand_simulation() {
        let mut e = engine(2);
        e.admit(req(0, 4), 0).unwrap();
        e.admit(req(1, 10), 0).unwrap();
        let mut completions = Vec::new();
        for _ in 0..10 {
            for done in e.step(0).unwrap() {
                completions.push((done.request.request_id, e.clock));
            }
        }
        assert_eq!(completions, vec![(0, 4.0), (1, 10.0)]);
        let counts: Vec<usize> = e.trace.records.iter().map(|r| r.active).collect();
        assert_eq!(counts, vec![2, 2, 2, 2, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn cap_completes_requests_early() {
        let mut e = EngineState::new(1, 5, StepCost::default());
        e.admit(req(0, 100), 0).unwrap();
        let mut done = Vec::new();
        while done.is_empty() {
            done = e.step(0).unwrap();
        }
        assert_eq!(done[0].total_tokens, 5);
    }

    #[test]
    fn stepping_empty_engine_is_an_error() {
        let mut e = engine(2);
        assert_eq!(e.step(0), Err(EngineError::EmptyStep));
    }

    #[test]
    fn token_conservation_over_a_run() {
        let mut e = engine(3);
        let lengths = [4u64, 7, 2, 9, 1];
        for (id, &len) in lengths.iter().enumerate() {
            e.admit(req(id as u64, len), 0).unwrap();
        }
        while !e.is_empty() {
            e.step(0).unwrap();
        }
        assert_eq!(e.tokens_emitted_total, lengths.iter().sum::<u64>());
    }

    #[test]
    fn terminate_returns_partials_and_empties() {
        let mut e = engine(1);
        e.admit(req(0, 10), 3).unwrap();
        e.admit(req(1, 10), 3).unwrap();
        for _ in 0..5 {
            e.step(3).unwrap();
        }
        let outs = e.terminate(&[0, 1]).unwrap();
        assert_eq!(outs[0].tokens_emitted, 5);
        assert_eq!(outs[0].segment.len(), 5);
        assert_eq!(outs[0].policy_version, 3);
        assert_eq!(outs[1].tokens_emitted, 0);
        assert!(outs[1].segment.is_empty());
        assert!(e.is_empty());
        assert_eq!(e.terminate(&[7]), Err(EngineError::UnknownRequest(7)));
    }

    #[test]
    fn work_conservation_slot_never_idle_with_queue() {
        let mut e = engine(2);
        for id in 0..6 {
            e.admit(req(id, 3 + id), 0).unwrap();
        }
        while !e.is_empty() {
            e.step(0).unwrap();
            assert!(e.active_count() == e.capacity_q || e.queued_count() == 0);
        }
    }

    #[test]
    fn synth_logprob_is_deterministic_in_range_and_version_sensitive() {
        assert_eq!(synth_logprob(3, 14, 2), synth_logprob(3, 14, 2));
        let mut differing = 0;
        for i in 0..10_000u64 {
            let (id, idx) = (splitmix64(i), splitmix64(i ^ 0xabcd) % 8192);
            let v = synth_logprob(id, idx, 5);
            assert!((LOGPROB_LO..=LOGPROB_HI).contains(&v), "out of range: {v}");
            if v != synth_logprob(id, idx, 6) {
                differing += 1;
            }
        }
        assert!(differing >= 9_900, "only {differing} of 10000 pairs differ across versions");
    }

    #[test]
    fn resumed_request_continues_global_token_indices() {
        let mut e = engine(1);
        e.admit(
            GenRequest { request_id: 9, prompt_id: 9, sample_index: 0, intrinsic_length: 7, resumed_tokens: 5 },
            1,
        )
        .unwrap();
        e.step(1).unwrap();
        let done = e.step(1).unwrap();
        assert_eq!(done[0].total_tokens, 7);
        assert_eq!(done[0].segment.iter().map(|s| s.0).collect::<Vec<_>>(), vec![5, 6]);
    }

    #[test]
    fn trace_sums_to_clock() {
        let mut e = engine(2);
        e.admit(req(0, 4), 0).unwrap();
        e.admit(req(1, 6), 0).unwrap();
        while !e.is_empty() {
            e.step(0).unwrap();
        }
        assert_eq!(e.trace.total_time, e.clock);
        assert_eq!(e.trace.records.len() as u64, e.steps_executed());
    }
}
