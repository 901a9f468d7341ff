//! Stateful rollout buffer: unconsumed prompts, scavenged partial
//! trajectories with their logprob segments, completion flags, and
//! lifecycle counters.
//!
//! In partial mode an interrupted trajectory keeps its tokens and behavior
//! logprobs and resumes under a newer policy; in fully on-policy mode the
//! tokens are discarded and the prompt restarts from scratch. Either way
//! the lifecycle counter records every interruption, so resume ordering can
//! prioritize the oldest survivors and bound starvation.

use crate::engine::SessionOutput;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BufferError {
    #[error("entry {0} not found")]
    NotFound(u64),
    #[error("entry {0} already exists")]
    Duplicate(u64),
    #[error("entry {0} is already completed")]
    AlreadyCompleted(u64),
    #[error("entry {0} is not completed")]
    NotCompleted(u64),
}

/// Training mode governing what scavenging keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScavengeMode {
    FullyOnPolicy,
    Partial,
}

/// One contiguous run of tokens generated under a single policy version.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub policy_version: u32,
    /// (trajectory-global token index, logprob), one per token.
    pub values: Vec<(u64, f64)>,
}

/// Buffer record for one trajectory (one sample of one prompt).
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub request_id: u64,
    pub prompt_id: u64,
    pub sample_index: u32,
    pub group_epoch: u32,
    pub intrinsic_length: u64,
    /// Tokens accumulated so far across sessions.
    pub partial_tokens: u64,
    pub segments: Vec<Segment>,
    pub completed: bool,
    /// Number of rollout iterations this entry has survived (interruptions).
    pub lifecycle: u32,
    /// Whether this entry has ever been admitted to the engine.
    pub ever_admitted: bool,
}

impl BufferEntry {
    fn check_segment_invariants(&self) {
        debug_assert_eq!(
            self.segments.iter().map(|s| s.values.len() as u64).sum::<u64>(),
            self.partial_tokens
        );
        debug_assert!(self.segments.windows(2).all(|w| w[0].policy_version < w[1].policy_version));
    }
}

/// Single-owner store keyed by request id; iteration order is deterministic.
#[derive(Debug, Default, Clone)]
pub struct RolloutBuffer {
    entries: BTreeMap<u64, BufferEntry>,
    /// Tokens thrown away by on-policy scavenges (conservation accounting).
    pub discarded_tokens: u64,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_fresh(&mut self, entry: BufferEntry) -> Result<(), BufferError> {
        if self.entries.contains_key(&entry.request_id) {
            return Err(BufferError::Duplicate(entry.request_id));
        }
        self.entries.insert(entry.request_id, entry);
        Ok(())
    }

    pub fn get(&self, request_id: u64) -> Option<&BufferEntry> {
        self.entries.get(&request_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total partial tokens currently held (conservation accounting).
    pub fn buffered_tokens(&self) -> u64 {
        self.entries.values().map(|e| e.partial_tokens).sum()
    }

    fn append_session(entry: &mut BufferEntry, output: &SessionOutput) {
        if output.tokens_emitted == 0 {
            return;
        }
        entry.partial_tokens += output.tokens_emitted;
        // A resume under an unchanged policy is the same behavior
        // distribution, so it extends the trailing segment rather than
        // opening one; segment versions stay strictly increasing.
        match entry.segments.last_mut() {
            Some(last) if last.policy_version == output.policy_version => {
                last.values.extend_from_slice(&output.segment);
            }
            _ => entry.segments.push(Segment {
                policy_version: output.policy_version,
                values: output.segment.clone(),
            }),
        }
    }

    /// Returns an interrupted session to the buffer.
    ///
    /// Partial mode appends the tokens and logprobs; fully on-policy mode
    /// discards them and resets the entry to a bare prompt. Both count the
    /// interruption in the lifecycle, including never-started queued
    /// entries returned with empty sessions.
    pub fn scavenge(&mut self, output: &SessionOutput, mode: ScavengeMode) -> Result<(), BufferError> {
        let id = output.request.request_id;
        let entry = self.entries.get_mut(&id).ok_or(BufferError::NotFound(id))?;
        if entry.completed {
            return Err(BufferError::AlreadyCompleted(id));
        }
        match mode {
            ScavengeMode::Partial => Self::append_session(entry, output),
            ScavengeMode::FullyOnPolicy => {
                self.discarded_tokens += entry.partial_tokens + output.tokens_emitted;
                entry.partial_tokens = 0;
                entry.segments.clear();
            }
        }
        entry.lifecycle += 1;
        entry.check_segment_invariants();
        Ok(())
    }

    /// Marks an entry complete, appending its final session segment.
    pub fn mark_complete(&mut self, output: &SessionOutput) -> Result<(), BufferError> {
        let id = output.request.request_id;
        let entry = self.entries.get_mut(&id).ok_or(BufferError::NotFound(id))?;
        if entry.completed {
            return Err(BufferError::AlreadyCompleted(id));
        }
        Self::append_session(entry, output);
        entry.completed = true;
        entry.check_segment_invariants();
        debug_assert_eq!(entry.partial_tokens, output.total_tokens);
        Ok(())
    }

    /// Removes and returns a completed entry for training consumption;
    /// each entry can be consumed exactly once.
    pub fn consume(&mut self, request_id: u64) -> Result<BufferEntry, BufferError> {
        match self.entries.get(&request_id) {
            None => Err(BufferError::NotFound(request_id)),
            Some(e) if !e.completed => Err(BufferError::NotCompleted(request_id)),
            Some(_) => Ok(self.entries.remove(&request_id).unwrap()),
        }
    }

    /// All incomplete entries ordered (lifecycle desc, prompt_id asc,
    /// sample_index asc): oldest survivors are re-admitted first.
    pub fn resume_candidates(&self) -> Vec<&BufferEntry> {
        let mut out: Vec<&BufferEntry> =
            self.entries.values().filter(|e| !e.completed).collect();
        out.sort_by(|a, b| {
            b.lifecycle
                .cmp(&a.lifecycle)
                .then(a.prompt_id.cmp(&b.prompt_id))
                .then(a.sample_index.cmp(&b.sample_index))
        });
        out
    }

    pub fn mark_admitted(&mut self, request_id: u64) {
        if let Some(e) = self.entries.get_mut(&request_id) {
            e.ever_admitted = true;
        }
    }

    pub fn incomplete_count(&self) -> usize {
        self.entries.values().filter(|e| !e.completed).count()
    }
}

pub fn fresh_entry(
    request_id: u64,
    prompt_id: u64,
    sample_index: u32,
    group_epoch: u32,
    intrinsic_length: u64,
) -> BufferEntry {
    BufferEntry {
        request_id,
        prompt_id,
        sample_index,
        group_epoch,
        intrinsic_length,
        partial_tokens: 0,
        segments: Vec::new(),
        completed: false,
        lifecycle: 0,
        ever_admitted: false,
    }
}
