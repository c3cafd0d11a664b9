//! Prefetch queue, worker executor and the host-to-device link model.
//!
//! The producer records a task with a readiness timestamp and appends it to a
//! FIFO queue. The worker pops the head, waits for readiness and for the link,
//! then copies the experts in one batch (or one transfer per expert when
//! batching is off) and installs them in the cache.

use std::collections::VecDeque;

use crate::cache::{CacheError, ExpertCache, ExpertId, InsertOrigin};
use crate::predictor::CriticalExpertSet;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct PrefetchTask {
    /// Experts of one layer still to load, in critical order.
    pub experts: Vec<ExpertId>,
    /// Moment the producer finished publishing the task.
    pub ready_at: SimTime,
    pub issued_layer: usize,
    pub issue_token: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PrefetchQueue {
    pending: VecDeque<PrefetchTask>,
    enqueued: u64,
    completed: u64,
    aborted: u64,
}

impl PrefetchQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, task: PrefetchTask) {
        self.enqueued += 1;
        self.pending.push_back(task);
    }

    pub fn pop(&mut self) -> Option<PrefetchTask> {
        self.pending.pop_front()
    }

    pub fn front(&self) -> Option<&PrefetchTask> {
        self.pending.front()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn aborted(&self) -> u64 {
        self.aborted
    }

    /// Drops every pending task, counting them as aborted.
    pub fn abort_pending(&mut self) -> usize {
        let n = self.pending.len();
        self.aborted += n as u64;
        self.pending.clear();
        n
    }
}

/// Appends a task for the critical experts not already resident.
pub fn enqueue_critical(
    queue: &mut PrefetchQueue,
    critical: &CriticalExpertSet,
    cache: &ExpertCache,
    now: SimTime,
    token: usize,
) -> Option<PrefetchTask> {
    let experts: Vec<ExpertId> = critical
        .experts
        .iter()
        .map(|&e| ExpertId::new(critical.layer, e))
        .filter(|id| !cache.contains(*id))
        .collect();
    if experts.is_empty() {
        return None;
    }
    let task = PrefetchTask {
        experts,
        ready_at: now,
        issued_layer: critical.layer,
        issue_token: token,
    };
    queue.push(task.clone());
    Some(task)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransferKind {
    Prefetch,
    OnDemand,
}

impl TransferKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferKind::Prefetch => "prefetch",
            TransferKind::OnDemand => "on_demand",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub start: SimTime,
    pub end: SimTime,
    pub bytes: u64,
    pub kind: TransferKind,
    pub layer: usize,
    pub experts: Vec<ExpertId>,
}

impl TransferRecord {
    pub fn duration(&self) -> SimTime {
        self.end - self.start
    }
}

/// A single non-preemptive host-to-device link.
#[derive(Debug, Clone)]
pub struct IoChannel {
    busy_until: SimTime,
    bandwidth: f64,
    expert_bytes: u64,
    launch_overhead: SimTime,
    expert_copy: SimTime,
    log: Vec<TransferRecord>,
}

impl IoChannel {
    /// `bandwidth` in bytes per second, `launch_overhead` in seconds per batch.
    pub fn new(bandwidth: f64, launch_overhead: f64, expert_bytes: u64) -> Self {
        IoChannel {
            busy_until: SimTime::ZERO,
            bandwidth,
            expert_bytes,
            launch_overhead: SimTime::from_secs_f64(launch_overhead),
            expert_copy: SimTime::from_secs_f64(expert_bytes as f64 / bandwidth),
            log: Vec::new(),
        }
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn launch_overhead(&self) -> SimTime {
        self.launch_overhead
    }

    /// Wire time of one expert, rounded to the nanosecond.
    pub fn expert_copy_time(&self) -> SimTime {
        self.expert_copy
    }

    pub fn expert_bytes(&self) -> u64 {
        self.expert_bytes
    }

    pub fn log(&self) -> &[TransferRecord] {
        &self.log
    }

    /// Duration of one launch moving `n` experts.
    pub fn batch_duration(&self, n: usize) -> SimTime {
        self.launch_overhead + self.expert_copy * n as u64
    }

    /// Occupies the link for one launch starting no earlier than `not_before`.
    pub fn transfer(
        &mut self,
        not_before: SimTime,
        experts: Vec<ExpertId>,
        kind: TransferKind,
        layer: usize,
    ) -> (SimTime, SimTime) {
        let start = not_before.max(self.busy_until);
        let end = start + self.batch_duration(experts.len());
        self.busy_until = end;
        self.log.push(TransferRecord {
            start,
            end,
            bytes: self.expert_bytes * experts.len() as u64,
            kind,
            layer,
            experts,
        });
        (start, end)
    }

    /// One launch per expert, back to back. Returns each expert's arrival.
    fn transfer_each(
        &mut self,
        not_before: SimTime,
        experts: &[ExpertId],
        kind: TransferKind,
        layer: usize,
    ) -> Vec<(ExpertId, SimTime)> {
        experts
            .iter()
            .map(|&id| (id, self.transfer(not_before, vec![id], kind, layer).1))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// One launch per task instead of one per expert.
    pub batched: bool,
    /// Copy every queued expert even when it became resident after enqueue.
    pub strict_replay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerOutcome {
    pub task: PrefetchTask,
    pub start: SimTime,
    pub end: SimTime,
    /// Experts found resident at pop time and not copied.
    pub skipped: Vec<ExpertId>,
    pub arrivals: Vec<(ExpertId, SimTime)>,
    pub evicted: Vec<ExpertId>,
}

/// Start time the worker would pick for the head task.
pub fn next_start(queue: &PrefetchQueue, channel: &IoChannel, now: SimTime) -> Option<SimTime> {
    queue
        .front()
        .map(|t| now.max(t.ready_at).max(channel.busy_until()))
}

/// Pops and executes the head task.
///
/// A task whose experts all became resident after enqueue still costs one
/// launch overhead on the link but moves no bytes.
pub fn worker_step(
    queue: &mut PrefetchQueue,
    cache: &mut ExpertCache,
    channel: &mut IoChannel,
    now: SimTime,
    opts: ExecOptions,
) -> Result<Option<WorkerOutcome>, CacheError> {
    let Some(task) = queue.pop() else {
        return Ok(None);
    };
    let not_before = now.max(task.ready_at);
    let (load, skipped): (Vec<ExpertId>, Vec<ExpertId>) = if opts.strict_replay {
        (task.experts.clone(), Vec::new())
    } else {
        task.experts.iter().partition(|id| !cache.contains(**id))
    };
    let (start, end, arrivals) = if load.is_empty() {
        let (s, e) = channel.transfer(not_before, Vec::new(), TransferKind::Prefetch, task.issued_layer);
        (s, e, Vec::new())
    } else if opts.batched {
        let (s, e) = channel.transfer(not_before, load.clone(), TransferKind::Prefetch, task.issued_layer);
        (s, e, load.iter().map(|&id| (id, e)).collect())
    } else {
        let first = not_before.max(channel.busy_until());
        let arrivals = channel.transfer_each(not_before, &load, TransferKind::Prefetch, task.issued_layer);
        let last = arrivals.last().map(|a| a.1).unwrap_or(first);
        (first, last, arrivals)
    };
    let evicted = cache.insert_batch(&load, InsertOrigin::Prefetch)?;
    queue.completed += 1;
    Ok(Some(WorkerOutcome {
        task,
        start,
        end,
        skipped,
        arrivals,
        evicted,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockingOutcome {
    /// The next layer may not start before this instant.
    pub blocking_until: SimTime,
    pub arrivals: Vec<(ExpertId, SimTime)>,
    pub evicted: Vec<ExpertId>,
}

/// Layer-synchronized prefetch: loads the non-resident critical experts now
/// and blocks the following layer until they land.
pub fn vanilla_prefetch_step(
    critical: &CriticalExpertSet,
    cache: &mut ExpertCache,
    channel: &mut IoChannel,
    now: SimTime,
    batched: bool,
) -> Result<BlockingOutcome, CacheError> {
    let load: Vec<ExpertId> = critical
        .experts
        .iter()
        .map(|&e| ExpertId::new(critical.layer, e))
        .filter(|id| !cache.contains(*id))
        .collect();
    if load.is_empty() {
        return Ok(BlockingOutcome {
            blocking_until: now,
            arrivals: Vec::new(),
            evicted: Vec::new(),
        });
    }
    let arrivals = if batched {
        let (_, end) = channel.transfer(now, load.clone(), TransferKind::Prefetch, critical.layer);
        load.iter().map(|&id| (id, end)).collect()
    } else {
        channel.transfer_each(now, &load, TransferKind::Prefetch, critical.layer)
    };
    let evicted = cache.insert_batch(&load, InsertOrigin::Prefetch)?;
    Ok(BlockingOutcome {
        blocking_until: arrivals.iter().map(|a| a.1).max().unwrap_or(now),
        arrivals,
        evicted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandOutcome {
    /// Arrival of the last missing expert.
    pub completion: SimTime,
    pub arrivals: Vec<(ExpertId, SimTime)>,
    pub evicted: Vec<ExpertId>,
}

/// Loads one layer's missing experts queued behind any in-flight transfer,
/// as a single launch when `batched` and one launch per expert otherwise.
pub fn on_demand_load(
    ids: &[ExpertId],
    cache: &mut ExpertCache,
    channel: &mut IoChannel,
    now: SimTime,
    batched: bool,
) -> Result<DemandOutcome, CacheError> {
    let load: Vec<ExpertId> = ids.iter().copied().filter(|id| !cache.contains(*id)).collect();
    if load.is_empty() {
        return Ok(DemandOutcome {
            completion: now,
            arrivals: Vec::new(),
            evicted: Vec::new(),
        });
    }
    let layer = load[0].layer;
    let arrivals = if batched {
        let (_, end) = channel.transfer(now, load.clone(), TransferKind::OnDemand, layer);
        load.iter().map(|&id| (id, end)).collect()
    } else {
        channel.transfer_each(now, &load, TransferKind::OnDemand, layer)
    };
    let evicted = cache.insert_batch(&load, InsertOrigin::OnDemand)?;
    Ok(DemandOutcome {
        completion: arrivals.iter().map(|a| a.1).max().unwrap_or(now),
        arrivals,
        evicted,
    })
}
