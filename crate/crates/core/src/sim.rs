//! Discrete-event replay of speculative decoding with expert offloading.
//!
//! Each iteration drafts `N` tokens, verifies the `N + 1` positions starting
//! at the last accepted token through every target layer, and samples how
//! many drafts are accepted. Two compute streams (draft, target) run one after
//! the other; transfers share a single link and overlap compute.
//!
//! Per verification layer the target needs the union of experts activated by
//! the verified positions. Resident experts compute first; missing ones are
//! loaded on demand (one launch per layer with batched I/O, one per expert
//! without) and compute once they land. Experts still in flight from a
//! prefetch count as hits but are waited for.
//!
//! Baseline policies leave the link idle while drafting. `CoarseHistory`
//! queues its whole-model prefetch when verification starts, ahead of the
//! first on-demand load.
//!
//! The engine is single-threaded and fully determined by config, trace and
//! seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;

use crate::cache::{CacheError, ExpertCache, ExpertId, InsertOrigin};
use crate::config::{ConfigError, ExperimentConfig, Policy};
use crate::cutoff::{solve_cutoff, CutoffInput};
use crate::predictor::{
    predict_scores, select_critical, CriticalExpertSet, HistoryCounter, PredictorModel,
};
use crate::prefetch::{
    enqueue_critical, on_demand_load, vanilla_prefetch_step, worker_step, ExecOptions, IoChannel,
    PrefetchQueue,
};
use crate::report::{
    ComputeSlot, IterationRecord, LatencyBreakdown, SimReport, SlotKind, Stream, Timeline,
};
use crate::time::SimTime;
use crate::trace::{ActivationTrace, TraceError};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("cache of {slots} slots cannot hold a layer's working set plus one prefetch batch ({needed} experts)")]
    CacheTooSmall { slots: usize, needed: usize },
    #[error("cache invariant broken: {0}")]
    Cache(#[from] CacheError),
    #[error("{0}")]
    Invalid(String),
}

/// Runs one experiment with the predictor described by its policy section.
pub fn simulate(cfg: &ExperimentConfig, trace: &ActivationTrace) -> Result<SimReport, SimError> {
    simulate_with_predictor(cfg, trace, cfg.policy.predictor_model())
}

pub fn simulate_with_predictor(
    cfg: &ExperimentConfig,
    trace: &ActivationTrace,
    predictor: PredictorModel,
) -> Result<SimReport, SimError> {
    cfg.validate()?;
    trace.check_matches(&cfg.model)?;
    let mut engine = Engine::new(cfg, trace, predictor)?;
    engine.run()?;
    Ok(engine.finish())
}

/// Deepest drafting-stage prefetch layer the engine will use for `cfg`.
pub fn effective_cutoff(cfg: &ExperimentConfig) -> Option<usize> {
    if cfg.policy.policy != Policy::DraftPrefetch {
        return None;
    }
    let limit = cfg.model.num_layers.min(cfg.model.draft_layers) - 1;
    let l = match cfg.policy.cutoff_layer {
        Some(l) => Some(l),
        None => solve_cutoff(&CutoffInput::from_config(cfg)).l,
    };
    l.map(|l| l.min(limit))
}

struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    trace: &'a ActivationTrace,
    predictor: PredictorModel,
    cache: ExpertCache,
    channel: IoChannel,
    queue: PrefetchQueue,
    history: HistoryCounter,
    arrivals: HashMap<ExpertId, SimTime>,
    accept_rng: ChaCha8Rng,
    opts: ExecOptions,
    cutoff: Option<usize>,
    slots: usize,
    now: SimTime,
    t_target: SimTime,
    t_draft: SimTime,
    t_predict: SimTime,
    draft_time: SimTime,
    load_time: SimTime,
    target_time: SimTime,
    emitted: usize,
    timeline: Timeline,
}

impl<'a> Engine<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        trace: &'a ActivationTrace,
        predictor: PredictorModel,
    ) -> Result<Self, SimError> {
        let model = &cfg.model;
        let policy = &cfg.policy;
        let slots = cfg.cache_slots();
        let positions = policy.draft_length + 1;
        let union = (positions * model.topk_activated + model.shared_experts)
            .min(model.experts_per_layer);
        let batch = match policy.policy {
            Policy::OnDemand => 0,
            Policy::CoarseHistory | Policy::DraftPrefetch => policy.prefetch_k,
            Policy::GatingNextLayer => (positions * policy.prefetch_k).min(model.experts_per_layer),
        };
        if slots < union + batch {
            return Err(SimError::CacheTooSmall {
                slots,
                needed: union + batch,
            });
        }
        let mut cache = ExpertCache::with_mode(slots, policy.cache_mode, model.num_layers);
        if policy.warm_cache {
            warm(&mut cache, trace, slots)?;
        }
        Ok(Engine {
            cfg,
            trace,
            predictor,
            cache,
            channel: IoChannel::new(
                cfg.hardware.pcie_bandwidth,
                cfg.hardware.io_launch_overhead,
                model.expert_size,
            ),
            queue: PrefetchQueue::new(),
            history: HistoryCounter::new(model.num_layers, model.experts_per_layer),
            arrivals: HashMap::new(),
            accept_rng: ChaCha8Rng::seed_from_u64(policy.seed),
            opts: ExecOptions {
                batched: policy.batched_io,
                strict_replay: policy.strict_replay,
            },
            cutoff: effective_cutoff(cfg),
            slots,
            now: SimTime::ZERO,
            t_target: SimTime::from_secs_f64(cfg.timings.t_comp_target),
            t_draft: SimTime::from_secs_f64(cfg.timings.t_comp_draft),
            t_predict: SimTime::from_secs_f64(cfg.timings.t_predict),
            draft_time: SimTime::ZERO,
            load_time: SimTime::ZERO,
            target_time: SimTime::ZERO,
            emitted: 0,
            timeline: Timeline::default(),
        })
    }

    fn run(&mut self) -> Result<(), SimError> {
        let total = self.trace.len();
        let mut pos = 0;
        let mut index = 0;
        while pos < total {
            let emitted = self.iteration(index, pos)?;
            pos += emitted;
            index += 1;
        }
        Ok(())
    }

    /// Executes every queued task whose transfer would start by `t`; the
    /// worker wins ties against demand loads issued at `t`.
    fn drain(&mut self, t: SimTime) -> Result<(), SimError> {
        while let Some(task) = self.queue.front() {
            let start = task.ready_at.max(self.channel.busy_until());
            if start > t {
                break;
            }
            let out = worker_step(&mut self.queue, &mut self.cache, &mut self.channel, start, self.opts)?
                .expect("queue is non-empty");
            for (id, at) in out.arrivals {
                self.arrivals.insert(id, at);
            }
        }
        Ok(())
    }

    fn predict(&self, token: usize, layer: usize) -> Vec<f64> {
        predict_scores(
            &self.predictor,
            self.trace.layer(token, layer),
            &self.history,
            token,
            layer,
        )
    }

    fn slot(&mut self, stream: Stream, kind: SlotKind, iteration: usize, layer: usize, len: SimTime) {
        let start = self.now;
        self.now += len;
        self.timeline.compute.push(ComputeSlot {
            stream,
            kind,
            iteration,
            layer,
            start,
            end: self.now,
        });
    }

    fn iteration(&mut self, index: usize, pos: usize) -> Result<usize, SimError> {
        let model = &self.cfg.model;
        let policy = &self.cfg.policy;
        let last = self.trace.len() - 1;
        let n = policy.draft_length;
        let positions: Vec<usize> = (pos..=(pos + n).min(last)).collect();
        let start = self.now;
        let stats_before = self.cache.stats();

        // Drafting: N sequential passes through the draft model.
        for i in 0..n {
            let token = (pos + i).min(last);
            for j in 0..model.draft_layers {
                let mut blocked_until = self.now;
                if self.cutoff.is_some_and(|l| j <= l) {
                    self.slot(Stream::Draft, SlotKind::Predict, index, j, self.t_predict);
                    self.draft_time += self.t_predict;
                    let critical = select_critical(self.predict(token, j), policy.prefetch_k, j);
                    if policy.worker_prefetch {
                        self.drain(self.now)?;
                        enqueue_critical(&mut self.queue, &critical, &self.cache, self.now, token);
                    } else {
                        let out = vanilla_prefetch_step(
                            &critical,
                            &mut self.cache,
                            &mut self.channel,
                            self.now,
                            policy.batched_io,
                        )?;
                        for (id, at) in out.arrivals {
                            self.arrivals.insert(id, at);
                        }
                        blocked_until = out.blocking_until;
                    }
                }
                self.slot(Stream::Draft, SlotKind::DraftLayer, index, j, self.t_draft);
                self.draft_time += self.t_draft;
                if blocked_until > self.now {
                    self.load_time += blocked_until - self.now;
                    self.now = blocked_until;
                }
            }
        }
        let draft_end = self.now;

        if policy.policy == Policy::CoarseHistory {
            for l in 0..model.num_layers {
                let scores = self.history.distribution(l, model.shared_experts);
                let critical = select_critical(scores, policy.prefetch_k, l);
                enqueue_critical(&mut self.queue, &critical, &self.cache, self.now, pos);
            }
        }

        // Verification: every target layer over all verified positions.
        for l in 0..model.num_layers {
            self.verify_layer(index, l, &positions)?;
        }
        self.queue.abort_pending();
        let now = self.now;
        self.arrivals.retain(|_, at| *at > now);

        // Acceptance: one draw per draft token, longest accepted prefix.
        let draws: Vec<f64> = (0..n).map(|_| self.accept_rng.random::<f64>()).collect();
        let accepted = draws.iter().take_while(|u| **u < policy.acceptance_rate).count();
        let emitted = (accepted + 1).min(self.trace.len() - pos);
        for t in pos..pos + emitted {
            self.history.record(&self.trace.tokens[t]);
        }
        self.emitted += emitted;
        let stats = self.cache.stats();
        self.timeline.iterations.push(IterationRecord {
            index,
            position: pos,
            verified: positions.len(),
            accepted,
            emitted,
            start,
            draft_end,
            end: self.now,
            hits: stats.hits - stats_before.hits,
            misses: stats.misses - stats_before.misses,
        });
        Ok(emitted)
    }

    fn verify_layer(&mut self, index: usize, l: usize, positions: &[usize]) -> Result<(), SimError> {
        let policy = &self.cfg.policy;
        self.drain(self.now)?;
        let start = self.now;

        let mut union: Vec<ExpertId> = positions
            .iter()
            .flat_map(|&p| self.trace.layer(p, l).all_experts())
            .map(|e| ExpertId::new(l, e))
            .collect();
        union.sort_unstable();
        union.dedup();

        let (mut hits, mut misses) = (Vec::new(), Vec::new());
        for &id in &union {
            if self.cache.lookup(id, true) {
                hits.push(id);
            } else {
                misses.push(id);
            }
        }
        self.cache.pin(&hits)?;
        let demand = on_demand_load(
            &misses,
            &mut self.cache,
            &mut self.channel,
            start,
            policy.batched_io,
        )?;
        self.cache.pin(&misses)?;
        for &(id, at) in &demand.arrivals {
            self.arrivals.insert(id, at);
        }
        let mut ready: Vec<(SimTime, ExpertId)> = union
            .iter()
            .map(|id| (self.arrivals.get(id).copied().unwrap_or(start).max(start), *id))
            .collect();

        let mut blocked_until = start;
        if policy.policy == Policy::GatingNextLayer && l + 1 < self.cfg.model.num_layers {
            let mut experts: Vec<usize> = Vec::new();
            for &p in positions {
                let set = select_critical(self.predict(p, l + 1), policy.prefetch_k, l + 1);
                for e in set.experts {
                    if !experts.contains(&e) {
                        experts.push(e);
                    }
                }
            }
            let critical = CriticalExpertSet {
                layer: l + 1,
                experts,
                scores: Vec::new(),
            };
            let out = vanilla_prefetch_step(
                &critical,
                &mut self.cache,
                &mut self.channel,
                start,
                policy.batched_io,
            )?;
            for (id, at) in out.arrivals {
                self.arrivals.insert(id, at);
            }
            blocked_until = out.blocking_until;
        }

        // Resident experts compute first; each expert takes an equal share of
        // the layer's compute once its weights are on the device.
        ready.sort_unstable();
        let n = ready.len() as u64;
        let total = self.t_target.as_nanos();
        let mut t = start;
        for (i, (at, _)) in ready.iter().enumerate() {
            let i = i as u64;
            let share = SimTime(total * (i + 1) / n - total * i / n);
            t = t.max(*at) + share;
        }
        let compute_end = t;
        let finish = compute_end.max(blocked_until);
        self.timeline.compute.push(ComputeSlot {
            stream: Stream::Target,
            kind: SlotKind::TargetLayer,
            iteration: index,
            layer: l,
            start,
            end: compute_end,
        });
        self.target_time += self.t_target;
        self.load_time += finish - start - self.t_target;
        self.now = finish;
        self.drain(finish)?;
        self.cache.unpin(&union);
        Ok(())
    }

    fn finish(self) -> SimReport {
        let stats = self.cache.stats();
        let breakdown_seconds = LatencyBreakdown {
            draft: self.draft_time.as_secs_f64(),
            expert_load: self.load_time.as_secs_f64(),
            attention_and_other: self.target_time.as_secs_f64(),
        };
        let total_time = self.now.as_secs_f64();
        let log = self.channel.log().to_vec();
        SimReport {
            policy: self.cfg.policy.policy,
            seed: self.cfg.policy.seed,
            model: self.cfg.model.name.clone(),
            tpot: total_time / self.emitted as f64,
            total_time,
            emitted_tokens: self.emitted,
            iterations: self.timeline.iterations.len(),
            hits: stats.hits,
            misses: stats.misses,
            hit_rate: self.cache.hit_rate(),
            eviction_rate: self.cache.eviction_rate(),
            wasted_prefetch_rate: self.cache.wasted_prefetch_rate(),
            prefetch_insertions: stats.prefetch_insertions,
            evictions: stats.evictions,
            transfers: log.len(),
            bytes_transferred: log.iter().map(|t| t.bytes).sum(),
            cutoff_layer: self.cutoff,
            cache_slots: self.slots,
            breakdown_seconds,
            breakdown: breakdown_seconds.fractions(),
            timeline: Timeline {
                transfers: log,
                ..self.timeline
            },
        }
    }
}

/// Pre-fills the cache with the experts of the first tokens, layer by layer.
fn warm(cache: &mut ExpertCache, trace: &ActivationTrace, slots: usize) -> Result<(), SimError> {
    for tok in &trace.tokens {
        for (l, act) in tok.per_layer.iter().enumerate() {
            let ids: Vec<ExpertId> = act
                .all_experts()
                .map(|e| ExpertId::new(l, e))
                .filter(|id| !cache.contains(*id))
                .collect();
            // stop before the first eviction in any partition
            let room = match cache.mode() {
                crate::config::CacheMode::Global => slots.saturating_sub(cache.len()),
                crate::config::CacheMode::PerLayer => slots
                    .saturating_sub(cache.lru_order().iter().filter(|x| x.layer == l).count()),
            };
            if ids.len() > room {
                return Ok(());
            }
            cache.insert_batch(&ids, InsertOrigin::Warm)?;
        }
    }
    Ok(())
}

/// Runs each config on the same trace. All configs must share one seed.
pub fn compare_policies(
    configs: &[ExperimentConfig],
    trace: &ActivationTrace,
) -> Result<Vec<SimReport>, SimError> {
    if let Some(first) = configs.first() {
        if configs.iter().any(|c| c.policy.seed != first.policy.seed) {
            return Err(SimError::Invalid(
                "compared configs must share one seed".into(),
            ));
        }
    }
    configs.par_iter().map(|c| simulate(c, trace)).collect()
}

/// `base` under each of the four policies.
pub fn compare_all_policies(
    base: &ExperimentConfig,
    trace: &ActivationTrace,
) -> Result<Vec<SimReport>, SimError> {
    let configs: Vec<ExperimentConfig> = Policy::ALL.iter().map(|&p| base.with_policy(p)).collect();
    compare_policies(&configs, trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    CutoffLayer,
    DraftLength,
    CacheCapacity,
    PrefetchK,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::CutoffLayer => "cutoff_layer",
            SweepParam::DraftLength => "draft_length",
            SweepParam::CacheCapacity => "cache_capacity",
            SweepParam::PrefetchK => "prefetch_k",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: usize) {
        match self {
            SweepParam::CutoffLayer => cfg.policy.cutoff_layer = Some(value),
            SweepParam::DraftLength => cfg.policy.draft_length = value,
            SweepParam::CacheCapacity => cfg.policy.cache_capacity = Some(value),
            SweepParam::PrefetchK => cfg.policy.prefetch_k = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cutoff_layer" | "cutoff-layer" | "cutoff" => Ok(SweepParam::CutoffLayer),
            "draft_length" | "draft-length" => Ok(SweepParam::DraftLength),
            "cache_capacity" | "cache-capacity" => Ok(SweepParam::CacheCapacity),
            "prefetch_k" | "prefetch-k" => Ok(SweepParam::PrefetchK),
            _ => Err(format!(
                "unknown sweep parameter {s:?}; expected cutoff_layer, draft_length, cache_capacity or prefetch_k"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: usize,
    pub report: SimReport,
}

/// One simulation per value of `param`, run in parallel on a shared trace.
pub fn sweep(
    param: SweepParam,
    values: &[usize],
    base: &ExperimentConfig,
    trace: &ActivationTrace,
) -> Result<Vec<SweepPoint>, SimError> {
    if values.is_empty() {
        return Err(SimError::Invalid("sweep range is empty".into()));
    }
    let applicable = match param {
        SweepParam::CutoffLayer => base.policy.policy == Policy::DraftPrefetch,
        SweepParam::PrefetchK => base.policy.policy != Policy::OnDemand,
        SweepParam::DraftLength | SweepParam::CacheCapacity => true,
    };
    if !applicable {
        return Err(SimError::Invalid(format!(
            "{} does not apply to policy {}",
            param.as_str(),
            base.policy.policy
        )));
    }
    values
        .par_iter()
        .map(|&value| {
            let mut cfg = base.clone();
            param.apply(&mut cfg, value);
            simulate(&cfg, trace).map(|report| SweepPoint { value, report })
        })
        .collect()
}

/// Header plus one row per sweep point.
pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut out = format!("{},{}\n", param.as_str(), crate::report::REPORT_CSV_HEADER);
    for p in points {
        out.push_str(&format!("{},{}\n", p.value, p.report.csv_row()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::derive_expert_io_time;
    use crate::presets;
    use crate::trace::{generate_synthetic_trace, LayerActivation, TokenRecord, TraceParams};

    const TINY: &str = r#"
[model]
name = "tiny"
num_layers = 2
experts_per_layer = 4
topk_activated = 1
expert_size = "336 MB"
draft_layers = 2

[hardware]
name = "link"
gpu_memory = "24 GB"
peak_non_expert_memory = "4 GB"
pcie_bandwidth = "32 GB/s"
io_launch_overhead_ms = 0.0

[timings]
t_comp_target_ms = 3.0
t_comp_draft_ms = 1.0
t_io_expert_ms = 10.5

[policy]
policy = "on-demand"
prefetch_k = 1
draft_length = 1
acceptance_rate = 0.5
seed = 3
"#;

    fn tiny(policy: Policy) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(TINY).unwrap().with_policy(policy)
    }

    /// Token `t` activates expert `experts[t][l]` at layer `l`.
    fn handmade(experts: &[[usize; 2]]) -> ActivationTrace {
        let tokens = experts
            .iter()
            .enumerate()
            .map(|(t, row)| TokenRecord {
                token_index: t,
                per_layer: row
                    .iter()
                    .map(|&e| {
                        let mut scores = vec![0.1; 4];
                        scores[e] = 0.7;
                        LayerActivation::from_scores(scores, 1, 0)
                    })
                    .collect(),
            })
            .collect();
        ActivationTrace {
            model_ref: "tiny".into(),
            num_layers: 2,
            experts_per_layer: 4,
            topk: 1,
            shared_experts: 0,
            tokens,
            seed: None,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn on_demand_single_token_timing() {
        let r = simulate(&tiny(Policy::OnDemand), &handmade(&[[1, 2]])).unwrap();
        // 2 ms drafting, then per layer 10.5 ms load followed by 3 ms compute
        assert!(close(r.total_time, 29e-3), "{}", r.total_time);
        assert!(close(r.breakdown_seconds.draft, 2e-3));
        assert!(close(r.breakdown_seconds.expert_load, 21e-3));
        assert!(close(r.breakdown_seconds.attention_and_other, 6e-3));
        assert_eq!((r.hits, r.misses), (0, 2));
        assert_eq!(r.emitted_tokens, 1);
    }

    #[test]
    fn draft_prefetch_overlaps_drafting() {
        let mut cfg = tiny(Policy::DraftPrefetch);
        cfg.policy.cutoff_layer = Some(1);
        let r = simulate(&cfg, &handmade(&[[1, 2]])).unwrap();
        // layer 0 copy runs 0..10.5 ms, layer 1 copy 10.5..21 ms
        assert!(close(r.total_time, 24e-3), "{}", r.total_time);
        assert_eq!((r.hits, r.misses), (2, 0));
        assert_eq!(r.cutoff_layer, Some(1));
        assert_eq!(r.prefetch_insertions, 2);
        let t = &r.timeline.transfers;
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].start, SimTime::from_millis_f64(10.5));
    }

    #[test]
    fn full_acceptance_emits_two_tokens_per_iteration() {
        let trace = handmade(&[[0, 0], [1, 1], [2, 2], [3, 3], [0, 1], [1, 2]]);
        let mut cfg = tiny(Policy::OnDemand);
        cfg.policy.acceptance_rate = 1.0;
        let all = simulate(&cfg, &trace).unwrap();
        assert_eq!(all.iterations, 3);
        assert!(all.timeline.iterations.iter().all(|it| it.emitted == 2 && it.accepted == 1));
        cfg.policy.acceptance_rate = 0.0;
        let none = simulate(&cfg, &trace).unwrap();
        assert_eq!(none.iterations, 6);
        assert!(none.timeline.iterations.iter().all(|it| it.emitted == 1 && it.accepted == 0));
        assert!(close(all.tpot, all.total_time / 6.0));
    }

    #[test]
    fn free_transfers_make_policies_tie() {
        let mut base = presets::deepseek_desk();
        base.model.expert_size = 1;
        base.hardware.io_launch_overhead = 0.0;
        base.timings.t_io_expert = derive_expert_io_time(&base.model, &base.hardware);
        let trace = generate_synthetic_trace(&base.model, TraceParams::new(40, 1.0, 0.5, 1)).unwrap();
        let reports = compare_all_policies(&base, &trace).unwrap();
        for r in &reports[1..] {
            assert_eq!(r.total_time, reports[0].total_time, "{}", r.policy);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = presets::mixtral_desk();
        let trace = generate_synthetic_trace(&cfg.model, TraceParams::new(30, 1.0, 0.5, 4)).unwrap();
        let a = simulate(&cfg, &trace).unwrap();
        let b = simulate(&cfg, &trace).unwrap();
        assert_eq!(a.csv_row(), b.csv_row());
        assert_eq!(a.transfers_csv(), b.transfers_csv());
    }

    #[test]
    fn rejections() {
        let trace = handmade(&[[1, 2]]);
        let mut cfg = tiny(Policy::DraftPrefetch);
        cfg.policy.cache_capacity = Some(2);
        assert!(matches!(simulate(&cfg, &trace), Err(SimError::CacheTooSmall { needed: 3, .. })));

        let mut other = presets::mixtral_desk();
        other.model.num_layers = 3;
        assert!(matches!(simulate(&other, &trace), Err(SimError::Trace(_))));

        let base = tiny(Policy::OnDemand);
        assert!(sweep(SweepParam::DraftLength, &[], &base, &trace).is_err());
        assert!(sweep(SweepParam::CutoffLayer, &[0, 1], &base, &trace).is_err());
        let mut seeded = base.clone();
        seeded.policy.seed = 99;
        assert!(compare_policies(&[base, seeded], &trace).is_err());
    }

    #[test]
    fn sweep_keeps_value_order() {
        let cfg = tiny(Policy::DraftPrefetch);
        let trace = handmade(&[[1, 2], [0, 3], [2, 2]]);
        let pts = sweep(SweepParam::CutoffLayer, &[1, 0], &cfg, &trace).unwrap();
        assert_eq!(pts[0].value, 1);
        assert_eq!(pts[0].report.cutoff_layer, Some(1));
        assert_eq!(pts[1].report.cutoff_layer, Some(0));
        let csv = sweep_csv(SweepParam::CutoffLayer, &pts);
        assert!(csv.starts_with("cutoff_layer,policy,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn sweep_param_names_parse() {
        assert_eq!("cutoff".parse::<SweepParam>().unwrap(), SweepParam::CutoffLayer);
        assert_eq!("prefetch-k".parse::<SweepParam>().unwrap(), SweepParam::PrefetchK);
        assert!("depth".parse::<SweepParam>().is_err());
    }
}
