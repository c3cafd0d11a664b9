use moesim::cache::{ExpertCache, ExpertId};
use moesim::predictor::CriticalExpertSet;
use moesim::prefetch::*;
use moesim::time::SimTime;
use proptest::prelude::*;

const EXPERT: u64 = 17_000_000;

fn arb_tasks() -> impl Strategy<Value = Vec<(usize, Vec<usize>, u64)>> {
    prop::collection::vec((0usize..4, prop::collection::vec(0usize..16, 1..5), 0u64..5_000_000), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn worker_log_is_fifo_disjoint_and_conserves_bytes(
        tasks in arb_tasks(),
        overhead_us in 0u32..4_000,
        batched in any::<bool>(),
        strict in any::<bool>(),
    ) {
        let h = overhead_us as f64 * 1e-6;
        let mut channel = IoChannel::new(32e9, h, EXPERT);
        let mut cache = ExpertCache::new(64);
        let mut queue = PrefetchQueue::new();
        let mut now = SimTime::ZERO;
        for (layer, experts, gap) in &tasks {
            now = now + SimTime(*gap);
            let mut ids: Vec<usize> = experts.clone();
            ids.dedup();
            let set = CriticalExpertSet { layer: *layer, experts: ids, scores: Vec::new() };
            enqueue_critical(&mut queue, &set, &cache, now, 0);
        }
        let opts = ExecOptions { batched, strict_replay: strict };
        let mut last_start = SimTime::ZERO;
        let mut moved = 0u64;
        while let Some(out) = worker_step(&mut queue, &mut cache, &mut channel, SimTime::ZERO, opts).unwrap() {
            // readiness: nothing starts before its task was published
            prop_assert!(out.start >= out.task.ready_at);
            // FIFO: tasks start in queue order
            prop_assert!(out.start >= last_start);
            last_start = out.start;
            moved += out.arrivals.len() as u64;
            prop_assert_eq!(out.arrivals.len() + out.skipped.len(), out.task.experts.len());
            if strict {
                prop_assert!(out.skipped.is_empty());
            }
        }
        prop_assert_eq!(queue.completed(), queue.enqueued());
        let log = channel.log();
        let bytes: u64 = log.iter().map(|t| t.bytes).sum();
        prop_assert_eq!(bytes, moved * EXPERT);
        for w in log.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        for t in log {
            let n = t.bytes / EXPERT;
            prop_assert_eq!(t.duration(), channel.launch_overhead() + channel.expert_copy_time() * n);
            let wire = t.bytes as f64 / channel.bandwidth();
            prop_assert!((t.duration().as_secs_f64() - channel.launch_overhead().as_secs_f64() - wire).abs() < 1e-8);
        }
    }

    #[test]
    fn batching_saves_exactly_the_extra_launches(n in 1usize..12, overhead_us in 1u32..5_000) {
        let h = overhead_us as f64 * 1e-6;
        let set = CriticalExpertSet { layer: 0, experts: (0..n).collect(), scores: Vec::new() };
        let run = |batched: bool| {
            let mut channel = IoChannel::new(32e9, h, EXPERT);
            let mut cache = ExpertCache::new(16);
            let out = vanilla_prefetch_step(&set, &mut cache, &mut channel, SimTime::ZERO, batched).unwrap();
            (out.blocking_until, channel.log().iter().map(|t| t.bytes).sum::<u64>())
        };
        let (batched, bytes_b) = run(true);
        let (single, bytes_s) = run(false);
        prop_assert_eq!(bytes_b, bytes_s);
        let h_ns = SimTime::from_secs_f64(h);
        prop_assert_eq!(single - batched, h_ns * (n as u64 - 1));
    }

    #[test]
    fn demand_load_waits_for_the_link(n in 1usize..6) {
        let mut channel = IoChannel::new(32e9, 0.5e-3, EXPERT);
        let mut cache = ExpertCache::new(16);
        channel.transfer(SimTime::ZERO, vec![ExpertId::new(1, 0)], TransferKind::Prefetch, 1);
        let ids: Vec<ExpertId> = (0..n).map(|e| ExpertId::new(0, e)).collect();
        let out = on_demand_load(&ids, &mut cache, &mut channel, SimTime::ZERO, true).unwrap();
        let first = channel.log()[0].end;
        prop_assert_eq!(out.completion, first + channel.batch_duration(n));
        prop_assert!(ids.iter().all(|id| cache.contains(*id)));
    }
}

#[test]
fn stale_task_costs_only_the_launch() {
    let mut channel = IoChannel::new(32e9, 3.5e-3, 336_000_000);
    let mut cache = ExpertCache::new(8);
    let mut queue = PrefetchQueue::new();
    let set = CriticalExpertSet { layer: 0, experts: vec![2], scores: Vec::new() };
    enqueue_critical(&mut queue, &set, &cache, SimTime::ZERO, 0);
    on_demand_load(&[ExpertId::new(0, 2)], &mut cache, &mut channel, SimTime::ZERO, true).unwrap();
    let opts = ExecOptions { batched: true, strict_replay: false };
    let out = worker_step(&mut queue, &mut cache, &mut channel, SimTime::ZERO, opts).unwrap().unwrap();
    assert_eq!(out.end - out.start, SimTime::from_millis_f64(3.5));
    assert_eq!(out.skipped, vec![ExpertId::new(0, 2)]);
    assert_eq!(channel.log().last().unwrap().bytes, 0);
}
