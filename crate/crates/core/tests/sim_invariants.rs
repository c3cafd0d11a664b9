use moesim::config::*;
use moesim::prefetch::TransferKind;
use moesim::report::{SlotKind, Stream};
use moesim::sim::{simulate, sweep, SweepParam};
use moesim::trace::{generate_synthetic_trace, ActivationTrace, TraceParams};
use proptest::prelude::*;
use std::collections::BTreeSet;

#[derive(Debug, Clone)]
struct Case {
    cfg: ExperimentConfig,
    trace: ActivationTrace,
}

fn arb_case() -> impl Strategy<Value = Case> {
    (
        (2usize..6, 4usize..10, 1usize..3, 0usize..2, 1usize..6),
        (prop::sample::select(Policy::ALL.to_vec()), 1usize..4, 1usize..3, any::<bool>(), any::<bool>(), any::<bool>()),
        (0u32..=100, 0u32..=100, 0u32..3_000, 0usize..30),
        (5usize..40, 0u32..30, 0u32..=10, any::<u64>()),
    )
        .prop_map(|(m, p, knobs, t)| {
            let (layers, experts, k, shared, draft_layers) = m;
            let (policy, n, pk, batched, worker, strict) = p;
            let (acc, fid, overhead_us, extra_slots) = knobs;
            let (tokens, skew_tenths, corr_tenths, seed) = t;
            let mut text = moesim::presets::MIXTRAL_DESK_TOML.to_string();
            for (from, to) in [
                ("num_layers = 32", format!("num_layers = {layers}")),
                ("experts_per_layer = 8", format!("experts_per_layer = {experts}")),
                ("topk_activated = 2", format!("topk_activated = {k}")),
                ("shared_experts = 0", format!("shared_experts = {shared}")),
                ("draft_layers = 32", format!("draft_layers = {draft_layers}")),
            ] {
                text = text.replace(from, &to);
            }
            let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
            cfg.hardware.io_launch_overhead = overhead_us as f64 * 1e-6;
            cfg.timings.t_io_expert = derive_expert_io_time(&cfg.model, &cfg.hardware);
            cfg.timings.t_predict = 0.2e-3;
            cfg.policy = PolicySpec::new(policy);
            cfg.policy.draft_length = n;
            cfg.policy.prefetch_k = pk.min(experts - shared);
            cfg.policy.batched_io = batched;
            cfg.policy.worker_prefetch = worker;
            cfg.policy.strict_replay = strict;
            cfg.policy.acceptance_rate = acc as f64 / 100.0;
            cfg.policy.fidelity = fid as f64 / 100.0;
            cfg.policy.seed = seed;
            let union = ((n + 1) * k + shared).min(experts);
            cfg.policy.cache_capacity = Some(union + (n + 1) * pk + extra_slots);
            let trace = generate_synthetic_trace(
                &cfg.model,
                TraceParams::new(tokens, skew_tenths as f64 / 10.0, corr_tenths as f64 / 10.0, seed ^ 0x5eed),
            )
            .unwrap();
            Case { cfg, trace }
        })
}

fn union_size(trace: &ActivationTrace, first: usize, count: usize, layer: usize) -> usize {
    (first..first + count)
        .flat_map(|p| trace.layer(p, layer).all_experts().collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn report_invariants(case in arb_case()) {
        let Case { cfg, trace } = case;
        let r = simulate(&cfg, &trace).unwrap();
        let again = simulate(&cfg, &trace).unwrap();
        prop_assert_eq!(&r, &again);

        // token accounting and the longest-prefix rule
        prop_assert_eq!(r.emitted_tokens, trace.len());
        let its = &r.timeline.iterations;
        for (i, it) in its.iter().enumerate() {
            prop_assert!(it.accepted <= cfg.policy.draft_length);
            if i + 1 < its.len() {
                prop_assert_eq!(it.emitted, it.accepted + 1);
            } else {
                prop_assert!(it.emitted <= it.accepted + 1);
            }
        }
        prop_assert!((r.tpot - r.total_time / r.emitted_tokens as f64).abs() <= 1e-12 * r.total_time.max(1.0));
        let f = r.breakdown;
        prop_assert!((f.draft + f.expert_load + f.attention_and_other - 1.0).abs() < 1e-6);
        prop_assert!((r.breakdown_seconds.total() - r.total_time).abs() < 1e-9);

        // hits and misses cover exactly the verification lookups
        let model = &cfg.model;
        let bound = ((cfg.policy.draft_length + 1) * model.topk_activated + model.shared_experts)
            .min(model.experts_per_layer);
        let mut lookups = 0;
        for it in its {
            for l in 0..model.num_layers {
                let u = union_size(&trace, it.position, it.verified, l);
                prop_assert!(u <= bound);
                lookups += u as u64;
            }
        }
        prop_assert_eq!(r.hits + r.misses, lookups);
        prop_assert!((0.0..=1.0).contains(&r.hit_rate));

        // compute slots never overlap and keep stream order
        for w in r.timeline.compute.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        prop_assert!(r.timeline.compute.iter().all(|s| (s.kind == SlotKind::TargetLayer) == (s.stream == Stream::Target)));
        // the link carries one transfer at a time
        for w in r.timeline.transfers.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        // a layer's demand loads land before the layer finishes
        let targets: Vec<_> = r.timeline.compute.iter().filter(|s| s.kind == SlotKind::TargetLayer).collect();
        for t in r.timeline.transfers.iter().filter(|t| t.kind == TransferKind::OnDemand) {
            let slot = targets
                .iter()
                .filter(|s| s.layer == t.layer && s.start <= t.start)
                .next_back()
                .expect("demand load belongs to a verification layer");
            prop_assert!(t.end <= slot.end);
        }
        let bytes: u64 = r.timeline.transfers.iter().map(|t| t.bytes).sum();
        prop_assert_eq!(bytes, r.bytes_transferred);
    }
}

/// Holds for the policies whose cache traffic is pure LRU. Prefetching
/// policies skip experts that are resident at issue time without refreshing
/// them, so a larger cache can keep a predicted expert near the LRU head where
/// demand loads evict it before use.
#[test]
fn more_cache_never_slows_lru_driven_policies() {
    for (base, skew, caps) in [
        (moesim::presets::mixtral_desk(), 1.0, (16..=256).step_by(8).collect::<Vec<usize>>()),
        (moesim::presets::deepseek_desk(), 0.5, (100..=1782).step_by(60).collect()),
    ] {
        let trace = generate_synthetic_trace(&base.model, TraceParams::new(120, skew, 0.5, 21)).unwrap();
        for policy in [Policy::OnDemand, Policy::GatingNextLayer] {
            let pts = sweep(SweepParam::CacheCapacity, &caps, &base.with_policy(policy), &trace).unwrap();
            for w in pts.windows(2) {
                assert!(
                    w[1].report.tpot <= w[0].report.tpot,
                    "{policy}: capacity {} -> {}: {} > {}",
                    w[0].value,
                    w[1].value,
                    w[1].report.tpot,
                    w[0].report.tpot
                );
                assert!(w[1].report.bytes_transferred <= w[0].report.bytes_transferred);
            }
        }
    }
}
