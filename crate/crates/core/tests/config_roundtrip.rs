use moesim::config::*;
use moesim::predictor::PredictorStrategy;
use proptest::prelude::*;

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    let model = (1usize..64, 2usize..80, 1u64..2_000_000_000, 1usize..64, 0usize..3).prop_flat_map(
        |(layers, experts, size, draft_layers, shared)| {
            let shared = shared.min(experts - 1);
            (1..=experts - shared).prop_map(move |k| ModelSpec {
                name: format!("m{layers}x{experts}"),
                num_layers: layers,
                experts_per_layer: experts,
                topk_activated: k,
                shared_experts: shared,
                expert_size: size,
                draft_layers,
                draft_topk: 0,
            })
        },
    );
    let policy = (
        prop::sample::select(Policy::ALL.to_vec()),
        0usize..4,
        1usize..8,
        0u32..=1000,
        any::<u64>(),
        0u32..=100,
        any::<bool>(),
        any::<bool>(),
        prop::option::of(1usize..500),
    );
    (model, 1u64..100, 0u64..50, 1u32..64, 0u32..5_000, policy, 1u32..40, 1u32..40, 0u32..10).prop_map(
        |(model, gpu_gb, peak_frac, bw_gbs, overhead_us, pol, target_ds, draft_ds, predict_ds)| {
            let gpu = gpu_gb * 1_000_000_000;
            let hardware = HardwareSpec {
                name: "dev".into(),
                gpu_memory: gpu,
                peak_non_expert_memory: gpu * peak_frac / 100,
                pcie_bandwidth: bw_gbs as f64 * 1e9,
                io_launch_overhead: overhead_us as f64 * 1e-3 / 1e3,
            };
            let derived = ProfiledTimings::derived(&model, &hardware);
            let timings = ProfiledTimings {
                t_comp_target: target_ds as f64 * 0.1 / 1e3,
                t_comp_draft: draft_ds as f64 * 0.1 / 1e3,
                // every value a config file can hold is a decimal millisecond count
                t_io_expert: (derived.t_io_expert * 1e6).ceil() / 1e3 / 1e3,
                t_predict: predict_ds as f64 * 0.1 / 1e3,
                calibration_factor: derived.calibration_factor,
            };
            let (p, k, n, acc, seed, fid, batched, worker, cap) = pol;
            let mut policy = PolicySpec::new(p);
            policy.prefetch_k = k.min(model.experts_per_layer);
            policy.draft_length = n;
            policy.acceptance_rate = acc as f64 / 1000.0;
            policy.seed = seed;
            policy.fidelity = fid as f64 / 100.0;
            policy.batched_io = batched;
            policy.worker_prefetch = worker;
            policy.cache_capacity = cap;
            policy.predictor = if seed % 3 == 0 { PredictorStrategy::CoarseHistory } else { PredictorStrategy::GatingBased };
            policy.cutoff_layer = if seed % 2 == 0 { Some((seed as usize) % model.num_layers) } else { None };
            ExperimentConfig { model, hardware, timings, policy }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn toml_round_trip_is_identity(cfg in arb_config()) {
        prop_assume!(cfg.validate().is_ok());
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml_string(), text);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    let cfg = moesim::presets::deepseek_desk();
    write_config(&cfg, &path).unwrap();
    assert_eq!(load_config(&path).unwrap(), cfg);
}

#[test]
fn shipped_configs_load() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for name in ["mixtral-desk.toml", "deepseek-desk.toml"] {
        let cfg = load_config(format!("{root}/{name}")).unwrap();
        cfg.validate().unwrap();
    }
}
