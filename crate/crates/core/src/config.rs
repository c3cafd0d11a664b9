//! Static experiment inputs: model pair, device, profiled timings and policy.
//!
//! An experiment is described by a single TOML document with four sections:
//!
//! ```toml
//! [model]
//! name = "mixtral-8x7b"
//! num_layers = 32
//! experts_per_layer = 8
//! topk_activated = 2
//! shared_experts = 0
//! expert_size = "336 MB"
//! draft_layers = 32
//! draft_topk = 0
//!
//! [hardware]
//! name = "rtx4090-pcie4"
//! gpu_memory = "24 GB"
//! peak_non_expert_memory = "4 GB"
//! pcie_bandwidth = "32 GB/s"
//! io_launch_overhead_ms = 3.5
//!
//! [timings]            # optional; t_io_expert_ms defaults to the bandwidth model
//! t_comp_target_ms = 3.0
//! t_comp_draft_ms = 6.0
//! t_predict_ms = 0.1
//!
//! [policy]
//! policy = "draft-prefetch"
//! prefetch_k = 1
//! draft_length = 1
//! acceptance_rate = 0.97
//! seed = 42
//! ```
//!
//! Byte quantities accept `KB`/`MB`/`GB` (decimal) and `KiB`/`MiB`/`GiB`
//! (binary) suffixes; times in files are milliseconds and are held in seconds
//! in memory.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::predictor::{PredictorModel, PredictorStrategy};
use crate::units::{self, secs_to_millis_exact};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: file not found")]
    NotFound { path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// Architecture of the target MoE model and its draft model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    /// Transformer blocks in the target model.
    pub num_layers: usize,
    pub experts_per_layer: usize,
    /// Routed experts activated per token per layer.
    pub topk_activated: usize,
    /// Always-active experts per layer. They occupy expert indices
    /// `0..shared_experts`; routing happens over the remaining indices.
    #[serde(default)]
    pub shared_experts: usize,
    /// Size of one expert in bytes.
    #[serde(with = "units::byte_size")]
    pub expert_size: u64,
    /// Transformer blocks in the draft model.
    pub draft_layers: usize,
    /// Experts activated per token by the draft model (0 for a dense draft).
    #[serde(default)]
    pub draft_topk: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_layers < 1 {
            return Err(invalid("model.num_layers", "must be at least 1"));
        }
        if self.draft_layers < 1 {
            return Err(invalid("model.draft_layers", "must be at least 1"));
        }
        if self.expert_size == 0 {
            return Err(invalid("model.expert_size", "must be positive"));
        }
        if self.topk_activated < 1 || self.topk_activated > self.experts_per_layer {
            return Err(invalid(
                "model.topk_activated",
                format!(
                    "{} must lie in 1..={} (experts_per_layer)",
                    self.topk_activated, self.experts_per_layer
                ),
            ));
        }
        if self.shared_experts + self.topk_activated > self.experts_per_layer {
            return Err(invalid(
                "model.shared_experts",
                format!(
                    "shared_experts + topk_activated = {} exceeds experts_per_layer = {}",
                    self.shared_experts + self.topk_activated,
                    self.experts_per_layer
                ),
            ));
        }
        Ok(())
    }

    /// Number of experts the router chooses among.
    pub fn routed_experts(&self) -> usize {
        self.experts_per_layer - self.shared_experts
    }

    pub fn total_experts(&self) -> usize {
        self.num_layers * self.experts_per_layer
    }
}

/// Device memory and host link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub name: String,
    #[serde(with = "units::byte_size")]
    pub gpu_memory: u64,
    /// Peak device memory used by everything except offloadable experts.
    #[serde(with = "units::byte_size")]
    pub peak_non_expert_memory: u64,
    /// Host-to-device bandwidth in bytes per second.
    #[serde(with = "units::bandwidth")]
    pub pcie_bandwidth: f64,
    /// Fixed cost of launching one transfer batch, in seconds.
    #[serde(skip)]
    pub io_launch_overhead: f64,
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.pcie_bandwidth.is_finite() && self.pcie_bandwidth > 0.0) {
            return Err(invalid("hardware.pcie_bandwidth", "must be positive"));
        }
        if self.peak_non_expert_memory >= self.gpu_memory {
            return Err(invalid(
                "hardware.peak_non_expert_memory",
                "must be smaller than gpu_memory",
            ));
        }
        if !(self.io_launch_overhead.is_finite() && self.io_launch_overhead >= 0.0) {
            return Err(invalid(
                "hardware.io_launch_overhead_ms",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    /// Device memory left for cached experts.
    pub fn expert_budget(&self) -> u64 {
        self.gpu_memory - self.peak_non_expert_memory
    }
}

/// Per-layer compute and per-expert load costs, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfiledTimings {
    /// One target-model layer, all verified positions included.
    pub t_comp_target: f64,
    /// One draft-model layer for one draft token.
    pub t_comp_draft: f64,
    /// Loading one expert host-to-device, launch overhead included.
    pub t_io_expert: f64,
    /// Gating predictor cost per draft layer.
    pub t_predict: f64,
    /// Upper bound on `t_io_expert / (expert_size / bandwidth + overhead)`.
    pub calibration_factor: f64,
}

pub const DEFAULT_T_COMP_TARGET: f64 = 3e-3;
pub const DEFAULT_CALIBRATION_FACTOR: f64 = 2.0;

impl ProfiledTimings {
    /// Timings with `t_io_expert` taken from the bandwidth model and placeholder
    /// compute costs.
    pub fn derived(model: &ModelSpec, hw: &HardwareSpec) -> Self {
        ProfiledTimings {
            t_comp_target: DEFAULT_T_COMP_TARGET,
            t_comp_draft: DEFAULT_T_COMP_TARGET,
            t_io_expert: derive_expert_io_time(model, hw),
            t_predict: 0.0,
            calibration_factor: DEFAULT_CALIBRATION_FACTOR,
        }
    }

    pub fn validate(&self, model: &ModelSpec, hw: &HardwareSpec) -> Result<(), ConfigError> {
        for (field, value) in [
            ("timings.t_comp_target_ms", self.t_comp_target),
            ("timings.t_comp_draft_ms", self.t_comp_draft),
            ("timings.t_io_expert_ms", self.t_io_expert),
            ("timings.t_predict_ms", self.t_predict),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        if !(self.calibration_factor.is_finite() && self.calibration_factor >= 1.0) {
            return Err(invalid("timings.calibration_factor", "must be at least 1"));
        }
        let copy = model.expert_size as f64 / hw.pcie_bandwidth;
        // Overheads only add time, so a profiled load can never beat the wire.
        if self.t_io_expert < copy * (1.0 - 1e-9) {
            return Err(invalid(
                "timings.t_io_expert_ms",
                format!(
                    "{:.3} ms is faster than expert_size / pcie_bandwidth = {:.3} ms",
                    self.t_io_expert * 1e3,
                    copy * 1e3
                ),
            ));
        }
        let ceiling = self.calibration_factor * (copy + hw.io_launch_overhead);
        if self.t_io_expert > ceiling * (1.0 + 1e-9) {
            return Err(invalid(
                "timings.t_io_expert_ms",
                format!(
                    "{:.3} ms exceeds calibration_factor x derived load time = {:.3} ms",
                    self.t_io_expert * 1e3,
                    ceiling * 1e3
                ),
            ));
        }
        Ok(())
    }
}

/// Per-expert load time implied by bandwidth plus one launch overhead.
pub fn derive_expert_io_time(model: &ModelSpec, hw: &HardwareSpec) -> f64 {
    model.expert_size as f64 / hw.pcie_bandwidth + hw.io_launch_overhead
}

/// Offloading policy under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Load missing experts when a verification layer needs them; LRU cache only.
    OnDemand,
    /// At verification start, prefetch the historically most frequent experts
    /// of every layer.
    CoarseHistory,
    /// During verification layer `l`, predict and prefetch layer `l + 1`,
    /// blocking layer `l + 1` until the prefetch lands.
    GatingNextLayer,
    /// Predict target-layer experts from the draft pass and prefetch them
    /// during drafting, up to the cutoff layer.
    DraftPrefetch,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::OnDemand,
        Policy::CoarseHistory,
        Policy::GatingNextLayer,
        Policy::DraftPrefetch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::OnDemand => "on-demand",
            Policy::CoarseHistory => "coarse-history",
            Policy::GatingNextLayer => "gating-next-layer",
            Policy::DraftPrefetch => "draft-prefetch",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown policy {s:?}; expected one of on-demand, coarse-history, gating-next-layer, draft-prefetch"
                )
            })
    }
}

/// How the expert slot pool is shared between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// One LRU pool for every layer.
    #[default]
    Global,
    /// An independent LRU pool per layer.
    PerLayer,
}

/// Which compute cost bounds the prefetch window in the cutoff model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffCompute {
    /// Draft-model layer time and draft layer count (prefetch must finish
    /// during drafting).
    #[default]
    Draft,
    /// Target-model layer time and layer count.
    Target,
}

/// Policy and experiment knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub policy: Policy,
    /// Critical experts prefetched per layer per prediction.
    pub prefetch_k: usize,
    /// Deepest layer prefetched while drafting; solved from the cost model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_layer: Option<usize>,
    /// Expert slots (global, or per layer in `per-layer` mode); derived from
    /// the device memory budget when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_capacity: Option<usize>,
    #[serde(default)]
    pub cache_mode: CacheMode,
    #[serde(default = "yes")]
    pub batched_io: bool,
    /// Continuous worker executor; `false` selects the layer-synchronized one.
    #[serde(default = "yes")]
    pub worker_prefetch: bool,
    /// Draft tokens per iteration.
    pub draft_length: usize,
    pub acceptance_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub predictor: PredictorStrategy,
    /// Predictor fidelity in `[0, 1]`.
    #[serde(default = "one")]
    pub fidelity: f64,
    /// Execute queued tasks verbatim, without re-checking residency at pop time.
    #[serde(default)]
    pub strict_replay: bool,
    /// Pre-fill the cache from the head of the trace before decoding.
    #[serde(default)]
    pub warm_cache: bool,
    #[serde(default)]
    pub cutoff_compute: CutoffCompute,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

impl PolicySpec {
    pub fn new(policy: Policy) -> Self {
        PolicySpec {
            policy,
            prefetch_k: 1,
            cutoff_layer: None,
            cache_capacity: None,
            cache_mode: CacheMode::Global,
            batched_io: true,
            worker_prefetch: true,
            draft_length: 1,
            acceptance_rate: 0.97,
            seed: 0,
            predictor: PredictorStrategy::GatingBased,
            fidelity: 1.0,
            strict_replay: false,
            warm_cache: false,
            cutoff_compute: CutoffCompute::Draft,
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<(), ConfigError> {
        if self.prefetch_k > model.experts_per_layer {
            return Err(invalid(
                "policy.prefetch_k",
                format!(
                    "{} exceeds experts_per_layer = {}",
                    self.prefetch_k, model.experts_per_layer
                ),
            ));
        }
        if self.draft_length < 1 {
            return Err(invalid("policy.draft_length", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.acceptance_rate) {
            return Err(invalid("policy.acceptance_rate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(invalid("policy.fidelity", "must lie in [0, 1]"));
        }
        if let Some(cutoff) = self.cutoff_layer {
            if cutoff >= model.num_layers {
                return Err(invalid(
                    "policy.cutoff_layer",
                    format!("{cutoff} is not a layer index below {}", model.num_layers),
                ));
            }
        }
        if self.cache_capacity == Some(0) {
            return Err(invalid("policy.cache_capacity", "must be positive"));
        }
        Ok(())
    }

    /// The predictor this policy drives, seeded from the experiment seed.
    pub fn predictor_model(&self) -> PredictorModel {
        PredictorModel {
            fidelity: self.fidelity,
            noise_seed: self.seed,
            strategy: self.predictor,
        }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub hardware: HardwareSpec,
    pub timings: ProfiledTimings,
    pub policy: PolicySpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.hardware.validate()?;
        self.timings.validate(&self.model, &self.hardware)?;
        self.policy.validate(&self.model)
    }

    /// Slots in the expert cache (per layer in `per-layer` mode).
    pub fn cache_slots(&self) -> usize {
        if let Some(slots) = self.policy.cache_capacity {
            return slots;
        }
        let global = (self.hardware.expert_budget() / self.model.expert_size) as usize;
        match self.policy.cache_mode {
            CacheMode::Global => global,
            CacheMode::PerLayer => global / self.model.num_layers,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        raw.into_config()
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawConfig::from_config(self);
        toml::to_string(&raw).expect("config serializes to TOML")
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        let mut cfg = self.clone();
        cfg.policy.policy = policy;
        cfg
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ConfigError::NotFound {
                path: path.display().to_string(),
            }
        } else {
            ConfigError::Io {
                path: path.display().to_string(),
                source,
            }
        }
    })?;
    ExperimentConfig::from_toml_str(&text)
}

pub fn write_config(config: &ExperimentConfig, path: impl AsRef<Path>) -> Result<(), ConfigError> {
    let path = path.as_ref();
    std::fs::write(path, config.to_toml_string()).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

// File-facing mirror of the config, with times in milliseconds.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelSpec,
    hardware: RawHardware,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timings: Option<RawTimings>,
    policy: PolicySpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHardware {
    name: String,
    #[serde(with = "units::byte_size")]
    gpu_memory: u64,
    #[serde(with = "units::byte_size")]
    peak_non_expert_memory: u64,
    #[serde(with = "units::bandwidth")]
    pcie_bandwidth: f64,
    #[serde(default)]
    io_launch_overhead_ms: f64,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTimings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_comp_target_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_comp_draft_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_io_expert_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_predict_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration_factor: Option<f64>,
}

impl RawConfig {
    fn into_config(self) -> Result<ExperimentConfig, ConfigError> {
        let model = self.model;
        let hardware = HardwareSpec {
            name: self.hardware.name,
            gpu_memory: self.hardware.gpu_memory,
            peak_non_expert_memory: self.hardware.peak_non_expert_memory,
            pcie_bandwidth: self.hardware.pcie_bandwidth,
            io_launch_overhead: self.hardware.io_launch_overhead_ms / 1e3,
        };
        model.validate()?;
        hardware.validate()?;
        let raw = self.timings.unwrap_or_default();
        let derived = ProfiledTimings::derived(&model, &hardware);
        let ms = |v: Option<f64>, default: f64| v.map_or(default, |m| m / 1e3);
        let t_comp_target = ms(raw.t_comp_target_ms, derived.t_comp_target);
        let timings = ProfiledTimings {
            t_comp_target,
            t_comp_draft: ms(raw.t_comp_draft_ms, t_comp_target),
            t_io_expert: ms(raw.t_io_expert_ms, derived.t_io_expert),
            t_predict: ms(raw.t_predict_ms, derived.t_predict),
            calibration_factor: raw.calibration_factor.unwrap_or(derived.calibration_factor),
        };
        let config = ExperimentConfig {
            model,
            hardware,
            timings,
            policy: self.policy,
        };
        config.validate()?;
        Ok(config)
    }

    fn from_config(config: &ExperimentConfig) -> Self {
        let t = &config.timings;
        RawConfig {
            model: config.model.clone(),
            hardware: RawHardware {
                name: config.hardware.name.clone(),
                gpu_memory: config.hardware.gpu_memory,
                peak_non_expert_memory: config.hardware.peak_non_expert_memory,
                pcie_bandwidth: config.hardware.pcie_bandwidth,
                io_launch_overhead_ms: secs_to_millis_exact(config.hardware.io_launch_overhead),
            },
            timings: Some(RawTimings {
                t_comp_target_ms: Some(secs_to_millis_exact(t.t_comp_target)),
                t_comp_draft_ms: Some(secs_to_millis_exact(t.t_comp_draft)),
                t_io_expert_ms: Some(secs_to_millis_exact(t.t_io_expert)),
                t_predict_ms: Some(secs_to_millis_exact(t.t_predict)),
                calibration_factor: Some(t.calibration_factor),
            }),
            policy: config.policy.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIXTRAL: &str = r#"
[model]
name = "mixtral-8x7b"
num_layers = 32
experts_per_layer = 8
topk_activated = 2
expert_size = "336 MB"
draft_layers = 32

[hardware]
name = "pcie4"
gpu_memory = "24 GB"
peak_non_expert_memory = "4 GB"
pcie_bandwidth = "32 GB/s"
io_launch_overhead_ms = 3.5

[policy]
policy = "draft-prefetch"
prefetch_k = 1
draft_length = 1
acceptance_rate = 0.97
seed = 7
"#;

    #[test]
    fn mixtral_like_config_is_accepted() {
        let cfg = ExperimentConfig::from_toml_str(MIXTRAL).unwrap();
        assert_eq!(cfg.model.num_layers, 32);
        assert_eq!(cfg.model.expert_size, 336_000_000);
        assert_eq!(cfg.hardware.pcie_bandwidth, 32e9);
        assert!((cfg.hardware.io_launch_overhead - 3.5e-3).abs() < 1e-15);
        // timings section absent: per-expert load comes from the bandwidth model
        assert!((cfg.timings.t_io_expert - 14e-3).abs() < 1e-12);
        assert_eq!(cfg.cache_slots(), 59);
    }

    #[test]
    fn deepseek_like_config_is_accepted() {
        let text = MIXTRAL
            .replace("num_layers = 32", "num_layers = 27")
            .replace("experts_per_layer = 8", "experts_per_layer = 64\nshared_experts = 2")
            .replace("topk_activated = 2", "topk_activated = 6")
            .replace("\"336 MB\"", "\"16.5 MB\"")
            .replace("draft_layers = 32", "draft_layers = 27");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.model.shared_experts, 2);
        assert_eq!(cfg.model.routed_experts(), 62);
        assert_eq!(cfg.model.expert_size, 16_500_000);
    }

    #[test]
    fn topk_above_expert_count_is_rejected() {
        let text = MIXTRAL.replace("topk_activated = 2", "topk_activated = 9");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "model.topk_activated", .. }));
    }

    #[test]
    fn zero_expert_size_is_rejected() {
        let text = MIXTRAL.replace("\"336 MB\"", "0");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "model.expert_size", .. }));
    }

    #[test]
    fn malformed_toml_is_a_parse_error() {
        let err = ExperimentConfig::from_toml_str("[model\nname=").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let err = ExperimentConfig::from_toml_str(&MIXTRAL.replace("seed = 7", "seed = 7\nbogus = 1"))
            .unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn other_invariants_are_enforced() {
        let cases = [
            (MIXTRAL.replace("\"4 GB\"", "\"24 GB\""), "hardware.peak_non_expert_memory"),
            (MIXTRAL.replace("\"32 GB/s\"", "0"), "hardware.pcie_bandwidth"),
            (MIXTRAL.replace("prefetch_k = 1", "prefetch_k = 9"), "policy.prefetch_k"),
            (MIXTRAL.replace("draft_length = 1", "draft_length = 0"), "policy.draft_length"),
            (MIXTRAL.replace("acceptance_rate = 0.97", "acceptance_rate = 1.5"), "policy.acceptance_rate"),
            (
                MIXTRAL.replace("[policy]", "[timings]\nt_io_expert_ms = 5.0\n\n[policy]"),
                "timings.t_io_expert_ms",
            ),
            (
                MIXTRAL.replace("[policy]", "[timings]\nt_io_expert_ms = 50.0\n\n[policy]"),
                "timings.t_io_expert_ms",
            ),
        ];
        for (text, expected) in cases {
            match ExperimentConfig::from_toml_str(&text) {
                Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, expected),
                other => panic!("expected {expected} violation, got {other:?}"),
            }
        }
    }

    #[test]
    fn missing_file_reports_not_found() {
        let err = load_config("/definitely/not/here.toml").unwrap_err();
        assert!(err.to_string().contains("file not found"));
    }

    fn io_ms(size: u64, bw: f64, overhead: f64) -> f64 {
        let model = ModelSpec {
            name: "m".into(),
            num_layers: 1,
            experts_per_layer: 8,
            topk_activated: 2,
            shared_experts: 0,
            expert_size: size,
            draft_layers: 1,
            draft_topk: 0,
        };
        let hw = HardwareSpec {
            name: "h".into(),
            gpu_memory: 2,
            peak_non_expert_memory: 1,
            pcie_bandwidth: bw,
            io_launch_overhead: overhead,
        };
        derive_expert_io_time(&model, &hw) * 1e3
    }

    #[test]
    fn expert_io_time_matches_bandwidth_arithmetic() {
        // 336e6 B / 32e9 B/s = 10.5 ms
        assert!((io_ms(336_000_000, 32e9, 0.0) - 10.5).abs() < 1e-9);
        // eight of them make a layer: 84 ms, within 10% of "about 80 ms"
        let layer = 8.0 * io_ms(336_000_000, 32e9, 0.0);
        assert!((layer - 80.0).abs() / 80.0 <= 0.10);
        // with 3.5 ms launch overhead: 14 ms per expert
        assert!((io_ms(336_000_000, 32e9, 3.5e-3) - 14.0).abs() < 1e-9);
    }

    #[test]
    fn expert_io_time_is_monotone() {
        let base = io_ms(100_000_000, 10e9, 1e-3);
        assert!(io_ms(100_000_000, 20e9, 1e-3) < base);
        assert!(io_ms(200_000_000, 10e9, 1e-3) > base);
        assert!(io_ms(100_000_000, 10e9, 2e-3) > base);
    }
}
