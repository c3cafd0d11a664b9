//! Desk-scale configurations shipped with the repository.

use crate::config::ExperimentConfig;

pub const MIXTRAL_DESK_TOML: &str = include_str!("../../../configs/mixtral-desk.toml");
pub const DEEPSEEK_DESK_TOML: &str = include_str!("../../../configs/deepseek-desk.toml");

/// Eight 336 MB experts per layer, 24 GB device, drafting-stage prefetch.
pub fn mixtral_desk() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(MIXTRAL_DESK_TOML).expect("bundled config is valid")
}

/// 64 routed plus 2 shared 17 MB experts per layer, 12 GB device.
pub fn deepseek_desk() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(DEEPSEEK_DESK_TOML).expect("bundled config is valid")
}

/// Looks a preset up by name.
pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    match name {
        "mixtral-desk" | "mixtral" => Some(mixtral_desk()),
        "deepseek-desk" | "deepseek" => Some(deepseek_desk()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        let m = mixtral_desk();
        m.validate().unwrap();
        assert_eq!(m.cache_slots(), 59);
        let d = deepseek_desk();
        d.validate().unwrap();
        assert_eq!(d.model.shared_experts, 2);
        assert!(by_name("nope").is_none());
    }
}
