//! Experiment files bundled with the binary.

use crate::config::{parse_config, ConfigError, ExperimentConfig};

pub const PRESET_NAMES: [&str; 3] = ["fig2", "fig3", "appendixB"];

pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "fig2" => Some(include_str!("../presets/fig2.json")),
        "fig3" => Some(include_str!("../presets/fig3.json")),
        "appendixB" => Some(include_str!("../presets/appendixB.json")),
        _ => None,
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let text = preset_text(name).ok_or_else(|| {
        ConfigError::field("preset", format!("unknown preset {name:?}; available: {}", PRESET_NAMES.join(", ")))
    })?;
    parse_config(text)
}
