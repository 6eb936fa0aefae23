//! Library surface of the runner: trace file IO and scenario loading,
//! shared by the `bdso` binary and the test suites.

pub mod trace;

use std::path::Path;

use anyhow::{Context, Result};
use bdso_core::scenario::ScenarioConfig;

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: ScenarioConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(config)
}
