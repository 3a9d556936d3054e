//! Run configuration: one TOML file, every field optional, plus `key=value`
//! overrides addressed by dotted path.

use std::path::{Path, PathBuf};

use assoc4d::detections::{default_topology, SkeletonTopology};
use assoc4d::eval::DEFAULT_STATE_CAP;
use assoc4d::eval::EvalConfig;
use assoc4d::pipeline::PipelineConfig;
use assoc4d::skelfit::FitConfig;
use assoc4d::solver::{Mode, SolverConfig};
use assoc4d::synth::{NoiseConfig, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub calibration: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Search states after which a frame is skipped.
    pub cap: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { cap: DEFAULT_STATE_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Frames solved before timing starts.
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// `body19` or `chain-N`.
    pub topology: String,
    pub mode: Mode,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub paths: Paths,
    pub solver: SolverConfig,
    pub fit: FitConfig,
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub eval: EvalConfig,
    pub oracle: OracleConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            topology: "body19".into(),
            mode: Mode::default(),
            seed: 0,
            threads: 0,
            paths: Paths::default(),
            solver: SolverConfig::default(),
            fit: FitConfig::default(),
            scene: SceneConfig::default(),
            noise: NoiseConfig::default(),
            eval: EvalConfig::default(),
            oracle: OracleConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `file` (when given), applies `overrides` in order and validates.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::config(e).context(format!("reading config {}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config(e).context(format!("parsing config {}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(anyhow::anyhow!("{}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::config(anyhow::anyhow!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.topology()?;
        self.pipeline().validate().map_err(CliError::config)?;
        self.scene.validate().map_err(CliError::config)?;
        self.noise.validate().map_err(CliError::config)?;
        if self.oracle.cap == 0 {
            return Err(CliError::config(anyhow::anyhow!("oracle.cap must be positive")));
        }
        Ok(())
    }

    pub fn topology(&self) -> CliResult<SkeletonTopology> {
        if self.topology == "body19" {
            return Ok(default_topology());
        }
        let n = self
            .topology
            .strip_prefix("chain-")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| CliError::config(anyhow::anyhow!("unknown topology {:?}, expected body19 or chain-N", self.topology)))?;
        SkeletonTopology::chain(n).map_err(CliError::config)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            solver: self.solver.clone(),
            fit: self.fit.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, setting: &str) -> CliResult<()> {
    let (key, raw) = setting
        .split_once('=')
        .ok_or_else(|| CliError::config(anyhow::anyhow!("override {setting:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(anyhow::anyhow!("bad override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(anyhow::anyhow!("override {key:?}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(
            None,
            &[
                "solver.graph.w_tracking=0.5".into(),
                "mode=two-step".into(),
                "scene.persons=3".into(),
                "paths.output=out.json".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.solver.graph.w_tracking, 0.5);
        assert_eq!(cfg.mode, Mode::TwoStep);
        assert_eq!(cfg.scene.persons, 3);
        assert_eq!(cfg.paths.output.as_deref(), Some(Path::new("out.json")));
    }

    #[test]
    fn bad_settings_are_config_errors() {
        for o in ["solver.beam_width=0", "mode=fast", "nope=1", "version=2", "topology=chain-x", "scene"] {
            let err = RunConfig::load(None, &[o.to_string()]).unwrap_err();
            assert_eq!(err.status, crate::ExitStatus::Config, "{o}");
        }
    }

    #[test]
    fn chain_topology() {
        let cfg = RunConfig::load(None, &["topology=chain-3".into()]).unwrap();
        assert_eq!(cfg.topology().unwrap().joint_count(), 3);
    }
}
