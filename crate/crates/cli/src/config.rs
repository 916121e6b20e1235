//! Run configuration: a TOML file merged with command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use contactloc::geometry::CylinderSpec;
use contactloc::localize::TrainConfig;
use contactloc::mapping::BranchScene;
use contactloc::preprocess::GateConfig;
use contactloc::simulate::{default_layout, DatasetPlan, SensorLayout, SimConfig};

use crate::CliError;

/// How raw clips are prepared before feature extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Spectral gating against the dataset's reference noise recording.
    pub background_subtraction: bool,
    pub window_s: f64,
    /// GCC-PHAT from the raw trimmed clip rather than the gated one.
    pub gcc_on_raw: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { background_subtraction: true, window_s: 1.0, gcc_on_raw: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// Start positions drawn in the sampling plane (four strikes each).
    pub positions: usize,
    /// Cap on executed strikes; 0 keeps all.
    pub max_strikes: usize,
    /// Acceptance amplitude; when unset, a multiple of the noise floor.
    pub threshold: Option<f64>,
    pub scene: BranchScene,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self { positions: 50, max_strikes: 200, threshold: None, scene: BranchScene::default() }
    }
}

/// Fully resolved settings for one invocation. The top-level `seed` drives
/// every random stream; the `seed` fields inside `sim` and `train` mirror it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub dataset: DatasetPlan,
    pub pipeline: PipelineConfig,
    pub gate: GateConfig,
    pub train: TrainConfig,
    pub cylinder: CylinderSpec,
    pub layout: SensorLayout,
    pub mapping: MappingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sim: SimConfig::default(),
            dataset: DatasetPlan::default(),
            pipeline: PipelineConfig::default(),
            gate: GateConfig::default(),
            train: TrainConfig::default(),
            cylinder: CylinderSpec::default(),
            layout: default_layout(),
            mapping: MappingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Mirrors the master seed and checks every section.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        self.sim.seed = self.seed;
        self.train.seed = self.seed;
        let usage = |e: String| CliError::Usage(e);
        self.sim.validate().map_err(|e| usage(e.to_string()))?;
        self.dataset.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        self.cylinder.validate().map_err(|e| usage(e.to_string()))?;
        self.mapping.scene.validate().map_err(|e| usage(e.to_string()))?;
        if !(self.pipeline.window_s > 0.0 && self.pipeline.window_s <= self.sim.clip_duration_s) {
            return Err(usage("pipeline.window_s must be positive and fit in a clip".into()));
        }
        if self.mapping.positions == 0 {
            return Err(usage("mapping.positions must be positive".into()));
        }
        if let Some(t) = self.mapping.threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(usage("mapping.threshold must be non-negative".into()));
            }
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the resolved configuration as `config.toml` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join("config.toml");
        std::fs::write(&p, self.to_toml()).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }
}
