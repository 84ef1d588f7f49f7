//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shadowheight_core::datapipe::DatasetMode;
use shadowheight_core::net::Preset;
use shadowheight_core::probe::ProbeConfig;
use shadowheight_core::shadow::ShadowParams;
use shadowheight_core::synth::SceneParams;
use shadowheight_core::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Manchester,
    Dfc,
    Synthetic,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_root: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub outputs: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub mode: ModeName,
    /// Network preset; defaults to the one matching `mode`.
    pub preset: Option<Preset>,
    /// Single source of randomness; copied into `train` and `synth`.
    pub seed: u64,
    pub shadow: ShadowParams,
    pub train: TrainConfig,
    pub paths: Paths,
    pub probe: ProbeConfig,
    pub synth: SceneParams,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: AppConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        for (section, seed) in [("train", config.train.seed), ("synth", config.synth.seed)] {
            if seed != 0 && seed != config.seed {
                return Err(CliError::Usage(format!(
                    "config: set the top-level `seed` instead of `{section}.seed`"
                )));
            }
        }
        Ok(config)
    }

    /// Applies the seed everywhere and checks every section.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        let usage = |e: shadowheight_core::Error| CliError::Usage(format!("config: {e}"));
        self.shadow.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.probe.validate().map_err(usage)?;
        self.synth.validate().map_err(usage)?;
        Ok(self)
    }

    pub fn dataset_mode(&self) -> DatasetMode {
        match self.mode {
            ModeName::Manchester => DatasetMode::manchester(),
            ModeName::Dfc => DatasetMode::dfc(),
            ModeName::Synthetic => self.synthetic_mode(),
        }
    }

    /// Patch geometry for catalogs generated from `synth`.
    pub fn synthetic_mode(&self) -> DatasetMode {
        let base = DatasetMode::synthetic(self.synth.rgb_gsd);
        DatasetMode {
            ratio: self.synth.ratio,
            patch_out: base.patch_rgb / self.synth.ratio.max(1),
            lidar_gsd: self.synth.rgb_gsd * self.synth.ratio as f64,
            ..base
        }
    }

    pub fn preset(&self) -> Preset {
        self.preset.unwrap_or(match self.mode {
            ModeName::Manchester => Preset::Manchester,
            ModeName::Dfc => Preset::Dfc,
            ModeName::Synthetic => Preset::Reduced,
        })
    }
}
