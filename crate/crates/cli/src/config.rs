//! Run configuration: everything needed to reproduce a batch, stored as TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prune_core::mission::{MissionConfig, TimingMode};
use prune_core::percept::NoiseModel;
use prune_core::world::GeneratorParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// First seed of the batch.
    pub seed: u64,
    /// Number of consecutive seeds.
    pub seeds: u64,
    pub out: PathBuf,
    pub world: GeneratorParams,
    /// Mission settings, including camera, control and noise.
    pub mission: MissionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 1,
            out: PathBuf::from("out"),
            world: GeneratorParams::default(),
            mission: MissionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NoiseChoice {
    Off,
    Calibrated,
    /// Keep the noise table from the config file.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TimingChoice {
    Nominal,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        // toml reports line and column in its error message.
        let cfg: RunConfig = toml::from_str(s).map_err(|e| anyhow::anyhow!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&s).with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            bail!("seeds must be at least 1");
        }
        self.world.validate().context("world parameters")?;
        self.mission.validate().context("mission parameters")?;
        Ok(())
    }

    pub fn apply_noise(&mut self, choice: NoiseChoice) {
        let seed = self.mission.noise.seed;
        match choice {
            NoiseChoice::Off => self.mission.noise = NoiseModel { seed, ..NoiseModel::off() },
            NoiseChoice::Calibrated => self.mission.noise = NoiseModel { seed, ..NoiseModel::calibrated() },
            NoiseChoice::Custom => {}
        }
    }

    pub fn apply_timing(&mut self, choice: TimingChoice) {
        self.mission.timing_mode = match choice {
            TimingChoice::Nominal => TimingMode::Nominal,
            TimingChoice::Simulated => TimingMode::Simulated,
        };
    }

    pub fn apply_intervention(&mut self, t: Toggle) {
        let on = t == Toggle::On;
        self.mission.intervention.skip_detected_spurs = on;
        self.mission.intervention.abort_on_wrong_object = on;
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds).map(|k| self.seed + k).collect()
    }
}
