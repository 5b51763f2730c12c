//! Run configuration: an optional TOML file, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use soec_core::decision::WeightVector;
use soec_core::optimize::{power_list, GridSpec};
use soec_core::physics::CellParameters;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cell parameter file, relative to the config file.
    pub params: Option<PathBuf>,
    pub campaign_seed: u64,
    pub train_seed: u64,
    pub sobol_seed: u64,
    pub samples: usize,
    pub n_base: usize,
    pub grid: GridConfig,
    pub power: PowerConfig,
    pub weights: Vec<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub t_levels: usize,
    pub su_levels: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: None,
            campaign_seed: 2024,
            train_seed: 7,
            sobol_seed: 1,
            samples: 1764,
            n_base: 4096,
            grid: GridConfig::default(),
            power: PowerConfig::default(),
            weights: vec!["case1".into(), "case2".into()],
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            t_levels: 16,
            su_levels: 17,
        }
    }
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            min: 2.0,
            max: 27.0,
            step: 1.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(p) = &cfg.params {
            if p.is_relative() {
                cfg.params = Some(path.parent().unwrap_or(Path::new(".")).join(p));
            }
        }
        Ok(cfg)
    }

    pub fn cell_parameters(&self) -> Result<CellParameters> {
        match &self.params {
            Some(p) => CellParameters::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(CellParameters::default()),
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::uniform(self.grid.t_levels, self.grid.su_levels)?)
    }

    pub fn powers(&self) -> Result<Vec<f64>> {
        Ok(power_list(self.power.min, self.power.max, self.power.step)?)
    }

    /// Named weight cases: `case1`, `case2` or six comma-separated numbers.
    pub fn weight_cases(&self) -> Result<Vec<(String, WeightVector)>> {
        if self.weights.is_empty() {
            bail!("no weight cases configured");
        }
        self.weights.iter().map(|w| parse_weights(w)).collect()
    }
}

pub fn parse_weights(s: &str) -> Result<(String, WeightVector)> {
    Ok(match s {
        "case1" => ("case1".into(), WeightVector::case1()),
        "case2" => ("case2".into(), WeightVector::case2()),
        _ => ("custom".into(), WeightVector::parse(s)?),
    })
}
