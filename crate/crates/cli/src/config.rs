//! Run configuration: one TOML file with a section per pipeline stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use celldense::benchmark::{BenchConfig, Estimator, EstimatorSettings, GeoMode};
use celldense::estimators::{EmConfig, MapConfig};
use celldense::grid::DEFAULT_CONSOLIDATION_TOL;
use celldense::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Name of the config echo written next to every dump.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeolocationSection {
    pub mode: GeoMode,
    /// Entrywise tolerance for merging identical columns into sections.
    pub consolidation_tol: f64,
}

impl Default for GeolocationSection {
    fn default() -> Self {
        Self { mode: GeoMode::Of, consolidation_tol: DEFAULT_CONSOLIDATION_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorsSection {
    pub list: Vec<Estimator>,
    /// Per-tile prior weights (`tile_index,value`); flat when absent.
    pub prior_file: Option<PathBuf>,
    /// Re-solve DF on the unclipped tiles when the projection clips.
    pub df_refine: bool,
    /// Directory for cached DF operators.
    pub df_cache: Option<PathBuf>,
    pub em: EmConfig,
    pub map: MapConfig,
}

impl Default for EstimatorsSection {
    fn default() -> Self {
        Self {
            list: vec![Estimator::Sb, Estimator::Em, Estimator::Df],
            prior_file: None,
            df_refine: true,
            df_cache: None,
            em: EmConfig::default(),
            map: MapConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Lattice order L of the approximate KWD.
    pub lattice_order: usize,
    pub include_flat: bool,
    pub heatmaps: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { lattice_order: 4, include_flat: true, heatmaps: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub geolocation: GeolocationSection,
    pub estimators: EstimatorsSection,
    pub evaluation: EvaluationSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Io)?;
        Self::parse(&text).with_context(|| format!("in {}", path.display())).map_err(Failure::Config)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.scenario.validate()?;
        self.estimators.em.validate()?;
        self.estimators.map.validate()?;
        if self.estimators.list.is_empty() {
            bail!("estimators.list is empty");
        }
        if self.evaluation.lattice_order == 0 {
            bail!("evaluation.lattice_order must be at least 1");
        }
        if !(self.geolocation.consolidation_tol >= 0.0) {
            bail!("geolocation.consolidation_tol must be nonnegative");
        }
        Ok(())
    }

    pub fn settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            em: self.estimators.em,
            map: self.estimators.map,
            df_refine: self.estimators.df_refine,
            df_cache: self.estimators.df_cache.clone(),
            consolidation_tol: self.geolocation.consolidation_tol,
        }
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            scenario: self.scenario.clone(),
            estimators: self.estimators.list.clone(),
            settings: self.settings(),
            lattice_order: self.evaluation.lattice_order,
        }
    }
}
