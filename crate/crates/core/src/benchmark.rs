//! End-to-end synthetic comparison: generate a scenario, build the
//! geo-location models, run the estimators and score every map by its KWD
//! to the ground truth.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    approx_map_estimate, df_estimate, df_estimate_refined, df_precompute, em_estimate, map_estimate,
    sb_estimate, DfOperator, EmConfig, MapConfig,
};
use crate::evaluation::{compare_report, KwdReport};
use crate::geolocation;
use crate::grid::{
    build_assignment_matrix, consolidate, AssignmentMatrix, CountVector, DensityEstimate, Diagnostics,
    PriorVector, DEFAULT_CONSOLIDATION_TOL,
};
use crate::scenario::{oracle_partition_average, Scenario, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Sb,
    Em,
    Map,
    Amap,
    Df,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Sb => "sb",
            Estimator::Em => "em",
            Estimator::Map => "map",
            Estimator::Amap => "amap",
            Estimator::Df => "df",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoMode {
    /// Voronoi cells around the towers; counts are summed per tower.
    Voronoi,
    /// Overlapping flat footprints.
    Of,
    /// Overlapping signal-dominance footprints.
    Ov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub em: EmConfig,
    pub map: MapConfig,
    /// Re-solve DF on the unclipped tiles after clipping.
    pub df_refine: bool,
    /// Directory for cached DF operators.
    pub df_cache: Option<PathBuf>,
    pub consolidation_tol: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
            map: MapConfig::default(),
            df_refine: false,
            df_cache: None,
            consolidation_tol: DEFAULT_CONSOLIDATION_TOL,
        }
    }
}

/// A consolidated estimation problem.
#[derive(Debug, Clone)]
pub struct Setup {
    pub p: AssignmentMatrix,
    pub prior: PriorVector,
    pub counts: CountVector,
}

impl Setup {
    /// Builds P for `mode`, consolidates it under `prior` (flat if `None`)
    /// and aggregates the counts when the model works per tower.
    pub fn new(scenario: &Scenario, mode: GeoMode, prior: Option<&PriorVector>, tol: f64) -> Result<Self> {
        let towers = &scenario.towers;
        let grid = &scenario.grid;
        let (footprints, counts) = match mode {
            GeoMode::Voronoi => (
                geolocation::tower_voronoi(towers, grid)?,
                scenario.counts.aggregate(&geolocation::cell_towers(towers), towers.len())?,
            ),
            GeoMode::Of => (geolocation::flat_footprints(towers, grid)?, scenario.counts.clone()),
            GeoMode::Ov => {
                let radio = &scenario.config.radio;
                (
                    geolocation::dominance_footprints(towers, grid, &radio.path_loss, &radio.logistic)?,
                    scenario.counts.clone(),
                )
            }
        };
        let p = build_assignment_matrix(&footprints)?;
        let flat = PriorVector::flat(grid.len());
        let (p, prior) = consolidate(&p, prior.unwrap_or(&flat), tol)?;
        log::info!("{mode:?}: {} cells, {} sections", p.rows(), p.cols());
        Ok(Self { p, prior, counts })
    }

    pub fn sections(&self) -> usize {
        self.p.cols()
    }

    fn df_operator(&self, settings: &EstimatorSettings) -> Result<(DfOperator, bool)> {
        match &settings.df_cache {
            Some(dir) => DfOperator::cached(dir, &self.p, &self.prior),
            None => Ok((df_precompute(&self.p, &self.prior)?, false)),
        }
    }

    /// Runs one estimator and spreads the result over the tiles.
    pub fn run(&self, which: Estimator, settings: &EstimatorSettings) -> Result<EstimateRun> {
        let start = Instant::now();
        let mut cache_hit = None;
        let est = match which {
            Estimator::Sb => sb_estimate(&self.p, &self.counts, &self.prior)?,
            Estimator::Em => em_estimate(&self.p, &self.counts, &self.prior, &settings.em)?,
            Estimator::Map => map_estimate(&self.p, &self.counts, &self.prior, &settings.map)?,
            Estimator::Amap => approx_map_estimate(&self.p, &self.counts, &self.prior, &settings.map)?,
            Estimator::Df => {
                let (op, hit) = self.df_operator(settings)?;
                cache_hit = Some(hit);
                if settings.df_refine {
                    df_estimate_refined(&op, &self.counts)?
                } else {
                    df_estimate(&op, &self.counts)?
                }
            }
        };
        let tiles = est.disaggregate(&self.p.sections_or_identity())?;
        Ok(EstimateRun {
            estimator: which,
            seconds: start.elapsed().as_secs_f64(),
            df_cache_hit: cache_hit,
            estimate: tiles,
        })
    }

    pub fn run_all(&self, which: &[Estimator], settings: &EstimatorSettings, parallel: bool) -> Result<Vec<EstimateRun>> {
        if parallel {
            which.par_iter().map(|&e| self.run(e, settings)).collect()
        } else {
            which.iter().map(|&e| self.run(e, settings)).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimateRun {
    pub estimator: Estimator,
    pub seconds: f64,
    pub df_cache_hit: Option<bool>,
    /// Per-tile values.
    pub estimate: DensityEstimate,
}

/// Per-estimator entry of a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub estimator: Estimator,
    pub mass: f64,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df_cache_hit: Option<bool>,
    pub diagnostics: Diagnostics,
}

impl From<&EstimateRun> for RunSummary {
    fn from(r: &EstimateRun) -> Self {
        Self {
            estimator: r.estimator,
            mass: r.estimate.mass(),
            seconds: r.seconds,
            df_cache_hit: r.df_cache_hit,
            diagnostics: r.estimate.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scenario: ScenarioConfig,
    pub estimators: Vec<Estimator>,
    pub settings: EstimatorSettings,
    pub lattice_order: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            estimators: vec![Estimator::Sb, Estimator::Em, Estimator::Df],
            // The single-projection DF clips a large share of sections on
            // this scenario and leaves the count constraints unmet.
            settings: EstimatorSettings { df_refine: true, ..Default::default() },
            lattice_order: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub scenario: Scenario,
    pub report: KwdReport,
    pub sections: usize,
    pub voronoi_cells: usize,
    pub runs: Vec<EstimateRun>,
    /// Every scored map by name, per tile.
    pub maps: Vec<(String, Vec<f64>)>,
}

/// Scores the Voronoi estimate, the configured estimators on the
/// overlapping flat model, both oracles and the flat map against the GTP.
pub fn run_benchmark(cfg: &BenchConfig, parallel: bool) -> Result<BenchResult> {
    if cfg.estimators.is_empty() {
        return Err(Error::InvalidParameter("no estimators selected".into()));
    }
    let scenario = Scenario::generate(&cfg.scenario)?;
    let of = Setup::new(&scenario, GeoMode::Of, None, cfg.settings.consolidation_tol)?;
    let vor = Setup::new(&scenario, GeoMode::Voronoi, None, cfg.settings.consolidation_tol)?;

    let mut maps: Vec<(String, Vec<f64>)> = Vec::new();
    let voronoi = vor.run(Estimator::Sb, &cfg.settings)?;
    maps.push(("voronoi".into(), voronoi.estimate.values().to_vec()));
    let runs = of.run_all(&cfg.estimators, &cfg.settings, parallel)?;
    for r in &runs {
        maps.push((r.estimator.name().into(), r.estimate.values().to_vec()));
    }
    for (name, setup) in [("oracle-voronoi", &vor), ("oracle-sections", &of)] {
        let s = setup.p.sections_or_identity();
        maps.push((name.into(), oracle_partition_average(&scenario.gtp, s.map(), s.sizes())?.into_values()));
    }

    let gtp = scenario.gtp.to_estimate().into_values();
    let report = compare_report(&gtp, &maps, &scenario.grid, cfg.lattice_order, true, parallel)?;
    Ok(BenchResult {
        sections: of.sections(),
        voronoi_cells: vor.sections(),
        scenario,
        report,
        runs,
        maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::GtpSpec;

    fn small() -> BenchConfig {
        let mut cfg = BenchConfig::default();
        cfg.scenario.width = 30;
        cfg.scenario.height = 30;
        cfg.scenario.layers[0].tower_count = 5;
        cfg.scenario.layers[1].tower_count = 8;
        cfg.scenario.gtp = GtpSpec { clusters: 2, cluster_side: 5, cluster_intensity: 20, clutter_fraction: 0.05, clutter_intensity: 3 };
        cfg
    }

    #[test]
    fn small_benchmark_runs_and_conserves_mass() {
        let r = run_benchmark(&small(), false).unwrap();
        let total = r.scenario.gtp.total() as f64;
        for (name, m) in &r.maps {
            assert!((m.iter().sum::<f64>() - total).abs() < 1e-6 * total, "{name}");
        }
        assert_eq!(r.report.rows.len(), r.maps.len() + 1);
        assert!(r.sections >= r.voronoi_cells);
        assert!(r.report.get("flat").unwrap() > r.report.get("em").unwrap());
    }

    #[test]
    fn voronoi_estimate_matches_counts_per_polygon() {
        let cfg = small();
        let s = Scenario::generate(&cfg.scenario).unwrap();
        let setup = Setup::new(&s, GeoMode::Voronoi, None, DEFAULT_CONSOLIDATION_TOL).unwrap();
        let est = setup.run(Estimator::Sb, &EstimatorSettings::default()).unwrap().estimate;
        let vor = geolocation::tower_voronoi(&s.towers, &s.grid).unwrap();
        for (cell, &c) in vor.cells().iter().zip(setup.counts.counts()) {
            let sum: f64 = cell.tiles().map(|j| est.values()[j]).sum();
            assert!((sum - c).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_estimator_list_is_rejected() {
        let cfg = BenchConfig { estimators: vec![], ..small() };
        assert!(run_benchmark(&cfg, false).is_err());
    }
}
