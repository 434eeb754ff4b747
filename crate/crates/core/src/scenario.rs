//! Seeded synthetic scenarios: a two-layer network, a clustered ground-truth
//! population and per-cell counts drawn by random cell selection.
//!
//! Every random step draws from its own ChaCha8 stream of the scenario seed,
//! so the network, the population and the counts can be regenerated
//! independently of each other.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geolocation::{self, LayerTemplate, LogisticParams, PathLossParams, Tower};
use crate::grid::{io, AssignmentMatrix, CountVector, DensityEstimate, Grid, Method};

/// Independent random streams of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Network = 1,
    Population = 2,
    Counts = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub tower_count: usize,
    pub sectors: usize,
    pub beamwidth: f64,
    pub range: f64,
    pub azimuth_offset: f64,
    /// Minimum distance between towers of this layer, in tiles.
    pub min_spacing: f64,
    /// Transmit power in dBm; by default the power that puts the dominance
    /// floor at `range`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power: Option<f64>,
}

impl LayerSpec {
    pub fn template(&self, radio: &RadioParams) -> LayerTemplate {
        LayerTemplate {
            sectors: self.sectors,
            beamwidth: self.beamwidth,
            range: self.range,
            azimuth_offset: self.azimuth_offset,
            tx_power: self
                .tx_power
                .unwrap_or_else(|| radio.path_loss.tx_power_for_range(self.range, &radio.logistic)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub path_loss: PathLossParams,
    pub logistic: LogisticParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GtpSpec {
    pub clusters: usize,
    pub cluster_side: usize,
    /// Devices per cluster tile.
    pub cluster_intensity: u64,
    /// Fraction of the non-cluster tiles that carry clutter.
    pub clutter_fraction: f64,
    pub clutter_intensity: u64,
}

impl Default for GtpSpec {
    fn default() -> Self {
        Self { clusters: 4, cluster_side: 20, cluster_intensity: 40, clutter_fraction: 0.5, clutter_intensity: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub width: usize,
    pub height: usize,
    pub tile_size: f64,
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
    pub gtp: GtpSpec,
    pub radio: RadioParams,
    /// Network redraws allowed until every tile is covered.
    pub max_network_attempts: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let sector = 2.0 * PI / 3.0;
        Self {
            width: 100,
            height: 100,
            tile_size: 1.0,
            seed: 8,
            layers: vec![
                LayerSpec {
                    tower_count: 42,
                    sectors: 3,
                    beamwidth: sector,
                    range: 15.0,
                    azimuth_offset: PI / 5.0,
                    min_spacing: 12.0,
                    tx_power: None,
                },
                LayerSpec {
                    tower_count: 73,
                    sectors: 3,
                    beamwidth: sector,
                    range: 6.0,
                    azimuth_offset: 0.0,
                    min_spacing: 7.0,
                    tx_power: None,
                },
            ],
            gtp: GtpSpec::default(),
            radio: RadioParams::default(),
            max_network_attempts: 100,
        }
    }
}

impl ScenarioConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.width, self.height, self.tile_size)
    }

    pub fn templates(&self) -> Vec<LayerTemplate> {
        self.layers.iter().map(|l| l.template(&self.radio)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("scenario needs at least one layer".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.tower_count == 0 || !(l.min_spacing >= 0.0) {
                return Err(Error::InvalidParameter(format!("layer {k}: tower_count and min_spacing")));
            }
            l.template(&self.radio).sectors()?;
        }
        let g = &self.gtp;
        if !(0.0..=1.0).contains(&g.clutter_fraction) {
            return Err(Error::InvalidParameter(format!("clutter_fraction {}", g.clutter_fraction)));
        }
        if self.max_network_attempts == 0 {
            return Err(Error::InvalidParameter("max_network_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Integer devices per tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    counts: Vec<u64>,
    total: u64,
}

impl GroundTruth {
    pub fn new(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn to_estimate(&self) -> DensityEstimate {
        DensityEstimate::new(self.counts.iter().map(|&c| c as f64).collect(), Method::Given)
            .expect("counts are nonnegative")
    }
}

/// Rejection-sampled tower positions (tile centers), layer by layer, with a
/// per-layer minimum spacing and at most one tower per tile. The whole
/// network is redrawn until the flat footprints cover every tile.
pub fn generate_network(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<Vec<Tower>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let templates = cfg.templates();
    for attempt in 1..=cfg.max_network_attempts {
        let towers = place_towers(cfg, &grid, &templates, rng)?;
        let uncovered = geolocation::flat_footprints(&towers, &grid)?.uncovered_tiles().len();
        if uncovered == 0 {
            if attempt > 1 {
                log::info!("network: full coverage after {attempt} draws");
            }
            return Ok(towers);
        }
        log::debug!("network draw {attempt} leaves {uncovered} tiles uncovered");
    }
    Err(Error::InvalidParameter(format!(
        "no fully covering network in {} draws",
        cfg.max_network_attempts
    )))
}

fn place_towers(
    cfg: &ScenarioConfig,
    grid: &Grid,
    templates: &[LayerTemplate],
    rng: &mut impl Rng,
) -> Result<Vec<Tower>> {
    const TRIES_PER_TOWER: usize = 10_000;
    let mut taken = vec![false; grid.len()];
    let mut towers: Vec<Tower> = Vec::new();
    for (layer, spec) in cfg.layers.iter().enumerate() {
        let first = towers.len();
        let mut tries = 0;
        while towers.len() - first < spec.tower_count {
            tries += 1;
            if tries > TRIES_PER_TOWER * spec.tower_count {
                return Err(Error::InvalidParameter(format!(
                    "layer {layer}: cannot place {} towers {} tiles apart",
                    spec.tower_count, spec.min_spacing
                )));
            }
            let j = rng.random_range(0..grid.len());
            if taken[j] {
                continue;
            }
            let (x, y) = grid.center(j);
            let spaced = towers[first..]
                .iter()
                .all(|t| (t.x - x).hypot(t.y - y) >= spec.min_spacing);
            if spaced {
                taken[j] = true;
                towers.push(templates[layer].tower(x, y, layer)?);
            }
        }
    }
    Ok(towers)
}

/// Square clusters at random non-overlapping positions plus clutter on a
/// random subset of the remaining tiles.
pub fn generate_gtp(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<GroundTruth> {
    let grid = cfg.grid()?;
    let spec = &cfg.gtp;
    let (w, h, side) = (grid.width(), grid.height(), spec.cluster_side);
    let too_big = || Error::ClustersDontFit { count: spec.clusters, side, width: w, height: h };
    if spec.clusters > 0 && (side == 0 || side > w || side > h || spec.clusters * side * side > w * h) {
        return Err(too_big());
    }

    const TRIES: usize = 100_000;
    let mut in_cluster = vec![false; grid.len()];
    let mut placed = 0;
    let mut tries = 0;
    while placed < spec.clusters {
        tries += 1;
        if tries > TRIES {
            return Err(too_big());
        }
        let (x0, y0) = (rng.random_range(0..=w - side), rng.random_range(0..=h - side));
        let tiles: Vec<usize> = (y0..y0 + side)
            .flat_map(|y| (x0..x0 + side).map(move |x| (x, y)))
            .map(|(x, y)| grid.index(x, y))
            .collect();
        if tiles.iter().any(|&j| in_cluster[j]) {
            continue;
        }
        tiles.iter().for_each(|&j| in_cluster[j] = true);
        placed += 1;
    }

    let mut counts: Vec<u64> = in_cluster
        .iter()
        .map(|&c| if c { spec.cluster_intensity } else { 0 })
        .collect();
    let rest: Vec<usize> = (0..grid.len()).filter(|&j| !in_cluster[j]).collect();
    let n_clutter = (spec.clutter_fraction * rest.len() as f64).round() as usize;
    for k in index::sample(rng, rest.len(), n_clutter) {
        counts[rest[k]] = spec.clutter_intensity;
    }
    Ok(GroundTruth::new(counts))
}

/// Assigns the devices of every tile to cells independently, cell i with
/// probability p_ij, by a chain of binomial draws.
pub fn sample_counts(p: &AssignmentMatrix, gtp: &GroundTruth, rng: &mut impl Rng) -> Result<CountVector> {
    if p.cols() != gtp.len() {
        return Err(Error::DimensionMismatch { expected: p.cols(), found: gtp.len() });
    }
    let mut c = vec![0u64; p.rows()];
    for (j, &n) in gtp.counts().iter().enumerate() {
        let (rows, probs) = p.matrix().col_entries(j);
        let mut left = n;
        let mut mass = 1.0;
        for (k, (&i, &pij)) in rows.iter().zip(probs).enumerate() {
            if left == 0 {
                break;
            }
            let draw = if k + 1 == rows.len() || pij >= mass {
                left
            } else {
                let q = (pij / mass).clamp(0.0, 1.0);
                Binomial::new(left, q)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?
                    .sample(rng)
            };
            c[i] += draw;
            left -= draw;
            mass -= pij;
        }
    }
    Ok(CountVector::from_integers(&c))
}

/// Each tile gets the mean GTP value of its region.
pub fn oracle_partition_average(
    gtp: &GroundTruth,
    section_map: &[usize],
    section_size: &[usize],
) -> Result<DensityEstimate> {
    if section_map.len() != gtp.len() {
        return Err(Error::DimensionMismatch { expected: gtp.len(), found: section_map.len() });
    }
    let mut sums = vec![0.0; section_size.len()];
    for (&s, &v) in section_map.iter().zip(gtp.counts()) {
        if s >= sums.len() {
            return Err(Error::DimensionMismatch { expected: sums.len(), found: s + 1 });
        }
        sums[s] += v as f64;
    }
    let mut out = crate::grid::disaggregate(&sums, section_map, section_size)?;
    out = DensityEstimate::new(out.into_values(), Method::Oracle)?;
    Ok(out)
}

/// A generated scenario; counts follow the flat overlapping footprints.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: Grid,
    pub towers: Vec<Tower>,
    pub gtp: GroundTruth,
    pub counts: CountVector,
}

pub const TOWERS_FILE: &str = "towers.csv";
pub const GTP_FILE: &str = "gtp.csv";
pub const COUNTS_FILE: &str = "counts.csv";

impl Scenario {
    pub fn generate(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let towers = generate_network(config, &mut stream_rng(config.seed, Stream::Network))?;
        let gtp = generate_gtp(config, &mut stream_rng(config.seed, Stream::Population))?;
        let p = crate::grid::build_assignment_matrix(&geolocation::flat_footprints(&towers, &grid)?)?;
        let counts = sample_counts(&p, &gtp, &mut stream_rng(config.seed, Stream::Counts))?;
        log::info!(
            "scenario: {} towers, {} cells, {} devices",
            towers.len(),
            counts.len(),
            gtp.total()
        );
        Ok(Self { config: config.clone(), grid, towers, gtp, counts })
    }

    pub fn cell_ids(&self) -> Vec<String> {
        geolocation::cell_ids(&self.towers)
    }

    /// Writes towers, GTP and counts CSVs into `dir` (created if missing).
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        geolocation::write_towers(&self.towers, fs::File::create(dir.join(TOWERS_FILE))?)?;
        let gtp: Vec<f64> = self.gtp.counts().iter().map(|&c| c as f64).collect();
        io::write_tile_values(&gtp, fs::File::create(dir.join(GTP_FILE))?)?;
        io::write_cell_counts(&self.cell_ids(), self.counts.counts(), fs::File::create(dir.join(COUNTS_FILE))?)?;
        Ok(())
    }

    /// Reads a dump written by [`Scenario::write_csvs`]; the layer templates
    /// come from `config`.
    pub fn read_csvs(config: &ScenarioConfig, dir: &Path) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let towers = geolocation::read_towers(fs::File::open(dir.join(TOWERS_FILE))?, &config.templates())?;
        let gtp = io::read_tile_values(grid.len(), fs::File::open(dir.join(GTP_FILE))?)?;
        let gtp = GroundTruth::new(
            gtp.into_iter()
                .enumerate()
                .map(|(j, v)| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as u64)
                    } else {
                        Err(Error::InvalidValue { index: j, value: v })
                    }
                })
                .collect::<Result<_>>()?,
        );
        let ids = geolocation::cell_ids(&towers);
        let rows = io::read_cell_counts(fs::File::open(dir.join(COUNTS_FILE))?)?;
        if rows.len() != ids.len() || rows.iter().zip(&ids).any(|(r, id)| &r.0 != id) {
            return Err(Error::Parse(format!("{COUNTS_FILE} does not list the cells of {TOWERS_FILE} in order")));
        }
        let counts = CountVector::new(rows.into_iter().map(|r| r.1).collect())?;
        Ok(Self { config: config.clone(), grid, towers, gtp, counts })
    }
}
