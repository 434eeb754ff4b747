//! Cell footprints from a network description.
//!
//! Three geo-location models are supported:
//!
//! * Voronoi tessellation with tower positions as seeds (disjoint, binary);
//! * overlapping flat footprints: a tile is covered when its center lies in
//!   the sector's coverage wedge;
//! * overlapping variable footprints: a logistic "signal dominance" weight
//!   of the predicted received power.
//!
//! Angles follow the mathematical convention: radians, counter-clockwise
//! from the +x axis. Positions and ranges are in tile units.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FootprintKind, FootprintSet, Grid};

/// Slack on the angular test so that tiles exactly on a sector border fall in
/// both neighbouring sectors instead of neither.
const ANGLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub azimuth: f64,
    pub beamwidth: f64,
    pub max_range: f64,
    /// Transmit power in dBm, used by the signal-dominance model only.
    pub tx_power: f64,
}

impl Sector {
    pub fn new(azimuth: f64, beamwidth: f64, max_range: f64, tx_power: f64) -> Result<Self> {
        let s = Self { azimuth, beamwidth, max_range, tx_power };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beamwidth > 0.0 && self.beamwidth <= 2.0 * PI + ANGLE_EPS) {
            return Err(Error::InvalidParameter(format!("beamwidth {} not in (0, 2pi]", self.beamwidth)));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::InvalidParameter(format!("max_range {} must be positive", self.max_range)));
        }
        if !self.azimuth.is_finite() || !self.tx_power.is_finite() {
            return Err(Error::InvalidParameter("non-finite sector parameter".into()));
        }
        Ok(())
    }

    /// Absolute angle in [0, pi] between the boresight and the direction
    /// (dx, dy).
    pub fn angular_offset(&self, dx: f64, dy: f64) -> f64 {
        let diff = dy.atan2(dx) - self.azimuth;
        let wrapped = diff.rem_euclid(2.0 * PI);
        wrapped.min(2.0 * PI - wrapped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub x: f64,
    pub y: f64,
    pub layer: usize,
    pub sectors: Vec<Sector>,
}

/// Per-layer sector template: `sectors` equally spaced sectors starting at
/// `azimuth_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerTemplate {
    pub sectors: usize,
    pub beamwidth: f64,
    pub range: f64,
    pub azimuth_offset: f64,
    pub tx_power: f64,
}

impl LayerTemplate {
    pub fn sectors(&self) -> Result<Vec<Sector>> {
        if self.sectors == 0 {
            return Err(Error::InvalidParameter("a layer needs at least one sector".into()));
        }
        (0..self.sectors)
            .map(|k| {
                let az = self.azimuth_offset + 2.0 * PI * k as f64 / self.sectors as f64;
                Sector::new(az, self.beamwidth, self.range, self.tx_power)
            })
            .collect()
    }

    pub fn tower(&self, x: f64, y: f64, layer: usize) -> Result<Tower> {
        Ok(Tower { x, y, layer, sectors: self.sectors()? })
    }
}

/// Log-distance path loss with a quadratic off-boresight gain penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossParams {
    pub exponent: f64,
    /// Reference distance (tile units) below which loss stops growing.
    pub d0: f64,
    /// Penalty in dB at the sector edge (offset = beamwidth / 2).
    pub gain_penalty_db: f64,
    pub gain_cap_db: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self { exponent: 3.8, d0: 0.1, gain_penalty_db: 12.0, gain_cap_db: 20.0 }
    }
}

impl PathLossParams {
    pub fn received_dbm(&self, sector: &Sector, distance: f64, offset: f64) -> f64 {
        let half = sector.beamwidth / 2.0;
        let penalty = (self.gain_penalty_db * (offset / half).powi(2)).min(self.gain_cap_db);
        sector.tx_power - 10.0 * self.exponent * distance.max(self.d0).log10() - penalty
    }

    /// Transmit power that puts the truncation floor exactly at `range`
    /// along the boresight.
    pub fn tx_power_for_range(&self, range: f64, lg: &LogisticParams) -> f64 {
        lg.floor_dbm() + 10.0 * self.exponent * range.max(self.d0).log10()
    }

    /// Distance beyond which the boresight power is below `dbm`.
    fn reach(&self, tx_power: f64, dbm: f64) -> f64 {
        10f64.powf((tx_power - dbm) / (10.0 * self.exponent))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub midpoint: f64,
    pub steepness: f64,
    /// Dominance values below this are truncated to zero.
    pub floor: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { midpoint: -92.5, steepness: 0.2, floor: 0.01 }
    }
}

impl LogisticParams {
    pub fn dominance(&self, dbm: f64) -> f64 {
        1.0 / (1.0 + (-self.steepness * (dbm - self.midpoint)).exp())
    }

    /// Received power at which the dominance equals the floor.
    pub fn floor_dbm(&self) -> f64 {
        self.midpoint + (self.floor / (1.0 - self.floor)).ln() / self.steepness
    }
}

fn tile_window(grid: &Grid, x: f64, y: f64, radius: f64) -> (usize, usize, usize, usize) {
    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
    (
        clamp((x - radius).floor(), grid.width()),
        clamp((x + radius).ceil(), grid.width()),
        clamp((y - radius).floor(), grid.height()),
        clamp((y + radius).ceil(), grid.height()),
    )
}

/// Binary footprint: tile centers within `max_range` and within half the
/// beamwidth of the azimuth. The tile holding the tower is always covered.
pub fn sector_footprint_flat(tower: &Tower, sector: &Sector, grid: &Grid) -> Vec<(usize, f64)> {
    let r2 = sector.max_range * sector.max_range * (1.0 + 1e-12);
    let half = sector.beamwidth / 2.0 + ANGLE_EPS;
    let home = grid.tile_at(tower.x, tower.y);
    let (x0, x1, y0, y1) = tile_window(grid, tower.x, tower.y, sector.max_range);
    let mut out = Vec::new();
    for ty in y0..=y1 {
        for tx in x0..=x1 {
            let j = grid.index(tx, ty);
            let (cx, cy) = grid.center(j);
            let (dx, dy) = (cx - tower.x, cy - tower.y);
            let d2 = dx * dx + dy * dy;
            let covered = Some(j) == home
                || d2 == 0.0
                || (d2 <= r2 && sector.angular_offset(dx, dy) <= half);
            if covered {
                out.push((j, 1.0));
            }
        }
    }
    out
}

/// Continuous footprint: logistic transform of the predicted received power,
/// truncated below `lg.floor`.
pub fn signal_dominance(
    tower: &Tower,
    sector: &Sector,
    grid: &Grid,
    pl: &PathLossParams,
    lg: &LogisticParams,
) -> Vec<(usize, f64)> {
    let reach = pl.reach(sector.tx_power, lg.floor_dbm()).min((grid.width() + grid.height()) as f64);
    let (x0, x1, y0, y1) = tile_window(grid, tower.x, tower.y, reach);
    let mut out = Vec::new();
    for ty in y0..=y1 {
        for tx in x0..=x1 {
            let j = grid.index(tx, ty);
            let (cx, cy) = grid.center(j);
            let (dx, dy) = (cx - tower.x, cy - tower.y);
            let d = dx.hypot(dy);
            let offset = if d == 0.0 { 0.0 } else { sector.angular_offset(dx, dy) };
            let s = lg.dominance(pl.received_dbm(sector, d, offset));
            if s >= lg.floor {
                out.push((j, s));
            }
        }
    }
    out
}

/// Cell labels `T<tower>S<sector>`, tower-major.
pub fn cell_ids(towers: &[Tower]) -> Vec<String> {
    towers
        .iter()
        .enumerate()
        .flat_map(|(t, tw)| (0..tw.sectors.len()).map(move |s| format!("T{t}S{s}")))
        .collect()
}

/// Tower index of every cell, in the order of [`cell_ids`].
pub fn cell_towers(towers: &[Tower]) -> Vec<usize> {
    towers
        .iter()
        .enumerate()
        .flat_map(|(t, tw)| std::iter::repeat_n(t, tw.sectors.len()))
        .collect()
}

fn per_cell<F>(towers: &[Tower], grid: &Grid, kind: FootprintKind, f: F) -> Result<FootprintSet>
where
    F: Fn(&Tower, &Sector) -> Vec<(usize, f64)> + Sync,
{
    for t in towers {
        if !grid.contains(t.x, t.y) {
            return Err(Error::InvalidParameter(format!("tower at ({}, {}) is off the grid", t.x, t.y)));
        }
        for s in &t.sectors {
            s.validate()?;
        }
    }
    let pairs: Vec<(&Tower, &Sector)> =
        towers.iter().flat_map(|t| t.sectors.iter().map(move |s| (t, s))).collect();
    let footprints: Vec<Vec<(usize, f64)>> = pairs.par_iter().map(|(t, s)| f(t, s)).collect();
    FootprintSet::new(*grid, kind, cell_ids(towers).into_iter().zip(footprints))
}

/// Overlapping flat footprints for every sector of every tower.
pub fn flat_footprints(towers: &[Tower], grid: &Grid) -> Result<FootprintSet> {
    per_cell(towers, grid, FootprintKind::Binary, |t, s| sector_footprint_flat(t, s, grid))
}

/// Signal-dominance footprints for every sector of every tower.
pub fn dominance_footprints(
    towers: &[Tower],
    grid: &Grid,
    pl: &PathLossParams,
    lg: &LogisticParams,
) -> Result<FootprintSet> {
    per_cell(towers, grid, FootprintKind::Continuous, |t, s| signal_dominance(t, s, grid, pl, lg))
}

/// Nearest-seed partition of the tiles (distance from tile center). Ties go
/// to the lowest seed index. Footprint `k` belongs to seed `k` and may be
/// empty if every tile is closer to some other seed.
pub fn voronoi_partition(seeds: &[(f64, f64)], grid: &Grid) -> Result<FootprintSet> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds);
    }
    let mut sorted: Vec<(f64, f64, usize)> = seeds.iter().enumerate().map(|(k, s)| (s.0, s.1, k)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
            return Err(Error::DuplicateSeeds(w[0].2.min(w[1].2), w[0].2.max(w[1].2)));
        }
    }

    let index = SeedBuckets::new(seeds, grid);
    let owner: Vec<usize> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let (cx, cy) = grid.center(j);
            index.nearest(seeds, cx, cy)
        })
        .collect();

    let mut cells: Vec<Vec<(usize, f64)>> = vec![Vec::new(); seeds.len()];
    for (j, &k) in owner.iter().enumerate() {
        cells[k].push((j, 1.0));
    }
    FootprintSet::new(
        *grid,
        FootprintKind::Binary,
        cells.into_iter().enumerate().map(|(k, c)| (format!("V{k}"), c)),
    )
}

/// Voronoi tessellation seeded at the tower positions; cell `k` is tower `k`.
pub fn tower_voronoi(towers: &[Tower], grid: &Grid) -> Result<FootprintSet> {
    let seeds: Vec<(f64, f64)> = towers.iter().map(|t| (t.x, t.y)).collect();
    voronoi_partition(&seeds, grid)
}

/// Uniform bucket grid over the seeds for ring-by-ring nearest search.
struct SeedBuckets {
    side: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl SeedBuckets {
    fn new(seeds: &[(f64, f64)], grid: &Grid) -> Self {
        let (w, h) = (grid.width() as f64, grid.height() as f64);
        let side = ((w * h) / seeds.len() as f64).sqrt().max(1.0);
        let nx = (w / side).ceil().max(1.0) as usize;
        let ny = (h / side).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (k, &(x, y)) in seeds.iter().enumerate() {
            let (bx, by) = Self::bucket_of(side, nx, ny, x, y);
            buckets[by * nx + bx].push(k);
        }
        Self { side, nx, ny, buckets }
    }

    fn bucket_of(side: f64, nx: usize, ny: usize, x: f64, y: f64) -> (usize, usize) {
        let bx = ((x / side).floor().max(0.0) as usize).min(nx - 1);
        let by = ((y / side).floor().max(0.0) as usize).min(ny - 1);
        (bx, by)
    }

    fn nearest(&self, seeds: &[(f64, f64)], x: f64, y: f64) -> usize {
        let (bx, by) = Self::bucket_of(self.side, self.nx, self.ny, x, y);
        let mut best = (f64::INFINITY, usize::MAX);
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            let (bx, by, r) = (bx as isize, by as isize, ring as isize);
            for yy in (by - r)..=(by + r) {
                for xx in (bx - r)..=(bx + r) {
                    let on_ring = (yy - by).abs() == r || (xx - bx).abs() == r;
                    if !on_ring || xx < 0 || yy < 0 || xx >= self.nx as isize || yy >= self.ny as isize {
                        continue;
                    }
                    for &k in &self.buckets[yy as usize * self.nx + xx as usize] {
                        let (dx, dy) = (x - seeds[k].0, y - seeds[k].1);
                        let d2 = dx * dx + dy * dy;
                        if d2 < best.0 || (d2 == best.0 && k < best.1) {
                            best = (d2, k);
                        }
                    }
                }
            }
            // Unvisited seeds lie at least `ring * side` away.
            let bound = ring as f64 * self.side;
            if best.1 != usize::MAX && best.0 < bound * bound {
                break;
            }
        }
        best.1
    }
}

/// Writes towers as `tower_id,x,y,layer`.
pub fn write_towers<W: Write>(towers: &[Tower], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["tower_id", "x", "y", "layer"]).map_err(io)?;
    for (t, tw) in towers.iter().enumerate() {
        w.write_record([t.to_string(), tw.x.to_string(), tw.y.to_string(), tw.layer.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `tower_id,x,y,layer` rows and attaches the layer templates.
pub fn read_towers<R: Read>(input: R, layers: &[LayerTemplate]) -> Result<Vec<Tower>> {
    let mut r = csv::Reader::from_reader(input);
    let mut towers = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let field = |k: usize| {
            rec.get(k)
                .map(str::trim)
                .ok_or_else(|| Error::Parse(format!("line {}: missing column {k}", n + 2)))
        };
        let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", n + 2));
        let x: f64 = field(1)?.parse().map_err(|_| bad("x"))?;
        let y: f64 = field(2)?.parse().map_err(|_| bad("y"))?;
        let layer: usize = field(3)?.parse().map_err(|_| bad("layer"))?;
        let template = layers
            .get(layer)
            .ok_or_else(|| Error::Parse(format!("line {}: unknown layer {layer}", n + 2)))?;
        towers.push(template.tower(x, y, layer)?);
    }
    Ok(towers)
}
