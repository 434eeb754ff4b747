//! Kantorovich-Wasserstein distance between density maps on a grid: the
//! minimum cost of moving one map onto the other with Euclidean ground
//! distance, divided by the total mass (the average travel distance per
//! device).

pub mod simplex;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use simplex::FlowProblem;

/// Largest combined support accepted by [`kwd_exact`].
pub const EXACT_SUPPORT_LIMIT: usize = 2000;
/// Relative mass mismatch that is rescaled away instead of rejected.
pub const MASS_TOL: f64 = 1e-6;
/// Integer units per unit of mass inside the flow solver.
const SUPPLY_SCALE: f64 = 1e6;
/// Integer units per tile of distance inside the flow solver.
const COST_SCALE: f64 = 1e6;

/// Checks the maps and rescales the lighter one when the masses differ by
/// at most `MASS_TOL` (relative).
fn balance(u: &[f64], v: &[f64], grid: &Grid) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    for m in [u, v] {
        if m.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: m.len() });
        }
        if let Some(index) = m.iter().position(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidValue { index, value: m[index] });
        }
    }
    let (cu, cv): (f64, f64) = (u.iter().sum(), v.iter().sum());
    let total = cu.max(cv);
    if (cu - cv).abs() > MASS_TOL * total {
        return Err(Error::MassImbalance { left: cu, right: cv });
    }
    let (mut u, mut v) = (u.to_vec(), v.to_vec());
    if cu < cv && cu > 0.0 {
        u.iter_mut().for_each(|x| *x *= cv / cu);
    } else if cv < cu && cv > 0.0 {
        v.iter_mut().for_each(|x| *x *= cu / cv);
    }
    Ok((u, v, total))
}

/// Rounds net supplies u - v to integers summing to exactly zero.
fn integer_supplies(net: &[f64]) -> Vec<i64> {
    let mut s: Vec<i64> = net.iter().map(|x| (x * SUPPLY_SCALE).round() as i64).collect();
    let drift: i64 = s.iter().sum();
    if drift != 0 {
        let k = (0..s.len())
            .filter(|&k| s[k].signum() == drift.signum())
            .max_by_key(|&k| s[k].abs())
            .unwrap_or(0);
        s[k] -= drift;
    }
    s
}

fn scaled_cost(d: f64) -> i64 {
    (d * COST_SCALE).round() as i64
}

/// Solves the flow problem and prices the flows with the real distances.
fn priced(problem: &FlowProblem, distance: impl Fn(usize) -> f64, total: f64) -> Result<f64> {
    let flow = problem.solve()?;
    let cost: f64 = flow
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0)
        .map(|(e, &f)| f as f64 / SUPPLY_SCALE * distance(e))
        .sum();
    // An empty float sum is -0.0; adding zero normalizes the sign.
    Ok(cost / total + 0.0)
}

/// Exact KWD by a transportation problem between the tiles with surplus and
/// the tiles with deficit.
pub fn kwd_exact(u: &[f64], v: &[f64], grid: &Grid) -> Result<f64> {
    let support = u.iter().chain(v).filter(|&&x| x > 0.0).count();
    if support > EXACT_SUPPORT_LIMIT {
        return Err(Error::TooLarge(support));
    }
    let (u, v, total) = balance(u, v, grid)?;
    if total == 0.0 {
        return Ok(0.0);
    }
    let net: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
    let supply = integer_supplies(&net);
    let nodes: Vec<usize> = (0..grid.len()).filter(|&j| supply[j] != 0).collect();
    let mut problem = FlowProblem::new(nodes.iter().map(|&j| supply[j]).collect());
    let mut pairs = Vec::new();
    for (a, &ja) in nodes.iter().enumerate() {
        if supply[ja] <= 0 {
            continue;
        }
        for (b, &jb) in nodes.iter().enumerate() {
            if supply[jb] < 0 {
                let d = grid.distance(ja, jb);
                problem.add_arc(a, b, scaled_cost(d));
                pairs.push(d);
            }
        }
    }
    priced(&problem, |e| pairs[e], total)
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// Primitive integer offsets (gcd 1) with max(|dx|, |dy|) <= l, sorted by
/// angle.
pub fn lattice_directions(l: usize) -> Vec<(i32, i32)> {
    let l = l as i32;
    let mut dirs: Vec<(i32, i32)> = (-l..=l)
        .flat_map(|dx| (-l..=l).map(move |dy| (dx, dy)))
        .filter(|&(dx, dy)| (dx, dy) != (0, 0) && gcd(dx, dy) == 1)
        .collect();
    dirs.sort_by(|a, b| (a.1 as f64).atan2(a.0 as f64).total_cmp(&(b.1 as f64).atan2(b.0 as f64)));
    dirs
}

/// Worst-case relative overestimate of the lattice distance: 1/cos(g/2) - 1
/// with g the widest angular gap between consecutive directions.
pub fn lattice_bound(l: usize) -> f64 {
    let dirs = lattice_directions(l);
    let angles: Vec<f64> = dirs.iter().map(|d| (d.1 as f64).atan2(d.0 as f64)).collect();
    let mut gap: f64 = angles[0] + 2.0 * std::f64::consts::PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    1.0 / (gap / 2.0).cos() - 1.0
}

/// KWD restricted to moves along lattice directions of order `l`: a flow on
/// the grid graph whose arcs join each tile to the tiles at the offsets of
/// [`lattice_directions`]. Never below the exact value and at most
/// `lattice_bound(l)` above it.
pub fn kwd_approx(u: &[f64], v: &[f64], grid: &Grid, l: usize) -> Result<f64> {
    if l == 0 {
        return Err(Error::InvalidParameter("lattice order L must be at least 1".into()));
    }
    let (u, v, total) = balance(u, v, grid)?;
    if total == 0.0 {
        return Ok(0.0);
    }
    let net: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
    let mut problem = FlowProblem::new(integer_supplies(&net));
    let dirs = lattice_directions(l);
    let lengths: Vec<f64> = dirs.iter().map(|&(dx, dy)| (dx as f64).hypot(dy as f64) * grid.tile_size()).collect();
    let costs: Vec<i64> = lengths.iter().map(|&d| scaled_cost(d)).collect();
    let mut arc_len = Vec::new();
    let (w, h) = (grid.width() as i32, grid.height() as i32);
    for j in 0..grid.len() {
        let (x, y) = grid.coords(j);
        for (k, &(dx, dy)) in dirs.iter().enumerate() {
            let (tx, ty) = (x as i32 + dx, y as i32 + dy);
            if tx >= 0 && ty >= 0 && tx < w && ty < h {
                problem.add_arc(j, grid.index(tx as usize, ty as usize), costs[k]);
                arc_len.push(lengths[k]);
            }
        }
    }
    priced(&problem, |e| arc_len[e], total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwdRow {
    pub name: String,
    pub kwd: f64,
}

/// Distances of named maps to a reference, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwdReport {
    pub lattice_order: usize,
    pub rows: Vec<KwdRow>,
}

impl KwdReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.kwd)
    }

    /// Plain-text aligned table.
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
        let mut out = format!("{:<width$}  {:>10}\n", "map", "KWD");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>10.4}", r.name, r.kwd);
        }
        out
    }
}

/// KWD from `reference` to each named map at lattice order `l`, optionally
/// adding the flat map of the same mass. Maps whose mass differs from the
/// reference are rescaled to it first (logged). With `parallel` the
/// problems are solved concurrently.
pub fn compare_report(
    reference: &[f64],
    maps: &[(String, Vec<f64>)],
    grid: &Grid,
    l: usize,
    include_flat: bool,
    parallel: bool,
) -> Result<KwdReport> {
    let total: f64 = reference.iter().sum();
    let mut jobs: Vec<(String, Vec<f64>)> = Vec::with_capacity(maps.len() + 1);
    if include_flat {
        jobs.push(("flat".to_string(), vec![total / grid.len() as f64; grid.len()]));
    }
    for (name, m) in maps {
        let mass: f64 = m.iter().sum();
        if mass > 0.0 && (mass - total).abs() > MASS_TOL * total.max(1.0) {
            log::info!("KWD: rescaling {name} from mass {mass:.6} to {total:.6}");
            jobs.push((name.clone(), m.iter().map(|x| x * total / mass).collect()));
        } else {
            jobs.push((name.clone(), m.clone()));
        }
    }
    let solve = |(name, m): &(String, Vec<f64>)| -> Result<KwdRow> {
        let kwd = kwd_approx(reference, m, grid, l)?;
        log::debug!("KWD({name}) = {kwd:.6}");
        Ok(KwdRow { name: name.clone(), kwd })
    };
    let mut rows: Vec<KwdRow> = if parallel {
        jobs.par_iter().map(solve).collect::<Result<_>>()?
    } else {
        jobs.iter().map(solve).collect::<Result<_>>()?
    };
    rows.sort_by(|a, b| a.kwd.total_cmp(&b.kwd).then_with(|| a.name.cmp(&b.name)));
    Ok(KwdReport { lattice_order: l, rows })
}
