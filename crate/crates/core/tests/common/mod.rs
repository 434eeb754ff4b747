//! Random instances and independent checks shared by the integration tests
//! and the acceptance runner. Oracles here use dense linear algebra and
//! direct formulas, never the estimator code paths they judge.

#![allow(dead_code)]

use celldense::estimators::{
    df_estimate, df_precompute, em_estimate, em_steps, loglikelihood, ml_optimality_residual, mlbs_membership,
    sb_estimate, EmConfig,
};
use celldense::grid::{
    build_assignment_matrix, consolidate, AssignmentMatrix, CountVector, FootprintKind, FootprintSet, Grid,
    PriorVector, SparseMatrix,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random estimation problem whose MLBS is known to be nonempty.
#[derive(Debug, Clone)]
pub struct Instance {
    pub p: AssignmentMatrix,
    pub prior: PriorVector,
    pub counts: CountVector,
    /// A nonnegative u with P u = c.
    pub witness: Vec<f64>,
}

/// Column-stochastic P with `rows` <= `cols`. Every column touches at least
/// one row and every row owns a private column, so P has full row rank.
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> AssignmentMatrix {
    assert!(rows <= cols);
    let mut triplets = Vec::new();
    for j in 0..cols {
        let mut support: Vec<usize> = if j < rows {
            vec![j]
        } else {
            (0..rows).filter(|_| rng.random_bool(0.4)).collect()
        };
        if support.is_empty() {
            support.push(rng.random_range(0..rows));
        }
        // Private columns may still be shared with other rows.
        if j < rows {
            support.extend((0..rows).filter(|&i| i != j && rng.random_bool(0.2)));
        }
        let weights: Vec<f64> = support.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        triplets.extend(support.into_iter().zip(weights).map(|(i, w)| (i, j, w / total)));
    }
    AssignmentMatrix::new(SparseMatrix::from_triplets(rows, cols, triplets).unwrap()).unwrap()
}

pub fn random_prior(rng: &mut ChaCha8Rng, n: usize) -> PriorVector {
    PriorVector::from_weights((0..n).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap()
}

/// J <= 30 tiles, I <= 10 cells, counts generated from a nonnegative
/// witness so that P u = c has a nonnegative solution.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let rows = r.random_range(1..=10);
    let cols = r.random_range(rows..=30);
    let p = random_matrix(&mut r, rows, cols);
    let prior = random_prior(&mut r, cols);
    let scale = r.random_range(10.0..1000.0);
    let witness: Vec<f64> = (0..cols)
        .map(|_| if r.random_bool(0.15) { 0.0 } else { scale * r.random_range(0.0..1.0) })
        .collect();
    let counts = CountVector::new(p.matrix().mul_vec(&witness)).unwrap();
    Instance { p, prior, counts, witness }
}

pub fn dense(p: &AssignmentMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p.rows(), p.cols());
    for (i, j, v) in p.matrix().triplets() {
        m[(i, j)] = v;
    }
    m
}

/// Projects `x` onto the null space of P: x - P^T (P P^T)^+ P x.
pub fn null_projection(p: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let x = DVector::from_column_slice(x);
    let g = p * p.transpose();
    let eps = 1e-12 * g.norm().max(1.0);
    let y = g.svd(true, true).solve(&(p * &x), eps).expect("both factors computed");
    (x - p.transpose() * y).iter().copied().collect()
}

/// A random MLBS point: `base` moved along a random null-space direction,
/// by at most the largest step that keeps it nonnegative. Tiles seen by a
/// cell with no counts are pinned at zero, as every MLBS point requires.
pub fn mlbs_point(rng: &mut ChaCha8Rng, p: &DMatrix<f64>, c: &CountVector, base: &[f64]) -> Vec<f64> {
    let mut pinned = vec![false; base.len()];
    let mut free_p = p.clone();
    for (i, &ci) in c.counts().iter().enumerate() {
        if ci == 0.0 {
            for j in 0..base.len() {
                pinned[j] |= p[(i, j)] > 0.0;
            }
        }
    }
    for (j, &pin) in pinned.iter().enumerate() {
        if pin {
            free_p.column_mut(j).fill(0.0);
        }
    }
    let raw: Vec<f64> =
        pinned.iter().map(|&pin| if pin { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
    let z = null_projection(&free_p, &raw);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(&z) <= 1e-9 * norm(&raw) {
        // Trivial null space: what is left is round-off.
        return base.to_vec();
    }
    let t_max = base
        .iter()
        .zip(&z)
        .filter(|(_, &zj)| zj < 0.0)
        .map(|(&b, &zj)| b / -zj)
        .fold(f64::INFINITY, f64::min);
    let t = if t_max.is_finite() { rng.random_range(0.0..=1.0) * t_max } else { rng.random_range(0.0..10.0) };
    base.iter().zip(&z).map(|(&b, &zj)| (b + t * zj).max(0.0)).collect()
}

/// Tight EM settings. EM is sublinear when the MLBS lies on a face of the
/// orthant, hence the generous iteration cap.
pub fn tight_em() -> EmConfig {
    EmConfig { max_iters: 2_000_000, tol: 1e-15, tol_ml: 1e-12, ..Default::default() }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// MLBS points are ML-optimal and share the EM log-likelihood.
pub fn check_ml_equivalence(inst: &Instance, seed: u64, samples: usize) -> Check {
    let em = em_estimate(&inst.p, &inst.counts, &inst.prior, &tight_em()).map_err(|e| e.to_string())?;
    let target = loglikelihood(&inst.p, &inst.counts, em.values()).map_err(|e| e.to_string())?;
    let pd = dense(&inst.p);
    let mut r = rng(seed ^ 0x5eed);
    for k in 0..samples {
        let v = if k == 0 { inst.witness.clone() } else { mlbs_point(&mut r, &pd, &inst.counts, &inst.witness) };
        if !mlbs_membership(&inst.p, &inst.counts, &v, 1e-9) {
            return Err(format!("sample {k} left the MLBS"));
        }
        let res = ml_optimality_residual(&inst.p, &inst.counts, &v).map_err(|e| e.to_string())?;
        if res > 1e-8 {
            return Err(format!("sample {k}: residual {res:.3e}"));
        }
        let ll = loglikelihood(&inst.p, &inst.counts, &v).map_err(|e| e.to_string())?;
        if rel_gap(ll, target) > 1e-9 {
            return Err(format!("sample {k}: loglik {ll} vs EM {target}"));
        }
    }
    Ok(())
}

/// Random footprints on a small grid always give columns summing to one.
pub fn check_column_stochastic(seed: u64) -> Check {
    let mut r = rng(seed);
    let (w, h) = (r.random_range(1..8), r.random_range(1..8));
    let grid = Grid::square(w, h).map_err(|e| e.to_string())?;
    let cells = r.random_range(1..6);
    let kind = if r.random_bool(0.5) { FootprintKind::Binary } else { FootprintKind::Continuous };
    let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cells];
    for j in 0..grid.len() {
        let owner = r.random_range(0..cells);
        for (i, e) in entries.iter_mut().enumerate() {
            if i == owner || r.random_bool(0.3) {
                let s = match kind {
                    FootprintKind::Binary => 1.0,
                    FootprintKind::Continuous => r.random_range(1e-3..5.0),
                };
                e.push((j, s));
            }
        }
    }
    let fs = FootprintSet::new(grid, kind, entries.into_iter().enumerate().map(|(i, e)| (format!("C{i}"), e)))
        .map_err(|e| e.to_string())?;
    let p = build_assignment_matrix(&fs).map_err(|e| e.to_string())?;
    for (j, s) in p.matrix().col_sums().iter().enumerate() {
        if (s - 1.0).abs() > 1e-12 {
            return Err(format!("column {j} sums to {s}"));
        }
    }
    Ok(())
}

/// SB and every EM iterate keep the total count.
pub fn check_mass(inst: &Instance) -> Check {
    let total = inst.counts.total();
    let tol = 1e-9 * total.max(1.0);
    let sb = sb_estimate(&inst.p, &inst.counts, &inst.prior).map_err(|e| e.to_string())?;
    if (sb.mass() - total).abs() > tol {
        return Err(format!("SB mass {} vs {total}", sb.mass()));
    }
    for (m, u) in em_steps(&inst.p, &inst.counts, inst.prior.rescaled(total)).take(200).enumerate() {
        let u = u.map_err(|e| e.to_string())?;
        let mass: f64 = u.iter().sum();
        if (mass - total).abs() > tol {
            return Err(format!("EM iterate {m} mass {mass} vs {total}"));
        }
    }
    Ok(())
}

/// A tile started at zero stays at zero.
pub fn check_em_zero_stability(inst: &Instance, seed: u64) -> Check {
    let mut r = rng(seed ^ 0x2e40);
    let mut u0 = inst.prior.rescaled(inst.counts.total());
    let j = r.random_range(0..u0.len());
    u0[j] = 0.0;
    let pu = inst.p.matrix().mul_vec(&u0);
    if pu.iter().zip(inst.counts.counts()).any(|(&d, &c)| c > 0.0 && d <= 0.0) {
        // Zeroing the only tile of a cell with counts leaves EM undefined.
        return Ok(());
    }
    for (m, u) in em_steps(&inst.p, &inst.counts, u0).take(200).enumerate() {
        let u = u.map_err(|e| e.to_string())?;
        if u[j] != 0.0 {
            return Err(format!("tile {j} left zero at iterate {m}: {}", u[j]));
        }
    }
    Ok(())
}

/// Duplicating a column (with an equal prior) gives the copies equal EM
/// values at every iterate, and EM on the consolidated problem matches the
/// tile-level run section by section.
pub fn check_em_symmetry(inst: &Instance, seed: u64) -> Check {
    let mut r = rng(seed ^ 0x5111);
    let j = r.random_range(0..inst.p.cols());
    let n = inst.p.cols();
    let mut triplets: Vec<(usize, usize, f64)> = inst.p.matrix().triplets().collect();
    let copy: Vec<(usize, usize, f64)> =
        triplets.iter().filter(|t| t.1 == j).map(|&(i, _, v)| (i, n, v)).collect();
    triplets.extend(copy);
    let p = AssignmentMatrix::new(SparseMatrix::from_triplets(inst.p.rows(), n + 1, triplets).unwrap())
        .map_err(|e| e.to_string())?;
    let mut weights = inst.prior.alpha().to_vec();
    weights.push(weights[j]);
    let prior = PriorVector::from_weights(weights).map_err(|e| e.to_string())?;
    let total = inst.counts.total();

    let (cp, cprior) = consolidate(&p, &prior, 1e-12).map_err(|e| e.to_string())?;
    let sections = cp.sections_or_identity();
    let tile_run = em_steps(&p, &inst.counts, prior.rescaled(total)).take(100);
    let section_run = em_steps(&cp, &inst.counts, cprior.rescaled(total)).take(100);
    for (m, (u, s)) in tile_run.zip(section_run).enumerate() {
        let (u, s) = (u.map_err(|e| e.to_string())?, s.map_err(|e| e.to_string())?);
        if rel_gap(u[j], u[n]) > 1e-12 {
            return Err(format!("iterate {m}: copies differ, {} vs {}", u[j], u[n]));
        }
        let mut summed = vec![0.0; s.len()];
        for (k, &sec) in sections.map().iter().enumerate() {
            summed[sec] += u[k];
        }
        for (a, b) in summed.iter().zip(&s) {
            if (a - b).abs() > 1e-9 * total.max(1.0) {
                return Err(format!("iterate {m}: section value {b} vs tile sum {a}"));
            }
        }
    }
    Ok(())
}

/// (u - a)^T A^-1 (u - a).
pub fn weighted_norm(u: &[f64], a: &[f64]) -> f64 {
    u.iter().zip(a).map(|(x, y)| (x - y).powi(2) / y).sum()
}

/// When DF does not clip, no MLBS point is closer to the prior in the
/// A^-1-weighted norm. Returns whether the instance was usable.
pub fn check_df_minimality(inst: &Instance, seed: u64, samples: usize) -> Result<bool, String> {
    let op = df_precompute(&inst.p, &inst.prior).map_err(|e| e.to_string())?;
    let df = df_estimate(&op, &inst.counts).map_err(|e| e.to_string())?;
    if df.diagnostics.clipped > 0 {
        return Ok(false);
    }
    let a = inst.prior.rescaled(inst.counts.total());
    let best = weighted_norm(df.values(), &a);
    let pd = dense(&inst.p);
    let mut r = rng(seed ^ 0xdf);
    for k in 0..samples {
        let v = if k == 0 { inst.witness.clone() } else { mlbs_point(&mut r, &pd, &inst.counts, df.values()) };
        if !mlbs_membership(&inst.p, &inst.counts, &v, 1e-9) {
            return Err(format!("sample {k} left the MLBS"));
        }
        let other = weighted_norm(&v, &a);
        if other < best - 1e-9 * best.max(1.0) {
            return Err(format!("sample {k}: {other} < DF {best}"));
        }
    }
    Ok(true)
}

/// A copy of `inst` with counts generated near the prior, where the DF
/// projection rarely needs clipping.
pub fn near_prior(inst: &Instance, seed: u64) -> Instance {
    let mut r = rng(seed ^ 0xa0);
    let a = inst.prior.rescaled(inst.counts.total().max(1.0));
    let witness: Vec<f64> = a.iter().map(|&x| x * r.random_range(0.5..1.5)).collect();
    let counts = CountVector::new(inst.p.matrix().mul_vec(&witness)).unwrap();
    Instance { counts, witness, ..inst.clone() }
}

/// Random instance with a strictly positive point u and a direction x.
pub fn random_point(seed: u64) -> (Instance, Vec<f64>, Vec<f64>) {
    let inst = random_instance(seed);
    let mut r = rng(seed ^ 0x9a);
    let scale = inst.counts.total().max(1.0) / inst.p.cols() as f64;
    let u: Vec<f64> = (0..inst.p.cols()).map(|_| scale * r.random_range(0.1..2.0)).collect();
    let x: Vec<f64> = (0..inst.p.cols()).map(|_| r.random_range(-10.0..10.0)).collect();
    (inst, u, x)
}

/// Worst relative error of the analytic gradient against central
/// differences of the log-likelihood.
pub fn gradient_error(inst: &Instance, u: &[f64]) -> f64 {
    let grad = celldense::estimators::loglik_gradient(&inst.p, &inst.counts, u).unwrap();
    let ll = |v: &[f64]| loglikelihood(&inst.p, &inst.counts, v).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..u.len() {
        let h = 1e-5 * u[j].max(1.0);
        let (mut up, mut down) = (u.to_vec(), u.to_vec());
        up[j] += h;
        down[j] -= h;
        let fd = (ll(&up) - ll(&down)) / (2.0 * h);
        worst = worst.max((fd - grad[j]).abs() / grad[j].abs().max(1e-3));
    }
    worst
}

/// Toy instance: P = [[1, .25, 0], [0, .75, 1]], c = [40, 70].
pub fn toy() -> (AssignmentMatrix, CountVector) {
    let p = AssignmentMatrix::from_dense(&[vec![1.0, 0.25, 0.0], vec![0.0, 0.75, 1.0]]).unwrap();
    (p, CountVector::new(vec![40.0, 70.0]).unwrap())
}

/// Maximizer of `f(u1, u2, u3)` over {u >= 0, u1 + u2 + u3 = total} on a
/// lattice with spacing `step`.
pub fn simplex_grid_argmax(total: f64, step: f64, f: impl Fn(f64, f64, f64) -> f64) -> [f64; 3] {
    let n = (total / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for i in 0..=n {
        for k in 0..=(n - i) {
            let (u1, u2) = (i as f64 * step, k as f64 * step);
            let u3 = (total - u1 - u2).max(0.0);
            let v = f(u1, u2, u3);
            if v > best.0 {
                best = (v, [u1, u2, u3]);
            }
        }
    }
    best.1
}

/// Toy MAP objective with flat prior a = C/3, written out by hand.
pub fn toy_map_objective(u: [f64; 3]) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let a = 110.0_f64 / 3.0;
    let data = 40.0 * (u[0] + 0.25 * u[1]).ln() + 70.0 * (0.75 * u[1] + u[2]).ln();
    data + u.iter().map(|&x| x * a.ln() - ln_gamma(x + 1.0)).sum::<f64>()
}

/// Toy approximate-MAP objective with flat prior.
pub fn toy_amap_objective(u: [f64; 3]) -> f64 {
    let a = 110.0_f64 / 3.0;
    let data = 40.0 * (u[0] + 0.25 * u[1]).ln() + 70.0 * (0.75 * u[1] + u[2]).ln();
    data - 0.5 * u.iter().map(|&x| (x - a).powi(2) / a).sum::<f64>()
}

/// Two random maps of equal mass; roughly half of the tiles are empty.
pub fn random_map_pair(seed: u64, tiles: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let mut draw = || -> Vec<f64> {
        let mut m: Vec<f64> =
            (0..tiles).map(|_| if r.random_bool(0.5) { r.random_range(0.0..10.0) } else { 0.0 }).collect();
        if m.iter().all(|&x| x == 0.0) {
            m[0] = 1.0;
        }
        m
    };
    let u = draw();
    let mut v = draw();
    let (su, sv): (f64, f64) = (u.iter().sum(), v.iter().sum());
    v.iter_mut().for_each(|x| *x *= su / sv);
    (u, v)
}
