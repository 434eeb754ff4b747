use serde::{Deserialize, Serialize};

use super::likelihood::boundary_residual;
use super::{check_columns, check_counts, check_prior};
use crate::error::{Error, Result};
use crate::grid::{AssignmentMatrix, CountVector, DensityEstimate, Diagnostics, Method, PriorVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Bound on the largest relative change of a tile between iterates.
    pub tol: f64,
    /// Bound on the ML-optimality residual.
    pub tol_ml: f64,
    /// Values at or below `zero_tol * C` count as converged to zero: they are
    /// checked one-sidedly while iterating and set to zero on return.
    pub zero_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 5000, tol: 1e-10, tol_ml: 1e-8, zero_tol: 1e-12 }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tol > 0.0) || !(self.tol_ml > 0.0) || !(self.zero_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("bad EM config {self:?}")));
        }
        Ok(())
    }
}

/// Multiplicative factors sum_i c_i p_ij / (p_i^T u), i.e. the likelihood
/// gradient at u.
fn factors(p: &AssignmentMatrix, c: &CountVector, u: &[f64]) -> Result<Vec<f64>> {
    let pu = p.matrix().mul_vec(u);
    let mut w = vec![0.0; p.rows()];
    for (i, (&ci, &d)) in c.counts().iter().zip(&pu).enumerate() {
        if ci > 0.0 {
            if d <= 0.0 {
                return Err(Error::DegenerateDenominator(i));
            }
            w[i] = ci / d;
        }
    }
    Ok(p.matrix().tmul_vec(&w))
}

/// One EM update u_j <- u_j sum_i c_i p_ij / (p_i^T u).
pub fn em_step(p: &AssignmentMatrix, c: &CountVector, u: &[f64]) -> Result<Vec<f64>> {
    check_counts(p, c)?;
    check_columns(p, u.len())?;
    let f = factors(p, c, u)?;
    Ok(u.iter().zip(f).map(|(a, b)| a * b).collect())
}

/// Iterator over u^1, u^2, ... starting from `u0`. Zeros in `u0` stay zero.
pub struct EmSteps<'a> {
    p: &'a AssignmentMatrix,
    c: &'a CountVector,
    u: Vec<f64>,
    failed: bool,
}

impl Iterator for EmSteps<'_> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match em_step(self.p, self.c, &self.u) {
            Ok(next) => {
                self.u.clone_from(&next);
                Some(Ok(next))
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

pub fn em_steps<'a>(p: &'a AssignmentMatrix, c: &'a CountVector, u0: Vec<f64>) -> EmSteps<'a> {
    EmSteps { p, c, u: u0, failed: false }
}

/// EM from the rescaled prior C alpha.
pub fn em_estimate(
    p: &AssignmentMatrix,
    c: &CountVector,
    prior: &PriorVector,
    cfg: &EmConfig,
) -> Result<DensityEstimate> {
    check_prior(p, prior)?;
    em_run(p, c, prior.rescaled(c.total()), cfg)
}

/// EM from an arbitrary nonnegative start. Non-convergence is reported in
/// the diagnostics, with the last iterate as the estimate.
pub fn em_run(p: &AssignmentMatrix, c: &CountVector, u0: Vec<f64>, cfg: &EmConfig) -> Result<DensityEstimate> {
    cfg.validate()?;
    check_counts(p, c)?;
    check_columns(p, u0.len())?;
    let total = c.total();
    let floor = cfg.zero_tol * total;
    let mut u = u0;
    let mut diag = Diagnostics::default();

    if total == 0.0 {
        diag.converged = true;
        return Ok(DensityEstimate::new(vec![0.0; u.len()], Method::Em)?.with_diagnostics(diag));
    }

    loop {
        let f = factors(p, c, &u)?;
        let residual = boundary_residual(&f, &u, floor);
        if residual <= cfg.tol_ml {
            diag.converged = true;
            break;
        }
        if diag.iterations == cfg.max_iters {
            break;
        }
        let mut change: f64 = 0.0;
        for (uj, fj) in u.iter_mut().zip(&f) {
            let next = *uj * fj;
            change = change.max((next - *uj).abs() / uj.max(floor));
            *uj = next;
        }
        diag.iterations += 1;
        if change <= cfg.tol {
            diag.converged = true;
            break;
        }
    }

    // Snap tiles that decayed to numerical zero and restore the mass.
    let mut snapped = false;
    for v in u.iter_mut().filter(|v| **v <= floor && **v > 0.0) {
        *v = 0.0;
        snapped = true;
    }
    if snapped {
        let mass: f64 = u.iter().sum();
        u.iter_mut().for_each(|v| *v *= total / mass);
    }

    let f = factors(p, c, &u)?;
    diag.ml_residual = Some(boundary_residual(&f, &u, 0.0));
    diag.constraint_residual = Some(super::constraint_residual(p, c, &u));
    if !diag.converged {
        log::warn!(
            "EM stopped after {} iterations without converging (ML residual {:.3e})",
            diag.iterations,
            diag.ml_residual.unwrap_or(f64::NAN)
        );
    }
    Ok(DensityEstimate::new(u, Method::Em)?.with_diagnostics(diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fixtures::{toy, TOY_SB};
    use crate::estimators::{ml_optimality_residual, sb_estimate};
    use crate::grid::SparseMatrix;

    #[test]
    fn first_iterate_from_flat_is_sb() {
        let (p, c) = toy();
        let u1 = em_steps(&p, &c, vec![110.0 / 3.0; 3]).next().unwrap().unwrap();
        for (a, b) in u1.iter().zip(TOY_SB) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mlbs_points_are_fixed() {
        let (p, c) = toy();
        let u = [40.0, 0.0, 70.0];
        assert_eq!(em_step(&p, &c, &u).unwrap(), u.to_vec());
        let v = [30.0, 40.0, 40.0];
        let w = em_step(&p, &c, &v).unwrap();
        assert!(w.iter().zip(v).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn tessellation_converges_in_one_step() {
        let p = AssignmentMatrix::new(SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (1, 1, 1.0)]).unwrap()).unwrap();
        let c = CountVector::new(vec![12.0, 3.0]).unwrap();
        let u = em_run(&p, &c, vec![1.0, 14.0], &EmConfig::default()).unwrap();
        assert_eq!(u.values(), &[12.0, 3.0]);
        assert!(u.diagnostics.iterations <= 1);
        assert!(u.diagnostics.converged);
    }

    #[test]
    fn toy_converges_into_the_mlbs() {
        let (p, c) = toy();
        let u = em_estimate(&p, &c, &PriorVector::flat(3), &EmConfig::default()).unwrap();
        assert!(u.diagnostics.converged);
        assert!(ml_optimality_residual(&p, &c, u.values()).unwrap() <= 1e-8);
        assert!((u.mass() - 110.0).abs() < 1e-9);
        let sb = sb_estimate(&p, &c, &PriorVector::flat(3)).unwrap();
        assert!(u.values() != sb.values());
    }

    #[test]
    fn zero_start_entries_stay_zero() {
        let (p, c) = toy();
        for u in em_steps(&p, &c, vec![55.0, 0.0, 55.0]).take(50) {
            assert_eq!(u.unwrap()[1], 0.0);
        }
    }

    #[test]
    fn zero_total_gives_zero_map() {
        let (p, _) = toy();
        let c = CountVector::new(vec![0.0, 0.0]).unwrap();
        let u = em_estimate(&p, &c, &PriorVector::flat(3), &EmConfig::default()).unwrap();
        assert_eq!(u.values(), &[0.0; 3]);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let (p, c) = toy();
        let cfg = EmConfig { max_iters: 2, ..Default::default() };
        let u = em_estimate(&p, &c, &PriorVector::flat(3), &cfg).unwrap();
        assert!(!u.diagnostics.converged);
        assert_eq!(u.diagnostics.iterations, 2);
    }
}
