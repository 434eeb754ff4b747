//! Density estimators and likelihood diagnostics.
//!
//! All estimators take the assignment matrix as given: when it was
//! consolidated, the returned values are per section and can be spread back
//! to tiles with [`DensityEstimate::disaggregate`](crate::grid::DensityEstimate::disaggregate).
//! Each function is pure; a [`DfOperator`] can be shared across threads.

mod df;
mod em;
mod likelihood;
mod map;
mod sb;

pub use df::{df_estimate, df_estimate_refined, df_precompute, DfOperator};
pub use em::{em_estimate, em_run, em_step, em_steps, EmConfig, EmSteps};
pub use likelihood::{
    loglik_gradient, loglik_hessian_quadform, loglikelihood, ml_optimality_residual,
    mlbs_membership,
};
pub use map::{
    approx_map_estimate, approx_map_objective, map_estimate, map_objective, project_simplex,
    MapConfig, StepRule,
};
pub use sb::sb_estimate;

use crate::error::{Error, Result};
use crate::grid::{AssignmentMatrix, CountVector, PriorVector};

fn check_counts(p: &AssignmentMatrix, c: &CountVector) -> Result<()> {
    if c.len() != p.rows() {
        return Err(Error::DimensionMismatch { expected: p.rows(), found: c.len() });
    }
    Ok(())
}

fn check_columns(p: &AssignmentMatrix, n: usize) -> Result<()> {
    if n != p.cols() {
        return Err(Error::DimensionMismatch { expected: p.cols(), found: n });
    }
    Ok(())
}

fn check_prior(p: &AssignmentMatrix, prior: &PriorVector) -> Result<()> {
    check_columns(p, prior.len())?;
    match prior.alpha().iter().position(|&a| !(a > 0.0)) {
        Some(j) => Err(Error::ZeroPrior(j)),
        None => Ok(()),
    }
}

/// max_i |(P u)_i - c_i|.
fn constraint_residual(p: &AssignmentMatrix, c: &CountVector, u: &[f64]) -> f64 {
    p.matrix()
        .mul_vec(u)
        .iter()
        .zip(c.counts())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::grid::{AssignmentMatrix, CountVector};

    /// Three tiles, two cells; the middle tile is shared 1/4 : 3/4.
    pub fn toy() -> (AssignmentMatrix, CountVector) {
        let p = AssignmentMatrix::from_dense(&[vec![1.0, 0.25, 0.0], vec![0.0, 0.75, 1.0]]).unwrap();
        (p, CountVector::new(vec![40.0, 70.0]).unwrap())
    }

    pub const TOY_SB: [f64; 3] = [32.0, 38.0, 40.0];
}
