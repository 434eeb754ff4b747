use super::{check_counts, check_prior};
use crate::error::{Error, Result};
use crate::grid::{AssignmentMatrix, CountVector, DensityEstimate, Diagnostics, Method, PriorVector};

/// u = diag(alpha) P^T diag^-1(P alpha) c: each cell's count is split over
/// its tiles in proportion to p_ij alpha_j.
pub fn sb_estimate(p: &AssignmentMatrix, c: &CountVector, prior: &PriorVector) -> Result<DensityEstimate> {
    check_counts(p, c)?;
    check_prior(p, prior)?;
    let alpha = prior.alpha();
    let pa = p.matrix().mul_vec(alpha);
    let mut w = vec![0.0; p.rows()];
    for (i, (&ci, &d)) in c.counts().iter().zip(&pa).enumerate() {
        if ci > 0.0 {
            if d <= 0.0 {
                return Err(Error::ZeroDenominator(i));
            }
            w[i] = ci / d;
        }
    }
    let u: Vec<f64> = p.matrix().tmul_vec(&w).iter().zip(alpha).map(|(g, a)| g * a).collect();
    let diagnostics = Diagnostics {
        iterations: 1,
        converged: true,
        constraint_residual: Some(super::constraint_residual(p, c, &u)),
        ..Default::default()
    };
    Ok(DensityEstimate::new(u, Method::Sb)?.with_diagnostics(diagnostics))
}
