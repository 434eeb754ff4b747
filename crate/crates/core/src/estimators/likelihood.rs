use super::{check_columns, check_counts};
use crate::error::{Error, Result};
use crate::grid::{AssignmentMatrix, CountVector};

/// P u, failing when a row with a positive count has no mass.
fn row_sums(p: &AssignmentMatrix, c: &CountVector, u: &[f64]) -> Result<Vec<f64>> {
    check_counts(p, c)?;
    check_columns(p, u.len())?;
    let pu = p.matrix().mul_vec(u);
    match pu.iter().zip(c.counts()).position(|(&d, &ci)| ci > 0.0 && d <= 0.0) {
        Some(i) => Err(Error::DegenerateDenominator(i)),
        None => Ok(pu),
    }
}

/// Sum_i c_i log(p_i^T u). Returns `-inf` (not an error) when a cell with a
/// positive count receives no mass; cells with zero count contribute zero.
pub fn loglikelihood(p: &AssignmentMatrix, c: &CountVector, u: &[f64]) -> Result<f64> {
    check_counts(p, c)?;
    check_columns(p, u.len())?;
    let pu = p.matrix().mul_vec(u);
    let mut total = 0.0;
    for (&d, &ci) in pu.iter().zip(c.counts()) {
        if ci > 0.0 {
            if d <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += ci * d.ln();
        }
    }
    Ok(total)
}

/// d/du_j of the log-likelihood: sum_i c_i p_ij / (p_i^T u).
pub fn loglik_gradient(p: &AssignmentMatrix, c: &CountVector, u: &[f64]) -> Result<Vec<f64>> {
    let pu = row_sums(p, c, u)?;
    let w: Vec<f64> = c
        .counts()
        .iter()
        .zip(&pu)
        .map(|(&ci, &d)| if ci > 0.0 { ci / d } else { 0.0 })
        .collect();
    Ok(p.matrix().tmul_vec(&w))
}

/// x^T H x = -sum_i c_i (p_i^T x)^2 / (p_i^T u)^2.
pub fn loglik_hessian_quadform(
    p: &AssignmentMatrix,
    c: &CountVector,
    u: &[f64],
    x: &[f64],
) -> Result<f64> {
    let pu = row_sums(p, c, u)?;
    check_columns(p, x.len())?;
    let px = p.matrix().mul_vec(x);
    Ok(-c
        .counts()
        .iter()
        .zip(pu.iter().zip(&px))
        .filter(|(&ci, _)| ci > 0.0)
        .map(|(&ci, (&d, &v))| ci * (v / d).powi(2))
        .sum::<f64>())
}

/// Distance from the ML fixed-point condition sum_i c_i p_ij/(p_i^T u) = 1.
/// At u_j = 0 only an excess above one violates optimality.
pub fn ml_optimality_residual(p: &AssignmentMatrix, c: &CountVector, u: &[f64]) -> Result<f64> {
    let grad = loglik_gradient(p, c, u)?;
    Ok(boundary_residual(&grad, u, 0.0))
}

/// Residual with every u_j <= `zero` treated as a boundary tile.
pub(super) fn boundary_residual(grad: &[f64], u: &[f64], zero: f64) -> f64 {
    grad.iter()
        .zip(u)
        .map(|(&g, &uj)| if uj > zero { (g - 1.0).abs() } else { (g - 1.0).max(0.0) })
        .fold(0.0, f64::max)
}

/// u >= -tol and ||P u - c||_inf <= tol max(1, C).
pub fn mlbs_membership(p: &AssignmentMatrix, c: &CountVector, u: &[f64], tol: f64) -> bool {
    if u.len() != p.cols() || c.len() != p.rows() {
        return false;
    }
    u.iter().all(|&v| v >= -tol)
        && super::constraint_residual(p, c, u) <= tol * c.total().max(1.0)
}
