//! MAP estimation by projected gradient ascent on the scaled simplex.
//!
//! On a consolidated matrix a column stands for a section of n tiles that
//! share one value; the prior terms are evaluated for the n tiles at u/n
//! each, so the section-level maximizer spreads back to the tile-level one.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::{check_counts, check_prior};
use crate::error::{Error, Result};
use crate::grid::{AssignmentMatrix, CountVector, DensityEstimate, Diagnostics, Method, PriorVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Barzilai-Borwein step lengths, safeguarded by backtracking.
    BarzilaiBorwein,
    /// Fixed initial step, halved until the Armijo condition holds.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub max_iters: usize,
    pub step: StepRule,
    /// Bound on ||u - proj(u + grad f(u))||_inf.
    pub tol: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { max_iters: 20_000, step: StepRule::BarzilaiBorwein, tol: 1e-6 }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("bad MAP config {self:?}")));
        }
        Ok(())
    }
}

/// Euclidean projection onto {u >= 0, sum u = total}.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - total) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

trait Objective {
    fn value(&self, u: &[f64]) -> f64;
    fn gradient(&self, u: &[f64]) -> Vec<f64>;
}

struct Problem<'a> {
    p: &'a AssignmentMatrix,
    c: &'a CountVector,
}

impl Problem<'_> {
    fn loglik(&self, u: &[f64]) -> f64 {
        let pu = self.p.matrix().mul_vec(u);
        let mut total = 0.0;
        for (&d, &ci) in pu.iter().zip(self.c.counts()) {
            if ci > 0.0 {
                if d <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += ci * d.ln();
            }
        }
        total
    }

    fn loglik_gradient(&self, u: &[f64]) -> Vec<f64> {
        let pu = self.p.matrix().mul_vec(u);
        let w: Vec<f64> = pu
            .iter()
            .zip(self.c.counts())
            .map(|(&d, &ci)| if ci > 0.0 { ci / d } else { 0.0 })
            .collect();
        self.p.matrix().tmul_vec(&w)
    }
}

struct Map<'a> {
    base: Problem<'a>,
    /// log of the per-tile prior alpha_s / n_s.
    log_alpha: Vec<f64>,
    sizes: Vec<f64>,
}

impl Objective for Map<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        let prior: f64 = u
            .iter()
            .zip(&self.log_alpha)
            .zip(&self.sizes)
            .map(|((&v, &la), &n)| v * la - n * ln_gamma(v / n + 1.0))
            .sum();
        self.base.loglik(u) + prior
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = self.base.loglik_gradient(u);
        for (((gj, &v), &la), &n) in g.iter_mut().zip(u).zip(&self.log_alpha).zip(&self.sizes) {
            *gj += la - digamma(v / n + 1.0);
        }
        g
    }
}

struct ApproxMap<'a> {
    base: Problem<'a>,
    a: Vec<f64>,
}

impl Objective for ApproxMap<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        let penalty: f64 = u.iter().zip(&self.a).map(|(&v, &a)| (v - a).powi(2) / a).sum();
        self.base.loglik(u) - 0.5 * penalty
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = self.base.loglik_gradient(u);
        for ((gj, &v), &a) in g.iter_mut().zip(u).zip(&self.a) {
            *gj -= (v - a) / a;
        }
        g
    }
}

fn map_problem<'a>(p: &'a AssignmentMatrix, c: &'a CountVector, prior: &PriorVector) -> Map<'a> {
    let sizes: Vec<f64> = p.column_sizes().into_iter().map(|n| n as f64).collect();
    let log_alpha = prior.alpha().iter().zip(&sizes).map(|(&a, &n)| (a / n).ln()).collect();
    Map { base: Problem { p, c }, log_alpha, sizes }
}

/// c^T log(P u) + u^T log(alpha) - sum_j log Gamma(u_j + 1), with the prior
/// terms taken per tile when `p` is consolidated.
pub fn map_objective(p: &AssignmentMatrix, c: &CountVector, prior: &PriorVector, u: &[f64]) -> Result<f64> {
    check_counts(p, c)?;
    check_prior(p, prior)?;
    super::check_columns(p, u.len())?;
    Ok(map_problem(p, c, prior).value(u))
}

/// c^T log(P u) - (u - a)^T A^-1 (u - a) / 2 with a = C alpha.
pub fn approx_map_objective(p: &AssignmentMatrix, c: &CountVector, prior: &PriorVector, u: &[f64]) -> Result<f64> {
    check_counts(p, c)?;
    check_prior(p, prior)?;
    super::check_columns(p, u.len())?;
    Ok(ApproxMap { base: Problem { p, c }, a: prior.rescaled(c.total()) }.value(u))
}

pub fn map_estimate(p: &AssignmentMatrix, c: &CountVector, prior: &PriorVector, cfg: &MapConfig) -> Result<DensityEstimate> {
    check_counts(p, c)?;
    check_prior(p, prior)?;
    let start = prior.rescaled(c.total());
    finish(p, c, ascend(&map_problem(p, c, prior), start, c.total(), cfg)?, Method::Map)
}

pub fn approx_map_estimate(
    p: &AssignmentMatrix,
    c: &CountVector,
    prior: &PriorVector,
    cfg: &MapConfig,
) -> Result<DensityEstimate> {
    check_counts(p, c)?;
    check_prior(p, prior)?;
    let a = prior.rescaled(c.total());
    let f = ApproxMap { base: Problem { p, c }, a: a.clone() };
    finish(p, c, ascend(&f, a, c.total(), cfg)?, Method::ApproxMap)
}

fn finish(p: &AssignmentMatrix, c: &CountVector, (u, mut diag): (Vec<f64>, Diagnostics), method: Method) -> Result<DensityEstimate> {
    diag.constraint_residual = Some(super::constraint_residual(p, c, &u));
    diag.ml_residual = super::ml_optimality_residual(p, c, &u).ok();
    if !diag.converged {
        log::warn!(
            "{method:?} stopped after {} iterations (projected gradient {:.3e})",
            diag.iterations,
            diag.gradient_norm.unwrap_or(f64::NAN)
        );
    }
    Ok(DensityEstimate::new(u, method)?.with_diagnostics(diag))
}

fn gradient_mapping(u: &[f64], g: &[f64], total: f64) -> f64 {
    let moved: Vec<f64> = u.iter().zip(g).map(|(a, b)| a + b).collect();
    project_simplex(&moved, total)
        .iter()
        .zip(u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Monotone projected gradient ascent from a feasible start.
fn ascend(f: &impl Objective, start: Vec<f64>, total: f64, cfg: &MapConfig) -> Result<(Vec<f64>, Diagnostics)> {
    if !(cfg.tol > 0.0) || cfg.max_iters == 0 {
        return Err(Error::InvalidParameter(format!("bad MAP config {cfg:?}")));
    }
    let mut diag = Diagnostics::default();
    if total == 0.0 {
        diag.converged = true;
        diag.gradient_norm = Some(0.0);
        return Ok((vec![0.0; start.len()], diag));
    }

    const ARMIJO: f64 = 1e-4;
    let mut u = start;
    let mut fu = f.value(&u);
    let mut g = f.gradient(&u);
    let mut step = 1.0;
    loop {
        let pg = gradient_mapping(&u, &g, total);
        diag.gradient_norm = Some(pg);
        if pg <= cfg.tol {
            diag.converged = true;
            break;
        }
        if diag.iterations == cfg.max_iters {
            break;
        }

        let mut t = step;
        let (next, fnext) = loop {
            let moved: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a + t * b).collect();
            let cand = project_simplex(&moved, total);
            let fc = f.value(&cand);
            let gain: f64 = g.iter().zip(cand.iter().zip(&u)).map(|(gj, (a, b))| gj * (a - b)).sum();
            if fc.is_finite() && fc >= fu + ARMIJO * gain {
                break (cand, fc);
            }
            t *= 0.5;
            if t < 1e-20 {
                // No ascent possible at machine precision.
                diag.converged = pg <= cfg.tol.sqrt();
                return Ok((u, diag));
            }
        };

        let gnext = f.gradient(&next);
        step = match cfg.step {
            StepRule::BarzilaiBorwein => {
                let (mut ss, mut sy) = (0.0, 0.0);
                for j in 0..u.len() {
                    let s = next[j] - u[j];
                    ss += s * s;
                    sy += s * (gnext[j] - g[j]);
                }
                // Concave objective: s^T y <= 0 along ascent steps.
                if sy < 0.0 { (ss / -sy).clamp(1e-10, 1e10) } else { (2.0 * t).min(1e10) }
            }
            StepRule::Backtracking => 1.0,
        };
        u = next;
        fu = fnext;
        g = gnext;
        diag.iterations += 1;
    }
    Ok((u, diag))
}
