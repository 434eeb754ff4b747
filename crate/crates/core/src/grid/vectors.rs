use serde::{Deserialize, Serialize};

use super::{AssignmentMatrix, Sections};
use crate::error::{Error, Result};

fn check_nonnegative(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
        Some(index) => Err(Error::InvalidValue { index, value: values[index] }),
        None => Ok(()),
    }
}

/// Observed per-cell counts. Stored as reals: integrality is not needed by
/// any estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CountVector {
    counts: Vec<f64>,
    total: f64,
}

impl CountVector {
    pub fn new(counts: Vec<f64>) -> Result<Self> {
        check_nonnegative(&counts)?;
        let total = counts.iter().sum();
        Ok(Self { counts, total })
    }

    pub fn from_integers(counts: &[u64]) -> Self {
        let counts: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Sums counts that map to the same group (`map[i]` = group of cell i).
    pub fn aggregate(&self, map: &[usize], groups: usize) -> Result<Self> {
        if map.len() != self.counts.len() {
            return Err(Error::DimensionMismatch { expected: self.counts.len(), found: map.len() });
        }
        let mut out = vec![0.0; groups];
        for (&g, &c) in map.iter().zip(&self.counts) {
            if g >= groups {
                return Err(Error::DimensionMismatch { expected: groups, found: g + 1 });
            }
            out[g] += c;
        }
        Self::new(out)
    }
}

/// Prior vector over the columns of an assignment matrix, stored in its
/// stochastic form alpha (sums to one). The rescaled form a = C alpha is
/// produced on demand for a given total C.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorVector {
    pub(super) alpha: Vec<f64>,
}

impl PriorVector {
    pub fn flat(n: usize) -> Self {
        Self { alpha: vec![1.0 / n as f64; n] }
    }

    /// Normalizes arbitrary positive weights to a stochastic vector.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        check_nonnegative(&weights)?;
        if let Some(j) = weights.iter().position(|&w| w == 0.0) {
            return Err(Error::ZeroPrior(j));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self { alpha: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// a = C alpha.
    pub fn rescaled(&self, total: f64) -> Vec<f64> {
        self.alpha.iter().map(|&a| a * total).collect()
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sb,
    Em,
    Map,
    ApproxMap,
    Df,
    Flat,
    Oracle,
    Given,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// ML-optimality residual at the returned point.
    pub ml_residual: Option<f64>,
    /// ||P u - c||_inf.
    pub constraint_residual: Option<f64>,
    /// Projected-gradient norm, for the numerical optimizers.
    pub gradient_norm: Option<f64>,
    /// Entries clipped to zero by the DF projection.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    values: Vec<f64>,
    method: Method,
    mass: f64,
    pub diagnostics: Diagnostics,
}

impl DensityEstimate {
    pub fn new(values: Vec<f64>, method: Method) -> Result<Self> {
        check_nonnegative(&values)?;
        let mass = values.iter().sum();
        Ok(Self { values, method, mass, diagnostics: Diagnostics::default() })
    }

    pub fn with_diagnostics(mut self, diagnostics: Diagnostics) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Spreads per-section values evenly over the tiles of each section,
    /// keeping method and diagnostics.
    pub fn disaggregate(&self, sections: &Sections) -> Result<Self> {
        let mut out = disaggregate(&self.values, sections.map(), sections.sizes())?;
        out.method = self.method;
        out.diagnostics = self.diagnostics.clone();
        Ok(out)
    }
}

/// c_bar = P u, the expected per-cell counts.
pub fn expected_counts(p: &AssignmentMatrix, u: &DensityEstimate) -> Result<CountVector> {
    if u.len() != p.cols() {
        return Err(Error::DimensionMismatch { expected: p.cols(), found: u.len() });
    }
    CountVector::new(p.matrix().mul_vec(u.values()))
}

/// Per-tile values from per-section values: each tile receives its section
/// value divided by the section's tile count.
pub fn disaggregate(
    section_values: &[f64],
    section_map: &[usize],
    section_size: &[usize],
) -> Result<DensityEstimate> {
    if section_values.len() != section_size.len() {
        return Err(Error::DimensionMismatch {
            expected: section_size.len(),
            found: section_values.len(),
        });
    }
    let mut out = Vec::with_capacity(section_map.len());
    for &s in section_map {
        if s >= section_values.len() {
            return Err(Error::DimensionMismatch { expected: section_values.len(), found: s + 1 });
        }
        out.push(section_values[s] / section_size[s] as f64);
    }
    DensityEstimate::new(out, Method::Given)
}
