use serde::{Deserialize, Serialize};

use super::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FootprintKind {
    /// On/off coverage, s_ij in {0, 1}.
    Binary,
    /// Signal-dominance weights, s_ij >= 0.
    Continuous,
}

/// Sparse coverage vector of one cell: `(tile, s_ij)` pairs sorted by tile,
/// all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub id: String,
    entries: Vec<(usize, f64)>,
}

impl Footprint {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn tiles(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootprintSet {
    grid: Grid,
    kind: FootprintKind,
    cells: Vec<Footprint>,
}

impl FootprintSet {
    /// Validates and normalizes the per-cell entries: zeros are dropped,
    /// duplicates per tile are rejected, entries are sorted by tile.
    pub fn new(
        grid: Grid,
        kind: FootprintKind,
        cells: impl IntoIterator<Item = (String, Vec<(usize, f64)>)>,
    ) -> Result<Self> {
        let mut out = Vec::new();
        for (id, mut entries) in cells {
            for &(j, s) in &entries {
                if j >= grid.len() {
                    return Err(Error::DimensionMismatch { expected: grid.len(), found: j + 1 });
                }
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::InvalidValue { index: j, value: s });
                }
                if kind == FootprintKind::Binary && s != 0.0 && s != 1.0 {
                    return Err(Error::InvalidValue { index: j, value: s });
                }
            }
            entries.retain(|e| e.1 > 0.0);
            entries.sort_by_key(|e| e.0);
            if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidParameter(format!(
                    "cell {id} lists tile {} twice",
                    w[0].0
                )));
            }
            out.push(Footprint { id, entries });
        }
        Ok(Self { grid, kind, cells: out })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> FootprintKind {
        self.kind
    }

    pub fn cells(&self) -> &[Footprint] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// k_j: number of cells with s_ij > 0 at each tile.
    pub fn coverage_counts(&self) -> Vec<usize> {
        let mut k = vec![0usize; self.grid.len()];
        for cell in &self.cells {
            for j in cell.tiles() {
                k[j] += 1;
            }
        }
        k
    }

    /// Sum over cells of s_ij at each tile.
    pub fn coverage_strength(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.grid.len()];
        for cell in &self.cells {
            for &(j, s) in cell.entries() {
                total[j] += s;
            }
        }
        total
    }

    pub fn uncovered_tiles(&self) -> Vec<usize> {
        self.coverage_counts()
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == 0)
            .map(|(j, _)| j)
            .collect()
    }
}
