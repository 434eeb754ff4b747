use std::collections::HashMap;

use super::{FootprintSet, PriorVector, SparseMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_CONSOLIDATION_TOL: f64 = 1e-12;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Tile-to-section map produced by consolidation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sections {
    map: Vec<usize>,
    sizes: Vec<usize>,
}

impl Sections {
    pub fn new(map: Vec<usize>, sections: usize) -> Result<Self> {
        let mut sizes = vec![0usize; sections];
        for &s in &map {
            if s >= sections {
                return Err(Error::DimensionMismatch { expected: sections, found: s + 1 });
            }
            sizes[s] += 1;
        }
        if let Some(s) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidParameter(format!("section {s} has no tiles")));
        }
        Ok(Self { map, sizes })
    }

    pub fn identity(tiles: usize) -> Self {
        Self { map: (0..tiles).collect(), sizes: vec![1; tiles] }
    }

    /// Section of every tile.
    pub fn map(&self) -> &[usize] {
        &self.map
    }

    /// Tile count of every section.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn tiles(&self) -> usize {
        self.map.len()
    }
}

/// Column-stochastic matrix of p_ij = Prob{counted in cell i | placed in
/// column j}. Columns are tiles, or sections after consolidation.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    p: SparseMatrix,
    sections: Option<Sections>,
}

impl AssignmentMatrix {
    pub fn new(p: SparseMatrix) -> Result<Self> {
        for (column, sum) in p.col_sums().into_iter().enumerate() {
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotColumnStochastic { column, sum });
            }
        }
        if let Some((_, j, v)) = p.triplets().find(|t| t.2 < 0.0) {
            return Err(Error::InvalidValue { index: j, value: v });
        }
        Ok(Self { p, sections: None })
    }

    pub fn with_sections(p: SparseMatrix, sections: Sections) -> Result<Self> {
        if sections.len() != p.ncols() {
            return Err(Error::DimensionMismatch { expected: p.ncols(), found: sections.len() });
        }
        let mut m = Self::new(p)?;
        m.sections = Some(sections);
        Ok(m)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let triplets = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &v)| (i, j, v)));
        Self::new(SparseMatrix::from_triplets(rows.len(), ncols, triplets)?)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.p
    }

    pub fn rows(&self) -> usize {
        self.p.nrows()
    }

    pub fn cols(&self) -> usize {
        self.p.ncols()
    }

    pub fn sections(&self) -> Option<&Sections> {
        self.sections.as_ref()
    }

    /// Tiles per column: all ones for an unconsolidated matrix.
    pub fn column_sizes(&self) -> Vec<usize> {
        match &self.sections {
            Some(s) => s.sizes().to_vec(),
            None => vec![1; self.cols()],
        }
    }

    /// Sections, or the identity map when the matrix was never consolidated.
    pub fn sections_or_identity(&self) -> Sections {
        self.sections.clone().unwrap_or_else(|| Sections::identity(self.cols()))
    }

    /// Merges identical rows (cells with identical assignment profiles)
    /// by summing them. The result stays column-stochastic; counts must be
    /// aggregated with the returned groups.
    pub fn merge_duplicate_rows(&self, tol: f64) -> (Self, RowGroups) {
        let mut by_support: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
        let mut map = vec![0usize; self.rows()];
        let mut reps: Vec<usize> = Vec::new();
        for i in 0..self.rows() {
            let (cols, vals): (Vec<usize>, Vec<f64>) = self.p.row(i).unzip();
            let bucket = by_support.entry(cols).or_default();
            let hit = bucket.iter().copied().find(|&g| {
                self.p.row(reps[g]).zip(vals.iter()).all(|((_, a), b)| (a - b).abs() <= tol)
            });
            map[i] = match hit {
                Some(g) => g,
                None => {
                    reps.push(i);
                    bucket.push(reps.len() - 1);
                    reps.len() - 1
                }
            };
        }
        let groups = reps.len();
        let triplets = self.p.triplets().map(|(i, j, v)| (map[i], j, v));
        let p = SparseMatrix::from_triplets(groups, self.cols(), triplets)
            .expect("row merge keeps indices in range");
        let merged = Self { p, sections: self.sections.clone() };
        (merged, RowGroups { map, groups })
    }
}

/// Cell-to-merged-row map from [`AssignmentMatrix::merge_duplicate_rows`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowGroups {
    pub map: Vec<usize>,
    pub groups: usize,
}

impl RowGroups {
    pub fn is_identity(&self) -> bool {
        self.groups == self.map.len()
    }
}

/// p_ij = s_ij / sum_n s_nj.
pub fn build_assignment_matrix(footprints: &FootprintSet) -> Result<AssignmentMatrix> {
    let strength = footprints.coverage_strength();
    if let Some(j) = strength.iter().position(|&s| s <= 0.0) {
        return Err(Error::UncoveredTile(j));
    }
    let triplets = footprints
        .cells()
        .iter()
        .enumerate()
        .flat_map(|(i, cell)| cell.entries().iter().map(move |&(j, s)| (i, j, s)))
        .map(|(i, j, s)| (i, j, s / strength[j]));
    let p = SparseMatrix::from_triplets(footprints.len(), footprints.grid().len(), triplets)?;
    AssignmentMatrix::new(p)
}

/// Merges columns that agree entrywise within `tol` and whose prior entries
/// agree within `tol` (relative) into sections. The merged column keeps the
/// common value and the section prior is the sum of the merged priors.
///
/// Supports must match exactly for two columns to merge. If `p` is already
/// consolidated the new section map is composed with the existing one, which
/// makes the operation idempotent.
pub fn consolidate(
    p: &AssignmentMatrix,
    prior: &PriorVector,
    tol: f64,
) -> Result<(AssignmentMatrix, PriorVector)> {
    if prior.len() != p.cols() {
        return Err(Error::DimensionMismatch { expected: p.cols(), found: prior.len() });
    }
    let alpha = prior.alpha();
    let m = p.matrix();
    let mut by_support: HashMap<&[usize], Vec<usize>> = HashMap::new();
    let mut reps: Vec<usize> = Vec::new();
    let mut col_to_section = vec![0usize; p.cols()];
    for j in 0..p.cols() {
        let (rows, vals) = m.col_entries(j);
        let bucket = by_support.entry(rows).or_default();
        let hit = bucket.iter().copied().find(|&s| {
            let r = reps[s];
            let (_, rvals) = m.col_entries(r);
            let same_prior = (alpha[r] - alpha[j]).abs() <= tol * alpha[r].max(alpha[j]);
            same_prior && rvals.iter().zip(vals).all(|(a, b)| (a - b).abs() <= tol)
        });
        col_to_section[j] = match hit {
            Some(s) => s,
            None => {
                reps.push(j);
                bucket.push(reps.len() - 1);
                reps.len() - 1
            }
        };
    }

    let mut section_alpha = vec![0.0; reps.len()];
    for (j, &s) in col_to_section.iter().enumerate() {
        section_alpha[s] += alpha[j];
    }
    let tile_map: Vec<usize> = match p.sections() {
        Some(old) => old.map().iter().map(|&c| col_to_section[c]).collect(),
        None => col_to_section,
    };
    let sections = Sections::new(tile_map, reps.len())?;
    let merged = AssignmentMatrix::with_sections(m.select_columns(&reps), sections)?;
    Ok((merged, PriorVector { alpha: section_alpha }.renormalized()))
}

impl PriorVector {
    fn renormalized(self) -> Self {
        let total: f64 = self.alpha().iter().sum();
        if (total - 1.0).abs() <= 1e-15 {
            return self;
        }
        Self { alpha: self.alpha().iter().map(|a| a / total).collect() }
    }
}
