//! Tile grid, footprints, assignment matrices and the count/prior/estimate
//! vectors every estimator works on.

mod assignment;
mod footprint;
pub mod io;
pub mod sparse;
mod vectors;

pub use assignment::{
    build_assignment_matrix, consolidate, AssignmentMatrix, RowGroups, Sections,
    DEFAULT_CONSOLIDATION_TOL,
};
pub use footprint::{Footprint, FootprintKind, FootprintSet};
pub use sparse::SparseMatrix;
pub use vectors::{
    disaggregate, expected_counts, CountVector, DensityEstimate, Diagnostics, Method, PriorVector,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular square grid. Tiles are indexed row-major: `j = y * width + x`.
///
/// Geometry (tower positions, ranges, tile centers) is expressed in tile
/// units; `tile_size` only converts to physical distance when reporting
/// transport costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    width: usize,
    height: usize,
    tile_size: f64,
}

impl Grid {
    pub fn new(width: usize, height: usize, tile_size: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!("{width}x{height} has no tiles")));
        }
        if !(tile_size > 0.0 && tile_size.is_finite()) {
            return Err(Error::InvalidGrid(format!("tile size {tile_size} must be positive")));
        }
        Ok(Self { width, height, tile_size })
    }

    /// Unit tile size.
    pub fn square(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, 1.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn tile_size(&self) -> f64 {
        self.tile_size
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    pub fn coords(&self, j: usize) -> (usize, usize) {
        (j % self.width, j / self.width)
    }

    /// Tile center in tile units.
    pub fn center(&self, j: usize) -> (f64, f64) {
        let (x, y) = self.coords(j);
        (x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Tile containing the point (tile units), if inside the grid.
    pub fn tile_at(&self, x: f64, y: f64) -> Option<usize> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let (tx, ty) = (x.floor() as usize, y.floor() as usize);
        (tx < self.width && ty < self.height).then(|| self.index(tx, ty))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.width as f64 && y <= self.height as f64
    }

    /// Euclidean distance between tile centers in physical units.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        let dx = ax as f64 - bx as f64;
        let dy = ay as f64 - by as f64;
        dx.hypot(dy) * self.tile_size
    }
}
