use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("tile {0} is not covered by any cell")]
    UncoveredTile(usize),

    #[error("negative or non-finite value {value} at index {index}")]
    InvalidValue { index: usize, value: f64 },

    #[error("column {column} sums to {sum}, expected 1")]
    NotColumnStochastic { column: usize, sum: f64 },

    #[error("prior entry {0} is zero; drop the tile before estimation")]
    ZeroPrior(usize),

    #[error("(P alpha)_{0} is zero while the cell has a positive count")]
    ZeroDenominator(usize),

    #[error("row {0} has p_i^T u = 0 while the cell has a positive count")]
    DegenerateDenominator(usize),

    #[error("P A P^T is singular (redundant cells); merge duplicate rows first")]
    SingularGram,

    #[error("no Voronoi seeds given")]
    NoSeeds,

    #[error("seeds {0} and {1} coincide")]
    DuplicateSeeds(usize, usize),

    #[error("{count} clusters of side {side} do not fit in a {width}x{height} grid")]
    ClustersDontFit {
        count: usize,
        side: usize,
        width: usize,
        height: usize,
    },

    #[error("transport problem has {0} support tiles, above the exact-solver limit")]
    TooLarge(usize),

    #[error("mass imbalance: {left} vs {right}")]
    MassImbalance { left: f64, right: f64 },

    #[error("transport problem is infeasible")]
    Infeasible,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
