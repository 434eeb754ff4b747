use thiserror::Error;

/// A command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("configuration error: {0:#}")]
    Config(anyhow::Error),

    #[error("numerical failure: {0:#}")]
    Numerical(anyhow::Error),

    #[error("I/O error: {0:#}")]
    Io(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    /// Adds context to the wrapped error, keeping the class.
    pub fn context(self, what: impl std::fmt::Display + Send + Sync + 'static) -> Self {
        match self {
            Failure::Config(e) => Failure::Config(e.context(what)),
            Failure::Numerical(e) => Failure::Numerical(e.context(what)),
            Failure::Io(e) => Failure::Io(e.context(what)),
        }
    }
}

impl From<celldense::Error> for Failure {
    fn from(e: celldense::Error) -> Self {
        use celldense::Error::*;
        match e {
            Io(_) | Parse(_) | DimensionMismatch { .. } => Failure::Io(e.into()),
            InvalidGrid(_) | InvalidParameter(_) | ClustersDontFit { .. } | NoSeeds | DuplicateSeeds(..)
            | UncoveredTile(_) | TooLarge(_) => Failure::Config(e.into()),
            _ => Failure::Numerical(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(Failure::from(celldense::Error::SingularGram).exit_code(), 3);
        assert_eq!(Failure::from(celldense::Error::InvalidParameter("x".into())).exit_code(), 2);
        assert_eq!(Failure::from(celldense::Error::Parse("x".into())).exit_code(), 4);
    }
}
