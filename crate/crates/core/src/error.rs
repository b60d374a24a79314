use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Which part of the communication assumptions a weight matrix broke.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologyViolation {
    Empty,
    NotSquare { rows: usize, cols: usize },
    SizeMismatch { expected: usize, found: usize },
    NonFinite { row: usize, col: usize },
    NegativeWeight { row: usize, col: usize, value: f64 },
    ZeroDiagonal { node: usize },
    AsymmetricPattern { row: usize, col: usize },
    RowSum { row: usize, sum: f64 },
    ColumnSum { col: usize, sum: f64 },
    Disconnected { components: usize },
    NotJointlyConnected { search_cap: usize },
    RenormalizationFailed,
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "no weight matrices supplied"),
            Self::NotSquare { rows, cols } => {
                write!(f, "weight matrix is {rows}x{cols}, expected square")
            }
            Self::SizeMismatch { expected, found } => {
                write!(f, "weight matrix has {found} nodes, expected {expected}")
            }
            Self::NonFinite { row, col } => write!(f, "entry ({row}, {col}) is not finite"),
            Self::NegativeWeight { row, col, value } => {
                write!(f, "nonnegativity: entry ({row}, {col}) = {value}")
            }
            Self::ZeroDiagonal { node } => {
                write!(f, "positive self-weight: a[{node}][{node}] must be > 0")
            }
            Self::AsymmetricPattern { row, col } => write!(
                f,
                "undirected graph: entry ({row}, {col}) is nonzero but ({col}, {row}) is zero"
            ),
            Self::RowSum { row, sum } => {
                write!(f, "row-stochasticity: row {row} sums to {sum}")
            }
            Self::ColumnSum { col, sum } => {
                write!(f, "column-stochasticity: column {col} sums to {sum}")
            }
            Self::Disconnected { components } => {
                write!(f, "connectivity: graph has {components} components")
            }
            Self::NotJointlyConnected { search_cap } => write!(
                f,
                "joint connectivity: no window length up to {search_cap} yields a connected union graph"
            ),
            Self::RenormalizationFailed => {
                write!(f, "row/column renormalization did not converge")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("player index {index} out of range for {n_players} players")]
    PlayerIndex { index: usize, n_players: usize },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error("pseudo-gradient Jacobian is not positive definite (min eigenvalue {0})")]
    NotMonotone(f64),
    #[error("invalid bound box: {0}")]
    InvalidBox(String),
    #[error("topology: {0}")]
    Topology(TopologyViolation),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("divergence at iteration {k}: player {player} reached {value}")]
    Divergence { k: usize, player: usize, value: f64 },
    #[error("replica {replica}: {source}")]
    Replica {
        replica: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("pair is not adjacent: {0}")]
    NotAdjacent(String),
    #[error("coupled executions diverged at iteration {k}: observation gap {gap:e}")]
    ObservationMismatch { k: usize, gap: f64 },
    #[error("empty statistics: {0}")]
    EmptyStatistics(&'static str),
    #[error("provenance mismatch: summary {summary} vs report {report}")]
    Provenance { summary: String, report: String },
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 1,
            Error::ObservationMismatch { .. } => 3,
            Error::Replica { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

impl From<TopologyViolation> for Error {
    fn from(v: TopologyViolation) -> Self {
        Error::Topology(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Scenario("x".into()).exit_code(), 2);
        assert_eq!(Error::ObservationMismatch { k: 3, gap: 1.0 }.exit_code(), 3);
        let io = Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(io.exit_code(), 1);
        let wrapped = Error::Replica {
            replica: 4,
            source: Box::new(Error::ObservationMismatch { k: 0, gap: 1.0 }),
        };
        assert_eq!(wrapped.exit_code(), 3);
        assert!(wrapped.to_string().starts_with("replica 4:"));
    }

    #[test]
    fn topology_messages_name_the_property() {
        let e: Error = TopologyViolation::RowSum { row: 2, sum: 0.9 }.into();
        assert!(e.to_string().contains("row-stochasticity"));
        let e: Error = TopologyViolation::Disconnected { components: 2 }.into();
        assert!(e.to_string().contains("connectivity"));
    }
}
