use thiserror::Error;

/// Errors produced by the solver and sampling layers.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("index pair ({i}, {j}) overflows the Cantor pairing range")]
    CantorOverflow { i: u64, j: u64 },

    #[error("point ({0}, {1}) lies outside the domain")]
    PointOutsideDomain(f64, f64),

    #[error(
        "grid at level {level} needs about {required_mb} MiB which exceeds the budget of {budget_mb} MiB"
    )]
    MemoryBudget {
        level: u32,
        required_mb: u64,
        budget_mb: u64,
    },

    #[error("domain must satisfy lower < upper componentwise")]
    EmptyDomain,

    #[error("domain height is not an integer multiple of the cell size at level {level}")]
    UnalignedRectangle { level: u32 },

    #[error("slowness must be strictly positive and finite at every node (node {node}: {value})")]
    NonPositiveSlowness { node: usize, value: f64 },

    #[error("local update called without a finite upwind neighbour")]
    NoFiniteNeighbor,

    #[error("interpolation grid needs at least 4 samples per axis, got {0}")]
    InterpTooCoarse(usize),

    #[error("covariance factorization failed: matrix is not positive definite")]
    CovarianceNotSpd,

    #[error("observation length {data} does not match points x sources = {expected}")]
    ObservationShape { data: usize, expected: usize },

    #[error("observation point ({0}, {1}) is not a node of the level-{2} grid")]
    ObservationOffGrid(f64, f64, u32),

    #[error("potential evaluated to NaN")]
    NanPotential,

    #[error("quadrature weights all vanish: data is degenerate for this potential")]
    DegenerateQuadrature,

    #[error("sample-size exponent a = {0} is unsupported; supported rows are a in {{0, 2, 3, 4}}")]
    UnsupportedExponent(u32),

    #[error("level schedule requires L >= l0 >= 1, got l0 = {l0}, L = {l}")]
    BadLevelRange { l0: u32, l: u32 },

    #[error("chain at pair (l = {l}, l' = {lprime}) failed: {source}")]
    ChainFailed {
        l: u32,
        lprime: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
