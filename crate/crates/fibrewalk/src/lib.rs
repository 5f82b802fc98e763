//! Exact conditional goodness-of-fit testing for multi-way contingency
//! tables.
//!
//! Given an observed table, a hierarchical log-linear model and optional
//! per-cell bounds, this crate works with the *reference set*: all integer
//! tables sharing the model's sufficient-statistic marginals and respecting
//! the bounds. It provides
//!
//! * exact-arithmetic constraint systems and reduced row echelon forms over
//!   the rationals,
//! * per-cell linear-programming bounds used to sample tables cell by cell,
//! * a Metropolis–Hastings sampler whose moves are built on the fly by
//!   re-solving the constraint system under a fresh random cell order each
//!   step, with proposal orders drawn from an estimated distribution,
//! * sequential importance sampling as a baseline estimator,
//! * classical fit machinery: iterative proportional fitting, chi-square
//!   statistics, degrees of freedom with structural-zero corrections,
//!   asymptotic tail probabilities and batch-means Monte Carlo errors.
//!
//! The `fibrewalk` binary exposes the full pipeline; see the crate README.

pub mod constraint;
pub mod dataset;
pub mod enumerate;
pub mod gdist;
pub mod inference;
pub mod lp;
pub mod mcmc;
pub mod pipeline;
pub mod rref;
pub mod sampler;
pub mod special;
pub mod table;

pub use dataset::{load_dataset, Dataset};
pub use table::{BoundsSpec, Marginal, ModelSpec, Table, TableSchema};

/// Crate-wide error type. Loader errors distinguish malformed files from
/// structurally invalid content and from counts violating their bounds.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed dataset file: {0}")]
    MalformedDataset(String),
    #[error("invalid schema: {0}")]
    BadSchema(String),
    #[error("invalid table: {0}")]
    BadTable(String),
    #[error("invalid bounds: {0}")]
    BadBounds(String),
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("invalid coordinates: {0}")]
    BadCoordinates(String),
    #[error("count outside bounds: {0}")]
    CountOutsideBounds(String),
    #[error("not a permutation: {0}")]
    NotPermutation(String),
    #[error("inconsistent linear system: {0}")]
    InconsistentSystem(String),
    #[error("exact arithmetic overflow: {0}")]
    ExactOverflow(String),
    #[error("linear program infeasible: {0}")]
    LpInfeasible(String),
    #[error("linear program did not converge: {0}")]
    LpStalled(String),
    #[error("empty reference set: {0}")]
    EmptyFiber(String),
    #[error("reference set holds a single table: {0}")]
    SingletonFiber(String),
    #[error("sampling failed: {0}")]
    SamplingFailed(String),
    #[error("invalid proposal-order distribution: {0}")]
    BadOrderDistribution(String),
    #[error("trace too short: {0}")]
    TraceTooShort(String),
    #[error("fit did not converge: {0}")]
    FitDiverged(String),
    #[error("enumeration exceeded the configured limit of {0} tables")]
    EnumerationOverflow(usize),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
