use thiserror::Error;

/// Errors shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entries: {0}")]
    NonFinite(String),
    #[error("matrix is not symmetric: max asymmetry {0:.3e}")]
    NotSymmetric(f64),
    #[error("trace violation: |trace| = {trace:.3e} exceeds tolerance {tol:.3e}")]
    TraceViolation { trace: f64, tol: f64 },
    #[error("eigenvalue sum {0:.3e} exceeds tolerance")]
    NonZeroSum(f64),
    #[error("coordinate vector has length {got}, normal form for m = {m} needs {want}")]
    BadCoordLength { m: usize, got: usize, want: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("exponential overflow: exponent {0:.3e} out of range")]
    Overflow(f64),
    #[error("eigenvalue {value:.6e} within margin {margin:.3e} of interval endpoint")]
    EigenvalueOnBoundary { value: f64, margin: f64 },
    #[error("no admissible clustering: {0}")]
    NoAdmissibleClustering(String),
    #[error("cluster hypothesis violated at grid point {location:?}: {reason}")]
    HypothesisViolated { location: Vec<usize>, reason: String },
    #[error("representation is not simple: block sizes {0:?}")]
    NonSimpleRepresentation(Vec<usize>),
    #[error("scalar curvature is not negative at t = {t}: sup R = {sup_r:.6e}")]
    NonNegativeCurvature { t: f64, sup_r: f64 },
    #[error("delta condition fails: delta_p = {0:.3e}")]
    DeltaNotPositive(f64),
    #[error("codimension {codim} exceeds manifold dimension {n}; such strata cannot occur transversally")]
    CodimensionTooLarge { codim: usize, n: usize },
    #[error("search budget exhausted after {tried} candidates; best margin {best:.3e}")]
    BudgetExhausted { tried: usize, best: f64 },
    #[error("triplet family has {got} members, need more than {need}")]
    TooFewTriplets { got: usize, need: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
