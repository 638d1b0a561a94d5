use serde::Serialize;
use thiserror::Error;

/// Every failure the library can report.
///
/// Variants fall in two classes: malformed input (wrong dimensions, bad
/// prime, unparseable spec) and mathematical obstructions (the requested
/// object does not exist or could not be certified). The CLI maps the
/// second class to exit code 2.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "error")]
pub enum Error {
    #[error("eigenvalue within {distance:.3e} of the branch cut")]
    BranchCut { distance: f64 },
    #[error("matrix is singular (smallest singular value {sigma_min:.3e})")]
    Singular { sigma_min: f64 },
    #[error("matrix is not unitary (defect {defect:.3e})")]
    NotUnitary { defect: f64 },
    #[error("matrix is not self-adjoint (defect {defect:.3e})")]
    NotSelfAdjoint { defect: f64 },
    #[error("matrix is not a projection (defect {defect:.3e})")]
    NotProjection { defect: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("{value} is not prime")]
    NotPrime { value: u64 },
    #[error("prime {prime} has infinite exponent")]
    InfiniteExponent { prime: u64 },
    #[error("budget {budget} is smaller than the required dimension {needed}")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("class is not embeddable: {detail}")]
    NotEmbeddable { detail: String },
    #[error("action spec mismatch: {detail}")]
    SpecMismatch { detail: String },
    #[error("not a cocycle: staircase discrepancy {discrepancy:.3e} exceeds {allowed:.3e}")]
    NotACocycle { discrepancy: f64, allowed: f64 },
    #[error("no factor on which the action is free for the requested element")]
    NoFreeTail,
    #[error("path step too coarse: gap {gap:.3e} at sample {index}")]
    StepTooCoarse { gap: f64, index: usize },
    #[error("value {value} is not on the lattice (residual {residual:.3e})")]
    NotOnLattice { value: f64, residual: f64 },
    #[error("value {value} is not an integer (residual {residual:.3e})")]
    NotInteger { value: f64, residual: f64 },
    #[error("not an almost cocycle: defect {defect:.3e} is not below 1")]
    NotAlmostCocycle { defect: f64 },
    #[error("commutation failure: {detail}")]
    CommutationFailure { detail: String },
    #[error("eigenvalue matching is ambiguous at sample {index}")]
    AmbiguousMatching { index: usize },
    #[error("Bott index {bott} is nonzero")]
    BottObstruction { bott: i64 },
    #[error("path synthesis failed: achieved {achieved:.3e}, required {required:.3e}")]
    SynthesisFailure { achieved: f64, required: f64 },
    #[error("loop has nonzero winding {winding}")]
    WindingObstruction { winding: f64 },
    #[error("not admissible: {detail}")]
    NotAdmissible { detail: String },
    #[error("commutant defect {defect:.3e} exceeds {allowed:.3e}")]
    CommutantDefect { defect: f64, allowed: f64 },
    #[error("extension guard violated: {value:.3e} >= {limit:.3e}")]
    GuardViolated { value: f64, limit: f64 },
    #[error("no free factors available for a Rohlin tower")]
    NoFreeFactors,
    #[error("no tower available: {detail}")]
    TowerUnavailable { detail: String },
    #[error("assembled unitary misses the target: {achieved:.3e} >= {target:.3e}")]
    AssemblyDefect { achieved: f64, target: f64 },
    #[error("invariants differ: {detail}")]
    InvariantMismatch { detail: String },
    #[error("invariant correction failed: {detail}")]
    CorrectionFailure { detail: String },
    #[error("round {round} failed to decrease the defect ({defect:.3e})")]
    Stalled { round: usize, defect: f64 },
    #[error("numerical failure: {detail}")]
    Numerical { detail: String },
    #[error("invalid input: {detail}")]
    InvalidInput { detail: String },
}

impl Error {
    /// True for mathematical obstructions, false for malformed input.
    pub fn is_obstruction(&self) -> bool {
        !matches!(
            self,
            Error::NotUnitary { .. }
                | Error::NotSelfAdjoint { .. }
                | Error::NotProjection { .. }
                | Error::DimMismatch { .. }
                | Error::NotPrime { .. }
                | Error::InfiniteExponent { .. }
                | Error::BudgetTooSmall { .. }
                | Error::SpecMismatch { .. }
                | Error::InvalidInput { .. }
        )
    }

    pub fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidInput { detail: detail.into() }
    }

    pub fn numerical(detail: impl Into<String>) -> Self {
        Error::Numerical { detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
