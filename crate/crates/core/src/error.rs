use thiserror::Error;

/// Errors produced by the numerical modules.
///
/// Variants carry enough location information to be reported without the
/// originating call stack (the CLI prefixes them with the module name).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("geometry: evaluation at or beyond a coordinate pole (theta = {theta})")]
    PoleEvaluation { theta: f64 },

    #[error("geometry: the plane has no finite total area")]
    UnboundedDomain,

    #[error("flow: trajectory entered the pole margin at t = {t} (q = {q:?})")]
    PoleEscape { t: f64, q: [f64; 2] },

    #[error("flow: step size underflow at t = {t} (q = {q:?}, h = {h:e})")]
    StepUnderflow { t: f64, q: [f64; 2], h: f64 },

    #[error("curves: overlapping segments could not be resolved by perturbation")]
    DegenerateSegments,

    #[error("curves: loop with winding {winding:?} is not contractible")]
    NonContractible { winding: [i64; 2] },

    #[error("orbits: magnetic function is not invariant under the symmetry (deviation {deviation:e})")]
    NotRotationallySymmetric { deviation: f64 },

    #[error("orbits: inconclusive sample at start index {index}: no return within horizon but return distance reached {min_distance:e}")]
    Inconclusive { index: usize, min_distance: f64 },

    #[error("orbits: short window and long threshold overlap for epsilon = {epsilon}")]
    WindowOverlap { epsilon: f64 },

    #[error("diagnostics: Euler characteristic is zero")]
    TorusEulerZero,

    #[error("diagnostics: Euler characteristic {chi} is not negative")]
    NonNegativeEuler { chi: i32 },

    #[error("diagnostics: magnetic function has zero total integral")]
    ZeroMeanField,

    #[error("diagnostics: average magnetic curvature {value} is not positive")]
    NonpositiveMagneticCurvature { value: f64 },

    #[error("diagnostics: denominator of radius {radius} is not positive")]
    DenominatorNonpositive { radius: &'static str },

    #[error("diagnostics: crossing of the x-axis not found after {found} loops")]
    CrossingNotFound { found: usize },

    #[error("variational: continuation lost at lambda = {failed_at}; largest lambda reached {lambda_reached}")]
    ContinuationLost { lambda_reached: f64, failed_at: f64, reason: String },

    #[error("{what} must be positive (got {value})")]
    NonPositiveInput { what: &'static str, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("expression error: {0}")]
    Expression(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
