use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inadmissible potential: {0}")]
    InadmissiblePotential(String),

    #[error("profile integration did not reach the tail threshold within |x| <= {0}")]
    ProfileNotConverged(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("translation {xi} outside admissible window [{lo}, {hi}]")]
    TranslationOutOfWindow { xi: f64, lo: f64, hi: f64 },

    #[error("cutoff exponent lambda1 = {lambda1} violates 0 < lambda1 < {bound}")]
    InvalidCutoffExponent { lambda1: f64, bound: f64 },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("ambiguous projection: scan minima {first} and {second} within 1%")]
    AmbiguousProjection { first: f64, second: f64 },

    #[error("Fermi-coordinate denominator {value} below 0.1 * {reference}")]
    DenominatorNearZero { value: f64, reference: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid exponents: {0}")]
    InvalidExponents(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("chain blew up: sup norm {0} exceeds 1e3")]
    BlowUp(f64),

    #[error("importance weights degenerate: effective sample size {0:.1} < 50")]
    DegenerateWeights(f64),

    #[error("rung {rung} not equilibrated: R-hat {rhat:.3} > 1.1")]
    NotEquilibrated { rung: usize, rhat: f64 },

    #[error("no feasible iterate found for delta = {0}")]
    Infeasible(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
