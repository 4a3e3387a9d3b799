//! Error type shared by all solver and checker modules.

use thiserror::Error;

/// Everything that can go wrong while partitioning, solving or checking.
#[derive(Debug, Clone, Error)]
pub enum AbsdeError {
    /// A delay function returned a non-positive value somewhere on `[0, T]`.
    /// Positivity is what makes the anticipation partition finite.
    #[error("delay is not strictly positive: value {value} at t = {at}")]
    NonPositiveDelay { at: f64, value: f64 },

    /// A partition iteration failed to move: the effective delay is below
    /// the scan resolution.
    #[error("partition made no progress at knot t = {knot} (effective delay below scan resolution)")]
    NoProgress { knot: f64 },

    /// Internal defect guard: the partition grew past its theoretical bound.
    #[error("partition knot count {count} exceeded cap {cap}")]
    IterationCap { count: usize, cap: usize },

    /// Two partition knots snapped to the same grid node.
    #[error("partition knots {upper} and {lower} collapse onto grid node {node}; grid too coarse for the delays")]
    CollapsedKnots { upper: f64, lower: f64, node: usize },

    /// The anticipation horizon K rounds to too few grid steps for the
    /// declared delays: some query time would fall off the grid.
    #[error("horizon K too small: query time {query_time} exceeds grid end {grid_end}")]
    KTooSmall { query_time: f64, grid_end: f64 },

    /// A sampled delay is shorter than one grid step, so an anticipated
    /// query could land strictly inside the unsolved region.
    #[error("delay {delay} at t = {at} is below the grid step {step}")]
    DelayBelowGridStep { at: f64, delay: f64, step: f64 },

    #[error("lattice index out of range: {what}")]
    IndexOutOfRange { what: String },

    /// The generator produced a non-finite value during backward induction.
    #[error("non-finite value at step {step}, node {node}: {detail}")]
    NonFiniteValue { step: usize, node: usize, detail: String },

    /// Defect guard: an anticipated query landed below the solved watermark.
    #[error("anticipated query targets unsolved step {query_step} (solved from step {solved_from})")]
    UnsolvedRegion { query_step: usize, solved_from: usize },

    /// A checker precondition failed (e.g. terminal segments not ordered).
    #[error("precondition failed: {detail}")]
    PreconditionFailed { detail: String },

    /// A sufficient-condition mode requires independence of the anticipated-Z
    /// slot and the probe detected a dependence.
    #[error("generator `{name}` depends on the anticipated Z term; mode requires independence")]
    AnticipatedZDependence { name: String },

    /// `solve_plain_bsde` was handed a generator that reads its query.
    #[error("generator `{name}` depends on its anticipated query; plain BSDE solve requires independence")]
    AnticipatedDependence { name: String },

    /// Regression normal equations were rank-deficient.
    #[error("regression normal equations ill-conditioned (pivot ratio {pivot_ratio:e})")]
    IllConditioned { pivot_ratio: f64 },

    #[error("unknown fixture `{name}`")]
    UnknownFixture { name: String },

    #[error("unknown generator `{name}`")]
    UnknownGenerator { name: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AbsdeError {
    fn from(e: std::io::Error) -> Self {
        AbsdeError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AbsdeError>;
