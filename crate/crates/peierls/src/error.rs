//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("state is in {found} representation, expected {expected}")]
    WrongRepresentation {
        expected: &'static str,
        found: &'static str,
    },
    #[error("window has no grid nodes")]
    EmptyWindow,
    #[error("inconsistent windows: {0}")]
    Window(String),
    #[error("gap violation at node {node} (p = {p:.6}): gap {gap:.3e} < gap_min {gap_min:.3e}")]
    GapViolation {
        node: usize,
        p: f64,
        gap: f64,
        gap_min: f64,
    },
    #[error("degenerate lowest eigenvalue at node {node}")]
    Degenerate { node: usize },
    #[error("node {node} lies outside the band window")]
    OutsideWindow { node: usize },
    #[error("symbol lacks derivative evaluators of order {0}")]
    MissingDerivative(usize),
    #[error("symbol evaluation failed at X = {x}, p = {p}")]
    Evaluation { x: f64, p: f64 },
    #[error("eigensolver failed with info = {0}")]
    Eigensolve(i32),
    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("potential stencil half-width {m} exceeds N/8 = {limit}")]
    StencilTooWide { m: usize, limit: usize },
    #[error("dimension {dim} exceeds the dense eigensolve limit {limit}; use the split-step method")]
    SizeLimit { dim: usize, limit: usize },
    #[error("state is at distance {0:.3e} from the band subspace")]
    NotInRange(f64),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("probe support touches the position branch cut: {0}")]
    BranchCut(String),
    #[error("state cannot be normalized: {0}")]
    Unnormalizable(String),
    #[error("config errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("slope fit needs positive estimates: {0}")]
    Fit(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
