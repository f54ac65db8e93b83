use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("resonant configuration: sqrt(b) = pi*{j}/(2d) for b = {b}, d = {d}")]
    Resonance { j: u64, b: f64, d: f64 },

    #[error("{op}: no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        op: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("degenerate surface slope u'(d) = {slope:e}")]
    DegenerateSlope { slope: f64 },

    #[error("quadrature failed: achieved error estimate {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("{what}: two evaluations disagree ({a:e} vs {b:e})")]
    Mismatch { what: &'static str, a: f64, b: f64 },

    #[error("eigenvalue window [{lo}, {hi}] holds {found} eigenvalues, {wanted} requested")]
    WindowTooSmall {
        lo: f64,
        hi: f64,
        found: usize,
        wanted: usize,
    },

    #[error("could not bracket eigenvalue {index}")]
    BracketFailure { index: usize },

    #[error("no b found with {wanted} negative eigenvalues; observed (b, count): {observed:?}")]
    SearchExhausted {
        wanted: usize,
        observed: Vec<(f64, usize)>,
    },

    #[error("negative eigenvalue count changed: expected {expected}, found {found}")]
    CountChanged { expected: usize, found: usize },

    #[error("inconsistent branch: {0}")]
    InconsistentBranch(String),

    #[error("constraint matrix rank deficient (condition {condition:e}); enlarge the bump span")]
    RankDeficient { condition: f64 },

    #[error("no wavenumber pattern within radius {radius} (best distance {best})")]
    NoPatternWithinRadius { radius: f64, best: f64 },

    #[error("eigenfunction {j} vanishes at the surface")]
    ZeroTraceEigenfunction { j: usize },

    #[error("nonpositive depth eta = {eta} at x = {x}")]
    NonpositiveDepth { x: f64, eta: f64 },

    #[error("interpolation out of range: {0}")]
    OutOfRange(String),

    #[error("data not compatible with the modal complement: mode {mode}, eigenfunction {j}, mismatch {mismatch:e}")]
    CompatibilityViolation {
        mode: usize,
        j: usize,
        mismatch: f64,
    },

    #[error("near-singular mode solve at Fourier mode {n}, eigenfunction {j} (gap {gap:e})")]
    NearSingularMode { n: usize, j: usize, gap: f64 },

    #[error("kernel leakage: coefficient {coefficient:e} on the excluded mode")]
    KernelLeakage { coefficient: f64 },

    #[error("amplitudes not admissible: {0}")]
    NotAdmissible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
