use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("stencil out of range: node {node:?} with offset {offset:?} leaves the grid")]
    StencilOutOfRange { node: [usize; 2], offset: [i64; 2] },

    #[error("point {point:?} lies outside the grid box")]
    OutOfBox { point: [f64; 2] },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("CFL violation: dt = {dt} exceeds the monotone bound {bound}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("node-count guard exceeded: {nodes} nodes > {guard} (brute-force envelope refused)")]
    BruteForceGuard { nodes: usize, guard: usize },

    #[error("rate fit converged too fast: only {usable} usable points (need ≥ {need}); enlarge grid or shrink snapshot spacing")]
    ConvergedTooFast { usable: usize, need: usize },

    #[error("{0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
