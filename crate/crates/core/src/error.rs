use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("boundary selection `{0}` matches no boundary edge")]
    EmptyBoundarySelection(String),

    #[error("cannot parse boundary selection `{0}`")]
    BadBoundarySpec(String),

    #[error("mesh file, line {line}: {msg}")]
    MeshFormat { line: usize, msg: String },

    #[error("diffusion tensor is not uniformly elliptic at ({x}, {y}, t = {t}): min eigenvalue {min_eig} < {bound}")]
    NotElliptic {
        x: f64,
        y: f64,
        t: f64,
        min_eig: f64,
        bound: f64,
    },

    #[error("non-finite field value at ({x}, {y}, t = {t})")]
    NonFinite { x: f64, y: f64, t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    Indefinite { pivot: usize, value: f64 },

    #[error("linear solve did not converge: relative residual {residual:e} > {tolerance:e}")]
    NonConvergence { residual: f64, tolerance: f64 },

    #[error("invalid parameter `{name}`: {msg}")]
    InvalidParameter { name: &'static str, msg: String },

    #[error("search direction is zero")]
    ZeroDirection,

    #[error("previous gradient is zero")]
    ZeroGradient,

    #[error("error norms need at least two positive entries; got {0:?}")]
    BadErrorSequence(Vec<f64>),

    #[error("node {node} is not on a mesh line along {axis}")]
    OffMeshLine { node: usize, axis: char },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
