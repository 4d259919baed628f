use thiserror::Error;

use crate::solvers::SolverReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: operands live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coefficients not elliptic at node ({i1}, {i2}): k11 = {k11}, k12 = {k12}, k22 = {k22}")]
    NotElliptic {
        i1: usize,
        i2: usize,
        k11: f64,
        k12: f64,
        k22: f64,
    },

    #[error("block not positive definite at node ({i1}, {i2}) for chi = {chi}")]
    BlockNotSpd { i1: usize, i2: usize, chi: f64 },

    #[error("weight operator not positive on this input (quadratic form {value:e})")]
    NotPositive { value: f64 },

    #[error("singular tridiagonal line {line}: zero pivot at row {row}")]
    SingularLine { line: usize, row: usize },

    #[error("triangular solve requires diagonal C (k12 = 0)")]
    NonDiagonalC,

    #[error("mixed coefficients present: {0} requires k12 = 0")]
    MixedCoefficients(&'static str),

    #[error("assembly refused: {unknowns} unknowns exceeds the limit of {limit}")]
    AssemblyTooLarge { unknowns: usize, limit: usize },

    #[error("unknown manufactured case '{0}'")]
    UnknownCase(String),

    #[error("iterative solver did not converge: {0:?}")]
    NotConverged(SolverReport),

    #[error("invalid configuration: {0}")]
    Config(String),
}
