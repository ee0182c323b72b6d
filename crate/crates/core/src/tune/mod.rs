//! Search procedures over policies.
//!
//! [`align_op`] and [`align_all`] rescale each op's formulas so that its
//! standalone optimum sits at a shared anchor `(p*, m*)`. [`search_mp`] then
//! grid-searches the two global knobs.

mod align;
mod search;

use thiserror::Error;

use crate::ops::OpKind;
use crate::policy::{PolicyError, PolicySpec};

pub use align::{align_all, align_op, AlignmentResult, Anchor, OpAlignment, OpGrid};
pub use search::{
    default_m_grid, default_p_grid, search_mp, CellStatus, ScoreRow, ScoreTable, SearchResult,
    TABLE_HEADER,
};

/// Failure reported by an evaluator for one grid point.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{0}")]
pub struct EvalError(pub String);

/// Scores a policy at `(m, p)`; higher is better. Must be deterministic.
pub trait Evaluator: Sync {
    fn evaluate(&self, spec: &PolicySpec, m: f64, p: f64, seed: u64) -> Result<f64, EvalError>;
}

impl<F> Evaluator for F
where
    F: Fn(&PolicySpec, f64, f64, u64) -> Result<f64, EvalError> + Sync,
{
    fn evaluate(&self, spec: &PolicySpec, m: f64, p: f64, seed: u64) -> Result<f64, EvalError> {
        self(spec, m, p, seed)
    }
}

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("{0} grid is empty")]
    EmptyGrid(&'static str),
    #[error("invalid grid value {value} in {grid} grid")]
    InvalidGridValue { grid: &'static str, value: f64 },
    #[error("duplicate value {value} in {grid} grid")]
    DuplicateGridValue { grid: &'static str, value: f64 },
    #[error("anchor components must be finite and > 0 (p* = {p}, m* = {m})")]
    InvalidAnchor { p: f64, m: f64 },
    #[error("{op}: {driver} candidate {candidate:?} has {got} values, expected {expected}")]
    CandidateArity {
        op: OpKind,
        driver: &'static str,
        candidate: Vec<f64>,
        got: usize,
        expected: usize,
    },
    #[error("{0} is not part of the template policy")]
    UnknownOp(OpKind),
    #[error("{op}: evaluator failed at probability {prob:?}, magnitude {mag:?}: {source}")]
    AlignEval {
        op: OpKind,
        prob: Vec<f64>,
        mag: Vec<f64>,
        #[source]
        source: EvalError,
    },
    #[error("score table {path}: {message}")]
    Table { path: String, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
