//! Per-op alignment.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::exact::{exact_from_f64, Exact};
use crate::ops::OpKind;
use crate::policy::{Driver, OpSpec, PolicySpec};

use super::{EvalError, Evaluator, TuneError};

/// Common operating point every aligned op is rescaled to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub p: f64,
    pub m: f64,
}

impl Default for Anchor {
    fn default() -> Self {
        Self { p: 0.5, m: 5.0 }
    }
}

impl Anchor {
    fn exact(&self) -> Result<(Exact, Exact), TuneError> {
        let bad = || TuneError::InvalidAnchor {
            p: self.p,
            m: self.m,
        };
        if !(self.p > 0.0 && self.m > 0.0) {
            return Err(bad());
        }
        Ok((
            exact_from_f64(self.p).ok_or_else(bad)?,
            exact_from_f64(self.m).ok_or_else(bad)?,
        ))
    }
}

/// Candidate raw values for one op.
///
/// A candidate holds one value per parameter of its driver, in the op's
/// parameter order and in each parameter's unit (`1.1` for `max_angle` means
/// 1.1 pi). Ops without magnitude parameters take the single empty candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct OpGrid {
    pub op: OpKind,
    pub prob: Vec<Vec<f64>>,
    pub mag: Vec<Vec<f64>>,
}

impl OpGrid {
    pub fn new(op: OpKind, prob: Vec<Vec<f64>>, mag: Vec<Vec<f64>>) -> Self {
        Self { op, prob, mag }
    }

    /// Grid for an op with at most one parameter per driver.
    pub fn scalar(op: OpKind, prob: &[f64], mag: &[f64]) -> Self {
        let wrap = |v: &[f64]| {
            if v.is_empty() {
                vec![Vec::new()]
            } else {
                v.iter().map(|x| vec![*x]).collect()
            }
        };
        Self {
            op,
            prob: wrap(prob),
            mag: wrap(mag),
        }
    }

    pub fn len(&self) -> usize {
        self.prob.len() * self.mag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpAlignment {
    pub op: OpKind,
    /// Winning raw values, per driver, in parameter order.
    pub prob: Vec<f64>,
    pub mag: Vec<f64>,
    pub score: f64,
    /// The op's formulas with rescaled coefficients.
    pub aligned: OpSpec,
    pub evaluations: usize,
}

impl OpAlignment {
    /// Rescaled coefficients per driver, in parameter order.
    pub fn coefficients(&self, driver: Driver) -> Vec<Exact> {
        self.aligned
            .entries_for(driver)
            .map(|e| e.formula.coeff.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub anchor: Anchor,
    pub ops: Vec<OpAlignment>,
    pub spec: PolicySpec,
    pub evaluations: usize,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Template with each coefficient set so the formula yields `raw` at the anchor.
fn rescale(
    template: &OpSpec,
    prob: &[f64],
    mag: &[f64],
    anchor: &(Exact, Exact),
) -> Result<OpSpec, TuneError> {
    let mut out = template.clone();
    for (driver, values, knob, label) in [
        (Driver::Probability, prob, &anchor.0, "probability"),
        (Driver::Magnitude, mag, &anchor.1, "magnitude"),
    ] {
        let idx: Vec<usize> = (0..out.params.len())
            .filter(|&i| out.params[i].formula.driver == driver)
            .collect();
        let arity = TuneError::CandidateArity {
            op: template.op,
            driver: label,
            candidate: values.to_vec(),
            got: values.len(),
            expected: idx.len(),
        };
        if idx.len() != values.len() {
            return Err(arity);
        }
        for (&i, &raw) in idx.iter().zip(values) {
            let raw = exact_from_f64(raw).ok_or(TuneError::InvalidGridValue {
                grid: label,
                value: raw,
            })?;
            let f = &out.params[i].formula;
            out.params[i].formula = f.with_coeff((raw - &f.offset) / knob);
        }
    }
    Ok(out)
}

/// Grid-searches one op's raw optimum with every other op disabled, and
/// rescales its formulas so the optimum is reached at `anchor`.
pub fn align_op(
    template: &OpSpec,
    grid: &OpGrid,
    evaluator: &dyn Evaluator,
    anchor: Anchor,
    seed: u64,
) -> Result<OpAlignment, TuneError> {
    if grid.prob.is_empty() {
        return Err(TuneError::EmptyGrid("probability"));
    }
    if grid.mag.is_empty() {
        return Err(TuneError::EmptyGrid("magnitude"));
    }
    let knobs = anchor.exact()?;
    let mut cells = Vec::with_capacity(grid.len());
    for prob in &grid.prob {
        for mag in &grid.mag {
            let spec = PolicySpec::new(vec![rescale(template, prob, mag, &knobs)?])?;
            cells.push((prob, mag, spec));
        }
    }
    let scores: Vec<Result<f64, EvalError>> = cells
        .par_iter()
        .map(|(_, _, spec)| {
            evaluator
                .evaluate(spec, anchor.m, anchor.p, seed)
                .and_then(|s| {
                    if s.is_nan() {
                        Err(EvalError("score is NaN".into()))
                    } else {
                        Ok(s)
                    }
                })
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in scores.into_iter().enumerate() {
        let (prob, mag, _) = &cells[i];
        let score = r.map_err(|source| TuneError::AlignEval {
            op: template.op,
            prob: prob.to_vec(),
            mag: mag.to_vec(),
            source,
        })?;
        let better = match best {
            None => true,
            Some((j, s)) => {
                let (bp, bm, _) = &cells[j];
                score > s
                    || (score == s
                        && lexicographic(prob, bp).then_with(|| lexicographic(mag, bm))
                            == Ordering::Less)
            }
        };
        if better {
            best = Some((i, score));
        }
    }
    let (i, score) = best.expect("grid is non-empty");
    let (prob, mag, spec) = cells.swap_remove(i);
    Ok(OpAlignment {
        op: template.op,
        prob: prob.to_vec(),
        mag: mag.to_vec(),
        score,
        aligned: spec.ops()[0].clone(),
        evaluations: grid.len(),
    })
}

/// Aligns every op that has a grid; ops without one keep their formulas.
pub fn align_all(
    template: &PolicySpec,
    grids: &[OpGrid],
    evaluator: &dyn Evaluator,
    anchor: Anchor,
    seed: u64,
) -> Result<AlignmentResult, TuneError> {
    for g in grids {
        if template.op(g.op).is_none() {
            return Err(TuneError::UnknownOp(g.op));
        }
    }
    let mut ops = Vec::new();
    let mut specs = Vec::new();
    for op in template.ops() {
        match grids.iter().find(|g| g.op == op.op) {
            Some(g) => {
                let a = align_op(op, g, evaluator, anchor, seed)?;
                specs.push(a.aligned.clone());
                ops.push(a);
            }
            None => specs.push(op.clone()),
        }
    }
    let evaluations = ops.iter().map(|a| a.evaluations).sum();
    Ok(AlignmentResult {
        anchor,
        ops,
        spec: PolicySpec::new(specs)?,
        evaluations,
    })
}
