//! The normalized search space.
//!
//! Every augmentation parameter is a clipped linear function of one of two
//! global knobs: the magnitude `m >= 0` or the probability `p` in `[0, 1]`.
//! A [`PolicySpec`] holds those formulas as data; [`resolve`] evaluates them
//! for a given `(m, p)` and [`apply_pipeline`] runs all ops in order.

mod file;
mod pipeline;

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::exact::{clamp, exact_from_f64, exact_to_f64, parse_exact, round_half_even, Exact};
use crate::geometry::ClassId;
use crate::ops::{
    BoxCounts, ClassBoxParams, FireTag, FrustumDrop, FrustumNoise, GlobalDrop, GlobalFlip,
    GlobalRotate, GlobalScale, GlobalTranslate, OpError, OpKind, SwapBackground,
};
use crate::rangeview::RangeViewError;

pub use file::{parse_policy, write_policy, DEFAULT_POLICY_TEXT, POLICY_MAGIC};
pub use pipeline::{apply_pipeline, apply_resolved, check_inputs, AugmentContext, Augmented};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error(
        "magnitude must be finite and >= 0 and probability within [0, 1], got m = {m}, p = {p}"
    )]
    Domain { m: f64, p: f64 },
    #[error("resolved policy violates its bounds: {}", .0.join("; "))]
    Bounds(Vec<String>),
    #[error("final occlusion pass: {0}")]
    RangeView(#[from] RangeViewError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{op} failed: {source}")]
    Op {
        op: OpKind,
        #[source]
        source: OpError,
    },
}

/// Which global knob drives a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Driver {
    Magnitude,
    Probability,
}

impl Driver {
    pub fn token(self) -> &'static str {
        match self {
            Driver::Magnitude => "m",
            Driver::Probability => "p",
        }
    }
}

/// Unit every number of a formula is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unit {
    One,
    Pi,
}

impl Unit {
    pub fn token(self) -> &'static str {
        match self {
            Unit::One => "1",
            Unit::Pi => "pi",
        }
    }

    pub fn to_f64(self, value: &Exact) -> f64 {
        let v = exact_to_f64(value);
        match self {
            Unit::One => v,
            Unit::Pi => v * PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamName {
    Probability,
    NumBoxes,
    MaxAngle,
    ScalingFactor,
    DropRatio,
    ThetaWidth,
    PhiWidth,
    MinRange,
    MaxNoise,
    NoiseStdev,
}

impl ParamName {
    const ALL: [ParamName; 10] = [
        ParamName::Probability,
        ParamName::NumBoxes,
        ParamName::MaxAngle,
        ParamName::ScalingFactor,
        ParamName::DropRatio,
        ParamName::ThetaWidth,
        ParamName::PhiWidth,
        ParamName::MinRange,
        ParamName::MaxNoise,
        ParamName::NoiseStdev,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Probability => "probability",
            ParamName::NumBoxes => "num_boxes",
            ParamName::MaxAngle => "max_angle",
            ParamName::ScalingFactor => "scaling_factor",
            ParamName::DropRatio => "drop_ratio",
            ParamName::ThetaWidth => "theta_width",
            ParamName::PhiWidth => "phi_width",
            ParamName::MinRange => "min_range",
            ParamName::MaxNoise => "max_noise",
            ParamName::NoiseStdev => "noise_stdev",
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParamName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown parameter {s:?}"))
    }
}

/// Parameters an op needs. Box ops need them once per class.
pub fn required_params(op: OpKind) -> &'static [ParamName] {
    use ParamName::*;
    match op {
        OpKind::DropBox | OpKind::PasteBox => &[Probability, NumBoxes],
        OpKind::SwapBackground | OpKind::GlobalFlip => &[Probability],
        OpKind::GlobalRot => &[Probability, MaxAngle],
        OpKind::GlobalScale => &[Probability, ScalingFactor],
        OpKind::GlobalDrop => &[Probability, DropRatio],
        OpKind::FrustumDrop => &[Probability, ThetaWidth, PhiWidth, MinRange, DropRatio],
        OpKind::FrustumNoise => &[Probability, ThetaWidth, PhiWidth, MinRange, MaxNoise],
        OpKind::GlobalTranslate => &[Probability, NoiseStdev],
    }
}

pub fn is_per_class(op: OpKind) -> bool {
    matches!(op, OpKind::DropBox | OpKind::PasteBox)
}

/// `clamp(offset + coeff * knob, clip_lo, clip_hi)`, all in `unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFormula {
    pub driver: Driver,
    pub coeff: Exact,
    pub offset: Exact,
    pub clip_lo: Option<Exact>,
    pub clip_hi: Option<Exact>,
    pub unit: Unit,
}

impl ParamFormula {
    /// Value before clipping.
    pub fn raw(&self, knobs: &Knobs) -> Exact {
        let g = match self.driver {
            Driver::Magnitude => &knobs.m,
            Driver::Probability => &knobs.p,
        };
        &self.offset + &self.coeff * g
    }

    pub fn evaluate(&self, knobs: &Knobs) -> Exact {
        clamp(
            self.raw(knobs),
            self.clip_lo.as_ref(),
            self.clip_hi.as_ref(),
        )
    }

    pub fn evaluate_f64(&self, knobs: &Knobs) -> f64 {
        self.unit.to_f64(&self.evaluate(knobs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: ParamName,
    pub class: Option<ClassId>,
    pub formula: ParamFormula,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpSpec {
    pub op: OpKind,
    pub params: Vec<ParamEntry>,
}

impl OpSpec {
    pub fn entry(&self, name: ParamName, class: Option<ClassId>) -> Option<&ParamEntry> {
        self.params
            .iter()
            .find(|e| e.name == name && e.class == class)
    }

    pub fn entries_for(&self, driver: Driver) -> impl Iterator<Item = &ParamEntry> {
        self.params
            .iter()
            .filter(move |e| e.formula.driver == driver)
    }

    fn classes(&self) -> Vec<ClassId> {
        let mut c: Vec<ClassId> = self.params.iter().filter_map(|e| e.class).collect();
        c.sort();
        c.dedup();
        c
    }

    fn validate(&self) -> Result<(), PolicyError> {
        let op = self.op;
        let bad = |msg: String| Err(PolicyError::Invalid(format!("{op}: {msg}")));
        let per_class = is_per_class(op);
        let required = required_params(op);
        let mut seen = std::collections::HashSet::new();
        for e in &self.params {
            if !required.contains(&e.name) {
                return bad(format!("unexpected parameter {}", e.name));
            }
            if per_class != e.class.is_some() {
                return bad(format!(
                    "parameter {} {} a class",
                    e.name,
                    if per_class { "needs" } else { "must not have" }
                ));
            }
            if !seen.insert((e.name, e.class)) {
                return bad(format!("duplicate parameter {}", e.name));
            }
            let want = if e.name == ParamName::Probability {
                Driver::Probability
            } else {
                Driver::Magnitude
            };
            if e.formula.driver != want {
                return bad(format!("{} must be driven by {}", e.name, want.token()));
            }
            if let (Some(lo), Some(hi)) = (&e.formula.clip_lo, &e.formula.clip_hi) {
                if lo > hi {
                    return bad(format!("{} has clip_lo > clip_hi", e.name));
                }
            }
        }
        let classes: Vec<Option<ClassId>> = if per_class {
            self.classes().into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        for class in classes {
            for name in required {
                if self.entry(*name, class).is_none() {
                    return bad(format!(
                        "missing parameter {name}{}",
                        class.map(|c| format!(" for {c}")).unwrap_or_default()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Ordered op formulas. Ops appear at most once, in pipeline order; an op
/// that is absent never runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    ops: Vec<OpSpec>,
}

impl PolicySpec {
    pub fn new(ops: Vec<OpSpec>) -> Result<Self, PolicyError> {
        for w in ops.windows(2) {
            if w[0].op >= w[1].op {
                return Err(PolicyError::Invalid(format!(
                    "ops must appear once each in pipeline order; {} after {}",
                    w[1].op, w[0].op
                )));
            }
        }
        for o in &ops {
            o.validate()?;
        }
        Ok(Self { ops })
    }

    pub fn ops(&self) -> &[OpSpec] {
        &self.ops
    }

    pub fn op(&self, kind: OpKind) -> Option<&OpSpec> {
        self.ops.iter().find(|o| o.op == kind)
    }

    /// Spec containing only `kind`, if present.
    pub fn only(&self, kind: OpKind) -> Option<PolicySpec> {
        self.op(kind).map(|o| PolicySpec {
            ops: vec![o.clone()],
        })
    }

    /// Number of underlying per-op hyperparameters the two knobs replace.
    pub fn parameter_count(&self) -> usize {
        self.ops.iter().map(|o| o.params.len()).sum()
    }

    /// Hyperparameters exposed to the joint search.
    pub const SEARCH_DIMENSIONS: [&'static str; 2] = ["m", "p"];
}

/// Exact `(m, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Knobs {
    pub m: Exact,
    pub p: Exact,
}

impl Knobs {
    pub fn new(m: f64, p: f64) -> Result<Self, PolicyError> {
        let domain = || PolicyError::Domain { m, p };
        let me = exact_from_f64(m).ok_or_else(domain)?;
        let pe = exact_from_f64(p).ok_or_else(domain)?;
        if me.is_negative() || pe.is_negative() || pe > Exact::from_integer(1.into()) {
            return Err(domain());
        }
        Ok(Self { m: me, p: pe })
    }
}

/// Concrete parameters of one op for a given `(m, p)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedOp {
    DropBox(BoxCounts),
    PasteBox(BoxCounts),
    SwapBackground(SwapBackground),
    GlobalRot(GlobalRotate),
    GlobalScale(GlobalScale),
    GlobalDrop(GlobalDrop),
    FrustumDrop(FrustumDrop),
    FrustumNoise(FrustumNoise),
    GlobalTranslate(GlobalTranslate),
    GlobalFlip(GlobalFlip),
}

impl ResolvedOp {
    pub fn kind(&self) -> OpKind {
        match self {
            ResolvedOp::DropBox(_) => OpKind::DropBox,
            ResolvedOp::PasteBox(_) => OpKind::PasteBox,
            ResolvedOp::SwapBackground(_) => OpKind::SwapBackground,
            ResolvedOp::GlobalRot(_) => OpKind::GlobalRot,
            ResolvedOp::GlobalScale(_) => OpKind::GlobalScale,
            ResolvedOp::GlobalDrop(_) => OpKind::GlobalDrop,
            ResolvedOp::FrustumDrop(_) => OpKind::FrustumDrop,
            ResolvedOp::FrustumNoise(_) => OpKind::FrustumNoise,
            ResolvedOp::GlobalTranslate(_) => OpKind::GlobalTranslate,
            ResolvedOp::GlobalFlip(_) => OpKind::GlobalFlip,
        }
    }

    /// Gate probability for every fire tag this op can emit.
    pub fn gate_probabilities(&self) -> Vec<(FireTag, f64)> {
        let op = self.kind();
        let single = |p: f64| vec![(FireTag { op, class: None }, p)];
        match self {
            ResolvedOp::DropBox(c) | ResolvedOp::PasteBox(c) => c
                .per_class
                .iter()
                .map(|(&class, cp)| {
                    (
                        FireTag {
                            op,
                            class: Some(class),
                        },
                        cp.probability,
                    )
                })
                .collect(),
            ResolvedOp::SwapBackground(x) => single(x.probability),
            ResolvedOp::GlobalRot(x) => single(x.probability),
            ResolvedOp::GlobalScale(x) => single(x.probability),
            ResolvedOp::GlobalDrop(x) => single(x.probability),
            ResolvedOp::FrustumDrop(x) => single(x.probability),
            ResolvedOp::FrustumNoise(x) => single(x.probability),
            ResolvedOp::GlobalTranslate(x) => single(x.probability),
            ResolvedOp::GlobalFlip(x) => single(x.probability),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPolicy {
    pub m: f64,
    pub p: f64,
    pub ops: Vec<ResolvedOp>,
}

impl ResolvedPolicy {
    pub fn get(&self, kind: OpKind) -> Option<&ResolvedOp> {
        self.ops.iter().find(|o| o.kind() == kind)
    }

    pub fn gate_probabilities(&self) -> Vec<(FireTag, f64)> {
        self.ops
            .iter()
            .flat_map(ResolvedOp::gate_probabilities)
            .collect()
    }

    /// Every bound the ops rely on; empty when all hold.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |what: String, value: f64, ok: bool| {
            if !(ok && value.is_finite()) {
                v.push(format!("{what} = {value}"));
            }
        };
        for (tag, p) in self.gate_probabilities() {
            let hi = if tag.op == OpKind::GlobalFlip {
                0.5
            } else {
                1.0
            };
            need(format!("{tag} probability"), p, (0.0..=hi).contains(&p));
        }
        let window =
            |need: &mut dyn FnMut(String, f64, bool), op: OpKind, t: f64, ph: f64, r: f64| {
                need(format!("{op} theta_width"), t, (0.0..=PI).contains(&t));
                need(format!("{op} phi_width"), ph, (0.0..=TAU).contains(&ph));
                need(format!("{op} min_range"), r, r >= 0.0);
            };
        for op in &self.ops {
            match op {
                ResolvedOp::GlobalRot(x) => need(
                    "GlobalRot max_angle".into(),
                    x.max_angle,
                    (0.0..=PI).contains(&x.max_angle),
                ),
                ResolvedOp::GlobalScale(x) => need(
                    "GlobalScale scaling_factor".into(),
                    x.scaling_factor,
                    (0.0..1.0).contains(&x.scaling_factor),
                ),
                ResolvedOp::GlobalDrop(x) => need(
                    "GlobalDrop drop_ratio".into(),
                    x.drop_ratio,
                    (0.0..=0.8).contains(&x.drop_ratio),
                ),
                ResolvedOp::FrustumDrop(x) => {
                    window(
                        &mut need,
                        OpKind::FrustumDrop,
                        x.theta_width,
                        x.phi_width,
                        x.min_range,
                    );
                    need(
                        "FrustumDrop drop_ratio".into(),
                        x.drop_ratio,
                        (0.0..=0.8).contains(&x.drop_ratio),
                    );
                }
                ResolvedOp::FrustumNoise(x) => {
                    window(
                        &mut need,
                        OpKind::FrustumNoise,
                        x.theta_width,
                        x.phi_width,
                        x.min_range,
                    );
                    need(
                        "FrustumNoise max_noise".into(),
                        x.max_noise,
                        x.max_noise >= 0.0,
                    );
                }
                ResolvedOp::GlobalTranslate(x) => need(
                    "GlobalTranslate noise_stdev".into(),
                    x.stdev,
                    x.stdev >= 0.0,
                ),
                _ => {}
            }
        }
        v
    }
}

fn to_count(value: &Exact) -> Result<u32, String> {
    let n: BigInt = round_half_even(value);
    if n.is_negative() {
        return Err(format!("box count {} is negative", exact_to_f64(value)));
    }
    Ok(n.to_u32().unwrap_or(u32::MAX))
}

/// Evaluates every formula at `(m, p)`.
pub fn resolve(spec: &PolicySpec, m: f64, p: f64) -> Result<ResolvedPolicy, PolicyError> {
    let knobs = Knobs::new(m, p)?;
    let mut ops = Vec::with_capacity(spec.ops.len());
    for o in &spec.ops {
        let val = |name: ParamName| -> f64 {
            o.entry(name, None)
                .expect("validated at construction")
                .formula
                .evaluate_f64(&knobs)
        };
        use ParamName::*;
        let resolved = match o.op {
            OpKind::DropBox | OpKind::PasteBox => {
                let mut per_class = BTreeMap::new();
                for class in o.classes() {
                    let e = |name| {
                        o.entry(name, Some(class))
                            .expect("validated at construction")
                    };
                    let probability = e(Probability).formula.evaluate_f64(&knobs);
                    let count = to_count(&e(NumBoxes).formula.evaluate(&knobs)).map_err(|msg| {
                        PolicyError::Bounds(vec![format!("{} {class} {msg}", o.op)])
                    })?;
                    per_class.insert(class, ClassBoxParams { probability, count });
                }
                let counts = BoxCounts { per_class };
                if o.op == OpKind::DropBox {
                    ResolvedOp::DropBox(counts)
                } else {
                    ResolvedOp::PasteBox(counts)
                }
            }
            OpKind::SwapBackground => ResolvedOp::SwapBackground(SwapBackground {
                probability: val(Probability),
            }),
            OpKind::GlobalRot => ResolvedOp::GlobalRot(GlobalRotate {
                probability: val(Probability),
                max_angle: val(MaxAngle),
            }),
            OpKind::GlobalScale => ResolvedOp::GlobalScale(GlobalScale {
                probability: val(Probability),
                scaling_factor: val(ScalingFactor),
            }),
            OpKind::GlobalDrop => ResolvedOp::GlobalDrop(GlobalDrop {
                probability: val(Probability),
                drop_ratio: val(DropRatio),
            }),
            OpKind::FrustumDrop => ResolvedOp::FrustumDrop(FrustumDrop {
                probability: val(Probability),
                theta_width: val(ThetaWidth),
                phi_width: val(PhiWidth),
                min_range: val(MinRange),
                drop_ratio: val(DropRatio),
            }),
            OpKind::FrustumNoise => ResolvedOp::FrustumNoise(FrustumNoise {
                probability: val(Probability),
                theta_width: val(ThetaWidth),
                phi_width: val(PhiWidth),
                min_range: val(MinRange),
                max_noise: val(MaxNoise),
            }),
            OpKind::GlobalTranslate => ResolvedOp::GlobalTranslate(GlobalTranslate {
                probability: val(Probability),
                stdev: val(NoiseStdev),
            }),
            OpKind::GlobalFlip => ResolvedOp::GlobalFlip(GlobalFlip {
                probability: val(Probability),
            }),
        };
        ops.push(resolved);
    }
    let policy = ResolvedPolicy { m, p, ops };
    let v = policy.violations();
    if !v.is_empty() {
        return Err(PolicyError::Bounds(v));
    }
    Ok(policy)
}

pub(crate) fn formula(
    driver: Driver,
    coeff: &str,
    offset: &str,
    lo: Option<&str>,
    hi: Option<&str>,
    unit: Unit,
) -> ParamFormula {
    let q = |s: &str| parse_exact(s).expect("literal");
    ParamFormula {
        driver,
        coeff: q(coeff),
        offset: q(offset),
        clip_lo: lo.map(q),
        clip_hi: hi.map(q),
        unit,
    }
}

/// The aligned search space for the default lidar, one formula per parameter.
pub fn default_policy() -> PolicySpec {
    use Driver::{Magnitude as M, Probability as P};
    use ParamName::*;
    let one = Unit::One;
    let pi = Unit::Pi;
    let prob = |c: &str| formula(P, c, "0", Some("0"), Some("1"), one);
    let entry = |name, class, formula| ParamEntry {
        name,
        class,
        formula,
    };
    let boxes = |op, veh: (&str, &str), ped: (&str, &str)| OpSpec {
        op,
        params: vec![
            entry(Probability, Some(ClassId::Vehicle), prob(veh.0)),
            entry(
                NumBoxes,
                Some(ClassId::Vehicle),
                formula(M, veh.1, "0", Some("0"), None, one),
            ),
            entry(Probability, Some(ClassId::Pedestrian), prob(ped.0)),
            entry(
                NumBoxes,
                Some(ClassId::Pedestrian),
                formula(M, ped.1, "0", Some("0"), None, one),
            ),
        ],
    };
    let single = |op, params: Vec<(ParamName, ParamFormula)>| OpSpec {
        op,
        params: params.into_iter().map(|(n, f)| entry(n, None, f)).collect(),
    };
    let ops = vec![
        boxes(OpKind::DropBox, ("1", "2"), ("1", "2.8")),
        boxes(OpKind::PasteBox, ("1.4", "3.2"), ("1", "4.4")),
        single(OpKind::SwapBackground, vec![(Probability, prob("0.6"))]),
        single(
            OpKind::GlobalRot,
            vec![
                (Probability, prob("1.4")),
                (MaxAngle, formula(M, "0.22", "0", Some("0"), Some("1"), pi)),
            ],
        ),
        single(
            OpKind::GlobalScale,
            vec![
                (Probability, prob("1")),
                // Keeps the factor range [1 - s, 1 + s] positive.
                (
                    ScalingFactor,
                    formula(M, "0.036", "0", Some("0"), Some("0.9"), one),
                ),
            ],
        ),
        single(
            OpKind::GlobalDrop,
            vec![
                (Probability, prob("1")),
                (
                    DropRatio,
                    formula(M, "-0.18", "1", Some("0"), Some("0.8"), one),
                ),
            ],
        ),
        single(
            OpKind::FrustumDrop,
            vec![
                (Probability, prob("1")),
                (ThetaWidth, formula(M, "0.1", "0", Some("0"), Some("1"), pi)),
                (PhiWidth, formula(M, "0.1", "0", Some("0"), Some("2"), pi)),
                (MinRange, formula(M, "-7.5", "75", Some("0"), None, one)),
                (
                    DropRatio,
                    formula(M, "-0.1", "1", Some("0"), Some("0.8"), one),
                ),
            ],
        ),
        single(
            OpKind::FrustumNoise,
            vec![
                (Probability, prob("0.6")),
                (
                    ThetaWidth,
                    formula(M, "0.14", "0", Some("0"), Some("1"), pi),
                ),
                (PhiWidth, formula(M, "0.14", "0", Some("0"), Some("2"), pi)),
                (MinRange, formula(M, "-10.5", "75", Some("0"), None, one)),
                (MaxNoise, formula(M, "0.14", "0", Some("0"), None, one)),
            ],
        ),
        single(
            OpKind::GlobalTranslate,
            vec![
                (Probability, prob("1.4")),
                (NoiseStdev, formula(M, "0.66", "0", Some("0"), None, one)),
            ],
        ),
        single(
            OpKind::GlobalFlip,
            vec![(
                Probability,
                formula(P, "1", "0", Some("0"), Some("0.5"), one),
            )],
        ),
    ];
    PolicySpec::new(ops).expect("default policy is valid")
}

impl ParamFormula {
    /// Same formula with its coefficient replaced.
    pub fn with_coeff(&self, coeff: Exact) -> Self {
        Self {
            coeff,
            ..self.clone()
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeff.is_zero()
    }
}
