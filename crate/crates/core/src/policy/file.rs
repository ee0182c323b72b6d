//! Plain-text policy files.
//!
//! ```text
//! LAPOLICY1
//! # op        param        class    driver  coeff  offset  clip_lo  clip_hi  unit
//! GlobalRot   max_angle    -        m       0.22   0       0        1        pi
//! ```
//!
//! One row per parameter, whitespace separated. `-` marks "no class" and
//! "unbounded". Numbers are exact decimals or `a/b` fractions.

use crate::exact::{format_exact, parse_exact, Exact};
use crate::geometry::ClassId;
use crate::ops::OpKind;

use super::{Driver, OpSpec, ParamEntry, ParamFormula, ParamName, PolicyError, PolicySpec, Unit};

pub const POLICY_MAGIC: &str = "LAPOLICY1";

/// The shipped default, byte-identical to `write_policy(&default_policy())`.
pub const DEFAULT_POLICY_TEXT: &str = include_str!("../../policies/default.policy");

const WIDTHS: [usize; 8] = [16, 16, 11, 7, 8, 7, 8, 8];
const COLUMNS: [&str; 9] = [
    "op", "param", "class", "driver", "coeff", "offset", "clip_lo", "clip_hi", "unit",
];

fn row(cells: &[String]) -> String {
    let mut s = String::new();
    for (i, c) in cells.iter().enumerate() {
        if i + 1 == cells.len() {
            s.push_str(c);
        } else {
            s.push_str(&format!("{c:<w$} ", w = WIDTHS[i] - 1));
        }
    }
    s.push('\n');
    s
}

pub fn write_policy(spec: &PolicySpec) -> String {
    let mut out = format!("{POLICY_MAGIC}\n");
    out.push_str("# value = clamp(offset + coeff * driver, clip_lo, clip_hi), in unit\n");
    out.push_str("# driver: m = magnitude, p = probability; '-' = no class / unbounded\n");
    let mut header: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
    header[0] = format!("# {}", header[0]);
    out.push_str(&row(&header));
    let bound = |b: &Option<Exact>| b.as_ref().map(format_exact).unwrap_or_else(|| "-".into());
    for op in spec.ops() {
        for e in &op.params {
            let f = &e.formula;
            out.push_str(&row(&[
                op.op.name().to_string(),
                e.name.as_str().to_string(),
                e.class
                    .map(|c| c.as_str().to_string())
                    .unwrap_or_else(|| "-".into()),
                f.driver.token().to_string(),
                format_exact(&f.coeff),
                format_exact(&f.offset),
                bound(&f.clip_lo),
                bound(&f.clip_hi),
                f.unit.token().to_string(),
            ]));
        }
    }
    out
}

pub fn parse_policy(text: &str) -> Result<PolicySpec, PolicyError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l == POLICY_MAGIC => {}
        Some((line, l)) => {
            return Err(PolicyError::Parse {
                line,
                message: format!("expected {POLICY_MAGIC}, found {l:?}"),
            })
        }
        None => {
            return Err(PolicyError::Parse {
                line: 0,
                message: "empty policy file".into(),
            })
        }
    }
    let mut ops: Vec<OpSpec> = Vec::new();
    for (line, l) in lines {
        let err = |message: String| PolicyError::Parse { line, message };
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != COLUMNS.len() {
            return Err(err(format!(
                "expected {} columns, found {}",
                COLUMNS.len(),
                t.len()
            )));
        }
        let op: OpKind = t[0].parse().map_err(err)?;
        let name: ParamName = t[1].parse().map_err(err)?;
        let class = match t[2] {
            "-" => None,
            s => Some(s.parse::<ClassId>().map_err(|e| err(e.to_string()))?),
        };
        let driver = match t[3] {
            "m" => Driver::Magnitude,
            "p" => Driver::Probability,
            s => return Err(err(format!("driver must be m or p, found {s:?}"))),
        };
        let num = |s: &str| parse_exact(s).map_err(|e| err(e.to_string()));
        let bound = |s: &str| if s == "-" { Ok(None) } else { num(s).map(Some) };
        let unit = match t[8] {
            "1" => Unit::One,
            "pi" => Unit::Pi,
            s => return Err(err(format!("unit must be 1 or pi, found {s:?}"))),
        };
        let formula = ParamFormula {
            driver,
            coeff: num(t[4])?,
            offset: num(t[5])?,
            clip_lo: bound(t[6])?,
            clip_hi: bound(t[7])?,
            unit,
        };
        let entry = ParamEntry {
            name,
            class,
            formula,
        };
        match ops.last_mut() {
            Some(last) if last.op == op => last.params.push(entry),
            _ => ops.push(OpSpec {
                op,
                params: vec![entry],
            }),
        }
    }
    PolicySpec::new(ops)
}

#[cfg(test)]
mod tests {
    use super::super::default_policy;
    use super::*;

    #[test]
    fn shipped_default_matches_builtin() {
        assert_eq!(parse_policy(DEFAULT_POLICY_TEXT).unwrap(), default_policy());
        assert_eq!(write_policy(&default_policy()), DEFAULT_POLICY_TEXT);
    }

    #[test]
    fn fractions_and_comments() {
        let text = "# leading comment\nLAPOLICY1\n\nGlobalFlip probability - p 1/3 0 0 1/2 1 \n";
        let spec = parse_policy(text).unwrap();
        let f = &spec.ops()[0].params[0].formula;
        assert_eq!(f.coeff, parse_exact("1/3").unwrap());
        assert_eq!(parse_policy(&write_policy(&spec)).unwrap(), spec);
    }

    #[test]
    fn rejects_malformed() {
        let bad = [
            "",
            "LAPOLICY2\n",
            "LAPOLICY1\nGlobalFlip probability - p 1 0 0 0.5\n",
            "LAPOLICY1\nGlobalFlip probability - q 1 0 0 0.5 1\n",
            "LAPOLICY1\nGlobalFlip probability - p x 0 0 0.5 1\n",
            "LAPOLICY1\nGlobalFlip probability - p 1 0 0 0.5 deg\n",
            "LAPOLICY1\nGlobalFlip max_angle - m 1 0 0 0.5 1\n",
            "LAPOLICY1\nDropBox probability CAR p 1 0 0 1 1\n",
            "LAPOLICY1\nGlobalFlip probability - p 1 0 0 1 1\nGlobalRot probability - p 1 0 0 1 1\nGlobalRot max_angle - m 1 0 0 1 pi\n",
        ];
        for text in bad {
            assert!(parse_policy(text).is_err(), "{text:?}");
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let e = parse_policy("LAPOLICY1\n# c\nGlobalFlip probability - p 1 0 0\n").unwrap_err();
        assert!(matches!(e, PolicyError::Parse { line: 3, .. }), "{e}");
    }
}
