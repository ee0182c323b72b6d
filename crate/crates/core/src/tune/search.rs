//! Joint grid search over `(m, p)` with a resumable score table.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::policy::PolicySpec;

use super::{Evaluator, TuneError};

pub const TABLE_HEADER: &str = "m\tp\tscore\tstatus";

/// `1, 2, ..., 10`.
pub fn default_m_grid() -> Vec<f64> {
    (1..=10).map(f64::from).collect()
}

/// `0.1, 0.2, ..., 1.0`.
pub fn default_p_grid() -> Vec<f64> {
    (1..=10).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub m: f64,
    pub p: f64,
    /// NaN for failed cells.
    pub score: f64,
    pub status: CellStatus,
}

impl ScoreRow {
    fn line(&self) -> String {
        match self.status {
            CellStatus::Ok => format!("{}\t{}\t{}\tok\n", self.m, self.p, self.score),
            CellStatus::Failed => format!("{}\t{}\tnan\tfailed\n", self.m, self.p),
        }
    }

    fn parse(line: &str) -> Result<Self, String> {
        let t: Vec<&str> = line.split('\t').collect();
        if t.len() != 4 {
            return Err(format!("expected 4 fields, found {}", t.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number {s:?}"));
        let status = match t[3] {
            "ok" => CellStatus::Ok,
            "failed" => CellStatus::Failed,
            s => return Err(format!("bad status {s:?}")),
        };
        let score = num(t[2])?;
        if status == CellStatus::Ok && score.is_nan() {
            return Err("ok row with NaN score".into());
        }
        Ok(Self {
            m: num(t[0])?,
            p: num(t[1])?,
            score,
            status,
        })
    }
}

/// Rows in canonical order: `m` major, then `p`, both in grid order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn to_text(&self) -> String {
        let mut s = format!("{TABLE_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.line());
        }
        s
    }

    /// Parses complete lines. A final line without a newline is an
    /// interrupted write and is ignored.
    pub fn parse(text: &str) -> Result<Self, String> {
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        let mut lines = complete.lines();
        match lines.next() {
            Some(TABLE_HEADER) => {}
            Some(other) => return Err(format!("bad header {other:?}")),
            None => return Ok(Self::default()),
        }
        let rows = lines
            .enumerate()
            .map(|(i, l)| ScoreRow::parse(l).map_err(|e| format!("line {}: {e}", i + 2)))
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }

    /// Argmax over completed cells; ties go to the smallest `m`, then `p`.
    pub fn best(&self) -> Option<&ScoreRow> {
        self.rows
            .iter()
            .filter(|r| r.status == CellStatus::Ok)
            .fold(None, |best: Option<&ScoreRow>, r| match best {
                None => Some(r),
                Some(b) => {
                    let better = r.score > b.score
                        || (r.score == b.score && (r.m < b.m || (r.m == b.m && r.p < b.p)));
                    Some(if better { r } else { b })
                }
            })
    }

    pub fn failed(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.status == CellStatus::Failed)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// `(m, p, score)` of the best completed cell.
    pub best: Option<(f64, f64, f64)>,
    pub table: ScoreTable,
    /// Evaluator calls made by this run (resumed cells are not re-run).
    pub evaluated: usize,
}

fn check_grid(name: &'static str, grid: &[f64], ok: impl Fn(f64) -> bool) -> Result<(), TuneError> {
    if grid.is_empty() {
        return Err(TuneError::EmptyGrid(name));
    }
    for (i, &v) in grid.iter().enumerate() {
        if !(v.is_finite() && ok(v)) {
            return Err(TuneError::InvalidGridValue {
                grid: name,
                value: v,
            });
        }
        if grid[..i].iter().any(|w| w.to_bits() == v.to_bits()) {
            return Err(TuneError::DuplicateGridValue {
                grid: name,
                value: v,
            });
        }
    }
    Ok(())
}

fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = File::create(tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

/// Evaluates every `(m, p)` cell, in parallel.
///
/// With `table_path`, completed cells are appended to the file as they
/// finish, cells already recorded as `ok` are skipped, and the file is
/// rewritten in canonical order at the end. Failed cells are recorded and
/// retried on the next run.
pub fn search_mp(
    spec: &PolicySpec,
    m_grid: &[f64],
    p_grid: &[f64],
    evaluator: &dyn Evaluator,
    seed: u64,
    table_path: Option<&Path>,
) -> Result<SearchResult, TuneError> {
    check_grid("m", m_grid, |m| m >= 0.0)?;
    check_grid("p", p_grid, |p| (0.0..=1.0).contains(&p))?;
    let cells: Vec<(f64, f64)> = m_grid
        .iter()
        .flat_map(|&m| p_grid.iter().map(move |&p| (m, p)))
        .collect();
    let key = |m: f64, p: f64| (m.to_bits(), p.to_bits());

    let table_err = |path: &Path, message: String| TuneError::Table {
        path: path.display().to_string(),
        message,
    };
    let mut done: HashMap<(u64, u64), ScoreRow> = HashMap::new();
    if let Some(path) = table_path {
        if path.exists() {
            let previous =
                ScoreTable::parse(&fs::read_to_string(path)?).map_err(|e| table_err(path, e))?;
            for r in previous.rows {
                if !cells.iter().any(|&(m, p)| key(m, p) == key(r.m, r.p)) {
                    return Err(table_err(
                        path,
                        format!("cell (m = {}, p = {}) is not on this grid", r.m, r.p),
                    ));
                }
                if r.status == CellStatus::Ok {
                    done.insert(key(r.m, r.p), r);
                }
            }
        }
        let kept = ScoreTable {
            rows: cells
                .iter()
                .filter_map(|&(m, p)| done.get(&key(m, p)).cloned())
                .collect(),
        };
        write_atomic(path, &kept.to_text())?;
    }

    let sink = match table_path {
        Some(path) => Some(Mutex::new(OpenOptions::new().append(true).open(path)?)),
        None => None,
    };
    let todo: Vec<(f64, f64)> = cells
        .iter()
        .copied()
        .filter(|&(m, p)| !done.contains_key(&key(m, p)))
        .collect();
    let fresh: Vec<ScoreRow> = todo
        .par_iter()
        .map(|&(m, p)| -> std::io::Result<ScoreRow> {
            let row = match evaluator.evaluate(spec, m, p, seed) {
                Ok(score) if !score.is_nan() => ScoreRow {
                    m,
                    p,
                    score,
                    status: CellStatus::Ok,
                },
                _ => ScoreRow {
                    m,
                    p,
                    score: f64::NAN,
                    status: CellStatus::Failed,
                },
            };
            if let Some(sink) = &sink {
                let mut f = sink.lock().unwrap_or_else(|e| e.into_inner());
                f.write_all(row.line().as_bytes())?;
                f.flush()?;
            }
            Ok(row)
        })
        .collect::<std::io::Result<_>>()?;
    drop(sink);

    let evaluated = fresh.len();
    for r in fresh {
        done.insert(key(r.m, r.p), r);
    }
    let table = ScoreTable {
        rows: cells
            .iter()
            .map(|&(m, p)| done[&key(m, p)].clone())
            .collect(),
    };
    if let Some(path) = table_path {
        write_atomic(path, &table.to_text())?;
    }
    Ok(SearchResult {
        best: table.best().map(|r| (r.m, r.p, r.score)),
        table,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::default_policy;
    use crate::tune::EvalError;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn peak(_: &PolicySpec, m: f64, p: f64, _: u64) -> Result<f64, EvalError> {
        Ok(-(m - 5.0).powi(2) - 100.0 * (p - 0.5).powi(2))
    }

    #[test]
    fn finds_the_peak_with_one_call_per_cell() {
        let calls = AtomicUsize::new(0);
        let eval = |s: &PolicySpec, m, p, seed| {
            calls.fetch_add(1, Ordering::SeqCst);
            peak(s, m, p, seed)
        };
        let r = search_mp(
            &default_policy(),
            &default_m_grid(),
            &default_p_grid(),
            &eval,
            0,
            None,
        )
        .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 100);
        assert_eq!(r.table.rows.len(), 100);
        let (m, p, _) = r.best.unwrap();
        assert_eq!((m, p), (5.0, 0.5));
        // Brute-force agreement and per-cell reproducibility.
        let max = r
            .table
            .rows
            .iter()
            .map(|r| r.score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best.unwrap().2, max);
        for row in r.table.rows.iter().step_by(7) {
            assert_eq!(row.score, peak(&default_policy(), row.m, row.p, 0).unwrap());
        }
    }

    #[test]
    fn single_cell() {
        let r = search_mp(&default_policy(), &[3.0], &[0.2], &peak, 0, None).unwrap();
        assert_eq!(r.best.map(|b| (b.0, b.1)), Some((3.0, 0.2)));
    }

    #[test]
    fn ties_prefer_small_m_then_p() {
        let flat = |_: &PolicySpec, _, _, _| Ok(1.0);
        let r = search_mp(
            &default_policy(),
            &[4.0, 2.0, 3.0],
            &[0.9, 0.3],
            &flat,
            0,
            None,
        )
        .unwrap();
        assert_eq!(r.best.map(|b| (b.0, b.1)), Some((2.0, 0.3)));
    }

    #[test]
    fn failures_are_marked_and_excluded() {
        let eval = |_: &PolicySpec, m: f64, p: f64, _| {
            if m == 5.0 {
                Err(EvalError("x".into()))
            } else {
                Ok(m + p)
            }
        };
        let r = search_mp(
            &default_policy(),
            &default_m_grid(),
            &default_p_grid(),
            &eval,
            0,
            None,
        )
        .unwrap();
        assert_eq!(r.table.failed(), 10);
        assert_eq!(r.best.map(|b| (b.0, b.1)), Some((10.0, 1.0)));
    }

    #[test]
    fn grid_validation() {
        let s = default_policy();
        assert!(search_mp(&s, &[], &[0.5], &peak, 0, None).is_err());
        assert!(search_mp(&s, &[1.0], &[1.5], &peak, 0, None).is_err());
        assert!(search_mp(&s, &[-1.0], &[0.5], &peak, 0, None).is_err());
        assert!(search_mp(&s, &[1.0, 1.0], &[0.5], &peak, 0, None).is_err());
    }

    #[test]
    fn resumes_after_interruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        let full = search_mp(
            &default_policy(),
            &default_m_grid(),
            &default_p_grid(),
            &peak,
            0,
            Some(&path),
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, full.table.to_text());
        // Keep 50 rows plus half of the 51st.
        let lines: Vec<&str> = text.lines().collect();
        let mut cut = lines[..51].join("\n");
        cut.push('\n');
        cut.push_str(&lines[51][..4]);
        fs::write(&path, cut).unwrap();
        let calls = AtomicUsize::new(0);
        let eval = |s: &PolicySpec, m, p, seed| {
            calls.fetch_add(1, Ordering::SeqCst);
            peak(s, m, p, seed)
        };
        let resumed = search_mp(
            &default_policy(),
            &default_m_grid(),
            &default_p_grid(),
            &eval,
            0,
            Some(&path),
        )
        .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 50);
        assert_eq!(resumed.evaluated, 50);
        assert_eq!(fs::read_to_string(&path).unwrap(), text);
        assert_eq!(resumed.table, full.table.clone());
    }

    #[test]
    fn failed_cells_are_retried() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        let flaky = |s: &PolicySpec, m: f64, p, seed| {
            if m > 5.0 {
                Err(EvalError("down".into()))
            } else {
                peak(s, m, p, seed)
            }
        };
        let first = search_mp(
            &default_policy(),
            &default_m_grid(),
            &default_p_grid(),
            &flaky,
            0,
            Some(&path),
        )
        .unwrap();
        assert_eq!(first.table.failed(), 50);
        let second = search_mp(
            &default_policy(),
            &default_m_grid(),
            &default_p_grid(),
            &peak,
            0,
            Some(&path),
        )
        .unwrap();
        assert_eq!(second.evaluated, 50);
        assert_eq!(second.table.failed(), 0);
    }

    #[test]
    fn foreign_table_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        search_mp(&default_policy(), &[7.0], &[0.5], &peak, 0, Some(&path)).unwrap();
        assert!(matches!(
            search_mp(&default_policy(), &[1.0], &[0.5], &peak, 0, Some(&path)),
            Err(TuneError::Table { .. })
        ));
        fs::write(&path, "bogus\n").unwrap();
        assert!(search_mp(&default_policy(), &[7.0], &[0.5], &peak, 0, Some(&path)).is_err());
    }

    #[test]
    fn table_text_roundtrip() {
        let t = ScoreTable {
            rows: vec![
                ScoreRow {
                    m: 1.0,
                    p: 0.1,
                    score: -0.25,
                    status: CellStatus::Ok,
                },
                ScoreRow {
                    m: 1.0,
                    p: 0.2,
                    score: f64::NAN,
                    status: CellStatus::Failed,
                },
            ],
        };
        let back = ScoreTable::parse(&t.to_text()).unwrap();
        assert_eq!(back.rows[0], t.rows[0]);
        assert_eq!(back.rows[1].status, CellStatus::Failed);
        assert_eq!(back.to_text(), t.to_text());
    }
}
