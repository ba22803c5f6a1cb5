use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{DataError, EngineRun};
use crate::linalg::Matrix;

/// Columns per row: unit, cycle, 3 operational settings, 21 sensors.
const CMAPSS_COLUMNS: usize = 26;

/// Feature columns per row (settings + sensors).
pub const CMAPSS_FEATURES: usize = CMAPSS_COLUMNS - 2;

/// Parses a C-MAPSS train/test file into one run per unit, in order of first appearance.
pub fn parse_cmapss(text: &str) -> Result<Vec<EngineRun>, DataError> {
    struct Pending {
        unit_id: u32,
        rows: Vec<f64>,
        last_cycle: u32,
    }

    let mut pending: Vec<Pending> = Vec::new();
    let mut by_unit: HashMap<u32, usize> = HashMap::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != CMAPSS_COLUMNS {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("expected {CMAPSS_COLUMNS} fields, found {}", fields.len()),
            });
        }
        let unit = parse_index(fields[0], line_no, "unit")?;
        let cycle = parse_index(fields[1], line_no, "cycle")?;
        let slot = *by_unit.entry(unit).or_insert_with(|| {
            pending.push(Pending {
                unit_id: unit,
                rows: Vec::new(),
                last_cycle: 0,
            });
            pending.len() - 1
        });
        let entry = &mut pending[slot];
        if cycle != entry.last_cycle + 1 {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!(
                    "unit {unit}: cycle {cycle} does not follow cycle {}",
                    entry.last_cycle
                ),
            });
        }
        entry.last_cycle = cycle;
        for (col, field) in fields[2..].iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| DataError::Parse {
                line: line_no,
                msg: format!("column {}: '{field}' is not numeric", col + 3),
            })?;
            if !value.is_finite() {
                return Err(DataError::Parse {
                    line: line_no,
                    msg: format!("column {}: non-finite value", col + 3),
                });
            }
            entry.rows.push(value);
        }
    }

    Ok(pending
        .into_iter()
        .map(|p| {
            let len = p.last_cycle as usize;
            EngineRun::new(p.unit_id, Matrix::from_vec(len, CMAPSS_FEATURES, p.rows))
        })
        .collect())
}

fn parse_index(field: &str, line: usize, what: &str) -> Result<u32, DataError> {
    // Some distributions write integer columns as "1.0".
    let value: f64 = field.parse().map_err(|_| DataError::Parse {
        line,
        msg: format!("{what} '{field}' is not numeric"),
    })?;
    if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(DataError::Parse {
            line,
            msg: format!("{what} '{field}' is not a positive integer"),
        });
    }
    Ok(value as u32)
}

/// Parses a RUL truth file: one non-negative integer per line.
pub fn parse_rul_truth(text: &str) -> Result<Vec<u32>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        let value: i64 = field.parse().map_err(|_| DataError::Parse {
            line: idx + 1,
            msg: format!("'{field}' is not an integer"),
        })?;
        if value < 0 {
            return Err(DataError::Parse {
                line: idx + 1,
                msg: format!("negative RUL {value}"),
            });
        }
        let value = u32::try_from(value).map_err(|_| DataError::Parse {
            line: idx + 1,
            msg: format!("RUL {value} out of range"),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_cmapss(path: impl AsRef<Path>) -> Result<Vec<EngineRun>, DataError> {
    parse_cmapss(&std::fs::read_to_string(path)?)
}

pub fn read_rul_truth(path: impl AsRef<Path>) -> Result<Vec<u32>, DataError> {
    parse_rul_truth(&std::fs::read_to_string(path)?)
}

/// Serializes runs in the 26-column layout. Runs with fewer than 24 features
/// get their leading (settings) columns zero-filled; values are written with
/// shortest round-trip formatting.
pub fn write_cmapss(runs: &[EngineRun]) -> Result<String, DataError> {
    let mut out = String::new();
    for run in runs {
        let q = run.num_features();
        if q > CMAPSS_FEATURES {
            return Err(DataError::Invalid(format!(
                "unit {} has {q} features; the file format holds {CMAPSS_FEATURES}",
                run.unit_id
            )));
        }
        let pad = CMAPSS_FEATURES - q;
        for t in 0..run.len() {
            write!(out, "{} {}", run.unit_id, t + 1).unwrap();
            for _ in 0..pad {
                out.push_str(" 0");
            }
            for v in run.features.row(t) {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(unit: u32, cycle: u32, base: f64) -> String {
        let mut s = format!("{unit} {cycle} 0.0 0.0 100.0");
        for k in 0..21 {
            write!(s, " {}", base + k as f64).unwrap();
        }
        s
    }

    #[test]
    fn two_line_file() {
        let text = format!("{}\n{}\n", line(1, 1, 10.0), line(1, 2, 20.0));
        let runs = parse_cmapss(&text).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].len(), 2);
        assert_eq!(runs[0].num_features(), 24);
        assert_eq!(runs[0].features[(0, 2)], 100.0);
        assert_eq!(runs[0].features[(1, 3)], 20.0);
    }

    #[test]
    fn empty_input() {
        assert!(parse_cmapss("").unwrap().is_empty());
        assert!(parse_cmapss("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn multiple_units_and_trailing_whitespace() {
        let text = format!(
            "{} \n{}  \n{}\n",
            line(1, 1, 0.0),
            line(1, 2, 0.0),
            line(2, 1, 0.0)
        );
        let runs = parse_cmapss(&text).unwrap();
        assert_eq!(runs.iter().map(|r| (r.unit_id, r.len())).collect::<Vec<_>>(), vec![(1, 2), (2, 1)]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad_count = format!("{}\n1 2 3\n", line(1, 1, 0.0));
        match parse_cmapss(&bad_count) {
            Err(DataError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let non_numeric = line(1, 1, 0.0).replace("100.0", "abc");
        assert!(matches!(parse_cmapss(&non_numeric), Err(DataError::Parse { line: 1, .. })));
        let gap = format!("{}\n{}\n", line(1, 1, 0.0), line(1, 3, 0.0));
        assert!(matches!(parse_cmapss(&gap), Err(DataError::Parse { line: 2, .. })));
        let late_start = line(4, 2, 0.0);
        assert!(matches!(parse_cmapss(&late_start), Err(DataError::Parse { line: 1, .. })));
    }

    #[test]
    fn truth_file() {
        assert_eq!(parse_rul_truth("112\n98\n").unwrap(), vec![112, 98]);
        assert!(parse_rul_truth("").unwrap().is_empty());
        assert!(matches!(parse_rul_truth("5\n-1\n"), Err(DataError::Parse { line: 2, .. })));
        assert!(matches!(parse_rul_truth("x\n"), Err(DataError::Parse { line: 1, .. })));
    }

    #[test]
    fn writer_round_trips() {
        let text = format!("{}\n{}\n{}\n", line(3, 1, 0.25), line(3, 2, 1.0 / 3.0), line(7, 1, -2.5));
        let runs = parse_cmapss(&text).unwrap();
        let written = write_cmapss(&runs).unwrap();
        assert_eq!(parse_cmapss(&written).unwrap(), runs);
    }

    #[test]
    fn writer_pads_narrow_runs() {
        let run = EngineRun::new(1, Matrix::from_rows(&[[1.5, 2.5]]));
        let text = write_cmapss(&[run]).unwrap();
        let back = parse_cmapss(&text).unwrap();
        assert_eq!(back[0].features.row(0)[..22], [0.0; 22]);
        assert_eq!(back[0].features.row(0)[22..], [1.5, 2.5]);
    }
}
