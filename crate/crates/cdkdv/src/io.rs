//! CSV emission and ingestion plus the coefficient text form.
//!
//! Every float is written with 17 significant digits so files round-trip
//! bit-exactly and reruns with the same config are byte-identical.
//! Readers are hardened: they are fed untrusted text (fuzzed) and must
//! fail with errors, never panic.

use std::sync::Arc;

use thiserror::Error;

use crate::algebra::{Algebra, CdNumber};
use crate::solver::{Field, Grid, RunRecord};

#[derive(Debug, Error, PartialEq)]
pub enum IoError {
    #[error("empty input")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("coefficient list: {0}")]
    BadCoefficients(String),
    #[error("unsupported field dimension {0} (must be a power of two <= 256)")]
    BadDimension(usize),
    #[error("grid reconstruction failed: {0}")]
    BadGrid(String),
}

/// Fixed 17-significant-digit decimal; round-trips any finite f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses a comma-separated coefficient list ("1,0,0.5,...").
pub fn parse_cd_coeffs(text: &str, expected_len: Option<usize>) -> Result<Vec<f64>, IoError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(IoError::BadCoefficients("empty list".to_string()));
    }
    let mut out = Vec::new();
    for (i, part) in trimmed.split(',').enumerate() {
        let value: f64 = part
            .trim()
            .parse()
            .map_err(|e| IoError::BadCoefficients(format!("entry {i} ({part:?}): {e}")))?;
        if !value.is_finite() {
            return Err(IoError::BadCoefficients(format!(
                "entry {i} is not finite"
            )));
        }
        out.push(value);
    }
    if let Some(expected) = expected_len {
        if out.len() != expected {
            return Err(IoError::BadCoefficients(format!(
                "expected {expected} coefficients, got {}",
                out.len()
            )));
        }
    }
    Ok(out)
}

/// Writes a trajectory as `t,x,c_0..c_{dim-1}`, one row per sample.
pub fn write_run_csv(record: &RunRecord, out: &mut impl std::io::Write) -> std::io::Result<()> {
    let dim = record
        .snapshots
        .first()
        .map(|f| f.dim())
        .unwrap_or_default();
    let mut header = String::from("t,x");
    for c in 0..dim {
        header.push_str(&format!(",c_{c}"));
    }
    writeln!(out, "{header}")?;
    for (snap, &t) in record.snapshots.iter().zip(&record.times) {
        let grid = snap.grid();
        for ix in 0..grid.points() {
            let mut row = format!("{},{}", fmt_f64(t), fmt_f64(grid.x(ix)));
            for c in 0..dim {
                row.push(',');
                row.push_str(&fmt_f64(snap.component(c)[ix]));
            }
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

/// Writes the per-snapshot conserved quantities and residual norms.
pub fn write_conserved_csv(
    record: &RunRecord,
    out: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(out, "t,H1,H2,H3,residual")?;
    for i in 0..record.times.len() {
        let c = record.conserved[i];
        let r = record.residual_norms.get(i).copied().unwrap_or(f64::NAN);
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(record.times[i]),
            fmt_f64(c.h1),
            fmt_f64(c.h2),
            fmt_f64(c.h3),
            fmt_f64(r)
        )?;
    }
    Ok(())
}

/// A trajectory reconstructed from `run.csv` text.
#[derive(Debug, Clone)]
pub struct RunTable {
    pub algebra: Arc<Algebra>,
    pub grid: Grid,
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
}

/// Parses `t,x,c_0..c_{dim-1}` text back into fields. Rows must be grouped
/// by time with every group visiting the same uniform grid in order.
pub fn read_run_csv(text: &str) -> Result<RunTable, IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::Empty)?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "t" || cols[1] != "x" {
        return Err(IoError::Malformed {
            line: 1,
            message: "expected header t,x,c_0,...".to_string(),
        });
    }
    let dim = cols.len() - 2;
    for (c, name) in cols[2..].iter().enumerate() {
        if *name != format!("c_{c}") {
            return Err(IoError::Malformed {
                line: 1,
                message: format!("column {} should be c_{c}", c + 2),
            });
        }
    }
    if !dim.is_power_of_two() || dim > 256 {
        return Err(IoError::BadDimension(dim));
    }
    let level = dim.trailing_zeros();
    let algebra =
        Algebra::shared(level).map_err(|_| IoError::BadDimension(dim))?;

    // collect rows grouped by time
    let mut groups: Vec<(f64, Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != dim + 2 {
            return Err(IoError::Malformed {
                line: lineno + 1,
                message: format!("expected {} columns, got {}", dim + 2, parts.len()),
            });
        }
        let mut values = Vec::with_capacity(dim + 2);
        for part in &parts {
            let v: f64 = part.trim().parse().map_err(|e| IoError::Malformed {
                line: lineno + 1,
                message: format!("bad number {part:?}: {e}"),
            })?;
            values.push(v);
        }
        let (t, x) = (values[0], values[1]);
        if !t.is_finite() || !x.is_finite() {
            return Err(IoError::Malformed {
                line: lineno + 1,
                message: "non-finite coordinate".to_string(),
            });
        }
        match groups.last_mut() {
            Some((gt, xs, rows)) if *gt == t => {
                xs.push(x);
                rows.push(values[2..].to_vec());
            }
            _ => groups.push((t, vec![x], vec![values[2..].to_vec()])),
        }
    }
    if groups.is_empty() {
        return Err(IoError::Empty);
    }

    // grid from the first group
    let n = groups[0].1.len();
    if n < 16 || !n.is_power_of_two() {
        return Err(IoError::BadGrid(format!(
            "{n} points per snapshot is not a power of two >= 16"
        )));
    }
    let xs = &groups[0].1;
    let h = xs.get(1).copied().unwrap_or(0.0) - xs[0];
    if !(h > 0.0) {
        return Err(IoError::BadGrid("non-increasing x column".to_string()));
    }
    for (i, &x) in xs.iter().enumerate() {
        if (x - i as f64 * h).abs() > 1e-9 * h * n as f64 {
            return Err(IoError::BadGrid(format!(
                "x column is not a uniform grid from 0 (index {i})"
            )));
        }
    }
    let grid = Grid::new(n, h * n as f64)
        .map_err(|e| IoError::BadGrid(e.to_string()))?;

    let mut times = Vec::with_capacity(groups.len());
    let mut snapshots = Vec::with_capacity(groups.len());
    for (t, gxs, rows) in &groups {
        if gxs.len() != n {
            return Err(IoError::BadGrid(format!(
                "snapshot at t = {t} has {} points, expected {n}",
                gxs.len()
            )));
        }
        let mut field = Field::zero(grid, algebra.clone());
        for (ix, row) in rows.iter().enumerate() {
            field.set_sample(ix, &CdNumber::from_coeffs(row.clone()));
        }
        times.push(*t);
        snapshots.push(field);
    }
    Ok(RunTable {
        algebra,
        grid,
        times,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{simulate, Equation, EvolutionSpec};

    #[test]
    fn fmt_round_trips() {
        for &x in &[0.1, -3.5e-7, std::f64::consts::PI, 1e300, -0.0, 12.0] {
            let parsed: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(parsed.to_bits(), x.to_bits(), "value {x}");
        }
    }

    #[test]
    fn coeff_list_parsing() {
        assert_eq!(
            parse_cd_coeffs("1, 0, 2.5,-3", None).unwrap(),
            vec![1.0, 0.0, 2.5, -3.0]
        );
        assert!(parse_cd_coeffs("1,,2", None).is_err());
        assert!(parse_cd_coeffs("", None).is_err());
        assert!(parse_cd_coeffs("1,nan", None).is_err());
        assert!(parse_cd_coeffs("1,2", Some(4)).is_err());
    }

    #[test]
    fn run_csv_round_trip() {
        let grid = Grid::new(32, 10.0).unwrap();
        let alg = Algebra::shared(1).unwrap();
        let f = Field::from_fn(grid, alg, |x| {
            CdNumber::from_coeffs(vec![x.sin(), 0.5 * x.cos()])
        });
        let spec = EvolutionSpec::new(
            Equation::CdKdv,
            CdNumber::zero(2),
            0.0,
            1e-3,
            0.01,
            5,
            false,
            &grid,
        )
        .unwrap();
        let record = simulate(&spec, &f).unwrap();
        let mut buf = Vec::new();
        write_run_csv(&record, &mut buf).unwrap();
        let table = read_run_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(table.times.len(), record.times.len());
        assert_eq!(table.grid, grid);
        for (a, b) in table.snapshots.iter().zip(&record.snapshots) {
            assert_eq!(a, b, "snapshots must round-trip bit-exactly");
        }
    }

    #[test]
    fn read_rejects_garbage() {
        assert!(read_run_csv("").is_err());
        assert!(read_run_csv("a,b,c\n1,2,3").is_err());
        assert!(read_run_csv("t,x,c_0\n0,0,nope").is_err());
        assert!(read_run_csv("t,x,c_0,c_9\n").is_err());
        // 3 columns of header but rows with 2
        assert!(read_run_csv("t,x,c_0\n0,0\n").is_err());
    }
}
